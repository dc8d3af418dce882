mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{value_parser, Arg, ArgMatches, Command};
use fallsense::error::{Error, Result};

use commands::{Context, Registry};
use config::RunConfig;

fn cli(registry: &Registry) -> Command {
    let mut cmd = Command::new("fallsense")
        .about("Fall detection and time-of-impact estimation from waist-worn IMU recordings")
        .version(env!("CARGO_PKG_VERSION"))
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("JSON")
                .value_parser(value_parser!(PathBuf))
                .help("Run configuration; missing fields take defaults"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .global(true)
                .value_parser(value_parser!(u64))
                .help("Master seed for splits, initialization and generation"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .global(true)
                .value_name("DIR")
                .value_parser(value_parser!(PathBuf))
                .help("Output directory [default: fallsense-out]"),
        )
        .arg(
            Arg::new("jobs")
                .long("jobs")
                .global(true)
                .value_parser(value_parser!(usize))
                .help("Worker threads [default: all cores]"),
        );
    for c in registry.iter() {
        let mut sub = Command::new(c.name()).about(c.about());
        if c.uses_dataset() {
            sub = sub.arg(
                Arg::new("root")
                    .value_name("ROOT")
                    .value_parser(value_parser!(PathBuf))
                    .help("Corpus root (default: dataset_root from the config)"),
            );
        }
        cmd = cmd.subcommand(sub.args(c.args()));
    }
    cmd
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        Error::Csv { source, .. } if source.is_io_error() => 2,
        _ => 1,
    }
}

fn execute(registry: &Registry, name: &str, m: &ArgMatches) -> Result<()> {
    let command = registry.get(name).expect("clap only accepts registered names");
    let base = match m.get_one::<PathBuf>("config") {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let root = if command.uses_dataset() {
        m.get_one::<PathBuf>("root").cloned()
    } else {
        None
    };
    let config = base.resolve(m.get_one::<u64>("seed").copied(), root)?;
    if let Some(&jobs) = m.get_one::<usize>("jobs") {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| fallsense::error::invalid(e.to_string()))?;
    }
    let out = m
        .get_one::<PathBuf>("out")
        .cloned()
        .unwrap_or_else(|| PathBuf::from("fallsense-out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    config.write(&out)?;
    command.run(&Context { config, out }, m)
}

fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let registry = Registry::builtin();
    let mut cmd = cli(&registry);
    let matches = match cmd.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let Some((name, sub)) = matches.subcommand() else {
        eprintln!("{}", cmd.render_help());
        return 1;
    };
    match execute(&registry, name, sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(run(std::env::args_os()));
}
