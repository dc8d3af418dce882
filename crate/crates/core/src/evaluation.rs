//! Sample-level detection metrics, per-subject/per-activity tables, impact
//! RMSE heatmaps, trajectory traces and report rendering (CSV, SVG, JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::FallSegment;
use crate::kan::{predict_tti_partial, KanModel};
use crate::sisfall::{ActivityCode, ActivityKind, SubjectId, TrialId, SAMPLE_PERIOD_MS};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Sample-level confusion counts with FALL as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Counts over samples where `mask` is true (all samples when `None`).
pub fn confusion(decisions: &[bool], labels: &[bool], mask: Option<&[bool]>) -> Result<ConfusionCounts> {
    if decisions.len() != labels.len() || mask.is_some_and(|m| m.len() != labels.len()) {
        return Err(invalid("decisions, labels and mask must have equal lengths"));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&d, &l)) in decisions.iter().zip(labels).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        match (d, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `None` marks an undefined rate (empty denominator).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    let ratio = |a: u64, b: u64| if a + b == 0 { None } else { Some(a as f64 / (a + b) as f64) };
    Rates {
        tpr: ratio(c.tp, c.fn_),
        tnr: ratio(c.tn, c.fp),
    }
}

/// Detection result of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub id: TrialId,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Tpr,
    Tnr,
}

impl RateKind {
    fn pick(self, r: Rates) -> Option<f64> {
        match self {
            RateKind::Tpr => r.tpr,
            RateKind::Tnr => r.tnr,
        }
    }
}

/// Subjects × activity codes; each cell is the mean rate over the
/// repetitions of that pair, blank when no repetition defines the rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub metric: String,
    pub subjects: Vec<SubjectId>,
    pub codes: Vec<ActivityCode>,
    pub cells: Vec<Vec<Option<f64>>>,
    /// Counts pooled over every trial in the table.
    pub pooled: ConfusionCounts,
    kind: RateKind,
}

impl MetricTable {
    pub fn build(
        metric: &str,
        kind: RateKind,
        activity: ActivityKind,
        subjects: &[SubjectId],
        outcomes: &[TrialOutcome],
    ) -> Self {
        let codes: Vec<ActivityCode> = ActivityCode::all_of(activity).collect();
        let mut rows: BTreeSet<SubjectId> = subjects.iter().cloned().collect();
        let mut per_cell: BTreeMap<(SubjectId, ActivityCode), Vec<f64>> = BTreeMap::new();
        let mut pooled = ConfusionCounts::default();
        for o in outcomes.iter().filter(|o| o.id.activity.kind() == activity) {
            rows.insert(o.id.subject.clone());
            pooled.add(&o.counts);
            if let Some(v) = kind.pick(rates(&o.counts)) {
                per_cell.entry((o.id.subject.clone(), o.id.activity)).or_default().push(v);
            }
        }
        let subjects: Vec<SubjectId> = rows.into_iter().collect();
        let cells = subjects
            .iter()
            .map(|s| {
                codes
                    .iter()
                    .map(|c| {
                        per_cell
                            .get(&(s.clone(), *c))
                            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect()
            })
            .collect();
        Self {
            metric: metric.to_string(),
            subjects,
            codes,
            cells,
            pooled,
            kind,
        }
    }

    /// Mean over non-blank cells.
    pub fn cell_average(&self) -> Option<f64> {
        mean_defined(self.cells.iter().flatten().copied())
    }

    /// Rate over all samples of all trials, ignoring the cell structure.
    pub fn pooled_rate(&self) -> Option<f64> {
        self.kind.pick(rates(&self.pooled))
    }

    fn row_average(&self, r: usize) -> Option<f64> {
        mean_defined(self.cells[r].iter().copied())
    }

    fn column_average(&self, c: usize) -> Option<f64> {
        mean_defined(self.cells.iter().map(|row| row[c]))
    }

    /// Header `subject,<codes…>,average`; one row per subject and, if any
    /// subject exists, a closing `average` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject");
        for c in &self.codes {
            write!(s, ",{c}").unwrap();
        }
        s.push_str(",average\n");
        for (r, subj) in self.subjects.iter().enumerate() {
            s.push_str(subj.as_str());
            for v in &self.cells[r] {
                write!(s, ",{}", fmt_opt(*v)).unwrap();
            }
            writeln!(s, ",{}", fmt_opt(self.row_average(r))).unwrap();
        }
        if !self.subjects.is_empty() {
            s.push_str("average");
            for c in 0..self.codes.len() {
                write!(s, ",{}", fmt_opt(self.column_average(c))).unwrap();
            }
            writeln!(s, ",{}", fmt_opt(self.cell_average())).unwrap();
        }
        s
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Fall TPR and TNR tables and the ADL TNR table.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTables {
    pub fall_tpr: MetricTable,
    pub fall_tnr: MetricTable,
    pub adl_tnr: MetricTable,
}

pub fn metric_tables(subjects: &[SubjectId], outcomes: &[TrialOutcome]) -> DetectionTables {
    DetectionTables {
        fall_tpr: MetricTable::build("fall_tpr", RateKind::Tpr, ActivityKind::Fall, subjects, outcomes),
        fall_tnr: MetricTable::build("fall_tnr", RateKind::Tnr, ActivityKind::Fall, subjects, outcomes),
        adl_tnr: MetricTable::build("adl_tnr", RateKind::Tnr, ActivityKind::Adl, subjects, outcomes),
    }
}

/// Predictions and targets of one test segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub id: TrialId,
    pub predicted: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseHeatmap {
    pub subjects: Vec<SubjectId>,
    pub codes: Vec<ActivityCode>,
    /// RMSE in ms per (subject, fall code) over all its samples.
    pub cells: Vec<Vec<Option<f64>>>,
    /// RMSE over every sample of every group.
    pub global_rmse: Option<f64>,
}

pub fn rmse_by_group(subjects: &[SubjectId], predictions: &[SegmentPrediction]) -> Result<RmseHeatmap> {
    let codes: Vec<ActivityCode> = ActivityCode::all_of(ActivityKind::Fall).collect();
    let mut rows: BTreeSet<SubjectId> = subjects.iter().cloned().collect();
    let mut acc: BTreeMap<(SubjectId, ActivityCode), (f64, usize)> = BTreeMap::new();
    let (mut total_sse, mut total_n) = (0.0, 0usize);
    for p in predictions {
        if p.predicted.len() != p.targets.len() {
            return Err(invalid(format!("{}: prediction and target lengths differ", p.id)));
        }
        rows.insert(p.id.subject.clone());
        let sse: f64 = p.predicted.iter().zip(&p.targets).map(|(a, b)| (a - b) * (a - b)).sum();
        let e = acc.entry((p.id.subject.clone(), p.id.activity)).or_default();
        e.0 += sse;
        e.1 += p.targets.len();
        total_sse += sse;
        total_n += p.targets.len();
    }
    let subjects: Vec<SubjectId> = rows.into_iter().collect();
    let cells = subjects
        .iter()
        .map(|s| {
            codes
                .iter()
                .map(|c| match acc.get(&(s.clone(), *c)) {
                    Some((sse, n)) if *n > 0 => Some((sse / *n as f64).sqrt()),
                    _ => None,
                })
                .collect()
        })
        .collect();
    Ok(RmseHeatmap {
        subjects,
        codes,
        cells,
        global_rmse: (total_n > 0).then(|| (total_sse / total_n as f64).sqrt()),
    })
}

impl RmseHeatmap {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject");
        for c in &self.codes {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (r, subj) in self.subjects.iter().enumerate() {
            s.push_str(subj.as_str());
            for v in &self.cells[r] {
                write!(s, ",{}", fmt_opt(*v)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrace {
    pub id: TrialId,
    /// Milliseconds since the segment start.
    pub t_ms: Vec<f64>,
    pub truth_ms: Vec<f64>,
    pub predicted_ms: Vec<f64>,
}

impl TrajectoryTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_ms,truth_ms,predicted_ms\n");
        for k in 0..self.t_ms.len() {
            writeln!(s, "{},{},{}", self.t_ms[k], self.truth_ms[k], self.predicted_ms[k]).unwrap();
        }
        s
    }
}

/// Per-instant impact predictions over one segment, using the trailing
/// window (including pre-segment context) available at each instant.
pub fn trajectory(model: &KanModel, segment: &FallSegment) -> Result<TrajectoryTrace> {
    let rows = segment.project(&model.features)?;
    let w = (model.window_ms / SAMPLE_PERIOD_MS).round() as usize;
    let mut predicted = Vec::with_capacity(segment.len());
    for k in 0..segment.len() {
        let end = segment.context + k + 1;
        predicted.push(predict_tti_partial(model, &rows[end.saturating_sub(w)..end])?);
    }
    Ok(TrajectoryTrace {
        id: segment.trial_id.clone(),
        t_ms: (0..segment.len()).map(|k| k as f64 * SAMPLE_PERIOD_MS).collect(),
        truth_ms: segment.tti_targets.clone(),
        predicted_ms: predicted,
    })
}

/// Everything a report renders.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub subjects: Vec<SubjectId>,
    pub outcomes: Vec<TrialOutcome>,
    pub impact: Vec<SegmentPrediction>,
    pub trajectories: Vec<TrajectoryTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema_version: u32,
    pub fall_tpr_avg: Option<f64>,
    pub fall_tnr_avg: Option<f64>,
    pub adl_tnr_avg: Option<f64>,
    pub tti_rmse_ms: Option<f64>,
    pub fall_tpr_pooled: Option<f64>,
    pub fall_tnr_pooled: Option<f64>,
    pub adl_tnr_pooled: Option<f64>,
}

pub fn summarize(tables: &DetectionTables, heatmap: &RmseHeatmap) -> ReportSummary {
    ReportSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        fall_tpr_avg: tables.fall_tpr.cell_average(),
        fall_tnr_avg: tables.fall_tnr.cell_average(),
        adl_tnr_avg: tables.adl_tnr.cell_average(),
        tti_rmse_ms: heatmap.global_rmse,
        fall_tpr_pooled: tables.fall_tpr.pooled_rate(),
        fall_tnr_pooled: tables.fall_tnr.pooled_rate(),
        adl_tnr_pooled: tables.adl_tnr.pooled_rate(),
    }
}

fn write_file(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes CSV tables, SVG renderings and `summary.json` into `dir`; returns
/// the written paths in order.
pub fn render_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables = metric_tables(&bundle.subjects, &bundle.outcomes);
    let falls: Vec<SubjectId> = bundle
        .subjects
        .iter()
        .filter(|s| !s.is_elderly())
        .cloned()
        .collect();
    let heatmap = rmse_by_group(&falls, &bundle.impact)?;
    let mut written = Vec::new();
    for t in [&tables.fall_tpr, &tables.fall_tnr, &tables.adl_tnr] {
        write_file(dir, &format!("{}.csv", t.metric), &t.to_csv(), &mut written)?;
        write_file(dir, &format!("{}.svg", t.metric), &svg::rate_table(t), &mut written)?;
    }
    write_file(dir, "rmse_heatmap.csv", &heatmap.to_csv(), &mut written)?;
    write_file(dir, "rmse_heatmap.svg", &svg::rmse_heatmap(&heatmap), &mut written)?;
    for tr in &bundle.trajectories {
        write_file(dir, &format!("trajectory_{}.csv", tr.id), &tr.to_csv(), &mut written)?;
        write_file(dir, &format!("trajectory_{}.svg", tr.id), &svg::trajectory(tr), &mut written)?;
    }
    let summary = summarize(&tables, &heatmap);
    write_file(dir, "summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"), &mut written)?;
    Ok(written)
}

/// Minimal SVG 1.1 renderers.
///
/// Rate tables use a red→yellow→green ramp over `[0, 1]`; the RMSE heatmap
/// uses a white→dark-blue ramp over `[0, max cell]`. Blank cells are light
/// grey.
pub mod svg {
    use std::fmt::Write as _;

    use super::{MetricTable, RmseHeatmap, TrajectoryTrace};

    const CELL_W: f64 = 38.0;
    const CELL_H: f64 = 20.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 40.0;
    const BLANK: &str = "#dddddd";

    pub fn escape(s: &str) -> String {
        s.replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;")
            .replace('"', "&quot;")
    }

    /// 0 → red, 0.5 → yellow, 1 → green.
    pub fn rate_color(v: f64) -> String {
        let v = v.clamp(0.0, 1.0);
        let (r, g) = if v < 0.5 {
            (255.0, 510.0 * v)
        } else {
            (510.0 * (1.0 - v), 255.0)
        };
        format!("#{:02x}{:02x}40", r.round() as u8, g.round() as u8)
    }

    /// 0 → white, `max` → dark blue.
    pub fn rmse_color(v: f64, max: f64) -> String {
        let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
        let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
        format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
    }

    fn grid(
        title: &str,
        rows: &[String],
        cols: &[String],
        cells: &[Vec<Option<f64>>],
        color: impl Fn(f64) -> String,
        label: impl Fn(f64) -> String,
    ) -> String {
        let w = LEFT + CELL_W * cols.len() as f64 + 10.0;
        let h = TOP + CELL_H * rows.len() as f64 + 10.0;
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" font-family="sans-serif" font-size="9">"#
        )
        .unwrap();
        writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, escape(title)).unwrap();
        for (c, name) in cols.iter().enumerate() {
            let x = LEFT + CELL_W * c as f64 + CELL_W / 2.0;
            writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, TOP - 4.0, escape(name)).unwrap();
        }
        for (r, name) in rows.iter().enumerate() {
            let y = TOP + CELL_H * r as f64;
            writeln!(s, r#"<text x="4" y="{}">{}</text>"#, y + CELL_H * 0.65, escape(name)).unwrap();
            for (c, v) in cells[r].iter().enumerate() {
                let x = LEFT + CELL_W * c as f64;
                let fill = v.map_or_else(|| BLANK.to_string(), &color);
                writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/>"##
                )
                .unwrap();
                if let Some(v) = v {
                    writeln!(
                        s,
                        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                        x + CELL_W / 2.0,
                        y + CELL_H * 0.65,
                        label(*v)
                    )
                    .unwrap();
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn rate_table(t: &MetricTable) -> String {
        let rows: Vec<String> = t.subjects.iter().map(|s| s.to_string()).collect();
        let cols: Vec<String> = t.codes.iter().map(|c| c.to_string()).collect();
        grid(&t.metric, &rows, &cols, &t.cells, rate_color, |v| format!("{:.0}", v * 100.0))
    }

    pub fn rmse_heatmap(h: &RmseHeatmap) -> String {
        let rows: Vec<String> = h.subjects.iter().map(|s| s.to_string()).collect();
        let cols: Vec<String> = h.codes.iter().map(|c| c.to_string()).collect();
        let max = h.cells.iter().flatten().flatten().fold(0.0_f64, |a, b| a.max(*b));
        grid("RMSE [ms]", &rows, &cols, &h.cells, |v| rmse_color(v, max), |v| format!("{v:.0}"))
    }

    /// Ground truth (black) and prediction (red) against time.
    pub fn trajectory(tr: &TrajectoryTrace) -> String {
        let (w, h, pad) = (480.0, 300.0, 40.0);
        let t_max = tr.t_ms.last().copied().unwrap_or(0.0).max(1.0);
        let y_max = tr
            .truth_ms
            .iter()
            .chain(&tr.predicted_ms)
            .fold(0.0_f64, |a, b| a.max(*b))
            .max(1.0);
        let px = |t: f64| pad + (w - 2.0 * pad) * t / t_max;
        let py = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;
        let line = |ys: &[f64]| -> String {
            tr.t_ms
                .iter()
                .zip(ys)
                .map(|(t, y)| format!("{:.2},{:.2}", px(*t), py(*y)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
        )
        .unwrap();
        writeln!(s, r#"<text x="{pad}" y="20" font-size="12">time of impact {}</text>"#, escape(&tr.id.to_string())).unwrap();
        writeln!(
            s,
            r##"<path d="M{pad},{} L{pad},{} L{},{}" fill="none" stroke="#888888"/>"##,
            pad,
            h - pad,
            w - pad,
            h - pad
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t_max} ms</text>"#, w - pad, h - pad + 14.0).unwrap();
        writeln!(s, r#"<text x="4" y="{}">{y_max:.0} ms</text>"#, pad + 4.0).unwrap();
        writeln!(s, r##"<polyline fill="none" stroke="#000000" points="{}"/>"##, line(&tr.truth_ms)).unwrap();
        writeln!(s, r##"<polyline fill="none" stroke="#d62728" points="{}"/>"##, line(&tr.predicted_ms)).unwrap();
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> TrialId {
        TrialId::from_filename(s).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&[true, true, false, false], &[true, false, false, true], None).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let c = confusion(&[true, false], &[true, false], None).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&[true, false], &[true, false], Some(&[false, false])).unwrap();
        assert_eq!(c, ConfusionCounts::default());
        assert!(confusion(&[true], &[true, false], None).is_err());
    }

    #[test]
    fn rates_examples() {
        let r = rates(&ConfusionCounts { tp: 1, fp: 0, tn: 0, fn_: 1 });
        assert_eq!(r.tpr, Some(0.5));
        assert_eq!(r.tnr, None);
        let r = rates(&ConfusionCounts { tp: 3, fp: 0, tn: 4, fn_: 0 });
        assert_eq!((r.tpr, r.tnr), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn table_cells_average_repetitions() {
        let subjects = vec![SubjectId::new("SA01").unwrap(), SubjectId::new("SE01").unwrap()];
        let outcomes = vec![
            TrialOutcome {
                id: id("F01_SA01_R01"),
                counts: ConfusionCounts { tp: 1, fp: 0, tn: 9, fn_: 1 },
            },
            TrialOutcome {
                id: id("F01_SA01_R02"),
                counts: ConfusionCounts { tp: 2, fp: 0, tn: 9, fn_: 0 },
            },
            TrialOutcome {
                id: id("F02_SA01_R01"),
                counts: ConfusionCounts { tp: 0, fp: 1, tn: 3, fn_: 0 },
            },
        ];
        let t = metric_tables(&subjects, &outcomes);
        assert_eq!(t.fall_tpr.subjects, subjects);
        assert_eq!(t.fall_tpr.cells[0][0], Some(0.75));
        assert_eq!(t.fall_tpr.cells[0][1], None);
        assert!(t.fall_tpr.cells[1].iter().all(|c| c.is_none()));
        assert_eq!(t.fall_tnr.cells[0][1], Some(0.75));
        assert_eq!(t.fall_tpr.cell_average(), Some(0.75));
        assert_eq!(t.fall_tpr.pooled_rate(), Some(0.75));
        assert_eq!(t.adl_tnr.cell_average(), None);
        let csv = t.fall_tpr.to_csv();
        assert!(csv.starts_with("subject,F01,F02,"));
        assert!(csv.lines().nth(1).unwrap().starts_with("SA01,0.75,,"));
        assert!(csv.lines().last().unwrap().starts_with("average,0.75,"));
    }

    #[test]
    fn rmse_examples() {
        let targets: Vec<f64> = (0..20).rev().map(|k| k as f64 * 5.0).collect();
        let make = |f: &dyn Fn(usize, f64) -> f64| SegmentPrediction {
            id: id("F03_SA02_R01"),
            predicted: targets.iter().enumerate().map(|(i, t)| f(i, *t)).collect(),
            targets: targets.clone(),
        };
        let h = rmse_by_group(&[], &[make(&|_, t| t)]).unwrap();
        assert_eq!(h.cells[0][2], Some(0.0));
        let h = rmse_by_group(&[], &[make(&|_, t| t + 10.0)]).unwrap();
        assert!((h.cells[0][2].unwrap() - 10.0).abs() < 1e-12);
        let h = rmse_by_group(&[], &[make(&|i, t| if i % 2 == 0 { t + 10.0 } else { t - 10.0 })]).unwrap();
        assert!((h.global_rmse.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(h.cells[0][0], None);
    }

    #[test]
    fn colors() {
        assert_eq!(svg::rate_color(0.0), "#ff0040");
        assert_eq!(svg::rate_color(1.0), "#00ff40");
        assert_eq!(svg::rmse_color(0.0, 10.0), "#ffffff");
        assert_eq!(svg::rmse_color(10.0, 10.0), "#08306b");
    }
}
