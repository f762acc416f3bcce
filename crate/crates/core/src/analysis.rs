//! Post-hoc statistics over trace files: how chosen-action values move over
//! an episode, how often prior and critic agree with the improved policy,
//! what episodes cost, and SVG/CSV renderings of the same.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DecisionRecord, EpisodeResult, TraceLine};

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("series must have equal length >= 2"));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Episodes recovered from a trace, with their decision lines reattached.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub episodes: Vec<EpisodeResult>,
    /// Lines that were not valid trace lines, plus decision lines with no
    /// episode line after them.
    pub skipped: usize,
}

pub fn parse_trace(text: &str) -> Trace {
    let mut trace = Trace::default();
    let mut pending: Vec<DecisionRecord> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<TraceLine>(line) {
            Ok(TraceLine::Decision(d)) => pending.push(d),
            Ok(TraceLine::Episode(mut e)) => {
                if e.records.is_empty() {
                    e.records = std::mem::take(&mut pending);
                } else {
                    trace.skipped += pending.len();
                    pending.clear();
                }
                trace.episodes.push(e);
            }
            Err(e) => {
                log::warn!("skipping malformed trace line: {e}");
                trace.skipped += 1;
            }
        }
    }
    trace.skipped += pending.len();
    trace
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    Ok(parse_trace(&fs::read_to_string(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; zero for a single value.
    pub std: Option<f64>,
}

impl GroupStats {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return GroupStats::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() < 2 { 0.0 } else { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) };
        GroupStats { count: xs.len(), mean: Some(mean), std: Some(var.sqrt()) }
    }
}

/// The three chosen-action series correlated against the step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LogPSuccess,
    LogPFailure,
    Q,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::LogPSuccess, Metric::LogPFailure, Metric::Q];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::LogPSuccess => "log_p_success",
            Metric::LogPFailure => "log_p_failure",
            Metric::Q => "q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCorrelation {
    pub label: String,
    pub task: String,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    /// r per metric, in [`Metric::ALL`] order; `None` when that series has
    /// zero variance.
    pub r: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: Metric,
    pub success: GroupStats,
    pub failure: GroupStats,
    pub excluded_zero_variance: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub trajectories: Vec<TrajectoryCorrelation>,
    pub rows: Vec<CorrelationRow>,
    pub excluded_short: usize,
    /// Trajectories whose decisions carry no critic belief.
    pub excluded_no_belief: usize,
}

impl CorrelationReport {
    pub fn row(&self, m: Metric) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.metric == m)
    }
}

/// Per-episode correlation of the chosen candidate's log p_success,
/// log p_failure and q with the step index, grouped by episode success.
pub fn correlation_report(episodes: &[EpisodeResult]) -> CorrelationReport {
    let mut rep = CorrelationReport::default();
    for e in episodes {
        if e.records.len() < 2 {
            rep.excluded_short += 1;
            continue;
        }
        let chosen: Option<Vec<_>> = e.records.iter().map(|r| r.chosen().belief.map(|b| (b, r.chosen().q_value))).collect();
        let Some(chosen) = chosen else {
            rep.excluded_no_belief += 1;
            continue;
        };
        let t: Vec<f64> = e.records.iter().map(|r| r.step_index as f64).collect();
        let series = [
            chosen.iter().map(|(b, _)| b.p_success.ln()).collect::<Vec<_>>(),
            chosen.iter().map(|(b, _)| b.p_failure.ln()).collect(),
            chosen.iter().map(|(_, q)| *q).collect(),
        ];
        let r = [0, 1, 2].map(|i| pearson(&t, &series[i]).ok());
        rep.trajectories.push(TrajectoryCorrelation { label: e.label.clone(), task: e.task.clone(), seed: e.seed, success: e.success, steps: e.records.len(), r });
    }
    for (i, metric) in Metric::ALL.into_iter().enumerate() {
        let pick = |ok: bool| rep.trajectories.iter().filter(|t| t.success == ok).filter_map(|t| t.r[i]).collect::<Vec<_>>();
        rep.rows.push(CorrelationRow {
            metric,
            success: GroupStats::of(&pick(true)),
            failure: GroupStats::of(&pick(false)),
            excluded_zero_variance: rep.trajectories.iter().filter(|t| t.r[i].is_none()).count(),
        });
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConfidenceCase {
    BothAgree,
    PriorOnly,
    QOnly,
    Neither,
}

impl ConfidenceCase {
    pub const ALL: [ConfidenceCase; 4] = [ConfidenceCase::BothAgree, ConfidenceCase::PriorOnly, ConfidenceCase::QOnly, ConfidenceCase::Neither];
}

/// Top-1 minus top-2 gaps of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfidence {
    pub prior_gap: f64,
    pub critic_gap: f64,
    pub improved_gap: f64,
    pub case: ConfidenceCase,
}

fn top_gap(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for x in xs {
        if x > a {
            b = a;
            a = x;
        } else if x > b {
            b = x;
        }
    }
    let gap = if a == b { 0.0 } else { a - b };
    (a, gap)
}

/// Classifies a decision with at least two candidates. A model "agrees"
/// when the chosen candidate attains its top score.
pub fn classify(record: &DecisionRecord) -> Option<DecisionConfidence> {
    if record.candidates.len() < 2 {
        return None;
    }
    let (prior_top, prior_gap) = top_gap(record.candidates.iter().map(|c| c.prior_logprob));
    let (q_top, critic_gap) = top_gap(record.candidates.iter().map(|c| c.q_value));
    let (_, improved_gap) = top_gap(record.improved.candidate_probs.iter().copied());
    let chosen = record.chosen();
    let case = match (chosen.prior_logprob == prior_top, chosen.q_value == q_top) {
        (true, true) => ConfidenceCase::BothAgree,
        (true, false) => ConfidenceCase::PriorOnly,
        (false, true) => ConfidenceCase::QOnly,
        (false, false) => ConfidenceCase::Neither,
    };
    Some(DecisionConfidence { prior_gap, critic_gap, improved_gap, case })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case: ConfidenceCase,
    pub count: usize,
    pub proportion: f64,
    pub mean_prior_gap: Option<f64>,
    pub mean_critic_gap: Option<f64>,
    pub mean_improved_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub rows: Vec<CaseRow>,
    pub decisions: usize,
    pub episodes: usize,
    pub excluded_single_candidate: usize,
}

/// Averages are over decision steps, not episodes.
pub fn confidence_report(episodes: &[EpisodeResult]) -> ConfidenceReport {
    let mut all = Vec::new();
    let mut excluded = 0;
    let mut contributing = 0;
    for e in episodes {
        let before = all.len();
        for r in &e.records {
            match classify(r) {
                Some(c) => all.push(c),
                None => excluded += 1,
            }
        }
        contributing += usize::from(all.len() > before);
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let rows = ConfidenceCase::ALL
        .into_iter()
        .map(|case| {
            let mine: Vec<&DecisionConfidence> = all.iter().filter(|c| c.case == case).collect();
            CaseRow {
                case,
                count: mine.len(),
                proportion: if all.is_empty() { 0.0 } else { mine.len() as f64 / all.len() as f64 },
                mean_prior_gap: mean(mine.iter().map(|c| c.prior_gap).collect()),
                mean_critic_gap: mean(mine.iter().map(|c| c.critic_gap).collect()),
                mean_improved_gap: mean(mine.iter().map(|c| c.improved_gap).collect()),
            }
        })
        .collect();
    ConfidenceReport { rows, decisions: all.len(), episodes: contributing, excluded_single_candidate: excluded }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostGroup {
    pub episodes: usize,
    pub mean_steps: Option<f64>,
    pub mean_tokens: Option<f64>,
}

impl CostGroup {
    fn of(eps: &[&EpisodeResult]) -> Self {
        let n = eps.len() as f64;
        let mean = |f: fn(&EpisodeResult) -> f64| (!eps.is_empty()).then(|| eps.iter().map(|e| f(e)).sum::<f64>() / n);
        CostGroup { episodes: eps.len(), mean_steps: mean(|e| e.steps_used as f64), mean_tokens: mean(|e| e.tokens_used as f64) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub success_rate: f64,
    pub all: CostGroup,
    pub success: CostGroup,
    pub failure: CostGroup,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

/// Mean steps and tokens per episode for each configuration label, in
/// label order.
pub fn cost_report(episodes: &[EpisodeResult]) -> CostReport {
    let mut by_label: BTreeMap<&str, Vec<&EpisodeResult>> = BTreeMap::new();
    for e in episodes {
        by_label.entry(e.label.as_str()).or_default().push(e);
    }
    let rows = by_label
        .into_iter()
        .map(|(label, eps)| {
            let (ok, bad): (Vec<&EpisodeResult>, Vec<&EpisodeResult>) = eps.iter().partition(|e| e.success);
            CostRow {
                label: label.to_string(),
                success_rate: ok.len() as f64 / eps.len() as f64,
                all: CostGroup::of(&eps),
                success: CostGroup::of(&ok),
                failure: CostGroup::of(&bad),
            }
        })
        .collect();
    CostReport { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub episodes: usize,
    pub skipped_lines: usize,
    pub correlation: CorrelationReport,
    pub confidence: ConfidenceReport,
    pub cost: CostReport,
}

pub fn analyze(trace: &Trace) -> AnalysisReport {
    AnalysisReport {
        episodes: trace.episodes.len(),
        skipped_lines: trace.skipped,
        correlation: correlation_report(&trace.episodes),
        confidence: confidence_report(&trace.episodes),
        cost: cost_report(&trace.episodes),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub series: String,
    pub value: f64,
    /// Half-length of the error bar.
    pub err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub name: String,
    pub bars: Vec<Bar>,
}

/// Grouped bar chart rendered as a standalone SVG.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<BarGroup>,
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl BarChart {
    fn series(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for b in self.groups.iter().flat_map(|g| &g.bars) {
            if !names.contains(&b.series.as_str()) {
                names.push(&b.series);
            }
        }
        names
    }

    /// Value-axis range covering every bar and error-bar end, always
    /// including zero.
    fn range(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for b in self.groups.iter().flat_map(|g| &g.bars) {
            let e = b.err.unwrap_or(0.0);
            lo = lo.min(b.value - e);
            hi = hi.max(b.value + e);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        (lo, hi)
    }

    pub fn to_svg(&self) -> String {
        let series = self.series();
        let (w, h, left, top, bottom) = (640.0, 360.0, 60.0, 40.0, 60.0);
        let plot_h = h - top - bottom;
        let plot_w = w - left - 20.0;
        let (lo, hi) = self.range();
        let y = |v: f64| top + (hi - v) / (hi - lo) * plot_h;
        let group_w = plot_w / self.groups.len().max(1) as f64;
        let bar_w = group_w * 0.8 / series.len().max(1) as f64;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#, top + plot_h / 2.0, top + plot_h / 2.0, esc(&self.y_label));
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let _ = writeln!(s, r##"<line x1="{left}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#dddddd"/>"##, left + plot_w, y(v), y(v));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, left - 4.0, y(v) + 4.0);
        }
        let _ = writeln!(s, r#"<line x1="{left}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#, left + plot_w, y(0.0), y(0.0));
        for (gi, g) in self.groups.iter().enumerate() {
            let gx = left + gi as f64 * group_w + group_w * 0.1;
            for b in &g.bars {
                let si = series.iter().position(|n| *n == b.series).expect("series collected above");
                let x = gx + si as f64 * bar_w;
                let (y0, y1) = (y(b.value.max(0.0)), y(b.value.min(0.0)));
                let _ = writeln!(
                    s,
                    r#"<rect class="bar" x="{x:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {:.4}</title></rect>"#,
                    bar_w * 0.9,
                    y1 - y0,
                    PALETTE[si % PALETTE.len()],
                    esc(&b.series),
                    b.value
                );
                if let Some(e) = b.err {
                    let cx = x + bar_w * 0.45;
                    let _ = writeln!(s, r#"<line class="err" x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#, y(b.value + e), y(b.value - e));
                }
            }
            let _ = writeln!(s, r#"<text class="group" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, gx + group_w * 0.4, h - bottom + 16.0, esc(&g.name));
        }
        for (si, name) in series.iter().enumerate() {
            let lx = left + 10.0 + si as f64 * 130.0;
            let _ = writeln!(s, r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{}"/>"#, h - 24.0, PALETTE[si % PALETTE.len()]);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 14.0, h - 15.0, esc(name));
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["group", "series", "value", "err"]).map_err(io)?;
        for g in &self.groups {
            for b in &g.bars {
                w.write_record([g.name.clone(), b.series.clone(), b.value.to_string(), b.err.map(|e| e.to_string()).unwrap_or_default()]).map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Success rate per configuration label.
pub fn success_chart(cost: &CostReport) -> Option<BarChart> {
    (!cost.rows.is_empty()).then(|| BarChart {
        title: "Success rate".into(),
        y_label: "success rate".into(),
        groups: cost.rows.iter().map(|r| BarGroup { name: r.label.clone(), bars: vec![Bar { series: "success rate".into(), value: r.success_rate, err: None }] }).collect(),
    })
}

/// Mean correlation with step index, ± one standard deviation, by outcome.
pub fn correlation_chart(rep: &CorrelationReport) -> Option<BarChart> {
    let groups: Vec<BarGroup> = rep
        .rows
        .iter()
        .map(|row| BarGroup {
            name: row.metric.as_str().into(),
            bars: [("success", &row.success), ("failure", &row.failure)]
                .into_iter()
                .filter_map(|(name, g)| g.mean.map(|m| Bar { series: name.into(), value: m, err: g.std }))
                .collect(),
        })
        .filter(|g| !g.bars.is_empty())
        .collect();
    (!groups.is_empty()).then(|| BarChart { title: "Correlation with step index".into(), y_label: "Pearson r".into(), groups })
}

/// Writes `<name>.svg` and `<name>.csv` for every chart that has data and
/// returns the paths written.
pub fn emit_plots(report: &AnalysisReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let charts = [("success_rate", success_chart(&report.cost)), ("correlation", correlation_chart(&report.correlation))];
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, chart) in charts {
        let Some(chart) = chart else { continue };
        for (ext, body) in [("svg", chart.to_svg()), ("csv", chart.to_csv()?)] {
            let p = out_dir.join(format!("{name}.{ext}"));
            fs::write(&p, body)?;
            written.push(p);
        }
    }
    Ok(written)
}
