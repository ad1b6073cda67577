//! Experiment reports: one row per (regime, seed, test language, mode), CSV
//! serialization and Markdown summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{SignificanceResult, Winner};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub regime: String,
    pub seed: u64,
    /// Training languages joined with `+`.
    pub train_langs: String,
    pub test_lang: String,
    pub mode: String,
    pub rank: Option<usize>,
    /// Optimizer steps taken; empty for runs without training.
    pub steps: Option<usize>,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub selected_step: Option<usize>,
}

impl ReportRow {
    fn sort_key(&self) -> (&str, &str, &str, u64) {
        (&self.regime, &self.test_lang, &self.mode, self.seed)
    }

    pub fn metric(&self, id: &str) -> Option<f64> {
        match id {
            "rouge1" => Some(self.rouge1),
            "rouge2" => Some(self.rouge2),
            "rougeL" => Some(self.rouge_l),
            _ => None,
        }
    }
}

/// Paired bootstrap between the two best modes of one (regime, test language,
/// seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub regime: String,
    pub test_lang: String,
    pub seed: u64,
    pub a: String,
    pub b: String,
    pub result: SignificanceResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

const METRICS: [&str; 3] = ["rouge1", "rouge2", "rougeL"];

impl ExperimentReport {
    pub fn new(mut rows: Vec<ReportRow>, comparisons: Vec<Comparison>) -> Self {
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        ExperimentReport { rows, comparisons }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_COLUMNS).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses a report CSV. The row order of the input is kept.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
        if header != CSV_COLUMNS {
            return Err(Error::Data(format!("report columns {header:?} do not match {CSV_COLUMNS:?}")));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>().map_err(csv_error)?;
        Ok(ExperimentReport {
            rows,
            comparisons: Vec::new(),
        })
    }

    pub fn regimes(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.regime.as_str()).collect();
        set.into_iter().collect()
    }

    /// Per mode within `regime`: mean over test languages for each seed.
    pub fn seed_means(&self, regime: &str, metric: &str) -> BTreeMap<String, BTreeMap<u64, f64>> {
        let mut acc: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.regime == regime) {
            let v = r.metric(metric).unwrap_or(f64::NAN);
            let e = acc.entry(r.mode.clone()).or_default().entry(r.seed).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(m, seeds)| (m, seeds.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()))
            .collect()
    }

    /// Mean and sample standard deviation over seeds of [`Self::seed_means`].
    pub fn cell(&self, regime: &str, mode: &str, metric: &str) -> Option<(f64, f64, usize)> {
        let means = self.seed_means(regime, metric);
        let v: Vec<f64> = means.get(mode)?.values().copied().collect();
        Some(mean_std(&v))
    }
}

pub const CSV_COLUMNS: [&str; 11] = [
    "regime",
    "seed",
    "train_langs",
    "test_lang",
    "mode",
    "rank",
    "steps",
    "rouge1",
    "rouge2",
    "rougeL",
    "selected_step",
];

fn csv_error(e: csv::Error) -> Error {
    Error::Data(format!("report csv: {e}"))
}

/// Mean and sample standard deviation (`n − 1`); the deviation is 0 for a
/// single value.
pub fn mean_std(v: &[f64]) -> (f64, f64, usize) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Md,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!("unknown report format {other:?}; expected csv or md"))),
        }
    }
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::Data("report has no rows".into()));
    }
    match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Md => Ok(render_markdown(report)),
    }
}

fn fmt_cell(mean: f64, std: f64, n: usize) -> String {
    if n > 1 {
        format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
    } else {
        format!("{:.2}", 100.0 * mean)
    }
}

fn bold_if(s: String, best: bool) -> String {
    if best {
        format!("**{s}**")
    } else {
        s
    }
}

/// Index set of the maximal values; NaNs never win.
fn best_of(values: &[f64]) -> Vec<bool> {
    let max = values.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|&v| v == max).collect()
}

fn render_markdown(report: &ExperimentReport) -> String {
    let mut s = String::new();
    for regime in report.regimes() {
        let modes: Vec<String> = report.seed_means(regime, "rougeL").into_keys().collect();
        writeln!(s, "## {regime}\n").unwrap();
        writeln!(s, "Scores ×100, averaged over test languages; mean ± std over seeds.\n").unwrap();
        writeln!(s, "| mode | R-1 | R-2 | R-L |").unwrap();
        writeln!(s, "|---|---|---|---|").unwrap();
        let cols: Vec<Vec<(f64, f64, usize)>> = METRICS
            .iter()
            .map(|m| modes.iter().map(|mode| report.cell(regime, mode, m).expect("mode present")).collect())
            .collect();
        let bests: Vec<Vec<bool>> = cols
            .iter()
            .map(|c| best_of(&c.iter().map(|x| x.0).collect::<Vec<_>>()))
            .collect();
        for (i, mode) in modes.iter().enumerate() {
            write!(s, "| {mode} |").unwrap();
            for (c, b) in cols.iter().zip(&bests) {
                let (m, sd, n) = c[i];
                write!(s, " {} |", bold_if(fmt_cell(m, sd, n), b[i])).unwrap();
            }
            s.push('\n');
        }
        s.push('\n');

        let langs: Vec<&str> = report
            .rows
            .iter()
            .filter(|r| r.regime == regime)
            .map(|r| r.test_lang.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if langs.len() > 1 {
            writeln!(s, "R-L per test language:\n").unwrap();
            writeln!(s, "| mode | {} |", langs.join(" | ")).unwrap();
            writeln!(s, "|---|{}", "---|".repeat(langs.len())).unwrap();
            let grid: Vec<Vec<(f64, f64, usize)>> = langs
                .iter()
                .map(|l| {
                    modes
                        .iter()
                        .map(|mode| {
                            let v: Vec<f64> = report
                                .rows
                                .iter()
                                .filter(|r| r.regime == regime && r.test_lang == *l && &r.mode == mode)
                                .map(|r| r.rouge_l)
                                .collect();
                            mean_std(&v)
                        })
                        .collect()
                })
                .collect();
            let bests: Vec<Vec<bool>> = grid
                .iter()
                .map(|c| best_of(&c.iter().map(|x| x.0).collect::<Vec<_>>()))
                .collect();
            for (i, mode) in modes.iter().enumerate() {
                write!(s, "| {mode} |").unwrap();
                for (c, b) in grid.iter().zip(&bests) {
                    let (m, sd, n) = c[i];
                    let cell = if n == 0 { "–".to_string() } else { bold_if(fmt_cell(m, sd, n), b[i]) };
                    write!(s, " {cell} |").unwrap();
                }
                s.push('\n');
            }
            s.push('\n');
        }

        let notes: Vec<&Comparison> = report.comparisons.iter().filter(|c| c.regime == regime).collect();
        if !notes.is_empty() {
            writeln!(s, "Paired bootstrap on R-L between the two best modes:\n").unwrap();
            for c in notes {
                let verdict = if c.result.significant() {
                    let w = match c.result.winner {
                        Winner::A => &c.a,
                        Winner::B => &c.b,
                        Winner::Tie => "neither",
                    };
                    format!("{w} better (p = {:.3} < {})", c.result.p_value, c.result.threshold)
                } else {
                    format!("not significant (p = {:.3})", c.result.p_value)
                };
                writeln!(s, "- {} seed {}: {} vs {}: {verdict}", c.test_lang, c.seed, c.a, c.b).unwrap();
            }
            s.push('\n');
        }
    }
    s
}
