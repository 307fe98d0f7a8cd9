//! Versioned CSV and JSON reports and SVG bar charts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Algorithm;

/// Bumped whenever a column or field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// One engine run of `separate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub log_likelihood: Vec<f64>,
    pub iteration_seconds: Vec<f64>,
    pub em_seconds: f64,
    pub rtf: f64,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub schema_version: u32,
    pub input: String,
    pub sample_rate: u32,
    pub channels: usize,
    pub samples: usize,
    pub frames: usize,
    pub bins: usize,
    pub iterations: usize,
    pub init: String,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    /// Largest absolute difference between the two engines' STFT-domain
    /// images, when both ran.
    pub max_image_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub estimates: Vec<String>,
    pub references: Vec<String>,
    /// `sdr_db[j]` belongs to reference `j`.
    pub sdr_db: Vec<f64>,
    /// `pairing[j]` is the estimate matched to reference `j`.
    pub pairing: Vec<usize>,
    pub sdr_mean_db: f64,
}

impl EvaluationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["schema_version", "reference", "estimate", "sdr_db"])?;
        for (j, sdr) in self.sdr_db.iter().enumerate() {
            let estimate = &self.estimates[self.pairing[j]];
            w.write_record([
                SCHEMA_VERSION.to_string(),
                self.references[j].clone(),
                estimate.clone(),
                format!("{sdr:.4}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One algorithm on one benchmark trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub rt60: f64,
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub sdr_db: [f64; 2],
    pub em_seconds: f64,
    pub rtf: f64,
}

impl TrialRecord {
    pub fn sdr_mean(&self) -> f64 {
        (self.sdr_db[0] + self.sdr_db[1]) / 2.0
    }
}

fn rt60_ms(rt60: f64) -> String {
    format!("{:.0}", rt60 * 1000.0)
}

/// Per-trial separation quality. Contains no timings, so it is identical
/// across repeated runs with the same configuration.
pub fn write_sdr_csv<W: Write>(records: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "schema_version",
        "rt60_ms",
        "trial",
        "seed",
        "algorithm",
        "sdr_source1_db",
        "sdr_source2_db",
        "sdr_mean_db",
    ])?;
    for r in records {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            rt60_ms(r.rt60),
            r.trial.to_string(),
            r.seed.to_string(),
            r.algorithm.to_string(),
            format!("{:.4}", r.sdr_db[0]),
            format!("{:.4}", r.sdr_db[1]),
            format!("{:.4}", r.sdr_mean()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Means over the trials of one reverberation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub rt60: f64,
    pub trials: usize,
    pub sdr_fca_db: f64,
    pub sdr_fastfca_db: f64,
    /// Largest per-trial `|SDR(FastFCA) - SDR(FCA)|`.
    pub max_sdr_gap_db: f64,
    pub rtf_fca: f64,
    pub rtf_fastfca: f64,
    pub speedup: f64,
}

/// Groups records by reverberation time, in order of first appearance.
pub fn summarize(records: &[TrialRecord]) -> Vec<ConditionSummary> {
    let mut conditions: Vec<f64> = Vec::new();
    for r in records {
        if !conditions.contains(&r.rt60) {
            conditions.push(r.rt60);
        }
    }
    conditions
        .into_iter()
        .map(|rt60| {
            let pick = |alg: Algorithm| -> Vec<&TrialRecord> {
                records
                    .iter()
                    .filter(|r| r.rt60 == rt60 && r.algorithm == alg)
                    .collect()
            };
            let (slow, fast) = (pick(Algorithm::Fca), pick(Algorithm::FastFca));
            let mean = |v: &[&TrialRecord], f: fn(&TrialRecord) -> f64| -> f64 {
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().map(|r| f(r)).sum::<f64>() / v.len() as f64
                }
            };
            let gap = slow
                .iter()
                .filter_map(|a| {
                    fast.iter()
                        .find(|b| b.trial == a.trial)
                        .map(|b| (a.sdr_mean() - b.sdr_mean()).abs())
                })
                .fold(0.0, f64::max);
            let rtf_fca = mean(&slow, |r| r.rtf);
            let rtf_fastfca = mean(&fast, |r| r.rtf);
            ConditionSummary {
                rt60,
                trials: slow.len().max(fast.len()),
                sdr_fca_db: mean(&slow, TrialRecord::sdr_mean),
                sdr_fastfca_db: mean(&fast, TrialRecord::sdr_mean),
                max_sdr_gap_db: gap,
                rtf_fca,
                rtf_fastfca,
                speedup: rtf_fca / rtf_fastfca,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[ConditionSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "schema_version",
        "rt60_ms",
        "trials",
        "sdr_fca_db",
        "sdr_fastfca_db",
        "max_sdr_gap_db",
        "rtf_fca",
        "rtf_fastfca",
        "speedup",
    ])?;
    for s in summary {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            rt60_ms(s.rt60),
            s.trials.to_string(),
            format!("{:.4}", s.sdr_fca_db),
            format!("{:.4}", s.sdr_fastfca_db),
            format!("{:.4}", s.max_sdr_gap_db),
            format!("{:.6}", s.rtf_fca),
            format!("{:.6}", s.rtf_fastfca),
            format!("{:.2}", s.speedup),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grouped bar chart: one group per category, one bar per series.
pub fn bar_chart_svg(title: &str, y_label: &str, categories: &[String], series: &[(&str, Vec<f64>)]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 360.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

    let values = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (lo, hi) = (lo - 0.05 * span * f64::from(u8::from(lo < 0.0)), hi + 0.05 * span);
    let plot_h = HEIGHT - TOP - BOTTOM;
    let plot_w = WIDTH - LEFT - RIGHT;
    let y_of = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    svg.push_str(&format!(
        "<text transform=\"translate(18 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
        TOP + plot_h / 2.0,
        escape(y_label)
    ));
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            tick(v)
        ));
    }
    let zero = y_of(0.0);
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let x0 = LEFT + group_w * c as f64 + group_w * 0.1;
        for (s, (_, vals)) in series.iter().enumerate() {
            let v = vals.get(c).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let y = y_of(v);
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"><title>{}</title></rect>\n",
                x0 + bar_w * s as f64,
                y.min(zero),
                bar_w,
                (zero - y).abs(),
                COLORS[s % COLORS.len()],
                tick(v)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            x0 + group_w * 0.4,
            HEIGHT - BOTTOM + 18.0,
            escape(name)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{zero:.1}\" x2=\"{:.1}\" y2=\"{zero:.1}\" stroke=\"#333\"/>\n",
        WIDTH - RIGHT
    ));
    for (s, (name, _)) in series.iter().enumerate() {
        let x = LEFT + 120.0 * s as f64;
        let y = HEIGHT - 18.0;
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n<text x=\"{:.1}\" y=\"{y:.1}\">{}</text>\n",
            y - 10.0,
            COLORS[s % COLORS.len()],
            x + 16.0,
            escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
