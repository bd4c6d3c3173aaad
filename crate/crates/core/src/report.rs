//! Result artifacts: tidy CSV tables, one JSON document per command, and
//! plain-text tables for the terminal.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::FitResult;
use crate::error::Result;
use crate::inference::{mspe_ratio_or_floor, DivergenceVerdict, PlaceboStudy};
use crate::sensitivity::LooReport;

/// Writes files into one output directory.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ArtifactWriter {
            dir,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.written.push(path);
        Ok(())
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub treated: String,
    pub outcome: String,
    pub average_post_gap: f64,
    pub pre_mspe: f64,
    pub post_mspe: f64,
    pub mspe_ratio: f64,
    pub pre_mspe_floored: bool,
    pub degenerate: bool,
}

impl FitSummary {
    pub fn of(fit: &FitResult) -> Self {
        let (ratio, floored) = mspe_ratio_or_floor(fit);
        FitSummary {
            treated: fit.spec.treated_unit.clone(),
            outcome: fit.spec.outcome_variable.clone(),
            average_post_gap: fit.average_post_gap,
            pre_mspe: fit.pre_mspe,
            post_mspe: fit.post_mspe,
            mspe_ratio: ratio,
            pre_mspe_floored: floored,
            degenerate: fit.diagnostics.degenerate,
        }
    }
}

/// Writes the four fit tables as `{prefix}<table>.csv`.
pub fn write_fit_tables(w: &mut ArtifactWriter, prefix: &str, fit: &FitResult) -> Result<()> {
    w.csv(
        &format!("{prefix}donor_weights.csv"),
        &["unit", "weight"],
        fit.donor_weights
            .iter()
            .map(|(u, x)| vec![u.to_string(), num(x)]),
    )?;
    w.csv(
        &format!("{prefix}predictor_weights.csv"),
        &["predictor", "weight"],
        fit.predictor_weights
            .iter()
            .map(|(p, x)| vec![p.to_string(), num(x)]),
    )?;
    w.csv(
        &format!("{prefix}balance.csv"),
        &["predictor", "treated", "synthetic", "sample_mean", "improvement"],
        fit.balance.rows.iter().map(|r| {
            vec![
                r.predictor.clone(),
                num(r.treated),
                num(r.synthetic),
                num(r.sample_mean),
                num(r.improvement),
            ]
        }),
    )?;
    w.csv(
        &format!("{prefix}series.csv"),
        &["week", "treated", "synthetic", "gap"],
        (0..fit.weeks.len()).map(|i| {
            vec![
                fit.weeks[i].to_string(),
                num(fit.treated_outcome[i]),
                num(fit.synthetic_outcome[i]),
                num(fit.gap[i]),
            ]
        }),
    )?;
    Ok(())
}

/// Terminal rendering of a fit.
pub fn render_fit(fit: &FitResult) -> String {
    let s = FitSummary::of(fit);
    let mut out = String::new();
    let _ = writeln!(out, "Synthetic {} ({})", s.treated, s.outcome);
    let _ = writeln!(out, "\n{:<28} {:>8}", "Donor", "Weight");
    for (u, x) in fit.donor_weights.nonzero(0.0) {
        let _ = writeln!(out, "{u:<28} {x:>8.3}");
    }
    let _ = writeln!(out, "\n{:<40} {:>8}", "Predictor", "Weight");
    for (p, x) in fit.predictor_weights.iter() {
        let _ = writeln!(out, "{p:<40} {x:>8.3}");
    }
    let _ = writeln!(
        out,
        "\n{:<40} {:>12} {:>12} {:>12} {:>12}",
        "Predictor", "Treated", "Synthetic", "Sample mean", "Improvement"
    );
    for r in &fit.balance.rows {
        let _ = writeln!(
            out,
            "{:<40} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            r.predictor, r.treated, r.synthetic, r.sample_mean, r.improvement
        );
    }
    let _ = writeln!(out, "\naverage post-treatment gap: {:.3}", s.average_post_gap);
    let _ = writeln!(out, "pre-treatment MSPE:         {:.6}", s.pre_mspe);
    let _ = writeln!(out, "post-treatment MSPE:        {:.6}", s.post_mspe);
    let _ = writeln!(out, "post/pre MSPE ratio:        {:.3}", s.mspe_ratio);
    if s.degenerate {
        let _ = writeln!(out, "note: donor weights are not unique (degenerate optimum)");
    }
    out
}

/// Label used in file names for a cutoff: `10x`, `100x`, `none`.
pub fn cutoff_label(c: Option<f64>) -> String {
    match c {
        Some(c) => format!("{c}x"),
        None => "none".into(),
    }
}

/// Per-unit ratio table and gap overlays for each cutoff.
pub fn write_placebo_space(w: &mut ArtifactWriter, studies: &[PlaceboStudy]) -> Result<()> {
    let base = &studies[0];
    let mut header = vec!["unit".to_string(), "pre_mspe".into(), "post_mspe".into(), "ratio".into()];
    for s in studies {
        header.push(format!("discarded_{}", cutoff_label(s.cutoff_multiple)));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    w.csv(
        "placebo_ratios.csv",
        &header_refs,
        base.units.iter().map(|u| {
            let mut row = vec![u.unit.clone(), num(u.fit.pre_mspe), num(u.fit.post_mspe), num(u.ratio)];
            for s in studies {
                row.push(s.discarded.contains(&u.unit).to_string());
            }
            row
        }),
    )?;
    for s in studies {
        let gaps = s.retained_gaps();
        let mut header = vec!["week"];
        header.extend(gaps.iter().map(|(u, _)| *u));
        let weeks = &base.treated_fit().weeks;
        w.csv(
            &format!("placebo_gaps_{}.csv", cutoff_label(s.cutoff_multiple)),
            &header,
            (0..weeks.len()).map(|i| {
                std::iter::once(weeks[i].to_string())
                    .chain(gaps.iter().map(|(_, g)| num(g[i])))
                    .collect::<Vec<_>>()
            }),
        )?;
    }
    Ok(())
}

pub fn render_placebo_space(studies: &[PlaceboStudy]) -> String {
    let base = &studies[0];
    let mut out = String::new();
    let _ = writeln!(out, "In-space placebo for {}", base.treated);
    let mut ranked: Vec<_> = base.units.iter().collect();
    ranked.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then(a.unit.cmp(&b.unit)));
    let _ = writeln!(out, "\n{:<16} {:>14} {:>14} {:>12}", "Unit", "Pre MSPE", "Post MSPE", "Ratio");
    for u in ranked {
        let _ = writeln!(
            out,
            "{:<16} {:>14.4} {:>14.4} {:>12.3}",
            u.unit, u.fit.pre_mspe, u.fit.post_mspe, u.ratio
        );
    }
    for f in &base.failures {
        let _ = writeln!(out, "{:<16} failed: {}", f.unit, f.error);
    }
    for s in studies {
        let _ = writeln!(
            out,
            "\ncutoff {}: rank {} of {}, p = {:.4}; discarded ({}): {}",
            cutoff_label(s.cutoff_multiple),
            s.treated_rank,
            s.n_ranked,
            s.p_value,
            s.discarded.len(),
            s.discarded.join(", ")
        );
    }
    let p = base.p_value;
    let _ = writeln!(
        out,
        "verdict: {}",
        if p <= 0.05 { "significant at 0.05" } else { "not significant" }
    );
    out
}

pub fn render_verdict(v: &DivergenceVerdict) -> String {
    format!(
        "In-time placebo: treatment moved {} weeks back to {}\n\
         placebo-window MSPE {:.6}, pre MSPE {:.6}, ratio {:.3} (threshold {})\n\
         first sustained divergence: {}\nverdict: {}\n",
        v.shift_weeks,
        v.placebo_treatment_date,
        v.placebo_post_mspe,
        v.pre_mspe,
        v.ratio,
        v.pass_threshold,
        v.first_divergence_week
            .map(|d| d.to_string())
            .unwrap_or_else(|| "none".into()),
        if v.pass { "passed" } else { "NOT passed" }
    )
}

pub fn write_loo(w: &mut ArtifactWriter, report: &LooReport) -> Result<()> {
    let baseline = vec![
        "(none)".to_string(),
        String::new(),
        num(report.baseline_average_gap),
        num(report.baseline_pre_mspe),
        "false".into(),
        "false".into(),
        String::new(),
    ];
    let rows = std::iter::once(baseline).chain(report.entries.iter().map(|e| {
        vec![
            e.excluded_donor.clone(),
            num(e.baseline_weight),
            e.average_post_gap.map(num).unwrap_or_default(),
            e.fit.as_ref().map(|f| num(f.pre_mspe)).unwrap_or_default(),
            e.sign_flipped.to_string(),
            e.pre_fit_degraded.to_string(),
            e.error.clone().unwrap_or_default(),
        ]
    }));
    w.csv(
        "loo.csv",
        &[
            "excluded_donor",
            "baseline_weight",
            "average_post_gap",
            "pre_mspe",
            "sign_flipped",
            "pre_fit_degraded",
            "error",
        ],
        rows,
    )?;
    for e in &report.entries {
        if let Some(f) = &e.fit {
            w.csv(
                &format!("loo_{}_series.csv", e.excluded_donor),
                &["week", "treated", "synthetic", "gap"],
                (0..f.weeks.len()).map(|i| {
                    vec![
                        f.weeks[i].to_string(),
                        num(f.treated_outcome[i]),
                        num(f.synthetic_outcome[i]),
                        num(f.gap[i]),
                    ]
                }),
            )?;
        }
    }
    Ok(())
}

pub fn render_loo(report: &LooReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>16} {:>6} {:>9}", "Left out", "Avg gap", "Flip", "Degraded");
    let _ = writeln!(out, "{:<24} {:>16.3}", "(none)", report.baseline_average_gap);
    for e in &report.entries {
        match e.average_post_gap {
            Some(g) => {
                let _ = writeln!(
                    out,
                    "{:<24} {:>16.3} {:>6} {:>9}",
                    e.excluded_donor, g, e.sign_flipped, e.pre_fit_degraded
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<24} failed: {}",
                    e.excluded_donor,
                    e.error.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = writeln!(out, "verdict: {}", report.verdict());
    out
}
