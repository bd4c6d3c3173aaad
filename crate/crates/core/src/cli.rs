//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 optimization error.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{prepare_panel, Prepared, StudyConfig};
use crate::engine::fit;
use crate::error::{ErrorClass, Result, ScmError};
use crate::inference::{placebo_in_space, placebo_in_time, placebo_outcome_swap, unit_swap};
use crate::ingest::{load_long_csv, to_weekly};
use crate::report::{self, ArtifactWriter, FitSummary};
use crate::sensitivity::leave_one_out;
use crate::synthgen::{self, SynthParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_OPTIMIZATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "synthcontrol", version, about = "Synthetic control studies on weekly panels")]
pub struct Cli {
    /// Log filter, e.g. `warn` or `debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct StudyArgs {
    /// Study config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Read this prepared weekly panel instead of the config's input CSV.
    #[arg(long)]
    pub panel: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaceboMode {
    Space,
    Time,
    Outcome,
    Unit,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the weekly panel with derived variables and screen predictors.
    Prepare(StudyArgs),
    /// Fit the synthetic control and write weights, balance and gap series.
    Fit(StudyArgs),
    /// Run a placebo family.
    Placebo {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, value_enum)]
        mode: PlaceboMode,
        /// Weeks to move the treatment back (time mode).
        #[arg(long)]
        shift: Option<usize>,
        /// Replacement outcome variable (outcome mode); repeatable.
        #[arg(long)]
        outcome: Vec<String>,
        /// Donor to cast as treated (unit mode); repeatable.
        #[arg(long)]
        unit: Vec<String>,
    },
    /// Leave-one-out refits over the nonzero-weight donors.
    Loo(StudyArgs),
    /// Generate a seeded factor-model fixture CSV with a known effect.
    Synthgen {
        #[arg(long, default_value_t = 12)]
        units: usize,
        #[arg(long, default_value_t = 60)]
        weeks: usize,
        #[arg(long, default_value_t = 3)]
        factors: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        effect: f64,
        /// Noise sd as a fraction of the outcome scale (100).
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long)]
        treatment_week: Option<usize>,
        #[arg(long, default_value = "2023-01-01")]
        start: NaiveDate,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth JSON path; defaults to `<out>.truth.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

pub fn exit_code(e: &ScmError) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Optimization => EXIT_OPTIMIZATION,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    match run(&cli.command) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_study(args: &StudyArgs) -> Result<(StudyConfig, Prepared)> {
    let mut cfg = StudyConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let prepared = match &args.panel {
        None => cfg.prepare()?,
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| ScmError::Io(format!("cannot open {}: {e}", path.display())))?;
            let obs = load_long_csv(std::io::BufReader::new(file))?;
            let anchor = crate::config::parse_weekday(&cfg.data.week_anchor)?;
            let panel = to_weekly(&obs, anchor, cfg.data.aggregation)?;
            prepare_panel(&cfg, panel, obs.len())?
        }
    };
    Ok((cfg, prepared))
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

/// Executes one command and returns the text to print on success.
pub fn run(command: &Command) -> Result<String> {
    match command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Placebo {
            study,
            mode,
            shift,
            outcome,
            unit,
        } => cmd_placebo(study, *mode, *shift, outcome, unit),
        Command::Loo(args) => cmd_loo(args),
        Command::Synthgen {
            units,
            weeks,
            factors,
            effect,
            noise,
            treatment_week,
            start,
            seed,
            out,
            truth,
        } => {
            let params = SynthParams {
                units: *units,
                weeks: *weeks,
                factors: *factors,
                effect: *effect,
                noise: *noise,
                treatment_week: *treatment_week,
                start: *start,
                seed: *seed,
            };
            cmd_synthgen(&params, out, truth.as_deref())
        }
    }
}

pub fn cmd_prepare(args: &StudyArgs) -> Result<String> {
    let mut w = ArtifactWriter::new(&args.out_dir)?;
    let (cfg, prepared) = match load_study(args) {
        Ok(x) => x,
        Err(e) => {
            if e.class() == ErrorClass::Data {
                #[derive(Serialize)]
                struct Failure {
                    error: String,
                }
                w.json("prep_report.json", &Failure { error: e.to_string() })?;
            }
            return Err(e);
        }
    };
    let panel = &prepared.panel;
    let mut rows = Vec::new();
    for (u, unit) in panel.unit_ids().iter().enumerate() {
        for (v, var) in panel.variables().iter().enumerate() {
            for (t, week) in panel.week_index().iter().enumerate() {
                rows.push(vec![
                    unit.clone(),
                    week.to_string(),
                    var.clone(),
                    panel.value(v, u, t).to_string(),
                ]);
            }
        }
    }
    w.csv("panel.csv", &["unit", "date", "variable", "value"], rows)?;
    w.json(
        "prep_report.json",
        &Document {
            command: "prepare",
            seed: cfg.seed,
            body: &prepared.report,
        },
    )?;
    let r = &prepared.report;
    Ok(format!(
        "panel: {} units x {} weeks ({} .. {}), {} variables\n\
         derived: {}\npredictors kept: {}\npredictors dropped: {}\n\
         donors ({}): {}\nwrote {}\n",
        r.units.len(),
        r.n_weeks,
        r.first_week,
        r.last_week,
        r.variables.len(),
        r.derived_variables.join(", "),
        r.screening.kept.join(", "),
        r.dropped_predictors.join(", "),
        r.donors.len(),
        r.donors.join(", "),
        w.dir().display()
    ))
}

#[derive(Serialize)]
struct FitBody<'a> {
    summary: FitSummary,
    fit: &'a crate::engine::FitResult,
    prep: &'a crate::config::PrepReport,
}

pub fn cmd_fit(args: &StudyArgs) -> Result<String> {
    let (cfg, prepared) = load_study(args)?;
    let f = fit(&prepared.panel, &prepared.spec, &cfg.search())?;
    let mut w = ArtifactWriter::new(&args.out_dir)?;
    report::write_fit_tables(&mut w, "", &f)?;
    w.json(
        "fit.json",
        &Document {
            command: "fit",
            seed: cfg.seed,
            body: FitBody {
                summary: FitSummary::of(&f),
                fit: &f,
                prep: &prepared.report,
            },
        },
    )?;
    Ok(report::render_fit(&f))
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_placebo(
    args: &StudyArgs,
    mode: PlaceboMode,
    shift: Option<usize>,
    outcomes: &[String],
    units: &[String],
) -> Result<String> {
    let (cfg, prepared) = load_study(args)?;
    let (panel, spec) = (&prepared.panel, &prepared.spec);
    let search = cfg.search();
    let mut w = ArtifactWriter::new(&args.out_dir)?;
    match mode {
        PlaceboMode::Space => {
            let scope = cfg.placebo.rank_scope;
            let mut cutoffs: Vec<Option<f64>> = cfg.placebo.cutoffs.iter().copied().map(Some).collect();
            if cfg.placebo.no_limit {
                cutoffs.push(None);
            }
            if cutoffs.is_empty() {
                cutoffs.push(None);
            }
            let base = placebo_in_space(panel, spec, cutoffs[0], scope, &search)?;
            let studies: Vec<_> = cutoffs.iter().map(|c| base.with_cutoff(*c, scope)).collect();
            report::write_placebo_space(&mut w, &studies)?;
            #[derive(Serialize)]
            struct CutoffView<'a> {
                cutoff_multiple: Option<f64>,
                discarded: &'a [String],
                treated_rank: usize,
                n_ranked: usize,
                p_value: f64,
            }
            #[derive(Serialize)]
            struct SpaceBody<'a> {
                treated: &'a str,
                rank_scope: crate::inference::RankScope,
                cutoffs: Vec<CutoffView<'a>>,
                units: &'a [crate::inference::PlaceboUnit],
                failures: &'a [crate::inference::PlaceboFailure],
            }
            w.json(
                "placebo_space.json",
                &Document {
                    command: "placebo-space",
                    seed: cfg.seed,
                    body: SpaceBody {
                        treated: &base.treated,
                        rank_scope: scope,
                        cutoffs: studies
                            .iter()
                            .map(|s| CutoffView {
                                cutoff_multiple: s.cutoff_multiple,
                                discarded: &s.discarded,
                                treated_rank: s.treated_rank,
                                n_ranked: s.n_ranked,
                                p_value: s.p_value,
                            })
                            .collect(),
                        units: &base.units,
                        failures: &base.failures,
                    },
                },
            )?;
            Ok(report::render_placebo_space(&studies))
        }
        PlaceboMode::Time => {
            let shift = shift.or(cfg.placebo.shift_weeks).ok_or_else(|| {
                ScmError::Config("time mode needs --shift or placebo.shift_weeks".into())
            })?;
            let (f, verdict) = placebo_in_time(panel, spec, shift, cfg.placebo.pass_threshold, &search)?;
            report::write_fit_tables(&mut w, "placebo_time_", &f)?;
            #[derive(Serialize)]
            struct TimeBody<'a> {
                verdict: &'a crate::inference::DivergenceVerdict,
                summary: FitSummary,
                fit: &'a crate::engine::FitResult,
            }
            w.json(
                "placebo_time.json",
                &Document {
                    command: "placebo-time",
                    seed: cfg.seed,
                    body: TimeBody {
                        verdict: &verdict,
                        summary: FitSummary::of(&f),
                        fit: &f,
                    },
                },
            )?;
            Ok(format!("{}\n{}", report::render_verdict(&verdict), report::render_fit(&f)))
        }
        PlaceboMode::Outcome | PlaceboMode::Unit => {
            let targets: Vec<String> = match mode {
                PlaceboMode::Outcome if !outcomes.is_empty() => outcomes.to_vec(),
                PlaceboMode::Outcome => cfg.placebo.outcomes.clone(),
                _ if !units.is_empty() => units.to_vec(),
                _ => cfg.placebo.units.clone(),
            };
            if targets.is_empty() {
                return Err(ScmError::Config(format!(
                    "{} mode needs --{} or placebo.{}",
                    if mode == PlaceboMode::Outcome { "outcome" } else { "unit" },
                    if mode == PlaceboMode::Outcome { "outcome" } else { "unit" },
                    if mode == PlaceboMode::Outcome { "outcomes" } else { "units" },
                )));
            }
            let label = if mode == PlaceboMode::Outcome { "outcome" } else { "unit" };
            let mut text = String::new();
            let mut fits = Vec::new();
            for t in &targets {
                let f = if mode == PlaceboMode::Outcome {
                    placebo_outcome_swap(panel, spec, t, &search)?
                } else {
                    unit_swap(panel, spec, t, &search)?
                };
                report::write_fit_tables(&mut w, &format!("placebo_{label}_{}_", sanitize(t)), &f)?;
                text.push_str(&format!("== {label} placebo: {t}\n"));
                text.push_str(&report::render_fit(&f));
                text.push('\n');
                fits.push((t.clone(), FitSummary::of(&f), f));
            }
            #[derive(Serialize)]
            struct SwapEntry<'a> {
                target: &'a str,
                summary: &'a FitSummary,
                fit: &'a crate::engine::FitResult,
            }
            #[derive(Serialize)]
            struct SwapBody<'a> {
                swaps: Vec<SwapEntry<'a>>,
            }
            w.json(
                &format!("placebo_{label}.json"),
                &Document {
                    command: if mode == PlaceboMode::Outcome { "placebo-outcome" } else { "placebo-unit" },
                    seed: cfg.seed,
                    body: SwapBody {
                        swaps: fits
                            .iter()
                            .map(|(t, s, f)| SwapEntry {
                                target: t,
                                summary: s,
                                fit: f,
                            })
                            .collect(),
                    },
                },
            )?;
            Ok(text)
        }
    }
}

pub fn cmd_loo(args: &StudyArgs) -> Result<String> {
    let (cfg, prepared) = load_study(args)?;
    let search = cfg.search();
    let baseline = fit(&prepared.panel, &prepared.spec, &search)?;
    let rep = leave_one_out(&prepared.panel, &prepared.spec, &baseline, &cfg.loo.options(), &search)?;
    let mut w = ArtifactWriter::new(&args.out_dir)?;
    report::write_loo(&mut w, &rep)?;
    #[derive(Serialize)]
    struct LooBody<'a> {
        robust: bool,
        verdict: &'a str,
        baseline: FitSummary,
        report: &'a crate::sensitivity::LooReport,
    }
    w.json(
        "loo.json",
        &Document {
            command: "loo",
            seed: cfg.seed,
            body: LooBody {
                robust: rep.robust(),
                verdict: rep.verdict(),
                baseline: FitSummary::of(&baseline),
                report: &rep,
            },
        },
    )?;
    Ok(report::render_loo(&rep))
}

pub fn cmd_synthgen(params: &SynthParams, out: &Path, truth: Option<&Path>) -> Result<String> {
    let panel = synthgen::generate(params)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(out)?;
    synthgen::write_long_csv(std::io::BufWriter::new(file), &panel.observations)?;
    let truth_path = truth
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.truth.json", out.display())));
    let mut text = serde_json::to_string_pretty(&panel.truth)?;
    text.push('\n');
    std::fs::write(&truth_path, text)?;
    Ok(format!(
        "wrote {} ({} rows) and {}\n",
        out.display(),
        panel.observations.len(),
        truth_path.display()
    ))
}
