//! `confcal`: evaluate, calibrate and combine classifier predictions, and run
//! the 2D toy benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use confcal_core::calibration::{fit_novelty_percentiles, fit_novelty_scaling, fit_temperature};
use confcal_core::ensemble::{combine, ensemble_of_calibrated};
use confcal_core::metrics::{ece, evaluate_by_group, nll, DEFAULT_ECE_BINS};
use confcal_core::predictions::{load_predictions, FileFormat};
use confcal_core::report::{build_report, Metric, METRICS};
use confcal_core::toybench::{parse_roster, run_experiment, Generator, Method, SweepRange, ToyConfig, ToyRun, ToySpec};
use confcal_core::{Calibrator, GroupReports, GroupTag, PredictionSet, ProbabilitySet};

#[derive(Parser)]
#[command(name = "confcal", version, about = "Confidence calibration on familiar and novel samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for FileFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => FileFormat::Csv,
            Format::Json => FileFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Metrics per group for a prediction file.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Calibrator JSON applied before scoring.
        #[arg(long)]
        calibrator: Option<PathBuf>,
        /// Input format; guessed from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Where to write the report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a single temperature on the `val` rows.
    FitTemp {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit novelty-weighted temperature scaling on the `val` rows.
    ///
    /// Novelty percentiles come from the `train` rows when any carry a
    /// score, otherwise from the `val` rows.
    FitNovelty {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average the softmax outputs of several prediction files.
    Combine {
        /// One file per ensemble member; ids must line up.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        /// Fit and apply a temperature per member on its `val` rows first.
        #[arg(long)]
        calibrate: bool,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Probability CSV `id,label,group,p_0..`.
        #[arg(long)]
        out: PathBuf,
    },
    /// NLL and ECE per group over a range of fixed temperatures.
    Sweep {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        t_min: f64,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Percent-reduction table against a baseline.
    Report {
        /// `NAME=PATH` of a report JSON written by `eval`.
        #[arg(long)]
        baseline: String,
        /// `NAME=PATH`, repeatable; rows keep the given order.
        #[arg(long = "method")]
        methods: Vec<String>,
        /// Where to write the table JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the 2D toy benchmark.
    Toy {
        #[arg(long, default_value = "blobs")]
        spec: String,
        /// Comma-separated methods or `all`.
        #[arg(long, default_value = "all")]
        roster: String,
        /// Number of seeds, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Fraction of labels flipped in every split.
        #[arg(long)]
        label_noise: Option<f64>,
        /// Full toy configuration JSON; flags above override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Input errors exit with 1, everything else with 2.
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

fn classify(err: anyhow::Error) -> Failure {
    let internal = err
        .chain()
        .filter_map(|e| e.downcast_ref::<confcal_core::Error>())
        .any(|e| !e.is_input_error());
    if internal {
        Failure::Internal(err)
    } else {
        Failure::Input(err)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Toy { .. } => cmd_toy(cli.command),
        other => run(other).map_err(classify),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Eval { pred, calibrator, format, out } => cmd_eval(&pred, calibrator.as_deref(), format, out.as_deref()),
        Command::FitTemp { pred, format, out } => {
            let set = load(&pred, format)?;
            let val = set.filter_by_group(GroupTag::Val);
            let cal = fit_temperature(&val).context("fitting temperature on val rows")?;
            emit_calibrator(&cal, out.as_deref())
        }
        Command::FitNovelty { pred, format, out } => cmd_fit_novelty(&pred, format, out.as_deref()),
        Command::Combine { preds, calibrate, format, out } => cmd_combine(&preds, calibrate, format, &out),
        Command::Sweep { pred, t_min, t_max, steps, format, out } => {
            let range = SweepRange { t_min, t_max, steps };
            let csv = sweep_csv(&load(&pred, format)?, &range)?;
            write_or_print(out.as_deref(), &csv)
        }
        Command::Report { baseline, methods, out } => cmd_report(&baseline, &methods, out.as_deref()),
        Command::Toy { .. } => unreachable!("handled in main"),
    }
}

fn load(path: &Path, format: Option<Format>) -> Result<PredictionSet> {
    let format = format.map_or_else(|| FileFormat::from_path(path), Into::into);
    Ok(load_predictions(path, format)?)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn metrics_table(reports: &GroupReports) -> String {
    let mut out = String::from("group          n       NLL       Brier     LabelErr  ECE       E99 (count)\n");
    for (g, r) in reports {
        let e99 = r.e99.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{:<14} {:<7} {:<9.6} {:<9.6} {:<9.6} {:<9.6} {} ({})",
            g.as_str(),
            r.n,
            r.nll,
            r.brier,
            r.label_error,
            r.ece,
            e99,
            r.e99_count
        );
    }
    out
}

fn cmd_eval(pred: &Path, calibrator: Option<&Path>, format: Option<Format>, out: Option<&Path>) -> Result<()> {
    let set = load(pred, format)?;
    let probs = match calibrator {
        Some(path) => {
            let cal: Calibrator = read_json(path)?;
            cal.validate()?;
            cal.apply(&set)?
        }
        None => set.to_probabilities(),
    };
    let reports = evaluate_by_group(&probs)?;
    if reports.is_empty() {
        bail!("no labeled rows to evaluate in {}", pred.display());
    }
    print!("{}", metrics_table(&reports));
    if let Some(path) = out {
        write_json(path, &reports)?;
    }
    Ok(())
}

fn emit_calibrator(cal: &Calibrator, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string(cal)?;
    println!("{text}");
    if let Some(path) = out {
        write_json(path, cal)?;
    }
    Ok(())
}

fn cmd_fit_novelty(pred: &Path, format: Option<Format>, out: Option<&Path>) -> Result<()> {
    let set = load(pred, format)?;
    let val = set.filter_by_group(GroupTag::Val);
    if val.is_empty() {
        bail!("{} has no val rows", pred.display());
    }
    let train_scores: Vec<f64> = set
        .filter_by_group(GroupTag::Train)
        .records()
        .iter()
        .filter_map(|r| r.novelty)
        .collect();
    let source = if train_scores.is_empty() {
        val.records()
            .iter()
            .map(|r| r.novelty.ok_or_else(|| confcal_core::Error::MissingNovelty(r.id.clone())))
            .collect::<confcal_core::Result<Vec<f64>>>()?
    } else {
        train_scores
    };
    let percentiles = fit_novelty_percentiles(&source)?;
    let cal = fit_novelty_scaling(&val, percentiles)?;
    emit_calibrator(&cal, out)
}

fn cmd_combine(preds: &[PathBuf], calibrate: bool, format: Option<Format>, out: &Path) -> Result<()> {
    let sets = preds.iter().map(|p| load(p, format)).collect::<Result<Vec<_>>>()?;
    let combined = if calibrate {
        let pairs: Vec<(PredictionSet, PredictionSet)> = sets
            .into_iter()
            .map(|s| {
                let val = s.filter_by_group(GroupTag::Val);
                (s, val)
            })
            .collect();
        let (probs, cals) = ensemble_of_calibrated(&pairs)?;
        for (path, cal) in preds.iter().zip(&cals) {
            eprintln!("{}: {}", path.display(), serde_json::to_string(cal)?);
        }
        probs
    } else {
        let probs: Vec<ProbabilitySet> = sets.iter().map(PredictionSet::to_probabilities).collect();
        combine(&probs)?
    };
    combined.save_csv(out)?;
    Ok(())
}

fn sweep_csv(set: &PredictionSet, range: &SweepRange) -> Result<String> {
    let temps = range.temperatures()?;
    let groups: Vec<GroupTag> = set
        .groups()
        .into_iter()
        .filter(|g| *g != GroupTag::Unsup)
        .collect();
    let parts: Vec<PredictionSet> = groups.iter().map(|g| set.filter_by_group(*g)).collect();
    let mut out = String::from("t");
    for g in &groups {
        let _ = write!(out, ",nll_{g},ece_{g}");
    }
    out.push('\n');
    for t in temps {
        let cal = Calibrator::fixed(t)?;
        let _ = write!(out, "{t}");
        for part in &parts {
            let probs = cal.apply(part)?;
            let _ = write!(out, ",{},{}", nll(&probs)?, ece(&probs, DEFAULT_ECE_BINS)?.0);
        }
        out.push('\n');
    }
    Ok(out)
}

fn named_path(arg: &str) -> Result<(String, PathBuf)> {
    let (name, path) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("expected NAME=PATH, got `{arg}`"))?;
    if name.is_empty() || path.is_empty() {
        bail!("expected NAME=PATH, got `{arg}`");
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn cmd_report(baseline: &str, methods: &[String], out: Option<&Path>) -> Result<()> {
    let (base_name, base_path) = named_path(baseline)?;
    let base: GroupReports = read_json(&base_path)?;
    let rows = methods
        .iter()
        .map(|m| {
            let (name, path) = named_path(m)?;
            Ok((name, read_json::<GroupReports>(&path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = build_report(&base_name, &base, &rows)?;
    print!("{}", table.to_markdown());
    if let Some(path) = out {
        write_json(path, &table)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    tool: &'static str,
    version: &'static str,
    spec: &'a ToySpec,
    config: &'a ToyConfig,
    roster: &'a [Method],
    seeds: &'a [u64],
}

fn summary_markdown(run: &ToyRun) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Toy benchmark: {} ({} seeds)\n\nMean ± std across seeds.\n",
        run.spec.generator,
        run.seeds.len()
    );
    let groups = [GroupTag::FamiliarTest, GroupTag::NovelTest];
    let mut header = String::from("| Method |");
    let mut rule = String::from("|---|");
    for m in METRICS {
        for g in groups {
            let _ = write!(header, " {} ({g}) |", m.label());
            rule.push_str("---:|");
        }
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for (method, by_group) in &run.summary {
        let _ = write!(out, "| {method} |");
        for m in METRICS {
            for g in groups {
                let stat = by_group.get(&g).and_then(|s| match m {
                    Metric::Nll => Some(s.nll),
                    Metric::Brier => Some(s.brier),
                    Metric::LabelError => Some(s.label_error),
                    Metric::Ece => Some(s.ece),
                    Metric::E99 => s.e99,
                });
                match stat {
                    Some(s) => {
                        let _ = write!(out, " {:.4} ± {:.4} |", s.mean, s.std);
                    }
                    None => out.push_str(" n/a |"),
                }
            }
        }
        out.push('\n');
    }
    let failures: Vec<String> = run
        .per_seed
        .iter()
        .flat_map(|s| s.failures.iter().map(move |(m, e)| format!("- seed {} {m}: {e}", s.seed)))
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(out, "\n## Failures\n\n{}", failures.join("\n"));
    }
    out
}

fn cmd_toy(command: Command) -> std::result::Result<(), Failure> {
    let Command::Toy { spec, roster, seeds, seed, width, members, epochs, label_noise, config, out } = command else {
        unreachable!("called with the toy command");
    };
    let input = |e: anyhow::Error| Failure::Input(e);
    let generator: Generator = spec.parse().map_err(|e: confcal_core::Error| input(e.into()))?;
    let roster = parse_roster(&roster).map_err(|e| input(e.into()))?;
    if seeds == 0 {
        return Err(input(anyhow!("--seeds must be at least 1")));
    }
    let mut cfg = match &config {
        Some(path) => read_json::<ToyConfig>(path).map_err(input)?,
        None => ToyConfig::default(),
    };
    if let Some(w) = width {
        cfg.width = w;
    }
    if let Some(m) = members {
        cfg.members = m;
    }
    if let Some(e) = epochs {
        cfg.train.max_epochs = e;
        cfg.distill.train.max_epochs = e;
    }
    let mut spec = ToySpec {
        seed,
        ..ToySpec::new(generator)
    };
    if let Some(noise) = label_noise {
        spec.label_noise = noise;
    }
    let seed_list: Vec<u64> = (seed..seed + seeds).collect();
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(input)?;

    let meta = RunMetadata {
        tool: "confcal",
        version: env!("CARGO_PKG_VERSION"),
        spec: &spec,
        config: &cfg,
        roster: &roster,
        seeds: &seed_list,
    };
    write_json(&out.join("config.json"), &meta).map_err(input)?;
    let run = run_experiment(&spec, &cfg, &roster, &seed_list).map_err(|e| classify(e.into()))?;
    write_json(&out.join("results.json"), &run).map_err(input)?;
    fs::write(out.join("summary.md"), summary_markdown(&run))
        .context("writing summary.md")
        .map_err(input)?;
    let heat = run.heatmap.as_ref().map(|h| h.to_csv()).unwrap_or_default();
    fs::write(out.join("heatmap.csv"), heat)
        .context("writing heatmap.csv")
        .map_err(input)?;
    print!("{}", summary_markdown(&run));

    let failed: BTreeMap<u64, usize> = run
        .per_seed
        .iter()
        .filter(|s| !s.failures.is_empty())
        .map(|s| (s.seed, s.failures.len()))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Internal(anyhow!("method failures in seeds {failed:?}")))
    }
}
