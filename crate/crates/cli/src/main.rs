use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use survcal::audit::ingest::{align, read_features, read_labels, read_predictions, DatasetBundle};
use survcal::audit::{
    emit_audit, emit_controls, emit_monte_carlo, emit_recalibration, parse_formats, run_audit, run_controls, run_recalibration,
    synthetic, AuditOptions, BhFamily, ControlBundle, ControlOptions, Format,
};
use survcal::curves::Interpolation;
use survcal::metrics::OneCalOptions;
use survcal::recalibrate::{PlattWeighting, RecalMethod};
use survcal::synth::{generate, monte_carlo, solve_censor_rate, GeneratorConfig};

#[derive(Parser, Debug)]
#[command(name = "survcal", version, about = "Fold-level calibration audits for survival predictions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Each can also come from `--config`.
#[derive(Args, Debug, Default)]
struct Global {
    /// Flat key=value file; keys are the long flag names without dashes.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Benjamini-Hochberg false discovery rate [default: 0.05]
    #[arg(long, global = true)]
    fdr: Option<f64>,
    /// Number of 1-calibration groups [default: 10]
    #[arg(long, global = true)]
    groups: Option<usize>,
    /// Degrees of freedom are retained groups minus this [default: 1]
    #[arg(long, global = true)]
    dof_offset: Option<usize>,
    /// Fixed evaluation horizon [default: per-fold median event time]
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Seed for permutations and simulations [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: survcal_out]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated output formats [default: json,csv]
    #[arg(long, global = true)]
    format: Option<String>,
    /// Benjamini-Hochberg family: all, model, dataset or model_dataset [default: all]
    #[arg(long, global = true)]
    bh_family: Option<String>,
    /// Interpolation of 4-bin hazard curves: step or linear [default: step]
    #[arg(long, global = true)]
    interpolation: Option<String>,
    /// Grid size for 4-bin hazard curves [default: 20]
    #[arg(long, global = true)]
    hazard_points: Option<usize>,
    /// Grid size for the integrated Brier score [default: 100]
    #[arg(long, global = true)]
    ibs_points: Option<usize>,
    /// D-calibration bins; 0 disables D-calibration [default: 10]
    #[arg(long, global = true)]
    d_cal_bins: Option<usize>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-fold audit of one or more prediction files against one label file.
    Audit {
        #[arg(long)]
        labels: PathBuf,
        /// Prediction CSV, optionally as NAME=PATH; repeatable.
        #[arg(long, required = true)]
        predictions: Vec<String>,
        /// Dataset name [default: labels file stem]
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Positive, negative and Breslow-construction controls plus the D-calibration demonstration.
    Controls {
        #[arg(long, required_unless_present = "synthetic")]
        labels: Option<PathBuf>,
        #[arg(long, required_unless_present = "synthetic")]
        features: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        /// Run on a generated cohort instead of files.
        #[arg(long, conflicts_with_all = ["labels", "features"])]
        synthetic: bool,
        #[command(flatten)]
        generator: GeneratorArgs,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        #[arg(long, default_value_t = 0.1)]
        penalizer: f64,
    },
    /// Cross-fold Platt or isotonic recalibration with before/after comparison.
    Recalibrate {
        #[arg(long)]
        labels: PathBuf,
        /// Prediction CSV, optionally as NAME=PATH.
        #[arg(long)]
        predictions: String,
        #[arg(long)]
        dataset: Option<String>,
        /// platt, isotonic or none
        #[arg(long, default_value = "platt")]
        method: String,
        /// exclude_censored or ipcw
        #[arg(long, default_value = "exclude_censored")]
        weighting: String,
    },
    /// Monte Carlo rejection rate of 1-calibration under the null.
    Simulate {
        #[command(flatten)]
        mc: McArgs,
    },
    /// Monte Carlo power against predictions distorted to S^gamma.
    Power {
        #[command(flatten)]
        mc: McArgs,
        #[arg(long, default_value_t = 3.0)]
        gamma: f64,
    },
}

#[derive(Args, Debug)]
struct GeneratorArgs {
    #[arg(long, default_value_t = 2500)]
    n_patients: usize,
    /// Comma-separated true coefficients; one feature per coefficient.
    #[arg(long, default_value = "0.8,-0.5,0.3")]
    beta: String,
    #[arg(long, default_value_t = 0.1)]
    baseline_rate: f64,
    /// Exponential censoring rate; ignored when --censored-fraction is given.
    #[arg(long, default_value_t = 0.05)]
    censor_rate: f64,
    /// Target expected censored fraction, solved for the censoring rate.
    #[arg(long)]
    censored_fraction: Option<f64>,
    #[arg(long)]
    admin_cutoff: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    weibull_shape: f64,
    #[arg(long, default_value_t = 5)]
    n_folds: u32,
}

#[derive(Args, Debug)]
struct McArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Target event count per replicate cohort.
    #[arg(long, default_value_t = 30)]
    n_events: usize,
    #[arg(long, default_value_t = 500)]
    replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

/// Resolved global settings.
struct Settings {
    audit: AuditOptions,
    out_dir: PathBuf,
    formats: Vec<Format>,
    threads: Option<usize>,
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), i + 1))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    cfg.get(key).map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: {e}"))).transpose()
}

const CONFIG_KEYS: [&str; 13] = [
    "fdr",
    "groups",
    "dof_offset",
    "horizon",
    "seed",
    "out_dir",
    "format",
    "bh_family",
    "interpolation",
    "hazard_points",
    "ibs_points",
    "d_cal_bins",
    "threads",
];

fn resolve(g: Global) -> Result<Settings> {
    let cfg = match &g.config {
        Some(p) => read_config(p)?,
        None => BTreeMap::new(),
    };
    if let Some(k) = cfg.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        bail!("unknown config key '{k}'");
    }
    let defaults = AuditOptions::default();
    let d_cal_bins = pick(g.d_cal_bins, &cfg, "d_cal_bins")?.unwrap_or(defaults.d_cal_bins);
    let audit = AuditOptions {
        fdr: pick(g.fdr, &cfg, "fdr")?.unwrap_or(defaults.fdr),
        one_cal: OneCalOptions {
            n_groups: pick(g.groups, &cfg, "groups")?.unwrap_or(defaults.one_cal.n_groups),
            dof_offset: pick(g.dof_offset, &cfg, "dof_offset")?.unwrap_or(defaults.one_cal.dof_offset),
        },
        horizon: pick(g.horizon, &cfg, "horizon")?,
        d_calibration: d_cal_bins > 0,
        d_cal_bins: d_cal_bins.max(2),
        interpolation: pick::<String>(g.interpolation, &cfg, "interpolation")?
            .map(|s| s.parse::<Interpolation>())
            .transpose()?
            .unwrap_or(defaults.interpolation),
        hazard_points: pick(g.hazard_points, &cfg, "hazard_points")?.unwrap_or(defaults.hazard_points),
        ibs_points: pick(g.ibs_points, &cfg, "ibs_points")?.unwrap_or(defaults.ibs_points),
        bh_family: pick::<String>(g.bh_family, &cfg, "bh_family")?
            .map(|s| s.parse::<BhFamily>())
            .transpose()?
            .unwrap_or(defaults.bh_family),
        seed: pick(g.seed, &cfg, "seed")?.unwrap_or(defaults.seed),
    };
    if !(audit.fdr > 0.0 && audit.fdr < 1.0) {
        bail!("--fdr must lie in (0, 1)");
    }
    if let Some(h) = audit.horizon {
        if !(h.is_finite() && h > 0.0) {
            bail!("--horizon must be positive");
        }
    }
    let formats = parse_formats(&pick::<String>(g.format, &cfg, "format")?.unwrap_or_else(|| "json,csv".into()))?;
    if formats.is_empty() {
        bail!("--format needs at least one of json, csv");
    }
    Ok(Settings {
        audit,
        out_dir: pick(g.out_dir, &cfg, "out_dir")?.unwrap_or_else(|| PathBuf::from("survcal_out")),
        formats,
        threads: pick(g.threads, &cfg, "threads")?,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

// NAME=PATH or PATH (model named after the file stem)
fn split_prediction_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => (stem(Path::new(arg)), PathBuf::from(arg)),
    }
}

fn load_bundles(labels: &Path, predictions: &[String], dataset: &str) -> Result<Vec<DatasetBundle>> {
    let records = read_labels(labels).map_err(|e| anyhow!("{e}"))?;
    let mut bundles = Vec::new();
    let mut problems = Vec::new();
    for arg in predictions {
        let (model, path) = split_prediction_arg(arg);
        let aligned = read_predictions(&path, &model).and_then(|p| {
            align(dataset, records.clone(), p, &labels.display().to_string(), &path.display().to_string())
        });
        match aligned {
            Ok(b) => bundles.push(b),
            Err(e) => problems.push(e.to_string()),
        }
    }
    if !problems.is_empty() {
        bail!("{}", problems.join(""));
    }
    Ok(bundles)
}

fn generator_config(g: &GeneratorArgs, seed: u64) -> Result<GeneratorConfig> {
    let beta: Vec<f64> = g
        .beta
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad --beta entry '{s}'")))
        .collect::<Result<_>>()?;
    let mut cfg = GeneratorConfig {
        n_patients: g.n_patients,
        n_features: beta.len(),
        true_beta: beta,
        baseline_rate: g.baseline_rate,
        censor_rate: g.censor_rate,
        admin_cutoff: g.admin_cutoff,
        weibull_shape: g.weibull_shape,
        n_folds: g.n_folds,
        seed,
        ..GeneratorConfig::default()
    };
    if let Some(f) = g.censored_fraction {
        if !(f > 0.0 && f < 1.0) {
            bail!("--censored-fraction must lie in (0, 1)");
        }
        cfg.censor_rate = solve_censor_rate(&cfg, f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = resolve(cli.global)?;
    if let Some(n) = s.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Audit { labels, predictions, dataset } => {
            let dataset = dataset.unwrap_or_else(|| stem(&labels));
            let bundles = load_bundles(&labels, &predictions, &dataset)?;
            let report = run_audit(&bundles, &s.audit)?;
            for r in &report.rollups {
                println!(
                    "{} / {}: {} of {} folds failed ({} errored)",
                    r.model, r.dataset, r.folds_failed, r.folds_total, r.folds_errored
                );
            }
            report_written(&emit_audit(&report, &s.out_dir, &s.formats)?);
        }
        Command::Controls { labels, features, dataset, synthetic: use_synthetic, generator, top_k, penalizer } => {
            let bundle = if use_synthetic {
                let cohort = generate(&generator_config(&generator, s.audit.seed)?)?;
                synthetic::control_bundle(&cohort, dataset.as_deref().unwrap_or("synthetic"))
            } else {
                let labels = labels.expect("required by clap");
                let features = features.expect("required by clap");
                let records = read_labels(&labels).map_err(|e| anyhow!("{e}"))?;
                let matrix = read_features(&features).map_err(|e| anyhow!("{e}"))?;
                let name = dataset.unwrap_or_else(|| stem(&labels));
                ControlBundle::new(&name, records, &matrix)?
            };
            let copts = ControlOptions { top_k, penalizer, ..ControlOptions::default() };
            let report = run_controls(&bundle, &s.audit, &copts)?;
            let verdict = |b: bool| if b { "as expected" } else { "NOT as expected" };
            println!("positive control: {} ({})", verdict(report.positive.passed), report.positive.note);
            println!(
                "negative control: {} ({} of {} folds rejected)",
                verdict(report.negative.passed),
                report.negative.rejected_folds,
                report.negative.tested_folds
            );
            println!("breslow validation: {}", verdict(report.breslow.passed));
            let shown = report.dcal_demo.iter().filter_map(|f| f.demo.as_ref()).filter(|d| d.d_cal_passes && d.one_cal_rejects).count();
            println!("d-calibration demo: {shown} of {} folds pass D-calibration while failing 1-calibration", report.dcal_demo.len());
            report_written(&emit_controls(&report, &s.out_dir, &s.formats)?);
        }
        Command::Recalibrate { labels, predictions, dataset, method, weighting } => {
            let dataset = dataset.unwrap_or_else(|| stem(&labels));
            let bundles = load_bundles(&labels, &[predictions], &dataset)?;
            let method: RecalMethod = method.parse()?;
            let weighting = match weighting.as_str() {
                "exclude_censored" => PlattWeighting::ExcludeCensored,
                "ipcw" => PlattWeighting::Ipcw,
                other => bail!("unknown weighting '{other}'"),
            };
            let report = run_recalibration(&bundles[0], method, weighting, &s.audit)?;
            println!(
                "{} / {} ({}): folds failing {} -> {}",
                report.model,
                report.dataset,
                method.as_str(),
                report.failures_before,
                report.failures_after
            );
            if let Some(c) = report.c_index_unchanged {
                println!("c-index unchanged: {c}");
            }
            report_written(&emit_recalibration(&report, &s.out_dir, &s.formats)?);
        }
        Command::Simulate { mc } => {
            let summary = simulate(&mc, 1.0, &s)?;
            report_written(&emit_monte_carlo(&summary, &s.out_dir, "simulate", &s.formats)?);
        }
        Command::Power { mc, gamma } => {
            let summary = simulate(&mc, gamma, &s)?;
            report_written(&emit_monte_carlo(&summary, &s.out_dir, "power", &s.formats)?);
        }
    }
    Ok(())
}

fn simulate(mc: &McArgs, gamma: f64, s: &Settings) -> Result<survcal::synth::MonteCarloSummary> {
    let cfg = generator_config(&mc.generator, s.audit.seed)?;
    let summary = monte_carlo(&cfg, gamma, mc.n_events, mc.replicates, mc.alpha, &s.audit.one_cal)?;
    println!(
        "rejection rate {:.4} (MC s.e. {:.4}) over {} replicates; mean ESS ratio {:.3}, mean weight CV {:.3}",
        summary.rejection_rate, summary.mc_standard_error, summary.replicates, summary.mean_ess_ratio, summary.mean_weight_cv
    );
    Ok(summary)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
