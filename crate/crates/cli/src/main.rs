use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use hbdelay::calendar::YearMonth;
use hbdelay::cluster::{cluster_airports, cluster_profiles, write_profiles, ClusterAssignment, DEFAULT_RESTARTS};
use hbdelay::diagnostics::{
    convergence_report, read_summary_csv, summarize, write_summary_csv, ParameterSummary, Status, DEFAULT_HDI_MASS,
    DEFAULT_RHAT_THRESHOLD,
};
use hbdelay::ingest::{
    filter_corpus, parse_bts_csv, summarize_corpus, write_normalized_file, ContinuityScope, FilterConfig, ObservationRecord,
    ParseOutcome, VolumeThreshold,
};
use hbdelay::model::{build_design, grand_means, DesignMatrix, DesignOptions, HierarchicalModel, ModelConfig};
use hbdelay::report::{
    cluster_intercepts, compare_epochs, export_plot_data, render_text, scaling_table, write_cluster_intercepts,
    write_epoch_comparison, write_scaling_table, write_text, PlotInputs,
};
use hbdelay::sampler::{read_draws, run_chains, write_draws, SamplerConfig};
use hbdelay::simulate::{simulate_dataset, ScenarioConfig};

#[derive(Parser)]
#[command(name = "hbdelay", version, about = "Hierarchical Beta-Binomial airline delay attribution")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse BTS CSV exports, apply the refinement filters, and write a normalized CSV.
    Ingest(IngestArgs),
    /// Cluster airports on operational features and choose K by silhouette.
    Cluster(ClusterArgs),
    /// Build the model design matrix from normalized records and a cluster assignment.
    Design(DesignArgs),
    /// Sample the posterior with NUTS.
    Fit(FitArgs),
    /// Summarize draws and check convergence.
    Diagnose(DiagnoseArgs),
    /// Cross-epoch comparison tables and plot data.
    Report(ReportArgs),
    /// Generate a synthetic panel with known parameters.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input file or glob pattern; may be repeated.
    #[arg(long, required = true)]
    input: Vec<String>,
    /// Minimum monthly arrivals per record; 0 keeps every record with flights.
    #[arg(long, default_value_t = 100)]
    threshold: u32,
    #[arg(long, default_value_t = 36)]
    min_months: usize,
    /// Keep months up to and including this one (YYYY-MM).
    #[arg(long)]
    epoch_end: Option<YearMonth>,
    /// Evaluate the continuity rule after the epoch split.
    #[arg(long)]
    per_epoch_continuity: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Normalized records CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// Assignment CSV (airport, cluster_id).
    #[arg(long)]
    output: PathBuf,
    /// Profile table; defaults to `<output>.profiles.csv`.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    /// Normalized records CSV.
    #[arg(long)]
    input: PathBuf,
    /// Cluster assignment CSV.
    #[arg(long)]
    clusters: PathBuf,
    /// Model configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Center predictors on the grand means of this normalized CSV instead.
    #[arg(long)]
    means_from: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    design: PathBuf,
    /// Model configuration (TOML) supplying the priors.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    target_accept: f64,
    #[arg(long, default_value_t = 10)]
    max_tree_depth: u32,
    /// Draws CSV; tuning metadata goes to `<output>.meta.json`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    draws: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RHAT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_HDI_MASS)]
    mass: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Summary CSV of the baseline-epoch fit.
    #[arg(long)]
    baseline: PathBuf,
    /// Summary CSV of the full-window fit.
    #[arg(long)]
    full: PathBuf,
    /// Comma-separated summary CSVs, one per volume threshold.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<PathBuf>,
    /// Comma-separated labels for --thresholds; defaults to the file stems.
    #[arg(long, value_delimiter = ',')]
    threshold_labels: Vec<String>,
    /// Comma-separated display names for clusters 0, 1, ...
    #[arg(long, value_delimiter = ',')]
    cluster_labels: Vec<String>,
    /// Calendar month of the first modelled month in the full fit.
    #[arg(long)]
    first_month: Option<YearMonth>,
    /// Draws CSVs for the security density-shift histogram.
    #[arg(long, requires = "full_draws")]
    baseline_draws: Option<PathBuf>,
    #[arg(long, requires = "baseline_draws")]
    full_draws: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML); the built-in recovery scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Records in the normalized CSV schema.
    #[arg(long)]
    output: PathBuf,
    /// Generating parameters; defaults to `<output stem>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write the design built from the generating cause counts.
    #[arg(long)]
    design: Option<PathBuf>,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_records(path: &Path) -> Result<Vec<ObservationRecord>> {
    let outcome = parse_bts_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if !outcome.rejected.is_empty() {
        warn!("{}: {} rows rejected", path.display(), outcome.rejected.len());
    }
    Ok(outcome.records)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_model_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ModelConfig::default()),
    }
}

fn ingest(args: IngestArgs) -> Result<()> {
    let mut paths = Vec::new();
    for pattern in &args.input {
        let matched: Vec<PathBuf> = glob::glob(pattern)
            .with_context(|| format!("bad pattern {pattern}"))?
            .collect::<std::result::Result<_, _>>()?;
        if matched.is_empty() {
            bail!("no files match {pattern}");
        }
        paths.extend(matched);
    }
    paths.sort();
    paths.dedup();

    let mut outcome = ParseOutcome::default();
    for p in &paths {
        outcome.merge(parse_bts_csv(p).with_context(|| format!("reading {}", p.display()))?);
    }
    for r in outcome.rejected.iter().take(20) {
        warn!("line {}: {}", r.line, r.reason);
    }
    if outcome.rejected.len() > 20 {
        warn!("{} more rejected rows", outcome.rejected.len() - 20);
    }
    let raw_flights: f64 = outcome.records.iter().map(|r| r.arr_flights).sum();
    let config = FilterConfig {
        threshold: VolumeThreshold::from_cli(args.threshold),
        min_months: args.min_months,
        epoch_end: args.epoch_end,
        continuity_scope: if args.per_epoch_continuity {
            ContinuityScope::PerEpoch
        } else {
            ContinuityScope::FullWindow
        },
    };
    let mut records = filter_corpus(outcome.records, &config)?;
    records.sort_by(|a, b| (&a.airport, &a.carrier, a.year, a.month).cmp(&(&b.airport, &b.carrier, b.year, b.month)));
    write_normalized_file(&args.output, &records)?;
    let stats = summarize_corpus(&records)?;
    println!(
        "{} files, {} records kept ({} empty, {} zero-flight, {} rejected rows skipped)",
        paths.len(),
        stats.record_count,
        outcome.skipped_empty,
        outcome.skipped_zero,
        outcome.rejected.len()
    );
    println!(
        "flights {} ({:.2}% of parsed), delays {}, delay rate {:.4}, airports {}, carriers {}",
        stats.total_flights,
        100.0 * stats.flight_retention(raw_flights),
        stats.total_delays,
        stats.delay_rate,
        stats.airport_count,
        stats.carrier_count
    );
    Ok(())
}

fn cluster(args: ClusterArgs) -> Result<()> {
    let records = read_records(&args.input)?;
    let outcome = cluster_airports(&records, args.k_min, args.k_max, args.seed, args.restarts)?;
    outcome.assignment.write_csv(create(&args.output)?)?;
    let profiles = cluster_profiles(&outcome.features, &outcome.assignment);
    let profile_path = args.profiles.unwrap_or_else(|| sidecar(&args.output, ".profiles.csv"));
    write_profiles(create(&profile_path)?, &profiles)?;
    for (k, s) in &outcome.scores {
        println!("K={k} silhouette {s:.4}");
    }
    println!(
        "selected K={} ({} airports) -> {}",
        outcome.assignment.k,
        outcome.features.len(),
        args.output.display()
    );
    Ok(())
}

fn design(args: DesignArgs) -> Result<()> {
    let config = load_model_config(args.config.as_deref())?;
    let records = read_records(&args.input)?;
    let assignment = ClusterAssignment::read_csv(BufReader::new(
        File::open(&args.clusters).with_context(|| format!("opening {}", args.clusters.display()))?,
    ))?;
    let means = match &args.means_from {
        Some(p) => Some(grand_means(&read_records(p)?)),
        None => None,
    };
    let options = DesignOptions {
        covid_window: config.covid_window()?,
        grand_means: means,
        standardize: config.standardize_predictors,
        month_span: None,
    };
    let d = build_design(&records, &assignment, &options)?;
    d.write_csv(create(&args.output)?)?;
    println!(
        "{} observations, J={}, T={} ({} COVID months) -> {}",
        d.len(),
        d.n_clusters,
        d.n_months,
        d.covid_months.iter().filter(|c| **c).count(),
        args.output.display()
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let config = load_model_config(args.config.as_deref())?;
    let d = DesignMatrix::read_csv(BufReader::new(
        File::open(&args.design).with_context(|| format!("opening {}", args.design.display()))?,
    ))?;
    let model = HierarchicalModel::new(d, config.priors)?;
    let sampler = SamplerConfig {
        chains: args.chains,
        warmup: args.warmup,
        draws: args.draws,
        target_accept: args.target_accept,
        max_tree_depth: args.max_tree_depth,
        seed: args.seed,
        ..SamplerConfig::default()
    };
    let run = run_chains(&model, &sampler)?;
    for (i, c) in run.chains.iter().enumerate() {
        match c {
            Ok(c) => println!(
                "chain {i}: ok, step size {:.4}, {} divergences, {} at max depth",
                c.step_size,
                c.divergences(),
                c.stats.iter().filter(|s| s.depth_saturated).count()
            ),
            Err(e) => println!("chain {i}: aborted: {e}"),
        }
    }
    if run.total_draws() == 0 {
        bail!("every chain aborted");
    }
    write_draws(&args.output, &run, &sampler)?;
    println!("{} draws -> {}", run.total_draws(), args.output.display());
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let draws = read_draws(&args.draws)?;
    let summaries = summarize(&draws, args.mass)?;
    write_summary_csv(create(&args.output)?, &summaries)?;
    let report = convergence_report(&summaries, args.threshold);
    println!(
        "{} parameters, {} chains, divergent fraction {:.4}",
        summaries.len(),
        draws.chains.len(),
        report.divergent_fraction
    );
    for e in report.warnings() {
        println!(
            "WARN {}: r_hat {:.4} > {}{}",
            e.name,
            e.r_hat,
            report.threshold,
            if e.gating { "" } else { " (informational)" }
        );
    }
    if let Some(r) = report.sigma_gamma_r_hat {
        println!("sigma_gamma r_hat {r:.4} (reported, not gating)");
    }
    println!(
        "convergence: {}",
        match report.overall {
            Status::Pass => "PASS",
            Status::Warn => "WARN",
        }
    );
    Ok(())
}

fn read_summary(path: &Path) -> Result<Vec<ParameterSummary>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_summary_csv(BufReader::new(f))?)
}

fn report(args: ReportArgs) -> Result<()> {
    let baseline = read_summary(&args.baseline)?;
    let full = read_summary(&args.full)?;
    std::fs::create_dir_all(&args.output_dir)?;
    let dir = &args.output_dir;

    let epochs = compare_epochs(&baseline, &full)?;
    write_epoch_comparison(&dir.join("epoch_comparison.csv"), &epochs)?;

    let intercepts = match cluster_intercepts(&full, &args.cluster_labels) {
        Ok(rows) => {
            write_cluster_intercepts(&dir.join("cluster_intercepts.csv"), &rows)?;
            rows
        }
        Err(e) => {
            warn!("cluster table skipped: {e}");
            Vec::new()
        }
    };

    let scaling = if args.thresholds.is_empty() {
        None
    } else {
        let inputs: Vec<(String, Option<Vec<ParameterSummary>>)> = args
            .thresholds
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let label = args.threshold_labels.get(i).cloned().unwrap_or_else(|| {
                    p.file_stem().map_or_else(|| format!("t{i}"), |s| s.to_string_lossy().into_owned())
                });
                let summary = match read_summary(p) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        warn!("threshold {label}: {e:#}");
                        None
                    }
                };
                (label, summary)
            })
            .collect();
        let table = scaling_table(&inputs);
        write_scaling_table(&dir.join("scaling_table.csv"), &table)?;
        Some((table, inputs))
    };

    let forest = match &scaling {
        Some((_, inputs)) => inputs
            .iter()
            .filter_map(|(l, s)| s.clone().map(|s| (l.clone(), s)))
            .collect(),
        None => vec![("baseline".to_string(), baseline.clone()), ("full".to_string(), full.clone())],
    };
    let draws = match (&args.baseline_draws, &args.full_draws) {
        (Some(b), Some(f)) => Some((read_draws(b)?, read_draws(f)?)),
        _ => None,
    };
    let inputs = PlotInputs {
        forest,
        trajectory: Some((&full, args.first_month)),
        security_draws: draws.as_ref().map(|(b, f)| (b, f)),
        bins: args.bins,
    };
    let written = export_plot_data(dir, &inputs)?;

    let text = render_text(&epochs, &intercepts, scaling.as_ref().map(|(t, _)| t));
    write_text(&dir.join("report.txt"), &text)?;
    print!("{text}");
    info!("wrote {} plot files to {}", written.len(), dir.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut scenario = match &args.scenario {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let data = simulate_dataset(&scenario)?;
    write_normalized_file(&args.output, &data.records)?;
    let truth_path = args.truth.unwrap_or_else(|| sidecar(&args.output, ".truth.json"));
    let mut w = create(&truth_path)?;
    data.write_truth(&mut w)?;
    w.flush()?;
    if let Some(p) = &args.design {
        data.design.write_csv(create(p)?)?;
    }
    println!(
        "{} records -> {}, truth -> {}",
        data.records.len(),
        args.output.display(),
        truth_path.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Cluster(a) => cluster(a),
        Command::Design(a) => design(a),
        Command::Fit(a) => fit(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Report(a) => report(a),
        Command::Simulate(a) => simulate(a),
    }
}
