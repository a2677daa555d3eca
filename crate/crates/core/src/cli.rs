//! Command-line front end.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{build_comparison_report, TreatmentComparison, REPORT_LEVELS};
use crate::error::{invalid, Error, Result};
use crate::estimators::{fit, Method};
use crate::io::{self as fileio, FitRecord, Format};
use crate::model::{
    aggregate_to_units, generate_observation_population, generate_population, GenConfig,
    ModelParams, NoiseScope, NoiseSpec, ObsCountLaw, ObservationRecord, TriggerLaw,
};
use crate::sampling::{ate_bias_bound, estimate_trigger_intensity, variance_gap_bound, SamplingMode, SamplingPlan};
use crate::seed::{self, TAG_SAMPLE};
use crate::sim::{emit_figure_data, run_sweep_with_threads, FigureTarget, SweepConfig};

#[derive(Debug, Parser)]
#[command(name = "trigeval", version, about = "Trigger-aware A/B test evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize an experiment and write unit and observation CSVs.
    Simulate(SimulateArgs),
    /// Fit one estimator to a unit CSV.
    Estimate(EstimateArgs),
    /// Fill estimated trigger intensities by sampling labelled observations.
    SampleTriggers(SampleArgs),
    /// Run a Monte Carlo sweep from a TOML config.
    Sweep(SweepArgs),
    /// Compare two fit tables treatment by treatment.
    Compare(CompareArgs),
    /// Evaluate the sampling-error bounds.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// GenConfig TOML; the flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; overrides TRIGEVAL_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    n_units: usize,
    #[arg(long, default_value_t = 1.0)]
    beta0: f64,
    #[arg(long, default_value_t = 0.5)]
    beta1: f64,
    #[arg(long, default_value_t = 0.3)]
    beta2: f64,
    /// Trigger intensities are drawn uniformly on [intensity-low, intensity-high].
    #[arg(long, default_value_t = 0.0)]
    intensity_low: f64,
    #[arg(long, default_value_t = 1.0)]
    intensity_high: f64,
    #[arg(long, default_value_t = 1000)]
    n_obs: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Per-unit sigma uniform on [0.5·sigma, 1.5·sigma].
    #[arg(long)]
    heterogeneous: bool,
    /// Write only units.csv, generated directly at the unit level.
    #[arg(long)]
    units_only: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::JsonLines,
        }
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// baseline, full or partial.
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Defaults to the input file stem.
    #[arg(long)]
    treatment_id: Option<String>,
    /// Output file, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    With,
    Without,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    units: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    m: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::With)]
    mode: ModeArg,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the seeds in the config file.
    #[arg(long)]
    seed: u64,
    /// Output directory, or `-` to print the report CSV only.
    #[arg(long)]
    out: String,
    /// Worker threads; overrides TRIGEVAL_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Fit table of method A (the reference).
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "-")]
    out: String,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long, allow_negative_numbers = true)]
    beta1: f64,
    #[arg(long, allow_negative_numbers = true)]
    beta2: f64,
    #[arg(long)]
    m: u64,
}

/// Run the CLI on `argv` (including the program name) and return the exit
/// code: 0 on success, 1 for domain errors, 2 for usage errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::SampleTriggers(a) => sample_triggers(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::Bounds(a) => bounds(a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Run `f` on stdout when `out` is `-`, else on a new file.
fn with_output(out: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if out.is_empty() {
        return Err(invalid("empty output path"));
    }
    if out == "-" {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        f(&mut lock)?;
        lock.flush()?;
        Ok(())
    } else {
        let mut file = io::BufWriter::new(
            fs::File::create(out).map_err(|e| Error::Io(format!("{out}: {e}")))?,
        );
        f(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(path) => read_toml(path)?,
        None => GenConfig {
            n_units: a.n_units,
            params: ModelParams::new(a.beta0, a.beta1, a.beta2),
            trigger_law: TriggerLaw::Uniform {
                low: a.intensity_low,
                high: a.intensity_high,
            },
            obs_count_law: ObsCountLaw::Constant { n: a.n_obs },
            obs_cap: crate::model::DEFAULT_OBS_CAP,
            noise: if a.heterogeneous {
                NoiseSpec::heterogeneous_around(a.sigma)
            } else {
                NoiseSpec::Homogeneous { sigma: a.sigma }
            },
            noise_scope: NoiseScope::UnitMean,
            seed: a.seed,
        },
    };
    cfg.seed = a.seed;
    cfg.validate()?;
    fs::create_dir_all(&a.out)?;
    if a.units_only {
        let population = generate_population(&cfg)?;
        return fileio::write_unit_csv(a.out.join("units.csv"), &population.dataset);
    }
    let pool = thread_pool(thread_count(a.threads)?)?;
    let (observations, assignments) = pool.install(|| generate_observation_population(&cfg))?;
    let dataset = aggregate_to_units(&observations, &assignments)?;
    fileio::write_unit_csv(a.out.join("units.csv"), &dataset)?;
    fileio::write_observation_csv(a.out.join("observations.csv"), &observations)
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let method = Method::parse(&a.method)?;
    let dataset = fileio::parse_unit_csv(&a.input)?;
    let result = fit(&dataset, method, a.ci_level)?;
    let treatment_id = a.treatment_id.unwrap_or_else(|| {
        a.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "treatment".into())
    });
    let record = FitRecord {
        treatment_id,
        fit: result,
    };
    with_output(&a.out, |w| fileio::write_fits(w, &[record], a.format.into()))
}

fn sample_triggers(a: SampleArgs) -> Result<()> {
    let mode = match a.mode {
        ModeArg::With => SamplingMode::WithReplacement,
        ModeArg::Without => SamplingMode::WithoutReplacement,
    };
    let plan = SamplingPlan::new(a.m, mode, a.seed)?;
    let dataset = fileio::parse_unit_csv(&a.units)?;
    let observations = fileio::parse_observation_csv(&a.observations)?;

    let known: HashMap<&str, ()> = dataset.units().iter().map(|u| (u.unit_id.as_str(), ())).collect();
    let mut by_unit: BTreeMap<&str, Vec<ObservationRecord>> = BTreeMap::new();
    for o in &observations {
        if !known.contains_key(o.unit_id.as_str()) {
            return Err(Error::MissingAssignment(o.unit_id.clone()));
        }
        by_unit.entry(o.unit_id.as_str()).or_default().push(o.clone());
    }
    let estimates = dataset
        .units()
        .iter()
        .map(|u| {
            let obs = by_unit.get(u.unit_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            if obs.is_empty() {
                return Err(Error::InsufficientObservations {
                    unit_id: u.unit_id.clone(),
                    requested: plan.m,
                    available: 0,
                });
            }
            let mut rng = seed::unit_stream(plan.seed, TAG_SAMPLE, &u.unit_id);
            estimate_trigger_intensity(obs, &plan, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = dataset.with_estimated_intensities(&estimates)?;
    with_output(&a.out, |w| fileio::write_units(w, &dataset))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("TRIGEVAL_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| invalid(format!("TRIGEVAL_THREADS=`{v}` is not a thread count"))),
        _ => Ok(None),
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| invalid(e.to_string()))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut config: SweepConfig = read_toml(&a.config)?;
    config.gen.seed = a.seed;
    if let Some(plan) = config.plan.as_mut() {
        plan.seed = seed::derive(a.seed, &[TAG_SAMPLE]);
    }
    let threads = thread_count(a.threads)?;
    let report = run_sweep_with_threads(&config, threads)?;
    eprintln!(
        "sweep: {} rows in {:.2}s",
        report.rows.len(),
        report.metadata.wall_time_secs
    );
    if a.out == "-" {
        return with_output("-", |w| fileio::write_sweep_report(w, &report));
    }
    let dir = PathBuf::from(&a.out);
    fs::create_dir_all(&dir)?;
    fileio::write_sweep_report(fileio_create(&dir.join("report.csv"))?, &report)?;
    let meta = serde_json::to_string_pretty(&report.metadata).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("metadata.json"), meta + "\n")?;
    for target in FigureTarget::ALL.into_iter().filter(|t| t.axis() == report.axis) {
        let rows = emit_figure_data(&report, target)?;
        let path = dir.join(format!("{}.csv", target.file_stem()));
        fileio::write_figure(fileio_create(&path)?, &rows)?;
    }
    Ok(())
}

fn fileio_create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn compare(a: CompareArgs) -> Result<()> {
    let fits_a = fileio::parse_fit_table(&a.a)?;
    let fits_b = fileio::parse_fit_table(&a.b)?;
    let mut index_b: HashMap<&str, &FitRecord> = HashMap::new();
    for r in &fits_b {
        if index_b.insert(r.treatment_id.as_str(), r).is_some() {
            return Err(invalid(format!("treatment `{}` appears twice in {}", r.treatment_id, a.b.display())));
        }
    }
    let mut seen: HashMap<&str, ()> = HashMap::new();
    let mut comparisons = Vec::with_capacity(fits_a.len());
    for r in &fits_a {
        if seen.insert(r.treatment_id.as_str(), ()).is_some() {
            return Err(invalid(format!("treatment `{}` appears twice in {}", r.treatment_id, a.a.display())));
        }
        let other = index_b
            .get(r.treatment_id.as_str())
            .ok_or_else(|| invalid(format!("treatment `{}` missing from {}", r.treatment_id, a.b.display())))?;
        comparisons.push(TreatmentComparison {
            treatment_id: r.treatment_id.clone(),
            fit_a: r.fit.clone(),
            fit_b: other.fit.clone(),
        });
    }
    if comparisons.len() != fits_b.len() {
        return Err(invalid(format!("{} has treatments missing from {}", a.b.display(), a.a.display())));
    }
    let report = build_comparison_report(&comparisons, &REPORT_LEVELS)?;
    with_output(&a.out, |w| fileio::write_comparison(w, &report, a.format.into()))
}

fn bounds(a: BoundsArgs) -> Result<()> {
    let gap = variance_gap_bound(a.beta1, a.beta2, a.m)?;
    // A single draw per unit gives no finite bias bound.
    let bias = if a.m < 2 {
        f64::INFINITY
    } else {
        ate_bias_bound(a.beta2, a.m)?
    };
    println!("variance_gap_bound,{gap}");
    println!("ate_bias_bound,{bias}");
    Ok(())
}
