//! Command-line front end: split optimization, the scalar benchmark,
//! scenario anticipation, particle truth and metric evaluation.
//!
//! Exit codes: 0 success, 1 I/O or parse failure, 2 invalid flags,
//! 3 optimizer failure, 4 split cache missing keys, 5 model evaluation
//! failure, 6 misaligned timestamps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::anticipation::anticipate_detailed;
use crate::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport};
use crate::error::{Error, Result};
use crate::evaluation::{
    collision_probability, eote, log_likelihood_terms, nll, propagate_particles, Footprint, KldDirection,
    ParticleSet,
};
use crate::gaussian::HybridMixture;
use crate::io::{self, fmt_f64, manifest_path, MetricRow, RunManifest};
use crate::linearity::ResidualNormalization;
use crate::models::{BicycleModel, BicycleParams, CubicModel, RoadNetwork, Scenario, UngmModel};
use crate::splitting::{SplitLibrary, SpreadGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_OPTIMIZER: i32 = 3;
pub const EXIT_CACHE: i32 = 4;
pub const EXIT_MODEL: i32 = 5;
pub const EXIT_TIMESTAMPS: i32 = 6;

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidSplitCount(_) | Error::InvalidSigma(_) | Error::InvalidConfig(_) => EXIT_INVALID,
        Error::QpInfeasible | Error::MaxIterations(_) => EXIT_OPTIMIZER,
        Error::MissingSplit { .. } | Error::InvalidLibrary(_) => EXIT_CACHE,
        Error::ModelEvaluation { .. } | Error::NoSuccessor(_) | Error::UnknownSegment(_) => EXIT_MODEL,
        Error::MisalignedTimestamps(_) | Error::NoFrameMatch(_) => EXIT_TIMESTAMPS,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hgmm", version, about = "Hybrid Gaussian mixture anticipation with adaptive splitting")]
pub struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single worker, bit-exact reruns.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize canonical splits and write a split cache.
    OptimizeSplit(OptimizeSplitArgs),
    /// Single-Gaussian vs split accuracy on random scalar priors.
    Benchmark(BenchmarkArgs),
    /// Anticipate a scenario and write frames as JSON-Lines.
    Run(RunArgs),
    /// Sample and propagate particle truth for a scenario.
    Particles(ParticlesArgs),
    /// Score frames against truth, observations, the road or an ego path.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct OptimizeSplitArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigma: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 4.0)]
    pub grid_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScalarModelName {
    Ungm,
    Cubic,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub model: ScalarModelName,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Run only the single-Gaussian arm.
    #[arg(long)]
    pub no_split: bool,
    /// Split arm `N:σ`, repeatable; defaults to every cache entry.
    #[arg(long = "split", value_parser = parse_split)]
    pub splits: Vec<(usize, f64)>,
    /// Split cache; missing entries are optimized in-process when absent.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// KLD direction: `approx` integrates against the approximation.
    #[arg(long, default_value = "approx")]
    pub direction: KldDirection,
    #[arg(long, default_value = "raw")]
    pub normalization: ResidualNormalization,
    #[arg(long, default_value_t = 20_000)]
    pub kld_points: usize,
    /// Per-sample CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Bundled scenario name (straight, turn, intersection) or JSON path.
    #[arg(long)]
    pub scenario: String,
    /// `inf` disables splitting.
    #[arg(long)]
    pub e_res_max: Option<f64>,
    /// `0` leaves the mixture size unbounded.
    #[arg(long)]
    pub max_mixands: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParticlesArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Nll,
    Ll,
    Eote,
    Collision,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub frames: PathBuf,
    /// Particle truth for `nll`.
    #[arg(long)]
    pub particles: Option<PathBuf>,
    /// `t,x,y[,v,theta]` CSV for `ll`.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Scenario whose road network defines the route for `eote`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Road network JSON for `eote`.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// `t,x,y,theta` CSV for `collision`, one row per frame.
    #[arg(long)]
    pub ego: Option<PathBuf>,
    /// State indices scored by `nll`; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub indices: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.5)]
    pub ego_length: f64,
    #[arg(long, default_value_t = 1.8)]
    pub ego_width: f64,
    #[arg(long, default_value_t = 4.5)]
    pub obstacle_length: f64,
    #[arg(long, default_value_t = 1.8)]
    pub obstacle_width: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_split(s: &str) -> std::result::Result<(usize, f64), String> {
    let (n, sigma) = s.split_once(':').ok_or_else(|| format!("expected N:sigma, got {s}"))?;
    Ok((
        n.trim().parse().map_err(|e| format!("N: {e}"))?,
        sigma.trim().parse().map_err(|e| format!("sigma: {e}"))?,
    ))
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let threads = if cli.sequential { Some(1) } else { cli.threads };
    if threads == Some(0) {
        eprintln!("error: --threads must be positive");
        return EXIT_INVALID;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let sequential = cli.sequential;
    match pool.install(|| dispatch(cli.command, sequential)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, sequential: bool) -> Result<()> {
    match command {
        Command::OptimizeSplit(a) => cmd_optimize_split(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Run(a) => cmd_run(&a, sequential),
        Command::Particles(a) => cmd_particles(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

fn validate_split_keys(counts: &[usize], sigmas: &[f64]) -> Result<()> {
    if let Some(&n) = counts.iter().find(|&&n| n == 0 || n % 2 == 0) {
        return Err(Error::InvalidSplitCount(n));
    }
    if let Some(&s) = sigmas.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
        return Err(Error::InvalidSigma(s));
    }
    Ok(())
}

pub fn cmd_optimize_split(a: &OptimizeSplitArgs) -> Result<()> {
    validate_split_keys(&a.n, &a.sigma)?;
    if !(a.grid_step > 0.0) || !(a.grid_max > a.grid_step) {
        return Err(Error::InvalidConfig("grid step must be positive and below grid max".into()));
    }
    let mut manifest = RunManifest::new(
        "optimize-split",
        None,
        json!({"n": a.n, "sigma": a.sigma, "grid_step": a.grid_step, "grid_max": a.grid_max}),
    );
    let grid = SpreadGrid {
        max: a.grid_max,
        step: a.grid_step,
    };
    let lib = manifest.time("optimize", || SplitLibrary::build(&a.n, &a.sigma, &grid))?;
    lib.save(&a.out)?;
    manifest.add_output(&a.out);
    manifest.save(&manifest_path(&a.out))?;
    println!("{:>3} {:>6} {:>12} {:>14}", "N", "sigma", "delta_mu", "isd");
    for e in &lib.entries {
        println!("{:>3} {:>6} {:>12.6} {:>14.6e}", e.n, e.sigma, e.delta_mu, e.isd);
    }
    Ok(())
}

fn library_for(cache: Option<&Path>, keys: &[(usize, f64)], manifest: &mut RunManifest) -> Result<SplitLibrary> {
    match cache {
        Some(p) => {
            if !p.exists() {
                return Err(Error::InvalidLibrary(format!("split cache {} not found", p.display())));
            }
            manifest.add_input(p)?;
            let lib = SplitLibrary::load(p)?;
            for &(n, s) in keys {
                lib.get(n, s)?;
            }
            Ok(lib)
        }
        None => {
            let grid = SpreadGrid::default();
            let mut lib = SplitLibrary {
                grid_step: grid.step,
                entries: Vec::new(),
            };
            manifest.time("optimize", || -> Result<()> {
                for &(n, s) in keys {
                    if n > 1 && lib.get(n, s).is_err() {
                        lib.entries.push(crate::splitting::optimize_canonical_split(n, s, &grid)?);
                    }
                }
                Ok(())
            })?;
            Ok(lib)
        }
    }
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    if a.no_split && !a.splits.is_empty() {
        return Err(Error::InvalidConfig("--no-split conflicts with --split".into()));
    }
    let counts: Vec<usize> = a.splits.iter().map(|s| s.0).collect();
    let sigmas: Vec<f64> = a.splits.iter().map(|s| s.1).collect();
    validate_split_keys(&counts, &sigmas)?;
    let mut manifest = RunManifest::new(
        "benchmark",
        Some(a.seed),
        json!({
            "model": format!("{:?}", a.model).to_lowercase(),
            "samples": a.samples,
            "no_split": a.no_split,
            "splits": a.splits,
            "direction": format!("{:?}", a.direction),
            "normalization": a.normalization,
            "kld_points": a.kld_points,
        }),
    );
    let mut splits = a.splits.clone();
    let lib = if a.no_split {
        None
    } else {
        let lib = library_for(a.cache.as_deref(), &splits, &mut manifest)?;
        if splits.is_empty() {
            splits = lib.entries.iter().map(|e| (e.n, e.sigma)).collect();
        }
        Some(lib)
    };
    let cfg = BenchmarkConfig {
        samples: a.samples,
        seed: a.seed,
        splits,
        direction: a.direction,
        normalization: a.normalization,
        kld_points: a.kld_points,
        ..BenchmarkConfig::default()
    };
    cfg.validate()?;
    let report = manifest.time("benchmark", || match a.model {
        ScalarModelName::Ungm => run_benchmark(&UngmModel::default(), &cfg, lib.as_ref()),
        ScalarModelName::Cubic => run_benchmark(&CubicModel::default(), &cfg, lib.as_ref()),
    })?;
    if let Some(out) = &a.out {
        write_benchmark_csv(out, &cfg, &report)?;
        manifest.add_output(out);
        manifest.save(&manifest_path(out))?;
    }
    print_benchmark(&report);
    Ok(())
}

fn write_benchmark_csv(path: &Path, cfg: &BenchmarkConfig, report: &BenchmarkReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sample,prior_mean,prior_variance,e_res,arm,kld")?;
    for (i, s) in report.samples.iter().enumerate() {
        let head = format!("{i},{},{},{}", fmt_f64(s.mean), fmt_f64(s.variance), fmt_f64(s.e_res));
        if let Some(k) = s.no_split_kld {
            writeln!(w, "{head},none,{}", fmt_f64(k))?;
        }
        for ((n, sigma), k) in cfg.splits.iter().zip(&s.split_klds) {
            writeln!(w, "{head},{n}:{sigma},{}", fmt_f64(*k))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_benchmark(report: &BenchmarkReport) {
    println!("model {} samples {}", report.model, report.samples.len());
    for arm in &report.arms {
        let label = match arm.split {
            None => "no-split".to_string(),
            Some((n, s)) => format!("N={n} sigma={s}"),
        };
        println!("{label:<18} mean KLD {:.4} std {:.4}", arm.mean_kld, arm.std_kld);
    }
    if let Some(r) = report.pearson {
        println!("pearson(e_res, KLD) {r:.4}");
    }
}

/// Scenario with command-line overrides applied.
pub fn resolve_scenario(a: &ScenarioArgs, manifest: Option<&mut RunManifest>) -> Result<Scenario> {
    let mut s = match Scenario::by_name(&a.scenario) {
        Ok(s) => s,
        Err(_) => {
            let path = Path::new(&a.scenario);
            if !path.exists() {
                return Err(Error::InvalidConfig(format!("unknown scenario {}", a.scenario)));
            }
            let s = Scenario::load(path)?;
            if let Some(m) = manifest {
                m.add_input(path)?;
                if let crate::models::scenario::NetworkSource::File(p) = &s.network {
                    m.add_input(p)?;
                }
            }
            s
        }
    };
    if let Some(e) = a.e_res_max {
        s.engine.e_res_max = if e.is_infinite() { None } else { Some(e) };
    }
    if let Some(m) = a.max_mixands {
        s.engine.max_mixands = if m == 0 { None } else { Some(m) };
    }
    if let Some(h) = a.horizon {
        s.engine.horizon = h;
    }
    if let Some(dt) = a.dt {
        s.engine.dt = dt;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    Ok(s)
}

pub fn cmd_run(a: &RunArgs, sequential: bool) -> Result<()> {
    let mut manifest = RunManifest::new("run", a.scenario.seed, json!(null));
    let scenario = resolve_scenario(&a.scenario, Some(&mut manifest))?;
    manifest.seed = Some(scenario.seed);
    manifest.config = serde_json::to_value(&scenario)?;
    let mut cfg = scenario.engine_config()?;
    cfg.sequential = sequential;
    let model = scenario.model()?;
    let initial = scenario.initial_mixture()?;
    let lib = library_for(a.cache.as_deref(), &[(cfg.split_n, cfg.split_sigma)], &mut manifest)?;
    let (frames, stats) = manifest.time("anticipate", || anticipate_detailed(&initial, &model, &cfg, &lib))?;
    manifest.time("write", || io::save_frames(&a.out, &frames, cfg.dt))?;
    manifest.add_output(&a.out);
    manifest.save(&manifest_path(&a.out))?;
    let splits: usize = stats.iter().map(|s| s.splits).sum();
    let peak = frames.iter().map(HybridMixture::len).max().unwrap_or(0);
    let last = frames.last().map_or(0, |f| f.hypotheses().len());
    println!(
        "{} frames, {} splits, peak {} mixands, {} hypotheses at horizon, {:.3} ms",
        frames.len(),
        splits,
        peak,
        last,
        manifest.stages.iter().find(|s| s.stage == "anticipate").map_or(0.0, |s| s.seconds * 1e3)
    );
    Ok(())
}

pub fn cmd_particles(a: &ParticlesArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::InvalidConfig("count must be positive".into()));
    }
    let mut manifest = RunManifest::new("particles", None, json!(null));
    let scenario = resolve_scenario(&a.scenario, Some(&mut manifest))?;
    manifest.seed = Some(scenario.seed);
    manifest.config = json!({"scenario": scenario, "count": a.count});
    let cfg = scenario.engine_config()?;
    let model = scenario.model()?;
    let initial = scenario.initial_mixture()?;
    let sets = manifest.time("propagate", || -> Result<Vec<ParticleSet>> {
        let start = ParticleSet::sample(&initial, a.count, scenario.seed)?;
        propagate_particles(&start, &model, initial.time_index, cfg.steps()?)
    })?;
    manifest.time("write", || io::save_particles(&a.out, &sets, initial.time_index + 1, cfg.dt))?;
    manifest.add_output(&a.out);
    manifest.save(&manifest_path(&a.out))?;
    println!("{} particle sets of {} particles", sets.len(), a.count);
    Ok(())
}

fn require<'a, T>(v: &'a Option<T>, flag: &str, metric: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("{metric} needs --{flag}")))
}

fn route_model(a: &EvaluateArgs, dt: f64, manifest: &mut RunManifest) -> Result<BicycleModel> {
    let params = BicycleParams {
        dt,
        ..BicycleParams::default()
    };
    if let Some(p) = &a.network {
        manifest.add_input(p)?;
        return BicycleModel::new(Arc::new(RoadNetwork::load(p)?), params);
    }
    let name = require(&a.scenario, "scenario or --network", "eote")?;
    let s = resolve_scenario(
        &ScenarioArgs {
            scenario: name.clone(),
            e_res_max: None,
            max_mixands: None,
            horizon: None,
            dt: None,
            seed: None,
        },
        Some(manifest),
    )?;
    BicycleModel::new(
        Arc::new(s.road_network()?),
        BicycleParams {
            dt,
            ..s.bicycle.clone()
        },
    )
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut manifest = RunManifest::new(
        "evaluate",
        Some(a.seed),
        json!({"metric": format!("{:?}", a.metric).to_lowercase(), "samples": a.samples}),
    );
    manifest.add_input(&a.frames)?;
    let file = io::load_frames(&a.frames)?;
    if file.frames.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let dt = file.dt()?;
    let frames = &file.frames;
    let stamp = |i: usize, value: f64| MetricRow {
        step: frames[i].time_index,
        t: file.times[i],
        value,
    };
    let (rows, summary) = match a.metric {
        Metric::Nll => {
            let path = require(&a.particles, "particles", "nll")?;
            manifest.add_input(path)?;
            let truth = io::load_particles(path)?;
            for ((k, t, _), (f, ft)) in truth.iter().zip(frames.iter().zip(&file.times)) {
                if *k != f.time_index || (t - ft).abs() > 1e-9 * ft.abs().max(1.0) {
                    return Err(Error::MisalignedTimestamps(format!("particle step {k} vs frame {}", f.time_index)));
                }
            }
            let sets: Vec<ParticleSet> = truth.into_iter().map(|(_, _, s)| s).collect();
            let indices = a.indices.clone().unwrap_or_else(|| (0..frames[0].dim()).collect());
            let steps = manifest.time("nll", || nll(frames, &sets, &indices))?;
            let floored: usize = steps.iter().map(|s| s.floored).sum();
            let mean = steps.iter().map(|s| s.nll).sum::<f64>() / steps.len() as f64;
            let rows: Vec<MetricRow> = steps.iter().enumerate().map(|(i, s)| stamp(i, s.nll)).collect();
            (rows, format!("mean NLL {mean:.6} over {} steps, {floored} floored", steps.len()))
        }
        Metric::Ll => {
            let path = require(&a.observations, "observations", "ll")?;
            manifest.add_input(path)?;
            let obs = io::load_observations(path)?;
            let terms = manifest.time("ll", || log_likelihood_terms(frames, &obs, dt, [0, 1]))?;
            let total: f64 = terms.iter().map(|t| t.1).sum();
            let rows = terms.iter().map(|&(i, l)| stamp(i, l)).collect();
            (rows, format!("total LL {total:.6} over {} observations", terms.len()))
        }
        Metric::Eote => {
            let model = route_model(a, dt, &mut manifest)?;
            let distance = |alpha: &crate::gaussian::DiscreteState, x: f64, y: f64| {
                model.centerline_distance(alpha, x, y).unwrap_or(f64::INFINITY)
            };
            for f in frames {
                for m in &f.mixands {
                    model.centerline_distance(&m.discrete, 0.0, 0.0)?;
                }
            }
            let per = manifest.time("eote", || eote(frames, distance, a.samples, a.seed, [0, 1]))?;
            let total: f64 = per.iter().sum();
            let rows = per.iter().enumerate().map(|(i, &v)| stamp(i, v)).collect();
            (rows, format!("EOTE {total:.6} summed over {} frames", per.len()))
        }
        Metric::Collision => {
            let path = require(&a.ego, "ego", "collision")?;
            manifest.add_input(path)?;
            let ego = io::load_poses(path)?;
            for (p, t) in ego.iter().zip(&file.times) {
                if (p.t - t).abs() > dt / 2.0 {
                    return Err(Error::MisalignedTimestamps(format!("ego pose at t={} vs frame t={t}", p.t)));
                }
            }
            let ego_fp = Footprint {
                length: a.ego_length,
                width: a.ego_width,
            };
            let obs_fp = Footprint {
                length: a.obstacle_length,
                width: a.obstacle_width,
            };
            let est = manifest.time("collision", || {
                collision_probability(frames, &ego, &ego_fp, &obs_fp, a.samples, a.seed)
            })?;
            let peak = est.iter().map(|e| e.probability).fold(0.0, f64::max);
            let rows = est.iter().enumerate().map(|(i, e)| stamp(i, e.probability)).collect();
            (rows, format!("peak collision probability {peak:.6} over {} frames", est.len()))
        }
    };
    io::save_metric_csv(&a.out, &rows)?;
    manifest.add_output(&a.out);
    manifest.save(&manifest_path(&a.out))?;
    println!("{summary}");
    Ok(())
}
