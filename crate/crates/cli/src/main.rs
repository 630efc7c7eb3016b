use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use tfblend::blender::MiniNetParams;
use tfblend::harness::{
    blend_gradient_check, evaluate, oracle_check, report, tradeoff_sweep, train, OracleReport, RunConfig,
    RunManifest,
};
use tfblend::synth::{generate_sequence, save_sequence};
use tfblend::Error;

/// Temporal feature blending workflows.
#[derive(Debug, Parser)]
#[command(name = "tfblend", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic sequence (clean and observed frames).
    Gen,
    /// Train the weight network and save it with its loss curve.
    Train,
    /// Score passthrough, baselines and the blender on held-out scenes.
    Eval {
        /// Trained parameter directory; the seeded initialization otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Finite-difference check of the blend + MSE gradient.
    Gradcheck,
    /// Compare the pipeline against the naive transcription.
    Oracle,
    /// Time and score the blender across neighbor counts.
    Tradeoff {
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,
    /// Reseeds the blender, scene, training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    kernel: Option<usize>,
    /// Neighbor count; a comma list of counts for `tradeoff`.
    #[arg(long, global = true, value_delimiter = ',')]
    neighbors: Option<Vec<usize>>,
    #[arg(long, global = true)]
    include_self: Option<bool>,
    #[arg(long, global = true)]
    aggregate_mode: Option<String>,
    #[arg(long, global = true)]
    precision: Option<String>,
    /// `section.key=value`, applied last. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Config(Error),
    Runtime(Error),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            e => Failure::Runtime(e),
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let c = &cli.common;
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    if let Some(seed) = c.seed {
        config = config.with_seed(seed);
    }
    let mut flags: Vec<(&str, Value)> = Vec::new();
    if let Some(v) = c.delta {
        flags.push(("blender.delta", v.into()));
    }
    if let Some(v) = &c.variant {
        flags.push(("blender.variant", v.as_str().into()));
    }
    if let Some(v) = c.layers {
        flags.push(("blender.layers", v.into()));
    }
    if let Some(v) = c.kernel {
        flags.push(("blender.kernel", v.into()));
    }
    if let Some(v) = c.include_self {
        flags.push(("blender.include_self", v.into()));
    }
    if let Some(v) = &c.aggregate_mode {
        flags.push(("blender.aggregate_mode", v.as_str().into()));
    }
    if let Some(v) = &c.precision {
        flags.push(("blender.precision", v.as_str().into()));
    }
    if let Some(v) = &c.neighbors {
        if matches!(cli.command, Command::Tradeoff { .. }) {
            flags.push(("tradeoff.neighbor_counts", v.clone().into()));
        } else if let [n] = v[..] {
            flags.push(("train.neighbors", n.into()));
        } else {
            return Err(Error::config("neighbors", "takes a single count outside `tradeoff`"));
        }
    }
    for (path, value) in flags {
        config.set_value(path, value)?;
    }
    for o in &c.overrides {
        config.set(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<String, Error> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(name.to_string())
}

fn load_params(path: Option<&Path>, config: &RunConfig) -> Result<MiniNetParams<f64>, Error> {
    let b = &config.blender;
    let params = match path {
        Some(p) => MiniNetParams::load(p)?,
        None => MiniNetParams::init(b.mini_net(), b.variant, config.scene.grid[0], b.seed)?,
    };
    params.check_compatible(b.variant, config.scene.grid[0])?;
    Ok(params)
}

fn threads() -> usize {
    std::env::var("TFB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(0)
}

fn run(cli: &Cli, config: &RunConfig) -> Result<(), Failure> {
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(Error::from)?;
    let (workflow, artifacts) = match &cli.command {
        Command::Gen => {
            let seq = generate_sequence(&config.scene, config.frames)?;
            save_sequence(out.join("sequence"), &config.scene, &seq)?;
            ("gen", vec!["sequence/".to_string()])
        }
        Command::Train => {
            let outcome = train(&config.train, &config.scene, &config.blender)?;
            outcome.params.save(out.join("params"))?;
            report::write_loss_csv(out.join("loss.csv"), &outcome.losses)?;
            report::write_svg(out.join("loss.svg"), &report::loss_plot(&outcome.losses))?;
            let summary = evaluate(&outcome.params, &config.blender, &config.train.eval_set(&config.scene)?)?;
            let eval = write_json(out, "eval.json", &summary)?;
            let last = outcome.losses.last().map_or(f64::NAN, |p| p.train_mse);
            println!("final train MSE {last:.6}; eval MSE {:.6} (uniform {:.6})", summary.mse_tfblender, summary.mse_uniform);
            ("train", vec!["params/".into(), "loss.csv".into(), "loss.svg".into(), eval])
        }
        Command::Eval { params } => {
            let params = load_params(params.as_deref(), config)?;
            let summary = evaluate(&params, &config.blender, &config.train.eval_set(&config.scene)?)?;
            println!(
                "passthrough {:.6}  uniform {:.6}  cosine {:.6}  blender {:.6}",
                summary.mse_passthrough, summary.mse_uniform, summary.mse_cosine, summary.mse_tfblender
            );
            ("eval", vec![write_json(out, "eval.json", &summary)?])
        }
        Command::Gradcheck => {
            let seed = config.blender.seed;
            let result = blend_gradient_check(&config.blender, seed, &config.gradcheck)?;
            let name = write_json(out, "gradcheck.json", &result)?;
            RunManifest::new("gradcheck", config, vec![name])?.write(out)?;
            println!("max relative error {:.3e} over {} parameter tensors", result.report.max_rel_err, result.report.per_parameter.len());
            if !result.passed {
                return Err(Failure::Verification(format!(
                    "relative error {:.3e} exceeds {:.1e}",
                    result.report.max_rel_err, config.gradcheck.tolerance
                )));
            }
            return Ok(());
        }
        Command::Oracle => {
            let seed = config.blender.seed;
            let reports: Vec<OracleReport> = (seed..seed + config.oracle.seeds)
                .map(|s| oracle_check(&config.blender, s))
                .collect::<Result<_, _>>()?;
            let name = write_json(out, "oracle.json", &reports)?;
            RunManifest::new("oracle", config, vec![name])?.write(out)?;
            let worst = reports.iter().map(|r| r.max_abs_deviation).fold(0.0, f64::max);
            println!("max deviation {worst:.3e} over {} seeds", reports.len());
            if !(worst < config.oracle.tolerance) {
                return Err(Failure::Verification(format!(
                    "deviation {worst:.3e} exceeds {:.1e}",
                    config.oracle.tolerance
                )));
            }
            return Ok(());
        }
        Command::Tradeoff { params } => {
            let params = load_params(params.as_deref(), config)?;
            let digest = config.digest()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .map_err(|e| Error::Invalid(e.to_string()))?;
            let rep = pool.install(|| tradeoff_sweep(&config.tradeoff, &config.blender, &config.scene, &params, &digest))?;
            report::write_records_csv(out.join("tradeoff.csv"), &rep.records)?;
            report::write_svg(out.join("tradeoff.svg"), &report::tradeoff_plot(&rep.records))?;
            report::write_svg(out.join("cost_ratio.svg"), &report::cost_ratio_plot(&rep.records))?;
            let timing = write_json(out, "timing.json", &rep)?;
            for r in &rep.records {
                println!(
                    "i={:<2} measured_r {:.3}  predicted_r {:.3}  mse blender {:.6} uniform {:.6}",
                    r.neighbor_count, r.measured_r, r.predicted_r, r.mse_tfblender, r.mse_uniform
                );
            }
            if let Some(f) = &rep.preferred_fit {
                println!("preferred fit: {f}");
            }
            (
                "tradeoff",
                vec!["tradeoff.csv".into(), "tradeoff.svg".into(), "cost_ratio.svg".into(), timing],
            )
        }
    };
    RunManifest::new(workflow, config, artifacts)?.write(out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let n = threads();
    if n > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: TFB_THREADS: {e}");
            return ExitCode::from(1);
        }
    }
    let config = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) | Failure::Runtime(e) => eprintln!("error: {e}"),
                Failure::Verification(m) => eprintln!("verification failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
