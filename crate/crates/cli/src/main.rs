//! `feasnav`: terrain generation, training, tensorization, planning,
//! evaluation and rendering driven by one TOML config.

mod config;

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use feasnav::evaluator::{
    adaptation_course, adaptation_table_csv, course_endpoints, mixed_table_csv, run_adaptation_experiment,
    run_mixed_experiment, train_bundles, AdaptationConfig, EvalError, MixedConfig, PipelineSettings,
    TrainSetup,
};
use feasnav::feasnet::{grad_check, load_params, noise_rows, save_params, train_with_progress, FeasNetError, FeasNetParams};
use feasnav::mapio::{map_preview, MapFileError};
use feasnav::oracle::sample_dataset;
use feasnav::planner::{fuse, load_plan, plan_overlay, save_plan, PlanError};
use feasnav::tensorizer::{load_tensor, save_tensor, tensorize_with, TensorError};
use feasnav::{load_map, save_map, ElevationMap, Planner, DIRECTIONS};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "feasnav", version, about = "Feasibility-guided multi-policy path planning on elevation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a terrain entry from the config as a map file plus PGM preview.
    GenTerrain {
        #[arg(long)]
        config: PathBuf,
        /// Name of a `[[terrain]]` entry.
        #[arg(long)]
        terrain: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one archetype's network; writes weights and a per-epoch loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Archetype name or id.
        #[arg(long)]
        archetype: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a map and one network into an 8-direction feasibility tensor.
    Tensorize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Archetype name or id; sets the tensor's policy id.
        #[arg(long)]
        archetype: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse tensors and plan from start to goal.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long = "tensor", required = true)]
        tensors: Vec<PathBuf>,
        /// `x,y` cell; defaults to the first valid cell of the center row.
        #[arg(long, value_parser = parse_cell)]
        start: Option<(usize, usize)>,
        /// `x,y` cell; defaults to the last valid cell of the center row.
        #[arg(long, value_parser = parse_cell)]
        goal: Option<(usize, usize)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment; writes a results table and a run manifest.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        experiment: Experiment,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `evaluate.trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write a PGM of a map, one tensor channel, or a plan over its map.
    Render {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        tensor: Option<PathBuf>,
        /// Tensor channel (heading k * 45 degrees).
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Plan to draw over `--map`.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients at random inits.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        inits: usize,
        #[arg(long, default_value_t = 200)]
        params: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Adaptation,
    Mixed,
}

/// Exit status 2 for usage and config problems, 1 for runtime failures.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Missing inputs are usage errors that name the path.
fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad cell coordinate `{v}`: {e}"));
    Ok((n(x)?, n(y)?))
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_map(path: &Path) -> Result<ElevationMap, CliError> {
    require(path)?;
    load_map(path).map_err(|e: MapFileError| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_params(path: &Path) -> Result<FeasNetParams, CliError> {
    require(path)?;
    load_params(path).map_err(|e: FeasNetError| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Content hash in the style of a git blob id, over SHA-256.
fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(content_hash(&bytes))
}

fn planner_for(cfg: &RunConfig, resolution: f64) -> Result<Planner, CliError> {
    Planner::new(cfg.planner.f_min, resolution).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_gen_terrain(config: &Path, terrain: &str, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let entry = cfg.terrain(terrain)?;
    let map = feasnav::generate(&entry.spec(cfg.seed)).map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_parent(out)?;
    save_map(&map, out).map_err(runtime)?;
    map_preview(&map).write(with_extension(out, ".pgm")).map_err(runtime)?;
    eprintln!("wrote {} ({}x{} cells)", out.display(), map.width(), map.height());
    Ok(())
}

fn cmd_train(config: &Path, archetype: &str, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let entry = cfg.archetype(archetype)?;
    let arch = entry.archetype();
    let specs = cfg.training_specs(entry)?;
    let setup = cfg.train_setup(entry);
    let labels = if setup.train.tracking_noise {
        setup.labels
    } else {
        feasnav::oracle::LabelConfig {
            tracking_noise_sigma: 0.0,
            ..setup.labels
        }
    };
    let data = sample_dataset(&arch, &specs, setup.samples, setup.data_seed, &labels).map_err(runtime)?;
    let init = FeasNetParams::init(setup.init_seed);
    let (params, history) = train_with_progress(&init, &data, &setup.train, |e, l| {
        eprintln!(
            "epoch {e}: total {:.6} feas {:.6} recon {:.6} kl {:.3}",
            l.total, l.feas, l.recon, l.kl
        )
    })
    .map_err(runtime)?;
    ensure_parent(out)?;
    save_params(&params, out).map_err(runtime)?;
    let mut log = String::from("epoch,total,feas,recon,kl\n");
    for (e, l) in history.iter().enumerate() {
        log.push_str(&format!("{e},{:e},{:e},{:e},{:e}\n", l.total, l.feas, l.recon, l.kl));
    }
    write_file(&with_extension(out, ".loss.csv"), log.as_bytes())?;
    eprintln!("wrote {} ({} epochs)", out.display(), history.len());
    Ok(())
}

fn cmd_tensorize(config: &Path, map: &Path, weights: &Path, archetype: &str, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let id = cfg.archetype(archetype)?.id;
    let map = read_map(map)?;
    let params = read_params(weights)?;
    let t = tensorize_with(&map, &params, id, &cfg.tensorizer).map_err(runtime)?;
    ensure_parent(out)?;
    save_tensor(&t, out).map_err(runtime)?;
    eprintln!("wrote {} (valid mean {:.4})", out.display(), t.valid_mean());
    Ok(())
}

fn cmd_plan(
    config: &Path,
    map: &Path,
    tensors: &[PathBuf],
    start: Option<(usize, usize)>,
    goal: Option<(usize, usize)>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let map = read_map(map)?;
    let mut loaded = vec![];
    for p in tensors {
        require(p)?;
        loaded.push(load_tensor(p).map_err(|e: TensorError| CliError::Runtime(format!("{}: {e}", p.display())))?);
    }
    let (s, g) = match (start, goal) {
        (Some(s), Some(g)) => (s, g),
        _ => {
            let (s, g) = course_endpoints(&map).map_err(runtime)?;
            (start.unwrap_or(s), goal.unwrap_or(g))
        }
    };
    let planner = planner_for(&cfg, map.resolution())?;
    let field = fuse(&loaded).map_err(|e| CliError::Usage(e.to_string()))?;
    let plan = match planner.plan(&field, s, g) {
        Ok(p) => p,
        Err(e @ PlanError::InvalidCell { .. }) => return Err(CliError::Usage(e.to_string())),
        Err(e) => return Err(runtime(e)),
    };
    ensure_parent(out)?;
    save_plan(&plan, out).map_err(runtime)?;
    eprintln!(
        "wrote {} ({} waypoints, {:.3} m, {} policy switches)",
        out.display(),
        plan.waypoints.len(),
        plan.total_length,
        plan.policy_switches()
    );
    Ok(())
}

fn settings(cfg: &RunConfig) -> PipelineSettings {
    PipelineSettings {
        planner: Planner {
            f_min: cfg.planner.f_min,
            ..Planner::default()
        },
        ood: cfg.tensorizer,
        exec: cfg.evaluate.exec,
    }
}

fn experiment_setup(cfg: &RunConfig, samples: usize) -> TrainSetup {
    TrainSetup {
        samples,
        init_seed: cfg.seed.wrapping_add(1),
        data_seed: cfg.seed.wrapping_add(2),
        labels: cfg.constants.labels(),
        ..TrainSetup::default()
    }
}

fn cmd_evaluate(config: &Path, experiment: Experiment, out: Option<&Path>, trials: Option<usize>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(t) = trials {
        if t == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        cfg.evaluate.trials = t;
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let progress = |m: &str| eprintln!("{m}");
    let usage_or_runtime = |e: EvalError| match e {
        EvalError::Setup(m) => CliError::Usage(m),
        e => runtime(e),
    };
    let (name, table, rows, resolved) = match experiment {
        Experiment::Adaptation => {
            let ac = AdaptationConfig {
                course: adaptation_course().with_seed(cfg.seed.wrapping_add(11)),
                eval_seed: cfg.seed.wrapping_add(12),
                skill_levels: cfg.evaluate.skill_levels.clone(),
                trials: cfg.evaluate.trials,
                seed: cfg.seed,
                train: experiment_setup(&cfg, cfg.evaluate.adaptation_samples),
                settings: settings(&cfg),
            };
            let rows = run_adaptation_experiment(&ac, progress).map_err(usage_or_runtime)?;
            (
                "adaptation",
                adaptation_table_csv(&rows),
                serde_json::to_value(&rows).map_err(runtime)?,
                serde_json::to_value(&ac).map_err(runtime)?,
            )
        }
        Experiment::Mixed => {
            let mc = MixedConfig {
                train_seed: cfg.seed.wrapping_add(21),
                eval_seed: cfg.seed.wrapping_add(22),
                tasks: cfg.evaluate.tasks,
                trials: cfg.evaluate.trials,
                seed: cfg.seed,
                training_terrain: cfg.evaluate.training_terrain,
                train: experiment_setup(&cfg, cfg.evaluate.mixed_samples),
                settings: settings(&cfg),
                ..MixedConfig::default()
            };
            let bundles = train_bundles(&mc, progress).map_err(usage_or_runtime)?;
            let rows = run_mixed_experiment(&mc, &bundles, progress).map_err(usage_or_runtime)?;
            (
                "mixed",
                mixed_table_csv(&rows),
                serde_json::to_value(&rows).map_err(runtime)?,
                serde_json::to_value(&mc).map_err(runtime)?,
            )
        }
    };
    let table_path = dir.join(format!("{name}.csv"));
    write_file(&table_path, table.as_bytes())?;
    let manifest = json!({
        "experiment": name,
        "config_file": config.display().to_string(),
        "config": serde_json::to_value(&cfg).map_err(runtime)?,
        "experiment_config": resolved,
        "seed": cfg.seed,
        "inputs": { config.display().to_string(): file_hash(config)? },
        "outputs": { table_path.display().to_string(): content_hash(table.as_bytes()) },
        "results": rows,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    write_file(&dir.join(format!("{name}-manifest.json")), text.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_render(
    map: Option<&Path>,
    tensor: Option<&Path>,
    channel: usize,
    plan: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let image = match (map, tensor, plan) {
        (_, Some(t), None) => {
            if channel >= DIRECTIONS {
                return Err(CliError::Usage(format!("channel {channel} outside 0..{DIRECTIONS}")));
            }
            require(t)?;
            load_tensor(t).map_err(runtime)?.channel_image(channel)
        }
        (Some(m), None, Some(p)) => {
            let map = read_map(m)?;
            require(p)?;
            let plan = load_plan(p, map.resolution()).map_err(runtime)?;
            plan_overlay(&map, &plan)
        }
        (Some(m), None, None) => map_preview(&read_map(m)?),
        _ => {
            return Err(CliError::Usage(
                "render needs --map, --tensor, or --map with --plan".into(),
            ))
        }
    };
    ensure_parent(out)?;
    image.write(out).map_err(runtime)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_grad_check(config: &Path, inits: usize, params: usize, batch: usize, tolerance: f64) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    if inits == 0 || params == 0 || batch == 0 {
        return Err(CliError::Usage("--inits, --params and --batch must be at least 1".into()));
    }
    let entry = &cfg.archetype[0];
    let specs = cfg.training_specs(entry)?;
    let data = sample_dataset(&entry.archetype(), &specs, batch, cfg.seed, &cfg.constants.labels()).map_err(runtime)?;
    let mut worst = 0.0f64;
    let mut stdout = io::stdout().lock();
    for i in 0..inits as u64 {
        let seed = cfg.seed.wrapping_add(i);
        let p = FeasNetParams::init(seed);
        let noise = noise_rows(batch, seed);
        let err = grad_check(&p, &data, &noise, &cfg.train, params, seed).map_err(runtime)?;
        writeln!(stdout, "init {i}: max relative error {err:.3e} over {params} parameters").map_err(runtime)?;
        worst = worst.max(err);
    }
    writeln!(stdout, "worst {worst:.3e} (tolerance {tolerance:e})").map_err(runtime)?;
    if worst < tolerance {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed: {worst:e} >= {tolerance:e}")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenTerrain { config, terrain, out } => cmd_gen_terrain(&config, &terrain, &out),
        Command::Train { config, archetype, out } => cmd_train(&config, &archetype, &out),
        Command::Tensorize {
            config,
            map,
            weights,
            archetype,
            out,
        } => cmd_tensorize(&config, &map, &weights, &archetype, &out),
        Command::Plan {
            config,
            map,
            tensors,
            start,
            goal,
            out,
        } => cmd_plan(&config, &map, &tensors, start, goal, &out),
        Command::Evaluate {
            config,
            experiment,
            out,
            trials,
        } => cmd_evaluate(&config, experiment, out.as_deref(), trials),
        Command::Render {
            map,
            tensor,
            channel,
            plan,
            out,
        } => cmd_render(map.as_deref(), tensor.as_deref(), channel, plan.as_deref(), &out),
        Command::GradCheck {
            config,
            inits,
            params,
            batch,
            tolerance,
        } => cmd_grad_check(&config, inits, params, batch, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
