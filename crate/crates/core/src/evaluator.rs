//! Plan execution against the capability oracle, SPL, and the two headline
//! experiments: skill adaptation on a tiered staircase and multi-policy
//! coordination across terrain families.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feasnet::{train, FeasNetError, FeasNetParams, TrainConfig};
use crate::oracle::{
    channel_heading, sample_dataset, traverse_score, ArchetypeKind, LabelConfig, OracleError, PolicyArchetype,
    TaskVector,
};
use crate::planner::{Plan, PlanError, Planner};
use crate::tensorizer::{
    tensorize_with, valid_mask, FeasibilityTensor, OodThresholds, PolicyBundle, TensorError,
};
use crate::terrain::{extract_patch, footprint_radius, generate, ElevationMap, TerrainError, TerrainFamily, TerrainParams, TerrainSpec};
use crate::{step_length, DIRECTIONS};

/// Ground-truth traversability threshold for the SPL reference path.
pub const REFERENCE_RHO: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no trials to score")]
    NoTrials,
    #[error("trial {index} succeeded with path {path} m shorter than its reference {shortest} m")]
    ShorterThanReference { index: usize, path: f64, shortest: f64 },
    #[error("plan edge {edge} uses policy {policy}, which is not among the executing archetypes")]
    UnknownPolicy { edge: usize, policy: usize },
    #[error("invalid experiment setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Net(#[from] FeasNetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    None,
    NoPath,
    TraversalFailure,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    /// Executed path length (m).
    pub path_length: f64,
    /// Reference shortest traversable length (m).
    pub shortest_length: f64,
    pub failure_cause: FailureCause,
    pub policy_switches: usize,
}

impl TrialResult {
    pub fn no_path(shortest_length: f64) -> Self {
        Self {
            success: false,
            path_length: 0.0,
            shortest_length,
            failure_cause: FailureCause::NoPath,
            policy_switches: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    /// Added to the oracle score to form the per-edge success probability.
    pub success_margin: f64,
    /// Step budget as a multiple of the waypoint count.
    pub budget_factor: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            success_margin: 0.02,
            budget_factor: 4,
        }
    }
}

/// Oracle score of every plan edge under the archetype assigned to it.
pub fn edge_scores(plan: &Plan, map: &ElevationMap, archetypes: &[PolicyArchetype]) -> Result<Vec<f64>, EvalError> {
    let task = TaskVector::forward();
    plan.edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let arch = archetypes
                .iter()
                .find(|a| a.id == e.policy)
                .ok_or(EvalError::UnknownPolicy {
                    edge: i,
                    policy: e.policy,
                })?;
            let (x, y) = plan.waypoints[i];
            let patch = extract_patch(map, x, y, channel_heading(e.direction))?;
            Ok(traverse_score(arch, &patch, &task))
        })
        .collect()
}

/// Walks a plan whose edge scores are already known. Each edge succeeds
/// with probability `min(1, rho + margin)`.
pub fn execute_scored(
    plan: &Plan,
    scores: &[f64],
    resolution: f64,
    shortest_length: f64,
    seed: u64,
    cfg: &ExecConfig,
) -> TrialResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = cfg.budget_factor * plan.waypoints.len();
    let mut walked = 0.0;
    let mut cause = FailureCause::None;
    for (i, (edge, rho)) in plan.edges.iter().zip(scores).enumerate() {
        if i >= budget {
            cause = FailureCause::Timeout;
            break;
        }
        let p = (rho + cfg.success_margin).min(1.0);
        if rng.random::<f64>() >= p {
            cause = FailureCause::TraversalFailure;
            break;
        }
        walked += step_length(edge.direction, resolution);
    }
    TrialResult {
        success: cause == FailureCause::None,
        path_length: walked,
        shortest_length,
        failure_cause: cause,
        policy_switches: plan.policy_switches(),
    }
}

pub fn execute(
    plan: &Plan,
    map: &ElevationMap,
    archetypes: &[PolicyArchetype],
    shortest_length: f64,
    seed: u64,
    cfg: &ExecConfig,
) -> Result<TrialResult, EvalError> {
    let scores = edge_scores(plan, map, archetypes)?;
    Ok(execute_scored(plan, &scores, map.resolution(), shortest_length, seed, cfg))
}

/// Success weighted by path length: mean of `S * l / max(p, l)`.
pub fn spl(trials: &[TrialResult]) -> Result<f64, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::NoTrials);
    }
    let mut sum = 0.0;
    for (index, t) in trials.iter().enumerate() {
        if !t.success {
            continue;
        }
        if t.path_length < t.shortest_length - 1e-9 {
            return Err(EvalError::ShorterThanReference {
                index,
                path: t.path_length,
                shortest: t.shortest_length,
            });
        }
        sum += t.shortest_length / t.path_length.max(t.shortest_length);
    }
    Ok(sum / trials.len() as f64)
}

pub fn success_rate(trials: &[TrialResult]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64
}

/// 1 where the best reference archetype scores at least [`REFERENCE_RHO`],
/// 0 elsewhere.
pub fn traversable_tensor(map: &ElevationMap, references: &[PolicyArchetype]) -> Result<FeasibilityTensor, EvalError> {
    let valid = valid_mask(map);
    let (w, h) = (map.width(), map.height());
    let task = TaskVector::forward();
    let mut values = vec![0.0; w * h * DIRECTIONS];
    for y in 0..h {
        for x in 0..w {
            if !valid[y * w + x] {
                continue;
            }
            for k in 0..DIRECTIONS {
                let patch = extract_patch(map, x, y, channel_heading(k))?;
                if references.iter().any(|a| traverse_score(a, &patch, &task) >= REFERENCE_RHO) {
                    values[(y * w + x) * DIRECTIONS + k] = 1.0;
                }
            }
        }
    }
    Ok(FeasibilityTensor::new(w, h, 0, values, valid)?)
}

/// Geometric length of the shortest path over ground-truth traversable
/// edges, with `extra` edges (e.g. ones a trial actually crossed) admitted.
pub fn reference_length(
    traversable: &FeasibilityTensor,
    resolution: f64,
    start: (usize, usize),
    goal: (usize, usize),
    extra: Option<&Plan>,
) -> Result<f64, EvalError> {
    let field = match extra {
        None => crate::planner::fuse(std::slice::from_ref(traversable))?,
        Some(plan) => {
            let mut values = traversable.values().to_vec();
            for (i, e) in plan.edges.iter().enumerate() {
                let (x, y) = plan.waypoints[i];
                values[(y * traversable.width() + x) * DIRECTIONS + e.direction] = 1.0;
            }
            let t = FeasibilityTensor::new(
                traversable.width(),
                traversable.height(),
                0,
                values,
                traversable.valid_mask().to_vec(),
            )?;
            crate::planner::fuse(&[t])?
        }
    };
    let planner = Planner::new(1.0, resolution)?;
    Ok(planner.plan(&field, start, goal)?.total_cost)
}

/// Runs `trials` seeded executions of one plan and fills in SPL references.
/// When the traversable set does not connect the endpoints, the plan's own
/// edges are admitted to it.
pub fn run_trials(
    plan: &Plan,
    map: &ElevationMap,
    archetypes: &[PolicyArchetype],
    traversable: &FeasibilityTensor,
    trials: usize,
    seed: u64,
    cfg: &ExecConfig,
) -> Result<Vec<TrialResult>, EvalError> {
    let start = plan.waypoints[0];
    let goal = *plan.waypoints.last().unwrap();
    let shortest = match reference_length(traversable, map.resolution(), start, goal, None) {
        Err(EvalError::Plan(PlanError::NoPath(..))) => {
            reference_length(traversable, map.resolution(), start, goal, Some(plan))?
        }
        other => other?,
    };
    let scores = edge_scores(plan, map, archetypes)?;
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut r = execute_scored(plan, &scores, map.resolution(), shortest, trial_seed(seed, t as u64), cfg);
        if r.success && r.path_length < shortest - 1e-9 {
            // the plan crossed edges outside the reference set and survived
            r.shortest_length = reference_length(traversable, map.resolution(), start, goal, Some(plan))?;
        }
        out.push(r);
    }
    Ok(out)
}

fn trial_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

/// Dataset size and optimizer settings for one policy's network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSetup {
    pub samples: usize,
    pub init_seed: u64,
    pub data_seed: u64,
    pub labels: LabelConfig,
    pub train: TrainConfig,
}

impl Default for TrainSetup {
    fn default() -> Self {
        Self {
            samples: 5000,
            init_seed: 1,
            data_seed: 2,
            labels: LabelConfig::default(),
            train: experiment_train_config(),
        }
    }
}

/// Smaller batches and a larger step than [`TrainConfig::default`]: the
/// multi-family datasets need more optimizer steps for the VAE branch to
/// fit pits and gaps.
pub fn experiment_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

/// Samples oracle labels on `specs` and trains a fresh network.
pub fn train_policy(arch: &PolicyArchetype, specs: &[TerrainSpec], setup: &TrainSetup) -> Result<FeasNetParams, EvalError> {
    let labels = if setup.train.tracking_noise {
        setup.labels
    } else {
        LabelConfig {
            tracking_noise_sigma: 0.0,
            ..setup.labels
        }
    };
    let data = sample_dataset(arch, specs, setup.samples, setup.data_seed, &labels)?;
    let (params, _) = train(&FeasNetParams::init(setup.init_seed), &data, &setup.train)?;
    Ok(params)
}

/// Settings shared by both experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub planner: Planner,
    pub ood: OodThresholds,
    pub exec: ExecConfig,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            planner: Planner::default(),
            ood: OodThresholds::default(),
            exec: ExecConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub course: TerrainSpec,
    /// Seed of the evaluation map; training maps use `course.seed`.
    pub eval_seed: u64,
    pub skill_levels: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub train: TrainSetup,
    pub settings: PipelineSettings,
}

/// Tiered staircase: a high-step center lane, medium-step side lanes and
/// flat ground beyond, with flat approaches at both ends.
pub fn adaptation_course() -> TerrainSpec {
    TerrainSpec::new(TerrainFamily::Steps, (4.0, 6.0))
        .with_params(TerrainParams {
            tread: 0.4,
            step_count: 2,
            tier_step_heights: vec![0.12, 0.06],
            tier_half_widths: vec![0.75, 1.75],
            buffer: 1.0,
            jitter: 0.002,
            ..Default::default()
        })
        .with_seed(11)
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            course: adaptation_course(),
            eval_seed: 12,
            skill_levels: vec![0.25, 0.5, 1.0],
            trials: 500,
            seed: 7,
            train: TrainSetup::default(),
            settings: PipelineSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRow {
    pub skill_level: f64,
    pub path_length: f64,
    pub success_rate: f64,
    pub spl: f64,
}

/// Fixed start and goal on the course's center row, just inside the flat
/// approaches.
pub fn course_endpoints(map: &ElevationMap) -> Result<((usize, usize), (usize, usize)), EvalError> {
    let y = map.height() / 2;
    let xs: Vec<usize> = (0..map.width()).filter(|&x| map.footprint_fits(x, y)).collect();
    match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if a < b => Ok(((a, y), (b, y))),
        _ => Err(EvalError::Setup("map too small for distinct endpoints".into())),
    }
}

/// For each skill level: train a StepsExpert network at that skill, plan
/// across the course and execute. SPL references use the full-skill
/// archetype's traversable set.
pub fn run_adaptation_experiment(
    cfg: &AdaptationConfig,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AdaptationRow>, EvalError> {
    if cfg.skill_levels.is_empty() || cfg.skill_levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::Setup("skill levels must be non-empty and strictly increasing".into()));
    }
    if cfg.trials == 0 {
        return Err(EvalError::Setup("trials must be at least 1".into()));
    }
    let train_specs = [
        cfg.course.clone(),
        TerrainSpec::new(TerrainFamily::Flat, (3.0, 3.0)).with_params(cfg.course.params.clone()),
    ];
    let map = generate(&cfg.course.clone().with_seed(cfg.eval_seed))?;
    let (start, goal) = course_endpoints(&map)?;
    let full = PolicyArchetype::new(0, ArchetypeKind::StepsExpert);
    let traversable = traversable_tensor(&map, std::slice::from_ref(&full))?;

    let mut rows = vec![];
    for &skill in &cfg.skill_levels {
        let arch = full.clone().with_skill(skill);
        arch.validate()?;
        progress(&format!("training steps expert at skill {skill}"));
        let params = train_policy(&arch, &train_specs, &cfg.train)?;
        let tensor = tensorize_with(&map, &params, arch.id, &cfg.settings.ood)?;
        let (plan, _) = cfg.settings.planner.plan_multi(&[tensor], start, goal)?;
        let trials = run_trials(
            &plan,
            &map,
            std::slice::from_ref(&arch),
            &traversable,
            cfg.trials,
            cfg.seed,
            &cfg.settings.exec,
        )?;
        let row = AdaptationRow {
            skill_level: skill,
            path_length: plan.total_length,
            success_rate: success_rate(&trials),
            spl: spl(&trials)?,
        };
        progress(&format!(
            "skill {skill}: path {:.2} m, success {:.1}%, spl {:.3}",
            row.path_length,
            100.0 * row.success_rate,
            row.spl
        ));
        rows.push(row);
    }
    Ok(rows)
}

/// A row label of the coordination table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Single(ArchetypeKind),
    Fused,
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Controller::Single(k) => write!(f, "{k}"),
            Controller::Fused => f.write_str("fused"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedConfig {
    /// Geometry and jitter shared by all maps.
    pub params: TerrainParams,
    pub family_extent: (f64, f64),
    pub mixed_extent: (f64, f64),
    /// Height of the extra training maps that keep samples on each
    /// family's center corridor.
    pub corridor_height: f64,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub tasks: usize,
    pub trials: usize,
    pub seed: u64,
    pub training_terrain: TrainingTerrain,
    pub train: TrainSetup,
    pub settings: PipelineSettings,
}

/// Geometry used by the coordination experiment.
pub fn experiment_params() -> TerrainParams {
    TerrainParams {
        step_height: 0.10,
        tread: 0.4,
        step_count: 2,
        gap_depth: 0.4,
        pit_depth: 0.4,
        valley_incline_deg: 45.0,
        buffer: 1.5,
        jitter: 0.005,
        ..Default::default()
    }
}

impl Default for MixedConfig {
    fn default() -> Self {
        Self {
            params: experiment_params(),
            family_extent: (6.0, 2.5),
            mixed_extent: (20.0, 2.5),
            corridor_height: 1.4,
            train_seed: 21,
            eval_seed: 22,
            tasks: 10,
            trials: 50,
            seed: 9,
            training_terrain: TrainingTerrain::Shared,
            train: TrainSetup {
                samples: 20_000,
                ..TrainSetup::default()
            },
            settings: PipelineSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedRow {
    pub controller: Controller,
    pub terrain: TerrainFamily,
    pub success_rate: f64,
    pub spl: f64,
    /// Tasks for which the planner found no path.
    pub no_path_tasks: usize,
}

pub const EXPERT_KINDS: [ArchetypeKind; 4] = [
    ArchetypeKind::StepsExpert,
    ArchetypeKind::GapsExpert,
    ArchetypeKind::BridgeExpert,
    ArchetypeKind::ValleyExpert,
];

pub fn home_family(kind: ArchetypeKind) -> Option<TerrainFamily> {
    match kind {
        ArchetypeKind::StepsExpert => Some(TerrainFamily::Steps),
        ArchetypeKind::GapsExpert => Some(TerrainFamily::Gaps),
        ArchetypeKind::BridgeExpert => Some(TerrainFamily::Bridge),
        ArchetypeKind::ValleyExpert => Some(TerrainFamily::Valley),
        ArchetypeKind::General => None,
    }
}

/// Which terrain a policy's network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingTerrain {
    /// Every family plus flat, labeled by the policy's own oracle.
    #[default]
    Shared,
    /// Experts see their home family plus flat; General still sees all.
    Home,
}

/// Trains one bundle per archetype kind; ids follow [`ArchetypeKind::ALL`].
pub fn train_bundles(cfg: &MixedConfig, mut progress: impl FnMut(&str)) -> Result<Vec<PolicyBundle>, EvalError> {
    let spec = |f: TerrainFamily, extent| {
        TerrainSpec::new(f, extent)
            .with_params(cfg.params.clone())
            .with_seed(cfg.train_seed)
    };
    let flat = spec(TerrainFamily::Flat, (3.0, 3.0));
    let family = |f| vec![spec(f, cfg.family_extent), spec(f, (cfg.family_extent.0, cfg.corridor_height))];
    let mut shared: Vec<_> = EXPERT_KINDS.iter().filter_map(|&k| home_family(k)).flat_map(family).collect();
    shared.push(flat.clone());
    let mut bundles = vec![];
    for (id, kind) in ArchetypeKind::ALL.into_iter().enumerate() {
        let arch = PolicyArchetype::new(id, kind);
        let specs = match (cfg.training_terrain, home_family(kind)) {
            (TrainingTerrain::Home, Some(home)) => [family(home), vec![flat.clone()]].concat(),
            _ => shared.clone(),
        };
        progress(&format!("training {kind}"));
        let params = train_policy(&arch, &specs, &cfg.train)?;
        bundles.push(PolicyBundle::new(arch, params));
    }
    Ok(bundles)
}

/// Start/goal pairs: random rows in the first and last flat approach of
/// family maps, far enough from the features that no patch around an
/// endpoint reaches them; the center row at both ends of the Mixed map.
pub fn task_endpoints(
    map: &ElevationMap,
    family: TerrainFamily,
    buffer_cells: usize,
    tasks: usize,
    seed: u64,
) -> Result<Vec<((usize, usize), (usize, usize))>, EvalError> {
    let mid = map.height() / 2;
    let xs: Vec<usize> = (0..map.width()).filter(|&x| map.footprint_fits(x, mid)).collect();
    let ys: Vec<usize> = (0..map.height()).filter(|&y| map.footprint_fits(map.width() / 2, y)).collect();
    let (Some(&x0), Some(&x1)) = (xs.first(), xs.last()) else {
        return Err(EvalError::Setup("map has no valid cells".into()));
    };
    if family == TerrainFamily::Mixed {
        return Ok(vec![((x0, mid), (x1, mid)); tasks]);
    }
    // endpoints whose whole patch footprint stays on the flat approach
    let margin = footprint_radius().ceil() as usize;
    let starts: Vec<usize> = xs.iter().copied().filter(|&x| x + margin < buffer_cells).collect();
    let goals: Vec<usize> = xs
        .iter()
        .copied()
        .filter(|&x| x >= (map.width() + margin).saturating_sub(buffer_cells))
        .collect();
    if starts.is_empty() || goals.is_empty() {
        return Err(EvalError::Setup(format!(
            "the {} m approach leaves no valid start or goal column",
            buffer_cells as f64 * map.resolution()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..tasks)
        .map(|_| {
            let s = (starts[rng.random_range(0..starts.len())], ys[rng.random_range(0..ys.len())]);
            let g = (goals[rng.random_range(0..goals.len())], ys[rng.random_range(0..ys.len())]);
            (s, g)
        })
        .collect())
}

/// The coordination table: every single archetype and the fused experts on
/// each family map and on the Mixed composite.
pub fn run_mixed_experiment(
    cfg: &MixedConfig,
    bundles: &[PolicyBundle],
    mut progress: impl FnMut(&str),
) -> Result<Vec<MixedRow>, EvalError> {
    if cfg.tasks == 0 || cfg.trials == 0 {
        return Err(EvalError::Setup("tasks and trials must be at least 1".into()));
    }
    let find = |k: ArchetypeKind| {
        bundles
            .iter()
            .find(|b| b.archetype.kind == k)
            .ok_or_else(|| EvalError::Setup(format!("no bundle for {k}")))
    };
    let experts: Vec<&PolicyBundle> = EXPERT_KINDS.iter().map(|&k| find(k)).collect::<Result<_, _>>()?;
    find(ArchetypeKind::General)?;
    let expert_archs: Vec<PolicyArchetype> = experts.iter().map(|b| b.archetype.clone()).collect();
    let buffer_cells = (cfg.params.buffer / crate::terrain::DEFAULT_RESOLUTION).round() as usize;

    let terrains = [
        TerrainFamily::Steps,
        TerrainFamily::Gaps,
        TerrainFamily::Bridge,
        TerrainFamily::Valley,
        TerrainFamily::Mixed,
    ];
    let mut rows = vec![];
    for (ti, &family) in terrains.iter().enumerate() {
        let extent = if family == TerrainFamily::Mixed {
            cfg.mixed_extent
        } else {
            cfg.family_extent
        };
        let map = generate(
            &TerrainSpec::new(family, extent)
                .with_params(cfg.params.clone())
                .with_seed(cfg.eval_seed),
        )?;
        progress(&format!("tensorizing {family} map"));
        let tensors: Vec<FeasibilityTensor> = bundles
            .iter()
            .map(|b| tensorize_with(&map, &b.params, b.id(), &cfg.settings.ood))
            .collect::<Result<_, _>>()?;
        let traversable = traversable_tensor(&map, &expert_archs)?;
        let tasks = task_endpoints(&map, family, buffer_cells, cfg.tasks, cfg.seed.wrapping_add(ti as u64))?;

        let mut controllers: Vec<(Controller, Vec<FeasibilityTensor>, Vec<PolicyArchetype>)> = bundles
            .iter()
            .zip(&tensors)
            .map(|(b, t)| (Controller::Single(b.archetype.kind), vec![t.clone()], vec![b.archetype.clone()]))
            .collect();
        let expert_tensors = tensors
            .iter()
            .zip(bundles)
            .filter(|(_, b)| b.archetype.kind != ArchetypeKind::General)
            .map(|(t, _)| t.clone())
            .collect();
        controllers.push((Controller::Fused, expert_tensors, expert_archs.clone()));

        for (controller, ts, archs) in &controllers {
            let field = crate::planner::fuse(ts)?;
            let mut trials = vec![];
            let mut no_path = 0;
            for (task, &(start, goal)) in tasks.iter().enumerate() {
                match cfg.settings.planner.plan(&field, start, goal) {
                    Ok(plan) => {
                        let seed = trial_seed(cfg.seed, (ti * 1000 + task) as u64);
                        trials.extend(run_trials(&plan, &map, archs, &traversable, cfg.trials, seed, &cfg.settings.exec)?);
                    }
                    Err(PlanError::NoPath(..)) => {
                        no_path += 1;
                        trials.extend(std::iter::repeat_n(TrialResult::no_path(0.0), cfg.trials));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let row = MixedRow {
                controller: *controller,
                terrain: family,
                success_rate: success_rate(&trials),
                spl: spl(&trials)?,
                no_path_tasks: no_path,
            };
            progress(&format!(
                "{controller} on {family}: success {:.1}%, spl {:.3}, no path {no_path}/{}",
                100.0 * row.success_rate,
                row.spl,
                cfg.tasks
            ));
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Delimiter-separated table `controller,terrain,success_pct,spl,no_path_tasks`.
pub fn mixed_table_csv(rows: &[MixedRow]) -> String {
    let mut out = String::from("controller,terrain,success_pct,spl,no_path_tasks\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{:.4},{}\n",
            r.controller,
            r.terrain,
            100.0 * r.success_rate,
            r.spl,
            r.no_path_tasks
        ));
    }
    out
}

pub fn adaptation_table_csv(rows: &[AdaptationRow]) -> String {
    let mut out = String::from("skill_level,path_length_m,success_pct,spl\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{:.2},{:.4}\n",
            r.skill_level,
            r.path_length,
            100.0 * r.success_rate,
            r.spl
        ));
    }
    out
}
