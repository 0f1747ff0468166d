//! Deterministic capability oracle standing in for trained locomotion
//! policies.
//!
//! Each archetype carries capability limits. [`traverse_score`] inspects a
//! heading-aligned patch and returns the fraction of the commanded velocity
//! the archetype would achieve; [`label_reward`] turns that into a
//! velocity-tracking reward used as the feasibility training label.

use std::f64::consts::TAU;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::{extract_patch, generate, HeightPatch, TerrainError, TerrainSpec, PATCH_SIDE};
use crate::DIRECTIONS;

/// Cells deeper than this below the travel line count as gap cells (m).
pub const GAP_DEPTH: f64 = 0.3;
/// Body window along the travel direction, in cells relative to the center.
pub const LOOK_BEHIND: i32 = 2;
pub const LOOK_AHEAD: i32 = 6;
/// Foot tracks scanned for steps and gaps: lateral offsets `-2..=2`.
pub const TRACK_HALF_WIDTH: i32 = 2;
/// Lateral half-extent of the support-width scan.
pub const SUPPORT_HALF_WIDTH: i32 = 7;
/// Lateral half-extent of the slope scan.
pub const SLOPE_HALF_WIDTH: i32 = 3;
/// Fraction over a cap at which the score reaches zero.
pub const DECAY_BAND: f64 = 0.5;
/// Sensitivity of the velocity-tracking reward (m/s).
pub const REWARD_SIGMA: f64 = 0.25;
/// Default standard deviation of the simulated tracking noise (m/s).
pub const TRACKING_NOISE_SIGMA: f64 = 0.02;
/// Forward command paired with every patch.
pub const FORWARD_COMMAND: f64 = 0.5;

const CAP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid task vector: {0}")]
    BadTask(String),
    #[error("dataset size must be at least 1")]
    EmptyRequest,
    #[error("no terrain spec given")]
    NoSpecs,
    #[error("no cell with a full patch footprint in any sampled map")]
    NoValidCell,
    #[error("invalid archetype: {0}")]
    BadArchetype(String),
    #[error("invalid label settings: {0}")]
    BadLabels(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

/// Commanded body velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskVector {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl TaskVector {
    pub const MAX_SPEED: f64 = 1.5;

    pub fn new(vx: f64, vy: f64, yaw_rate: f64) -> Result<Self, OracleError> {
        if !(vx.is_finite() && vy.is_finite() && yaw_rate.is_finite()) {
            return Err(OracleError::BadTask("components must be finite".into()));
        }
        let speed = vx.hypot(vy);
        if speed > Self::MAX_SPEED + 1e-12 {
            return Err(OracleError::BadTask(format!(
                "speed {speed:.3} m/s exceeds {} m/s",
                Self::MAX_SPEED
            )));
        }
        Ok(Self { vx, vy, yaw_rate })
    }

    /// The fixed forward command `(0.5, 0, 0)`.
    pub fn forward() -> Self {
        Self {
            vx: FORWARD_COMMAND,
            vy: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.vx, self.vy, self.yaw_rate]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeKind {
    StepsExpert,
    GapsExpert,
    BridgeExpert,
    ValleyExpert,
    General,
}

impl ArchetypeKind {
    pub const ALL: [ArchetypeKind; 5] = [
        ArchetypeKind::StepsExpert,
        ArchetypeKind::GapsExpert,
        ArchetypeKind::BridgeExpert,
        ArchetypeKind::ValleyExpert,
        ArchetypeKind::General,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchetypeKind::StepsExpert => "steps_expert",
            ArchetypeKind::GapsExpert => "gaps_expert",
            ArchetypeKind::BridgeExpert => "bridge_expert",
            ArchetypeKind::ValleyExpert => "valley_expert",
            ArchetypeKind::General => "general",
        }
    }
}

impl fmt::Display for ArchetypeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArchetypeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        ArchetypeKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                format!("unknown archetype `{s}` (expected steps_expert, gaps_expert, bridge_expert, valley_expert or general)")
            })
    }
}

/// Capability limits at full skill. Slopes in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capabilities {
    pub max_step_up: f64,
    pub max_step_down: f64,
    pub max_gap: f64,
    pub min_support_width: f64,
    pub max_lateral_slope: f64,
}

impl Capabilities {
    /// Limits of an archetype with no terrain specialty.
    pub const BASELINE: Capabilities = Capabilities {
        max_step_up: 0.02,
        max_step_down: 0.02,
        max_gap: 0.05,
        min_support_width: 0.70,
        max_lateral_slope: 20.0 * std::f64::consts::PI / 180.0,
    };

    pub fn defaults(kind: ArchetypeKind) -> Self {
        let base = Self::BASELINE;
        match kind {
            ArchetypeKind::StepsExpert => Self {
                max_step_up: 0.15,
                max_step_down: 0.15,
                ..base
            },
            ArchetypeKind::GapsExpert => Self {
                max_gap: 0.15,
                ..base
            },
            ArchetypeKind::BridgeExpert => Self {
                min_support_width: 0.35,
                ..base
            },
            ArchetypeKind::ValleyExpert => Self {
                // walking the valley floor while its walls deepen
                max_step_up: 0.06,
                max_step_down: 0.06,
                max_lateral_slope: 50f64.to_radians(),
                ..base
            },
            ArchetypeKind::General => Self {
                max_step_up: 0.6 * 0.15,
                max_step_down: 0.6 * 0.15,
                max_gap: 0.6 * 0.15,
                min_support_width: 0.35 / 0.6,
                max_lateral_slope: 0.6 * 50f64.to_radians(),
            },
        }
    }

    fn validate(&self) -> Result<(), OracleError> {
        let all = [
            self.max_step_up,
            self.max_step_down,
            self.max_gap,
            self.min_support_width,
            self.max_lateral_slope,
        ];
        if all.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(OracleError::BadArchetype(format!(
                "capabilities must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One locomotion policy stand-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyArchetype {
    pub id: usize,
    pub kind: ArchetypeKind,
    pub caps: Capabilities,
    /// Scales every capability; models training progression.
    pub skill_level: f64,
}

impl PolicyArchetype {
    pub fn new(id: usize, kind: ArchetypeKind) -> Self {
        Self {
            id,
            kind,
            caps: Capabilities::defaults(kind),
            skill_level: 1.0,
        }
    }

    pub fn with_skill(mut self, skill_level: f64) -> Self {
        self.skill_level = skill_level;
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        self.caps.validate()?;
        if !(0.0..=1.0).contains(&self.skill_level) {
            return Err(OracleError::BadArchetype(format!(
                "skill_level {} outside [0, 1]",
                self.skill_level
            )));
        }
        Ok(())
    }

    /// Capabilities after skill scaling. The support requirement grows as
    /// skill shrinks.
    pub fn effective_caps(&self) -> Capabilities {
        let s = self.skill_level;
        Capabilities {
            max_step_up: self.caps.max_step_up * s,
            max_step_down: self.caps.max_step_down * s,
            max_gap: self.caps.max_gap * s,
            min_support_width: if s > 0.0 {
                self.caps.min_support_width / s
            } else {
                f64::INFINITY
            },
            max_lateral_slope: self.caps.max_lateral_slope * s,
        }
    }
}

/// The four experts followed by the general archetype, ids 0..=4.
pub fn default_archetypes() -> Vec<PolicyArchetype> {
    ArchetypeKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| PolicyArchetype::new(i, k))
        .collect()
}

/// Geometric features measured from a heading-aligned patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainFeatures {
    pub step_up: f64,
    pub step_down: f64,
    pub gap_width: f64,
    pub support_width: f64,
    pub lateral_slope: f64,
    /// Widest support the scan can report.
    pub max_support_width: f64,
}

/// Reference height for gap detection: the center height, or the lower of
/// the highest ground behind and ahead on the travel row when the center
/// sits more than [`GAP_DEPTH`] below both.
pub fn travel_line(patch: &HeightPatch) -> f64 {
    let half = (PATCH_SIDE / 2) as i32;
    let behind = (-half..0).map(|a| patch.at(a, 0)).fold(f64::MIN, f64::max);
    let ahead = (1..half).map(|a| patch.at(a, 0)).fold(f64::MIN, f64::max);
    let rim = behind.min(ahead);
    if rim > GAP_DEPTH {
        rim
    } else {
        0.0
    }
}

/// Scans the body window of `patch` (travel along +x).
///
/// * steps: height changes between footholds (non-gap samples) on each foot
///   track, comparing consecutive footholds and footholds two samples apart;
/// * gaps: longest run of gap samples on any track;
/// * support: narrowest contiguous lateral run of non-gap samples through the
///   travel line;
/// * lateral slope: steepest two-cell lateral rise between non-gap samples.
pub fn measure_features(patch: &HeightPatch) -> TerrainFeatures {
    let res = patch.resolution();
    let line = travel_line(patch);
    let is_gap = |a: i32, b: i32| patch.at(a, b) < line - GAP_DEPTH;

    let mut step_up = 0.0f64;
    let mut step_down = 0.0f64;
    let mut gap_run = 0usize;
    for b in -TRACK_HALF_WIDTH..=TRACK_HALF_WIDTH {
        let mut prev: Option<f64> = None;
        let mut run = 0usize;
        for a in -LOOK_BEHIND..=LOOK_AHEAD {
            if is_gap(a, b) {
                run += 1;
                gap_run = gap_run.max(run);
                continue;
            }
            run = 0;
            let h = patch.at(a, b);
            let mut record = |d: f64| {
                step_up = step_up.max(d);
                step_down = step_down.max(-d);
            };
            if let Some(p) = prev {
                record(h - p);
            }
            if a - 2 >= -LOOK_BEHIND && !is_gap(a - 2, b) {
                record(h - patch.at(a - 2, b));
            }
            prev = Some(h);
        }
    }

    let mut support = usize::MAX;
    for a in -LOOK_BEHIND..=LOOK_AHEAD {
        if is_gap(a, 0) {
            continue;
        }
        let mut width = 1;
        let mut b = 1;
        while b <= SUPPORT_HALF_WIDTH && !is_gap(a, b) {
            width += 1;
            b += 1;
        }
        let mut b = -1;
        while b >= -SUPPORT_HALF_WIDTH && !is_gap(a, b) {
            width += 1;
            b -= 1;
        }
        support = support.min(width);
    }

    let mut slope = 0.0f64;
    for a in -LOOK_BEHIND..=LOOK_AHEAD {
        for b in -SLOPE_HALF_WIDTH..=(SLOPE_HALF_WIDTH - 2) {
            if is_gap(a, b) || is_gap(a, b + 2) {
                continue;
            }
            let rise = (patch.at(a, b + 2) - patch.at(a, b)).abs();
            slope = slope.max((rise / (2.0 * res)).atan());
        }
    }

    TerrainFeatures {
        step_up,
        step_down,
        gap_width: gap_run as f64 * res,
        support_width: support as f64 * res,
        lateral_slope: slope,
        max_support_width: (2 * SUPPORT_HALF_WIDTH + 1) as f64 * res,
    }
}

/// Score for an upper-bounded feature: 1 within the cap, linear decay to 0
/// at `(1 + DECAY_BAND) * cap`.
fn upper_score(value: f64, cap: f64) -> f64 {
    if value <= cap + CAP_EPS {
        return 1.0;
    }
    if cap <= 0.0 {
        return 0.0;
    }
    let excess = (value - cap) / cap;
    (1.0 - excess / DECAY_BAND).clamp(0.0, 1.0)
}

/// Score for a lower-bounded feature (support width).
fn lower_score(value: f64, required: f64) -> f64 {
    if value + CAP_EPS >= required {
        return 1.0;
    }
    if !required.is_finite() {
        return 0.0;
    }
    let shortfall = (required - value) / required;
    (1.0 - shortfall / DECAY_BAND).clamp(0.0, 1.0)
}

/// Achieved-velocity fraction `rho` in `[0, 1]` for `arch` crossing `patch`.
///
/// The score is the minimum over per-feature scores; the task vector does
/// not alter the rule because direction is carried by the patch rotation.
pub fn traverse_score(arch: &PolicyArchetype, patch: &HeightPatch, _task: &TaskVector) -> f64 {
    score_features(arch, &measure_features(patch))
}

/// Scores measured features. A zero-skill archetype scores 0; the support
/// requirement is capped at the scan width.
pub fn score_features(arch: &PolicyArchetype, f: &TerrainFeatures) -> f64 {
    if arch.skill_level <= 0.0 {
        return 0.0;
    }
    let caps = arch.effective_caps();
    let required_support = caps.min_support_width.min(f.max_support_width);
    [
        upper_score(f.step_up, caps.max_step_up),
        upper_score(f.step_down, caps.max_step_down),
        upper_score(f.gap_width, caps.max_gap),
        lower_score(f.support_width, required_support),
        upper_score(f.lateral_slope, caps.max_lateral_slope),
    ]
    .into_iter()
    .fold(1.0, f64::min)
}

/// Velocity-tracking reward `exp(-|v - v_cmd| / sigma)`.
pub fn velocity_reward(v: [f64; 2], v_cmd: [f64; 2], sigma: f64) -> f64 {
    let dx = v[0] - v_cmd[0];
    let dy = v[1] - v_cmd[1];
    (-(dx.hypot(dy)) / sigma).exp()
}

/// Draws speed-tracking noise from a normal distribution truncated at
/// three standard deviations.
pub fn draw_tracking_noise<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    z.clamp(-3.0, 3.0) * sigma
}

/// Feasibility label for one (patch, task) pair.
///
/// The achieved velocity is `rho * v_cmd` perturbed by `noise` m/s along the
/// command direction; forward speed is clamped at zero. `noise = 0` gives the
/// noiseless label.
pub fn label_reward(arch: &PolicyArchetype, patch: &HeightPatch, task: &TaskVector, noise: f64, sigma: f64) -> f64 {
    let rho = traverse_score(arch, patch, task);
    reward_from_score(rho, task, noise, sigma)
}

pub fn reward_from_score(rho: f64, task: &TaskVector, noise: f64, sigma: f64) -> f64 {
    let cmd = [task.vx, task.vy];
    let speed = task.vx.hypot(task.vy);
    let dir = if speed > 0.0 {
        [task.vx / speed, task.vy / speed]
    } else {
        [1.0, 0.0]
    };
    let achieved = (rho * speed + noise).max(0.0);
    velocity_reward([achieved * dir[0], achieved * dir[1]], cmd, sigma)
}

/// Reward temperature and tracking noise used when labelling samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub reward_sigma: f64,
    /// Standard deviation of the speed-tracking noise; 0 gives clean labels.
    pub tracking_noise_sigma: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            reward_sigma: REWARD_SIGMA,
            tracking_noise_sigma: TRACKING_NOISE_SIGMA,
        }
    }
}

impl LabelConfig {
    pub fn noiseless() -> Self {
        Self {
            tracking_noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.reward_sigma.is_finite() && self.reward_sigma > 0.0) {
            return Err(OracleError::BadLabels(format!("reward_sigma {} must be positive", self.reward_sigma)));
        }
        if !(self.tracking_noise_sigma.is_finite() && self.tracking_noise_sigma >= 0.0) {
            return Err(OracleError::BadLabels(format!(
                "tracking_noise_sigma {} must be non-negative",
                self.tracking_noise_sigma
            )));
        }
        Ok(())
    }
}

/// One supervised training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patch: HeightPatch,
    pub task: TaskVector,
    pub label: f64,
}

/// Heading of direction channel `k` (multiples of 45 degrees).
pub fn channel_heading(k: usize) -> f64 {
    k as f64 * TAU / DIRECTIONS as f64
}

/// Samples `n` labelled patches from maps generated per `specs`: uniform map,
/// uniform in-bounds cell, uniform heading among the 8 planning directions,
/// fixed forward command. Deterministic in `seed`.
pub fn sample_dataset(
    arch: &PolicyArchetype,
    specs: &[TerrainSpec],
    n: usize,
    seed: u64,
    labels: &LabelConfig,
) -> Result<Vec<Sample>, OracleError> {
    if n == 0 {
        return Err(OracleError::EmptyRequest);
    }
    if specs.is_empty() {
        return Err(OracleError::NoSpecs);
    }
    arch.validate()?;
    labels.validate()?;
    let maps = specs.iter().map(generate).collect::<Result<Vec<_>, _>>()?;
    let ranges: Vec<_> = maps
        .iter()
        .map(|m| {
            let xs: Vec<usize> = (0..m.width()).filter(|&x| m.footprint_fits(x, m.height() / 2)).collect();
            let ys: Vec<usize> = (0..m.height()).filter(|&y| m.footprint_fits(m.width() / 2, y)).collect();
            (xs, ys)
        })
        .collect();
    let usable: Vec<usize> = (0..maps.len())
        .filter(|&i| !ranges[i].0.is_empty() && !ranges[i].1.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(OracleError::NoValidCell);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = TaskVector::forward();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let m = usable[rng.random_range(0..usable.len())];
        let (xs, ys) = &ranges[m];
        let x = xs[rng.random_range(0..xs.len())];
        let y = ys[rng.random_range(0..ys.len())];
        let k = rng.random_range(0..DIRECTIONS);
        let patch = extract_patch(&maps[m], x, y, channel_heading(k))?;
        let noise = draw_tracking_noise(&mut rng, labels.tracking_noise_sigma);
        let label = label_reward(arch, &patch, &task, noise, labels.reward_sigma);
        out.push(Sample { patch, task, label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{TerrainFamily, TerrainParams, DEFAULT_RESOLUTION};

    const RES: f64 = DEFAULT_RESOLUTION;

    fn step_patch(height: f64) -> HeightPatch {
        HeightPatch::from_fn(RES, |a, _| if a >= 3 { height } else { 0.0 })
    }

    fn expert(kind: ArchetypeKind) -> PolicyArchetype {
        PolicyArchetype::new(0, kind)
    }

    #[test]
    fn flat_is_fully_traversable_for_everyone() {
        let flat = HeightPatch::flat(RES);
        for kind in ArchetypeKind::ALL {
            assert_eq!(traverse_score(&expert(kind), &flat, &TaskVector::forward()), 1.0, "{kind}");
        }
    }

    #[test]
    fn steps_expert_climbs_ten_centimeters_gaps_expert_does_not() {
        let p = step_patch(0.10);
        let task = TaskVector::forward();
        assert_eq!(traverse_score(&expert(ArchetypeKind::StepsExpert), &p, &task), 1.0);
        let mut gaps = expert(ArchetypeKind::GapsExpert);
        gaps.caps.max_step_up = 0.02;
        assert_eq!(traverse_score(&gaps, &p, &task), 0.0);
    }

    #[test]
    fn gap_is_measured_from_the_rim_when_standing_over_it() {
        // center on the last of three gap cells, platforms at 0.5 m either side
        let p = HeightPatch::from_fn(RES, |a, _| if (-2..=0).contains(&a) { 0.0 } else { 0.5 });
        assert_eq!(travel_line(&p), 0.5);
        let f = measure_features(&p);
        assert!((f.gap_width - 0.15).abs() < 1e-12, "{f:?}");
        assert_eq!(f.step_up, 0.0);
        let task = TaskVector::forward();
        assert_eq!(traverse_score(&expert(ArchetypeKind::GapsExpert), &p, &task), 1.0);
        assert_eq!(traverse_score(&expert(ArchetypeKind::StepsExpert), &p, &task), 0.0);
        // a tall step ahead with nothing high behind is still a step
        assert_eq!(travel_line(&step_patch(0.5)), 0.0);
    }

    #[test]
    fn quarter_over_cap_halves_score() {
        let p = step_patch(0.15 * 1.25);
        let rho = traverse_score(&expert(ArchetypeKind::StepsExpert), &p, &TaskVector::forward());
        assert!((rho - 0.5).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn step_down_uses_down_cap() {
        let p = step_patch(-0.12);
        let f = measure_features(&p);
        assert!((f.step_down - 0.12).abs() < 1e-12);
        assert_eq!(f.step_up, 0.0);
        let mut arch = expert(ArchetypeKind::StepsExpert);
        arch.caps.max_step_down = 0.08;
        // 50% over the down cap
        assert!(traverse_score(&arch, &p, &TaskVector::forward()) < 1e-12);
    }

    #[test]
    fn gap_widths_and_steps_across_gaps() {
        // 3-cell trench ahead, landing at the same height
        let p = HeightPatch::from_fn(RES, |a, _| if (2..5).contains(&a) { -0.5 } else { 0.0 });
        let f = measure_features(&p);
        assert!((f.gap_width - 0.15).abs() < 1e-12);
        assert_eq!(f.step_up, 0.0);
        assert_eq!(f.step_down, 0.0);
        assert_eq!(traverse_score(&expert(ArchetypeKind::GapsExpert), &p, &TaskVector::forward()), 1.0);
        assert_eq!(traverse_score(&expert(ArchetypeKind::StepsExpert), &p, &TaskVector::forward()), 0.0);
    }

    #[test]
    fn bridge_support_width() {
        let p = HeightPatch::from_fn(RES, |_, b| if b.abs() <= 3 { 0.0 } else { -1.0 });
        let f = measure_features(&p);
        assert!((f.support_width - 0.35).abs() < 1e-12);
        assert_eq!(traverse_score(&expert(ArchetypeKind::BridgeExpert), &p, &TaskVector::forward()), 1.0);
        for kind in [ArchetypeKind::StepsExpert, ArchetypeKind::GapsExpert, ArchetypeKind::ValleyExpert] {
            assert!(traverse_score(&expert(kind), &p, &TaskVector::forward()) < 1e-12, "{kind}");
        }
    }

    #[test]
    fn valley_floor_slope() {
        let t = 45f64.to_radians().tan();
        let p = HeightPatch::from_fn(RES, |_, b| b.abs() as f64 * RES * t);
        let f = measure_features(&p);
        assert!((f.lateral_slope.to_degrees() - 45.0).abs() < 1e-9);
        assert_eq!(traverse_score(&expert(ArchetypeKind::ValleyExpert), &p, &TaskVector::forward()), 1.0);
        assert_eq!(traverse_score(&expert(ArchetypeKind::StepsExpert), &p, &TaskVector::forward()), 0.0);
    }

    #[test]
    fn skill_scales_caps() {
        let p = step_patch(0.10);
        let task = TaskVector::forward();
        let arch = expert(ArchetypeKind::StepsExpert);
        let low = traverse_score(&arch.clone().with_skill(0.3), &p, &task);
        let mid = traverse_score(&arch.clone().with_skill(0.6), &p, &task);
        let high = traverse_score(&arch.with_skill(1.0), &p, &task);
        assert_eq!(low, 0.0);
        assert!(mid > low && mid < high, "{mid}");
        assert_eq!(high, 1.0);
    }

    #[test]
    fn reward_values() {
        let task = TaskVector::forward();
        assert_eq!(reward_from_score(1.0, &task, 0.0, REWARD_SIGMA), 1.0);
        let slow = TaskVector::new(0.25, 0.0, 0.0).unwrap();
        assert!((reward_from_score(0.0, &slow, 0.0, REWARD_SIGMA) - (-1f64).exp()).abs() < 1e-12);
        assert!((reward_from_score(0.0, &task, 0.0, REWARD_SIGMA) - (-2f64).exp()).abs() < 1e-12);
        let r = velocity_reward([0.5, 0.0], [0.5, 0.0], REWARD_SIGMA);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn task_vector_clamp() {
        assert!(TaskVector::new(1.0, 1.0, 0.0).is_ok());
        assert!(TaskVector::new(1.2, 1.0, 0.0).is_err());
        assert!(TaskVector::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_cap_and_zero_skill() {
        let p = step_patch(0.01);
        let mut arch = expert(ArchetypeKind::GapsExpert);
        arch.caps.max_step_up = 0.0;
        assert_eq!(traverse_score(&arch, &p, &TaskVector::forward()), 0.0);
        let flat = HeightPatch::flat(RES);
        assert_eq!(traverse_score(&arch, &flat, &TaskVector::forward()), 1.0);
        let unskilled = expert(ArchetypeKind::General).with_skill(0.0);
        assert_eq!(traverse_score(&unskilled, &flat, &TaskVector::forward()), 0.0);
        // low skill still walks on full-width flat ground
        let low = expert(ArchetypeKind::StepsExpert).with_skill(0.25);
        assert_eq!(traverse_score(&low, &flat, &TaskVector::forward()), 1.0);
    }

    #[test]
    fn flat_dataset_labels_are_noise_bounded() {
        let spec = TerrainSpec::new(TerrainFamily::Flat, (2.0, 2.0));
        let data = sample_dataset(&expert(ArchetypeKind::General), &[spec], 1000, 11, &LabelConfig::default()).unwrap();
        let floor = (-3.0 * TRACKING_NOISE_SIGMA / REWARD_SIGMA).exp();
        assert!(data.iter().all(|s| s.label >= floor && s.label <= 1.0));
        assert!(data.iter().any(|s| s.label < 1.0));
    }

    #[test]
    fn dataset_is_deterministic() {
        let spec = TerrainSpec::new(TerrainFamily::Steps, (3.0, 1.5)).with_params(TerrainParams {
            jitter: 0.005,
            ..Default::default()
        });
        let arch = expert(ArchetypeKind::StepsExpert);
        let a = sample_dataset(&arch, std::slice::from_ref(&spec), 50, 3, &LabelConfig::default()).unwrap();
        let b = sample_dataset(&arch, &[spec], 50, 3, &LabelConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn steps_expert_fails_on_gaps() {
        let spec = TerrainSpec::new(TerrainFamily::Gaps, (4.0, 2.0));
        let data = sample_dataset(&expert(ArchetypeKind::StepsExpert), &[spec], 500, 5, &LabelConfig::noiseless()).unwrap();
        let mean = data.iter().map(|s| s.label).sum::<f64>() / data.len() as f64;
        assert!(mean < 0.5, "mean label {mean}");
    }

    #[test]
    fn dataset_errors() {
        let arch = expert(ArchetypeKind::General);
        let spec = TerrainSpec::new(TerrainFamily::Flat, (2.0, 2.0));
        assert!(matches!(sample_dataset(&arch, &[spec.clone()], 0, 1, &LabelConfig::default()), Err(OracleError::EmptyRequest)));
        assert!(matches!(sample_dataset(&arch, &[], 1, 1, &LabelConfig::default()), Err(OracleError::NoSpecs)));
        let tiny = TerrainSpec::new(TerrainFamily::Flat, (1.0, 1.0));
        assert!(matches!(sample_dataset(&arch, &[tiny], 1, 1, &LabelConfig::default()), Err(OracleError::NoValidCell)));
    }

    #[test]
    fn archetype_name_round_trip() {
        for k in ArchetypeKind::ALL {
            assert_eq!(k.name().parse::<ArchetypeKind>().unwrap(), k);
        }
        assert_eq!("steps-expert".parse::<ArchetypeKind>().unwrap(), ArchetypeKind::StepsExpert);
        assert!("walker".parse::<ArchetypeKind>().is_err());
    }
}
