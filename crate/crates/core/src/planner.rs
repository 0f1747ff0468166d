//! Max fusion of policy tensors, inverse-feasibility edge costs and
//! Dijkstra search with per-edge policy assignment.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapio::Gray;
use crate::tensorizer::FeasibilityTensor;
use crate::terrain::{ElevationMap, DEFAULT_RESOLUTION};
use crate::{direction_of, direction_offset, step_length, DIRECTIONS};

const PLAN_MAGIC: &str = "FEASPLAN";
const PLAN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no tensors to fuse")]
    NoTensors,
    #[error("tensor for policy {policy_id} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        policy_id: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("tensor for policy {0} has a different valid mask")]
    MaskMismatch(usize),
    #[error("{which} cell ({x}, {y}) is outside the grid or masked")]
    InvalidCell { which: &'static str, x: usize, y: usize },
    #[error("no feasible path from ({0}, {1}) to ({2}, {3})")]
    NoPath(usize, usize, usize, usize),
    #[error("invalid planner setting: {0}")]
    BadConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("plan file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Element-wise maximum of several tensors and the policy that supplied it.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    provenance: Vec<usize>,
    valid: Vec<bool>,
}

impl FusedField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &[usize] {
        &self.provenance
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn value(&self, x: usize, y: usize, k: usize) -> f64 {
        self.values[(y * self.width + x) * DIRECTIONS + k]
    }

    pub fn policy(&self, x: usize, y: usize, k: usize) -> usize {
        self.provenance[(y * self.width + x) * DIRECTIONS + k]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.valid[y * self.width + x]
    }

    fn neighbor(&self, x: usize, y: usize, k: usize) -> Option<(usize, usize)> {
        let (dx, dy) = direction_offset(k);
        let nx = x.checked_add_signed(dx as isize)?;
        let ny = y.checked_add_signed(dy as isize)?;
        self.is_valid(nx, ny).then_some((nx, ny))
    }
}

/// Fuses tensors by taking the maximum per `(x, y, k)`; ties go to the
/// lowest policy id.
pub fn fuse(tensors: &[FeasibilityTensor]) -> Result<FusedField, PlanError> {
    let first = tensors.first().ok_or(PlanError::NoTensors)?;
    let (w, h) = (first.width(), first.height());
    for t in tensors {
        if (t.width(), t.height()) != (w, h) {
            return Err(PlanError::DimensionMismatch {
                policy_id: t.policy_id(),
                got_w: t.width(),
                got_h: t.height(),
                want_w: w,
                want_h: h,
            });
        }
        if t.valid_mask() != first.valid_mask() {
            return Err(PlanError::MaskMismatch(t.policy_id()));
        }
    }
    let n = w * h * DIRECTIONS;
    let mut values = first.values().to_vec();
    let mut provenance = vec![first.policy_id(); n];
    for t in &tensors[1..] {
        let id = t.policy_id();
        for ((best, prov), &v) in values.iter_mut().zip(&mut provenance).zip(t.values()) {
            if v > *best || (v == *best && id < *prov) {
                *best = v;
                *prov = id;
            }
        }
    }
    Ok(FusedField {
        width: w,
        height: h,
        values,
        provenance,
        valid: first.valid_mask().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEdge {
    pub direction: usize,
    pub policy: usize,
    pub cost: f64,
    pub feasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub waypoints: Vec<(usize, usize)>,
    /// `edges[i]` leads from `waypoints[i]` to `waypoints[i + 1]`.
    pub edges: Vec<PlanEdge>,
    pub total_cost: f64,
    pub total_length: f64,
}

impl Plan {
    /// Number of edges whose policy differs from the previous edge's.
    pub fn policy_switches(&self) -> usize {
        self.edges.windows(2).filter(|w| w[0].policy != w[1].policy).count()
    }
}

/// Search settings: the feasibility floor and the grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Planner {
    pub f_min: f64,
    pub resolution: f64,
}

impl Default for Planner {
    fn default() -> Self {
        Self {
            f_min: 0.05,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: the heap pops the cheapest, then the lowest row-major index
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Planner {
    pub fn new(f_min: f64, resolution: f64) -> Result<Self, PlanError> {
        let p = Self { f_min, resolution };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.f_min.is_finite() && self.f_min > 0.0 && self.f_min <= 1.0) {
            return Err(PlanError::BadConfig(format!("f_min {} outside (0, 1]", self.f_min)));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(PlanError::BadConfig(format!("resolution {} must be positive", self.resolution)));
        }
        Ok(())
    }

    /// Cost of moving from `(x, y)` along channel `k`, or `None` when the
    /// move leaves the valid grid or its feasibility is below `f_min`.
    pub fn edge_cost(&self, field: &FusedField, from: (usize, usize), k: usize) -> Option<f64> {
        let (x, y) = from;
        if !field.is_valid(x, y) {
            return None;
        }
        field.neighbor(x, y, k)?;
        let f = field.value(x, y, k);
        (f >= self.f_min).then(|| step_length(k, self.resolution) / f)
    }

    /// Minimum-cost path by Dijkstra; heap ties resolve by row-major index and
    /// a node's predecessor only changes on a strictly cheaper route.
    pub fn plan(&self, field: &FusedField, start: (usize, usize), goal: (usize, usize)) -> Result<Plan, PlanError> {
        for (which, (x, y)) in [("start", start), ("goal", goal)] {
            if !field.is_valid(x, y) {
                return Err(PlanError::InvalidCell { which, x, y });
            }
        }
        let w = field.width;
        let idx = |(x, y): (usize, usize)| y * w + x;
        let cell = |i: usize| (i % w, i / w);
        let n = w * field.height;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[idx(start)] = 0.0;
        heap.push(Entry {
            cost: 0.0,
            index: idx(start),
        });
        while let Some(Entry { cost, index }) = heap.pop() {
            if done[index] {
                continue;
            }
            done[index] = true;
            if index == idx(goal) {
                break;
            }
            let (x, y) = cell(index);
            for k in 0..DIRECTIONS {
                let Some(c) = self.edge_cost(field, (x, y), k) else {
                    continue;
                };
                let (dx, dy) = direction_offset(k);
                let nb = idx(((x as i64 + dx) as usize, (y as i64 + dy) as usize));
                let nd = cost + c;
                if !done[nb] && nd < dist[nb] {
                    dist[nb] = nd;
                    prev[nb] = Some((index, k));
                    heap.push(Entry { cost: nd, index: nb });
                }
            }
        }
        if !done[idx(goal)] {
            return Err(PlanError::NoPath(start.0, start.1, goal.0, goal.1));
        }

        let mut rev = vec![];
        let mut at = idx(goal);
        while let Some((p, k)) = prev[at] {
            rev.push((p, k));
            at = p;
        }
        rev.reverse();
        let mut waypoints = vec![start];
        let mut edges = Vec::with_capacity(rev.len());
        let (mut total_cost, mut total_length) = (0.0, 0.0);
        for (p, k) in rev {
            let (x, y) = cell(p);
            let cost = self.edge_cost(field, (x, y), k).expect("edge on the search tree is feasible");
            let (dx, dy) = direction_offset(k);
            waypoints.push(((x as i64 + dx) as usize, (y as i64 + dy) as usize));
            edges.push(PlanEdge {
                direction: k,
                policy: field.policy(x, y, k),
                cost,
                feasibility: field.value(x, y, k),
            });
            total_cost += cost;
            total_length += step_length(k, self.resolution);
        }
        Ok(Plan {
            waypoints,
            edges,
            total_cost,
            total_length,
        })
    }

    /// Fuses `tensors`, then plans on the fused field.
    pub fn plan_multi(
        &self,
        tensors: &[FeasibilityTensor],
        start: (usize, usize),
        goal: (usize, usize),
    ) -> Result<(Plan, FusedField), PlanError> {
        let field = fuse(tensors)?;
        let plan = self.plan(&field, start, goal)?;
        Ok((plan, field))
    }
}

/// Text export: a header with totals, then one line per waypoint
/// `x y policy_id direction_k edge_cost` describing the edge leaving it
/// (`-` on the final waypoint).
pub fn plan_to_string(plan: &Plan) -> String {
    let mut out = format!("{PLAN_MAGIC} {PLAN_VERSION}\n");
    let _ = writeln!(
        out,
        "waypoints {} total_cost {} total_length {}",
        plan.waypoints.len(),
        plan.total_cost,
        plan.total_length
    );
    for (i, (x, y)) in plan.waypoints.iter().enumerate() {
        match plan.edges.get(i) {
            Some(e) => {
                let _ = writeln!(out, "{x} {y} {} {} {}", e.policy, e.direction, e.cost);
            }
            None => {
                let _ = writeln!(out, "{x} {y} - - -");
            }
        }
    }
    out
}

/// Parses [`plan_to_string`] output. Edge feasibilities are recovered from
/// cost and step length.
pub fn parse_plan(text: &str, resolution: f64) -> Result<Plan, PlanError> {
    let err = |line: usize, message: String| PlanError::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == format!("{PLAN_MAGIC} {PLAN_VERSION}") => {}
        _ => return Err(err(1, format!("expected `{PLAN_MAGIC} {PLAN_VERSION}`"))),
    }
    let (ln, header) = lines.next().ok_or_else(|| err(2, "missing header".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 6 || h[0] != "waypoints" || h[2] != "total_cost" || h[4] != "total_length" {
        return Err(err(ln, "malformed totals header".into()));
    }
    let count: usize = h[1].parse().map_err(|_| err(ln, format!("bad count `{}`", h[1])))?;
    let total_cost: f64 = h[3].parse().map_err(|_| err(ln, format!("bad cost `{}`", h[3])))?;
    let total_length: f64 = h[5].parse().map_err(|_| err(ln, format!("bad length `{}`", h[5])))?;

    let mut waypoints = vec![];
    let mut pending: Vec<(usize, usize, f64)> = vec![];
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(ln, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| err(ln, format!("bad integer `{s}`")));
        waypoints.push((num(f[0])?, num(f[1])?));
        if f[2] == "-" {
            continue;
        }
        let cost: f64 = f[4].parse().map_err(|_| err(ln, format!("bad cost `{}`", f[4])))?;
        pending.push((num(f[2])?, num(f[3])?, cost));
    }
    if waypoints.len() != count || pending.len() + 1 != count.max(1) {
        return Err(err(0, format!("header announces {count} waypoints, found {}", waypoints.len())));
    }
    let mut edges = vec![];
    for (i, (policy, direction, cost)) in pending.into_iter().enumerate() {
        let (a, b) = (waypoints[i], waypoints[i + 1]);
        let d = direction_of(b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
        if d != Some(direction) {
            return Err(err(i + 3, format!("direction {direction} does not lead to the next waypoint")));
        }
        edges.push(PlanEdge {
            direction,
            policy,
            cost,
            feasibility: step_length(direction, resolution) / cost,
        });
    }
    Ok(Plan {
        waypoints,
        edges,
        total_cost,
        total_length,
    })
}

pub fn save_plan(plan: &Plan, path: impl AsRef<Path>) -> Result<(), PlanError> {
    let path = path.as_ref();
    fs::write(path, plan_to_string(plan)).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_plan(path: impl AsRef<Path>, resolution: f64) -> Result<Plan, PlanError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_plan(&text, resolution)
}

/// Map preview dimmed to the lower half of the gray range with path cells
/// drawn in a per-policy shade (policy 0 brightest).
pub fn plan_overlay(map: &ElevationMap, plan: &Plan) -> Gray {
    let mut img = crate::mapio::map_preview(map);
    img.pixels.iter_mut().for_each(|p| *p /= 2);
    let shade = |policy: usize| 255u8.saturating_sub((policy as u8).saturating_mul(24));
    for (i, &(x, y)) in plan.waypoints.iter().enumerate() {
        let policy = plan.edges.get(i).or(plan.edges.last()).map_or(0, |e| e.policy);
        if x < img.width && y < img.height {
            img.pixels[y * img.width + x] = shade(policy);
        }
    }
    img
}
