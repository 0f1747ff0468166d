//! Random small grids, exhaustive search, and the fusion/planner checks
//! built on them.

#![allow(dead_code)]

use feasnav::planner::{fuse, FusedField, Plan, PlanError, Planner};
use feasnav::{direction_offset, step_length, FeasibilityTensor, DIRECTIONS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RES: f64 = 0.05;

pub fn random_tensor(rng: &mut ChaCha8Rng, w: usize, h: usize, id: usize, valid: &[bool]) -> FeasibilityTensor {
    let mut values = vec![0.0; w * h * DIRECTIONS];
    for (c, &ok) in valid.iter().enumerate() {
        if ok {
            for v in &mut values[c * DIRECTIONS..(c + 1) * DIRECTIONS] {
                // a fifth of the edges fall under the default floor
                *v = if rng.random_bool(0.2) {
                    rng.random_range(0.0..0.05)
                } else {
                    rng.random_range(0.05..=1.0)
                };
            }
        }
    }
    FeasibilityTensor::new(w, h, id, values, valid.to_vec()).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, start: usize, goal: usize) -> Vec<bool> {
    (0..w * h).map(|c| c == start || c == goal || rng.random_bool(0.85)).collect()
}

/// Cheapest simple path cost by depth-first enumeration, pruned only by an
/// admissible bound (octile distance at the cheapest possible cost per
/// meter).
pub fn brute_force(field: &FusedField, planner: &Planner, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    let w = field.width();
    let f_max = field.values().iter().cloned().fold(0.0, f64::max);
    if f_max < planner.f_min {
        return (start == goal).then_some(0.0);
    }
    let bound = |(x, y): (usize, usize)| {
        let dx = x.abs_diff(goal.0) as f64;
        let dy = y.abs_diff(goal.1) as f64;
        let octile = dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy);
        octile * RES / f_max
    };
    struct Search<'a> {
        field: &'a FusedField,
        planner: &'a Planner,
        goal: (usize, usize),
        seen: Vec<bool>,
        best: Option<f64>,
    }
    fn dfs(s: &mut Search, at: (usize, usize), cost: f64, bound: &dyn Fn((usize, usize)) -> f64) {
        if at == s.goal {
            if s.best.is_none_or(|b| cost < b) {
                s.best = Some(cost);
            }
            return;
        }
        if s.best.is_some_and(|b| cost + bound(at) > b * (1.0 + 1e-12)) {
            return;
        }
        for k in 0..DIRECTIONS {
            let Some(c) = s.planner.edge_cost(s.field, at, k) else {
                continue;
            };
            let (dx, dy) = direction_offset(k);
            let nb = ((at.0 as i64 + dx) as usize, (at.1 as i64 + dy) as usize);
            let i = nb.1 * s.field.width() + nb.0;
            if s.seen[i] {
                continue;
            }
            s.seen[i] = true;
            dfs(s, nb, cost + c, bound);
            s.seen[i] = false;
        }
    }
    let mut s = Search {
        field,
        planner,
        goal,
        seen: vec![false; w * field.height()],
        best: None,
    };
    s.seen[start.1 * w + start.0] = true;
    dfs(&mut s, start, 0.0, &bound);
    s.best
}

/// Every edge is an 8-neighbor step above the floor, carries the fused
/// provenance and cost, and the costs sum to the total.
pub fn check_plan(plan: &Plan, field: &FusedField, planner: &Planner) -> Result<(), String> {
    let mut cost = 0.0;
    for (i, e) in plan.edges.iter().enumerate() {
        let (x, y) = plan.waypoints[i];
        let (dx, dy) = direction_offset(e.direction);
        if plan.waypoints[i + 1] != ((x as i64 + dx) as usize, (y as i64 + dy) as usize) {
            return Err(format!("edge {i} is not a step along direction {}", e.direction));
        }
        if field.value(x, y, e.direction) < planner.f_min {
            return Err(format!("edge {i} is below the floor"));
        }
        if e.policy != field.policy(x, y, e.direction) {
            return Err(format!("edge {i} policy differs from provenance"));
        }
        if e.cost != step_length(e.direction, RES) / e.feasibility {
            return Err(format!("edge {i} cost mismatch"));
        }
        cost += e.cost;
    }
    if cost != plan.total_cost {
        return Err(format!("edge costs sum to {cost}, plan says {}", plan.total_cost));
    }
    Ok(())
}

/// Planner result on a random grid equals exhaustive search, exactly.
pub fn check_grid(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(1..=6);
    let h = rng.random_range(1..=6);
    let start = (rng.random_range(0..w), rng.random_range(0..h));
    let goal = (rng.random_range(0..w), rng.random_range(0..h));
    let valid = random_mask(&mut rng, w, h, start.1 * w + start.0, goal.1 * w + goal.0);
    let tensors: Vec<_> = (0..rng.random_range(1..=3))
        .map(|id| random_tensor(&mut rng, w, h, id, &valid))
        .collect();
    let planner = Planner::new(rng.random_range(0.01..0.3), RES).unwrap();
    let field = fuse(&tensors).unwrap();
    let expected = brute_force(&field, &planner, start, goal);
    match planner.plan(&field, start, goal) {
        Ok(plan) => {
            check_plan(&plan, &field, &planner).map_err(|e| format!("seed {seed}: {e}"))?;
            if Some(plan.total_cost) != expected {
                return Err(format!("seed {seed}: planner {} vs exhaustive {expected:?}", plan.total_cost));
            }
            Ok(())
        }
        Err(PlanError::NoPath(..)) if expected.is_none() => Ok(()),
        Err(PlanError::NoPath(..)) => Err(format!("seed {seed}: NoPath but exhaustive found {expected:?}")),
        Err(e) => Err(format!("seed {seed}: {e}")),
    }
}

/// Fused values dominate every input; provenance names the first input
/// attaining the maximum.
pub fn check_fusion(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(1..6), rng.random_range(1..6));
    let valid: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.8)).collect();
    let mut tensors: Vec<_> = (0..n).map(|id| random_tensor(&mut rng, w, h, id, &valid)).collect();
    // duplicate a tensor's values to exercise ties
    if n > 1 {
        let v = tensors[0].values().to_vec();
        tensors[n - 1] = FeasibilityTensor::new(w, h, n - 1, v, valid.clone()).unwrap();
    }
    let field = fuse(&tensors).map_err(|e| e.to_string())?;
    for i in 0..w * h * DIRECTIONS {
        let best = field.values()[i];
        let prov = field.provenance()[i];
        if tensors.iter().any(|t| t.values()[i] > best) {
            return Err(format!("seed {seed}: fused value below an input at {i}"));
        }
        let first = tensors.iter().position(|t| t.values()[i] == best);
        if first != Some(prov) {
            return Err(format!("seed {seed}: provenance {prov} at {i}, expected {first:?}"));
        }
    }
    Ok(())
}

/// Appending a tensor dominated by the fused field leaves the plan as is.
pub fn check_dominated(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(2..8), rng.random_range(2..8));
    let valid = vec![true; w * h];
    let tensors: Vec<_> = (0..2).map(|id| random_tensor(&mut rng, w, h, id, &valid)).collect();
    let field = fuse(&tensors).unwrap();
    let scaled: Vec<f64> = field.values().iter().map(|v| v * rng.random_range(0.0..1.0)).collect();
    let mut more = tensors.clone();
    more.push(FeasibilityTensor::new(w, h, 7, scaled, valid).unwrap());
    let planner = Planner::default();
    let (s, g) = ((0, 0), (w - 1, h - 1));
    match (planner.plan(&field, s, g), planner.plan(&fuse(&more).unwrap(), s, g)) {
        (Ok(a), Ok(b)) if a == b => Ok(()),
        (Err(PlanError::NoPath(..)), Err(PlanError::NoPath(..))) => Ok(()),
        (a, b) => Err(format!(
            "seed {seed}: {:?} vs {:?}",
            a.map(|p| p.total_cost),
            b.map(|p| p.total_cost)
        )),
    }
}
