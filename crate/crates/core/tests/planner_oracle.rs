//! Planner and fusion checked against exhaustive search on small grids.

#[path = "support/grids.rs"]
mod grids;

use feasnav::planner::{fuse, Planner};
use feasnav::{FeasibilityTensor, DIRECTIONS};
use grids::{brute_force, check_dominated, check_fusion, check_grid, RES};
use proptest::prelude::*;

#[test]
fn dijkstra_matches_exhaustive_search_on_200_grids() {
    for seed in 0..200 {
        check_grid(seed).unwrap();
    }
}

#[test]
fn center_column_wall_forces_a_detour() {
    // the top two center cells are blocked; only the bottom one connects
    let valid: Vec<bool> = (0..9).map(|c| c != 1 && c != 4).collect();
    let values: Vec<f64> = valid.iter().flat_map(|&v| [if v { 1.0 } else { 0.0 }; DIRECTIONS]).collect();
    let t = FeasibilityTensor::new(3, 3, 0, values, valid).unwrap();
    let field = fuse(&[t]).unwrap();
    let planner = Planner::new(0.05, RES).unwrap();
    let plan = planner.plan(&field, (0, 0), (2, 0)).unwrap();
    assert_eq!(Some(plan.total_cost), brute_force(&field, &planner, (0, 0), (2, 0)));
    assert!(plan.waypoints.contains(&(1, 2)));
    assert!(plan.total_length > 2.0 * RES);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dijkstra_is_optimal(seed in 1000u64..1_000_000) {
        let r = check_grid(seed);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn fused_value_dominates_and_provenance_is_consistent(seed: u64, n in 1usize..5) {
        let r = check_fusion(seed, n);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn dominated_tensor_never_changes_the_plan(seed: u64) {
        let r = check_dominated(seed);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}
