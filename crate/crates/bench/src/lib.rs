//! Fixtures shared by the pipeline benchmarks.

use feasnav::evaluator::experiment_params;
use feasnav::oracle::{sample_dataset, LabelConfig, Sample};
use feasnav::{generate, ArchetypeKind, ElevationMap, PolicyArchetype, TerrainFamily, TerrainSpec};

pub fn steps_spec() -> TerrainSpec {
    TerrainSpec::new(TerrainFamily::Steps, (6.0, 2.5))
        .with_params(experiment_params())
        .with_seed(1)
}

pub fn steps_map() -> ElevationMap {
    generate(&steps_spec()).expect("steps map")
}

pub fn mixed_map() -> ElevationMap {
    generate(
        &TerrainSpec::new(TerrainFamily::Mixed, (20.0, 2.5))
            .with_params(experiment_params())
            .with_seed(1),
    )
    .expect("mixed map")
}

/// `n` StepsExpert samples from the steps map.
pub fn batch(n: usize) -> Vec<Sample> {
    let arch = PolicyArchetype::new(0, ArchetypeKind::StepsExpert);
    sample_dataset(&arch, &[steps_spec()], n, 2, &LabelConfig::default()).expect("dataset")
}
