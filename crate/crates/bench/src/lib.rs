//! Fixtures shared by the benchmarks under `benches/`.

use engage_core::scm::{self, presets};
use engage_core::{CausalGraph, CompositeDataset, SamplingDesign};

/// Nested composite sample of `n` units from the additive preset.
pub fn composite(n: usize, seed: u64) -> CompositeDataset {
    let pod = scm::generate(&presets::o1(), n, seed).expect("preset is valid");
    scm::to_composite(&pod, &SamplingDesign::Nested, false, seed).expect("both strata present")
}

/// Layered DAG: `width` nodes per layer, each wired to every node of the
/// next layer.
pub fn layered_graph(layers: usize, width: usize) -> CausalGraph {
    let name = |l: usize, i: usize| format!("n{l}_{i}");
    let nodes = (0..layers).flat_map(|l| (0..width).map(move |i| (name(l, i), false)));
    let edges = (1..layers).flat_map(|l| {
        (0..width).flat_map(move |i| (0..width).map(move |j| (name(l - 1, i), name(l, j))))
    });
    CausalGraph::new(nodes, edges).expect("layered graph is acyclic")
}
