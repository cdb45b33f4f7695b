use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params_with_bound, Aggregator, ModelConfig, Sample, Vocabularies};
use crate::autodiff::{grad_check, GradCheckReport};
use crate::cograph::CoGraph;
use crate::error::Result;

/// A small random problem for checking the full loss gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSetup {
    pub seed: u64,
    pub dim: usize,
    pub depth: usize,
    pub neighbors: usize,
    pub nodes: usize,
    pub samples: usize,
    pub eps: f64,
    pub tol: f64,
    /// Embedding scale. Larger than the training default so that no
    /// gradient entry is lost below finite-difference noise.
    pub bound: f64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            seed: 7,
            dim: 8,
            depth: 2,
            neighbors: 3,
            nodes: 20,
            samples: 4,
            eps: 1e-5,
            tol: 1e-4,
            bound: 0.5,
        }
    }
}

/// Random connected graph on `nodes` items: a weighted ring plus chords.
pub fn random_graph(nodes: usize, rng: &mut ChaCha8Rng) -> Result<CoGraph> {
    let name = |i: usize| format!("g{i:03}");
    let mut edges = Vec::new();
    for i in 0..nodes {
        let j = (i + 1) % nodes;
        if i != j {
            edges.push((name(i.min(j)), name(i.max(j)), rng.gen_range(1..6u64)));
        }
    }
    for _ in 0..nodes {
        let a = rng.gen_range(0..nodes);
        let b = rng.gen_range(0..nodes);
        if a != b {
            edges.push((name(a.min(b)), name(a.max(b)), rng.gen_range(1..6u64)));
        }
    }
    edges.sort();
    edges.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
    CoGraph::from_edges(edges.iter().map(|(a, b, w)| (a.as_str(), b.as_str(), *w)))
}

/// Builds a random graph, batch and model from `setup.seed` and compares
/// the backward pass of the mean batch loss with central differences over
/// every parameter tensor.
pub fn end_to_end_grad_check(setup: &GradCheckSetup) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let graph = random_graph(setup.nodes.max(2), &mut rng)?;
    let items: Vec<String> = graph.nodes().map(str::to_string).collect();
    let samples: Vec<Sample> = (0..setup.samples)
        .map(|k| Sample {
            query: format!("query {}", k % 3),
            user_id: format!("user{k}"),
            ad_item: items.choose(&mut rng).cloned().unwrap_or_default(),
            pre_clicks: (0..rng.gen_range(1..=4))
                .map(|_| items.choose(&mut rng).cloned().unwrap_or_default())
                .collect(),
            label: (k % 2) as u8,
        })
        .collect();
    let cfg = ModelConfig {
        dim: setup.dim,
        depth: setup.depth,
        neighbors: setup.neighbors,
        clicks: 20,
        hidden: vec![64, 32, 16, 8],
        aggregator: Aggregator::Gin,
    };
    let params = init_params_with_bound(&cfg, Vocabularies::build(&samples, &graph), setup.seed, setup.bound)?;
    let index = params.graph_index(&graph);
    let encoded = params.encode_all(&samples, &index);
    let ids: Vec<_> = params.store.ids().collect();
    let mut store = params.store.clone();
    grad_check(
        &mut store,
        &ids,
        |tape| params.batch_loss_tape(tape, &encoded),
        setup.eps,
        setup.tol,
    )
}
