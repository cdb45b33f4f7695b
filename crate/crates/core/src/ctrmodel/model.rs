use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sample::{normalize_query, Sample};
use super::{Aggregator, ModelConfig};
use crate::autodiff::{bce, fan_in_bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::cograph::{diffuse_with, CoGraph, DiffusionLayers};
use crate::error::{Error, Result};
use crate::gid::{gid_forward_cached, sum_pool, GidCache, GidParams};

pub const UNK_TOKEN: &str = "<unk>";

/// Default initialization range: weights are `Uniform(-0.05, 0.05)`.
pub const INIT_BOUND: f64 = 0.05;

const PREDICT_CHUNK: usize = 256;

/// String-to-row map with the unknown token reserved at row 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Sorted, deduplicated vocabulary; `<unk>` is always row 0.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != UNK_TOKEN)
            .collect();
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(set);
        Self::from_ordered(all).expect("sorted set has no duplicates")
    }

    /// Vocabulary in exactly the given row order (row 0 must be `<unk>`).
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::invalid("vocabulary row 0 must be <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Row of `token`, or 0 when unknown.
    pub fn row(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, row: u32) -> &str {
        &self.tokens[row as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub items: Vocab,
    pub queries: Vocab,
    pub users: Vocab,
}

impl Vocabularies {
    /// Items come from ads, clicks and every graph node; queries and users
    /// from the samples.
    pub fn build(samples: &[Sample], graph: &CoGraph) -> Self {
        let items = samples
            .iter()
            .flat_map(|s| std::iter::once(&s.ad_item).chain(&s.pre_clicks))
            .map(String::as_str)
            .chain(graph.nodes());
        Vocabularies {
            items: Vocab::from_tokens(items),
            queries: Vocab::from_tokens(samples.iter().map(|s| normalize_query(&s.query))),
            users: Vocab::from_tokens(samples.iter().map(|s| s.user_id.as_str())),
        }
    }
}

/// One perceptron layer `W·x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub w: ParamId,
    pub b: ParamId,
}

/// Every learnable tensor plus the vocabularies that index the tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab: Vocabularies,
    pub store: ParamStore,
    pub item_table: ParamId,
    pub query_table: ParamId,
    pub user_table: ParamId,
    pub gid: GidParams,
    pub mlp: Vec<Layer>,
}

pub fn init_params(cfg: &ModelConfig, vocab: Vocabularies, seed: u64) -> Result<ModelParams> {
    init_params_with_bound(cfg, vocab, seed, INIT_BOUND)
}

/// Initializes embedding tables and attention vectors from
/// `Uniform(-bound, bound)`, weight matrices from He-uniform bounds and
/// biases at zero.
///
/// Tables and perceptron draw from one seeded stream and the diffusion
/// parameters from another, so two configs that differ only in depth or
/// aggregator start from identical shared weights.
pub fn init_params_with_bound(
    cfg: &ModelConfig,
    vocab: Vocabularies,
    seed: u64,
    bound: f64,
) -> Result<ModelParams> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gid_rng = ChaCha8Rng::seed_from_u64(seed);
    gid_rng.set_stream(1);

    let mut store = ParamStore::new();
    let item_table = store.add("item_table", Tensor::uniform(&[vocab.items.len(), d], bound, &mut rng));
    let query_table = store.add(
        "query_table",
        Tensor::uniform(&[vocab.queries.len(), d], bound, &mut rng),
    );
    let user_table = store.add("user_table", Tensor::uniform(&[vocab.users.len(), d], bound, &mut rng));

    let mut mlp = Vec::with_capacity(cfg.hidden.len() + 1);
    let mut fan_in = 4 * d;
    for (i, &width) in cfg.hidden.iter().chain(std::iter::once(&1)).enumerate() {
        let w = store.add(
            format!("mlp.{i}.W"),
            Tensor::uniform(&[width, fan_in], fan_in_bound(fan_in), &mut rng),
        );
        let b = store.add(format!("mlp.{i}.b"), Tensor::zeros(&[width]));
        mlp.push(Layer { w, b });
        fan_in = width;
    }

    let gid = GidParams::register(&mut store, d, cfg.effective_depth(), bound, &mut gid_rng);

    Ok(ModelParams {
        config: cfg.clone(),
        vocab,
        store,
        item_table,
        query_table,
        user_table,
        gid,
        mlp,
    })
}

/// Top-N neighbor rows for every item row, resolved once per model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphIndex {
    topn: Vec<Vec<u32>>,
}

impl GraphIndex {
    /// Graph neighbors missing from the vocabulary are dropped.
    pub fn new(graph: &CoGraph, items: &Vocab, n: usize) -> Self {
        let topn = items
            .tokens()
            .iter()
            .enumerate()
            .map(|(row, tok)| {
                if row == 0 {
                    return Vec::new();
                }
                match graph.node_index(tok) {
                    Some(idx) => graph
                        .topn_indices(idx, n)
                        .iter()
                        .filter_map(|&(j, _)| items.get(graph.node_name(j)))
                        .collect(),
                    None => Vec::new(),
                }
            })
            .collect();
        GraphIndex { topn }
    }

    pub fn neighbors(&self, row: u32) -> &[u32] {
        self.topn.get(row as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn diffuse(&self, seeds: &[u32], depth: usize) -> DiffusionLayers<u32> {
        diffuse_with(seeds, depth, |&r| self.neighbors(r).to_vec())
    }
}

/// A sample resolved to table rows, with its diffusion frontier precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub query: u32,
    pub user: u32,
    pub ad: u32,
    pub clicks: Vec<u32>,
    pub label: f64,
    pub clicks_len: usize,
    layers: DiffusionLayers<u32>,
}

impl Encoded {
    pub fn layers(&self) -> &DiffusionLayers<u32> {
        &self.layers
    }
}

impl ModelParams {
    pub fn graph_index(&self, graph: &CoGraph) -> GraphIndex {
        GraphIndex::new(graph, &self.vocab.items, self.config.neighbors)
    }

    pub fn encode(&self, s: &Sample, index: &GraphIndex) -> Encoded {
        let clicks: Vec<u32> = s
            .recent_clicks(self.config.clicks)
            .iter()
            .map(|c| self.vocab.items.row(c))
            .collect();
        let layers = index.diffuse(&clicks, self.config.effective_depth());
        Encoded {
            query: self.vocab.queries.row(&normalize_query(&s.query)),
            user: self.vocab.users.row(&s.user_id),
            ad: self.vocab.items.row(&s.ad_item),
            clicks_len: clicks.len(),
            clicks,
            label: f64::from(s.label),
            layers,
        }
    }

    pub fn encode_all(&self, samples: &[Sample], index: &GraphIndex) -> Vec<Encoded> {
        samples.iter().map(|s| self.encode(s, index)).collect()
    }

    /// Intention embedding `h` for a sample.
    pub fn intention(&self, tape: &mut Tape<'_>, cache: &mut GidCache, e: &Encoded) -> Result<Var> {
        match self.config.aggregator {
            Aggregator::Gin => Ok(gid_forward_cached(
                tape,
                cache,
                &self.gid,
                self.item_table,
                e.ad as usize,
                &e.clicks,
                &e.layers,
            )?
            .uii),
            Aggregator::SumPool => sum_pool(tape, self.item_table, &e.clicks),
        }
    }

    /// Records the forward pass on `tape` and returns the `[1]` pctr node.
    pub fn forward_tape(&self, tape: &mut Tape<'_>, e: &Encoded) -> Result<Var> {
        self.forward_tape_cached(tape, &mut GidCache::new(), e)
    }

    /// [`ModelParams::forward_tape`] sharing hop states through `cache`,
    /// which must belong to `tape`.
    pub fn forward_tape_cached(
        &self,
        tape: &mut Tape<'_>,
        cache: &mut GidCache,
        e: &Encoded,
    ) -> Result<Var> {
        let h_query = tape.embed(self.query_table, e.query as usize);
        let h_user = tape.embed(self.user_table, e.user as usize);
        let h_ad = tape.embed(self.item_table, e.ad as usize);
        let h = self.intention(tape, cache, e)?;
        let mut x = tape.concat(&[h_query, h_user, h_ad, h])?;
        let last = self.mlp.len() - 1;
        for (i, layer) in self.mlp.iter().enumerate() {
            let w = tape.param(layer.w);
            let b = tape.param(layer.b);
            x = tape.affine(w, x, b)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(tape.sigmoid(x))
    }

    /// Mean cross entropy over `batch`, recorded on `tape`.
    pub fn batch_loss_tape(&self, tape: &mut Tape<'_>, batch: &[Encoded]) -> Result<Var> {
        let refs: Vec<&Encoded> = batch.iter().collect();
        let total = self.loss_sum_tape(tape, &refs, 1.0)?;
        Ok(tape.scale(total, 1.0 / batch.len() as f64))
    }

    /// `weight` times the summed cross entropy of `batch`, with hop states
    /// shared across samples.
    pub(crate) fn loss_sum_tape(
        &self,
        tape: &mut Tape<'_>,
        batch: &[&Encoded],
        weight: f64,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut cache = GidCache::new();
        let mut losses = Vec::with_capacity(batch.len());
        for e in batch {
            let p = self.forward_tape_cached(tape, &mut cache, e)?;
            let l = tape.bce(p, e.label)?;
            losses.push(tape.scale(l, weight));
        }
        tape.sum(&losses)
    }

    pub fn predict_encoded(&self, e: &Encoded) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let p = self.forward_tape(&mut tape, e)?;
        Ok(tape.scalar(p))
    }

    /// Predicted CTR for one sample.
    pub fn forward(&self, s: &Sample, index: &GraphIndex) -> Result<f64> {
        self.predict_encoded(&self.encode(s, index))
    }

    pub fn predict(&self, samples: &[Sample], graph: &CoGraph) -> Result<Vec<f64>> {
        let index = self.graph_index(graph);
        self.predict_all(&self.encode_all(samples, &index))
    }

    /// Predictions for many encoded samples. Hop states are shared within
    /// chunks; the values match [`ModelParams::predict_encoded`] bit for bit.
    pub fn predict_all(&self, encoded: &[Encoded]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(encoded.len());
        for chunk in encoded.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::new(&self.store);
            let mut cache = GidCache::new();
            for e in chunk {
                let p = self.forward_tape_cached(&mut tape, &mut cache, e)?;
                out.push(tape.scalar(p));
            }
        }
        Ok(out)
    }

    /// Diffusion and aggregation parameters, in registration order.
    pub fn gid_ids(&self) -> Vec<ParamId> {
        self.gid.ids()
    }
}

/// Mean binary cross entropy with predictions clamped to `[1e-12, 1-1e-12]`.
pub fn cross_entropy(pctrs: &[f64], labels: &[u8]) -> Result<f64> {
    if pctrs.is_empty() {
        return Err(Error::invalid("cross entropy of an empty batch"));
    }
    if pctrs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pctrs.len(),
            labels.len()
        )));
    }
    let total: f64 = pctrs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce(p, f64::from(y)))
        .sum();
    Ok(total / pctrs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctrmodel::parse_samples_str;

    fn toy() -> (Vec<Sample>, CoGraph) {
        let samples = parse_samples_str(
            "1\tred dress\tu1\ta\tb,c\n0\tblue shoes\tu2\td\t\n1\tred dress\tu1\tc\ta,a,b\n",
        )
        .unwrap();
        let g = CoGraph::from_edges([("a", "b", 3), ("b", "c", 1), ("c", "d", 2)]).unwrap();
        (samples, g)
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            dim: 4,
            depth: 2,
            neighbors: 2,
            clicks: 20,
            hidden: vec![8, 6, 4, 3],
            aggregator: Aggregator::Gin,
        }
    }

    #[test]
    fn vocab_reserves_unk() {
        let v = Vocab::from_tokens(["b", "a", "b"]);
        assert_eq!(v.tokens(), ["<unk>", "a", "b"]);
        assert_eq!(v.row("a"), 1);
        assert_eq!(v.row("zzz"), 0);
        assert!(Vocab::from_ordered(vec!["a".into()]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&[1.0 - 1e-15], &[1]).unwrap() < 1e-11);
        assert!((cross_entropy(&[0.5], &[1]).unwrap() - 0.693147).abs() < 1e-6);
        assert!((cross_entropy(&[0.5, 0.5], &[1, 0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[], &[]).is_err());
        assert!(cross_entropy(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let (samples, g) = toy();
        let v = Vocabularies::build(&samples, &g);
        let a = init_params(&small_cfg(), v.clone(), 3).unwrap();
        let b = init_params(&small_cfg(), v.clone(), 3).unwrap();
        let c = init_params(&small_cfg(), v, 4).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
        for id in a.store.ids() {
            let name = a.store.name(id);
            let t = a.store.get(id);
            let bound = if name.ends_with(".b") || name.ends_with(".m") {
                0.0
            } else if name.ends_with("_table") || name.ends_with(".z") {
                INIT_BOUND
            } else {
                fan_in_bound(*t.shape().last().unwrap())
            };
            assert!(t.data().iter().all(|&v| v.abs() <= bound), "{name}");
            if bound > 0.0 {
                assert!(t.data().iter().any(|&v| v != 0.0), "{name}");
            }
        }
        assert_eq!(a.mlp.len(), 5);
        assert_eq!(a.store.get(a.mlp[0].w).shape(), [8, 16]);
    }

    #[test]
    fn shared_weights_do_not_depend_on_depth() {
        let (samples, g) = toy();
        let v = Vocabularies::build(&samples, &g);
        let k2 = init_params(&small_cfg(), v.clone(), 9).unwrap();
        let k0 = init_params(&ModelConfig { depth: 0, ..small_cfg() }, v, 9).unwrap();
        assert_eq!(k0.gid.depth(), 0);
        for (a, b) in [(k2.item_table, k0.item_table), (k2.mlp[0].w, k0.mlp[0].w)] {
            assert_eq!(k2.store.get(a), k0.store.get(b));
        }
    }

    #[test]
    fn zero_perceptron_predicts_half() {
        let (samples, g) = toy();
        let mut p = init_params(&small_cfg(), Vocabularies::build(&samples, &g), 1).unwrap();
        for layer in p.mlp.clone() {
            for id in [layer.w, layer.b] {
                let shape = p.store.get(id).shape().to_vec();
                *p.store.get_mut(id) = Tensor::zeros(&shape);
            }
        }
        for s in p.predict(&samples, &g).unwrap() {
            assert_eq!(s, 0.5);
        }
    }

    #[test]
    fn forward_is_deterministic_and_in_range() {
        let (samples, g) = toy();
        for agg in [Aggregator::Gin, Aggregator::SumPool] {
            let cfg = ModelConfig { aggregator: agg, ..small_cfg() };
            let p = init_params(&cfg, Vocabularies::build(&samples, &g), 5).unwrap();
            let a = p.predict(&samples, &g).unwrap();
            let b = p.predict(&samples, &g).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn unknown_ids_use_unk_rows() {
        let (samples, g) = toy();
        let p = init_params(&small_cfg(), Vocabularies::build(&samples, &g), 5).unwrap();
        let index = p.graph_index(&g);
        let odd = parse_samples_str("0\tnever seen\tnobody\tzz\tyy,a").unwrap();
        let e = p.encode(&odd[0], &index);
        assert_eq!((e.query, e.user, e.ad), (0, 0, 0));
        assert_eq!(e.clicks[0], 0);
        let pctr = p.forward(&odd[0], &index).unwrap();
        assert!(pctr > 0.0 && pctr < 1.0);
    }

    #[test]
    fn graph_index_follows_topn() {
        let (samples, g) = toy();
        let p = init_params(&small_cfg(), Vocabularies::build(&samples, &g), 5).unwrap();
        let index = p.graph_index(&g);
        let items = &p.vocab.items;
        let b = items.row("b");
        let got: Vec<&str> = index.neighbors(b).iter().map(|&r| items.token(r)).collect();
        assert_eq!(got, ["a", "c"]);
        assert!(index.neighbors(0).is_empty());
    }
}
