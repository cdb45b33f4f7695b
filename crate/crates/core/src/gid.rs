//! Intention diffusion aggregation and the ad-aware readout.
//!
//! Given the nested frontiers produced by [`crate::cograph::diffuse_with`],
//! every node `v` of hop `k` is re-embedded from its own hop-`k-1` state and
//! the hop-`k-1` states of its selected neighbors:
//!
//! ```text
//! α_uv = softmax_v( ReLU( z · [W h_u ‖ W h_v] ) )
//! n_u  = Σ_v α_uv · ReLU(M h_v + m)
//! h_u' = ReLU( B · [h_u ‖ n_u] + b )
//! ```
//!
//! Each hop has its own `(W, z, M, m, B, b)`. The click representations at
//! the outermost hop are then pooled with softmax attention on a scaled dot
//! product against the ad embedding.
//!
//! Neighbor contributions are accumulated in a canonical order (neighbors
//! sorted lexicographically by their embedding values), so aggregation is
//! bitwise invariant to the order neighbors are supplied in.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{fan_in_bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::cograph::DiffusionLayers;
use crate::error::{Error, Result};

/// Learnable tensors for one aggregation hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopParams {
    /// `W`, `[d, d]`: projection used only for attention logits.
    pub attn_proj: ParamId,
    /// `z`, `[2d]`: attention logit vector over `[W h_u ‖ W h_v]`.
    pub attn_vec: ParamId,
    /// `M`, `[d, d]` and `m`, `[d]`: neighbor message transform.
    pub msg_w: ParamId,
    pub msg_b: ParamId,
    /// `B`, `[d, 2d]` and `b`, `[d]`: combines self and neighborhood.
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl HopParams {
    pub fn ids(&self) -> [ParamId; 6] {
        [
            self.attn_proj,
            self.attn_vec,
            self.msg_w,
            self.msg_b,
            self.out_w,
            self.out_b,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GidParams {
    pub dim: usize,
    pub hops: Vec<HopParams>,
}

impl GidParams {
    /// Registers `depth` independent hop parameter sets. Matrices get
    /// He-uniform bounds, the attention vector `Uniform(-bound, bound)` and
    /// biases start at zero.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        depth: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let hops = (1..=depth)
            .map(|k| HopParams {
                attn_proj: store.add(format!("gid.{k}.W"), Tensor::uniform(&[dim, dim], fan_in_bound(dim), rng)),
                attn_vec: store.add(format!("gid.{k}.z"), Tensor::uniform(&[2 * dim], bound, rng)),
                msg_w: store.add(format!("gid.{k}.M"), Tensor::uniform(&[dim, dim], fan_in_bound(dim), rng)),
                msg_b: store.add(format!("gid.{k}.m"), Tensor::zeros(&[dim])),
                out_w: store.add(format!("gid.{k}.B"), Tensor::uniform(&[dim, 2 * dim], fan_in_bound(2 * dim), rng)),
                out_b: store.add(format!("gid.{k}.b"), Tensor::zeros(&[dim])),
            })
            .collect();
        GidParams { dim, hops }
    }

    pub fn depth(&self) -> usize {
        self.hops.len()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.hops.iter().flat_map(|h| h.ids()).collect()
    }
}

/// Hop parameters as tape nodes, with `z` split into its self/neighbor halves.
struct HopVars {
    attn_proj: Var,
    z_self: Var,
    z_nbr: Var,
    msg_w: Var,
    msg_b: Var,
    out_w: Var,
    out_b: Var,
    dim: usize,
}

impl HopVars {
    fn new(tape: &mut Tape<'_>, hop: &HopParams) -> Result<Self> {
        let attn_proj = tape.param(hop.attn_proj);
        let dim = tape.shape(attn_proj)[0];
        let z = tape.param(hop.attn_vec);
        if tape.shape(z) != [2 * dim] {
            return Err(Error::shape(format!(
                "attention vector {:?} for dim {dim}",
                tape.shape(z)
            )));
        }
        let z_self = tape.slice(z, 0, dim)?;
        let z_nbr = tape.slice(z, dim, dim)?;
        Ok(HopVars {
            attn_proj,
            z_self,
            z_nbr,
            msg_w: tape.param(hop.msg_w),
            msg_b: tape.param(hop.msg_b),
            out_w: tape.param(hop.out_w),
            out_b: tape.param(hop.out_b),
            dim,
        })
    }
}

/// Per-node quantities that do not depend on the pairing: the two halves of
/// the attention logit and the transformed message.
#[derive(Clone, Copy)]
struct Projection {
    self_logit: Var,
    nbr_logit: Var,
    message: Var,
}

fn project(tape: &mut Tape<'_>, hv: &HopVars, h: Var) -> Result<Projection> {
    if tape.shape(h) != [hv.dim] {
        return Err(Error::shape(format!(
            "node embedding {:?}, expected [{}]",
            tape.shape(h),
            hv.dim
        )));
    }
    let wh = tape.matvec(hv.attn_proj, h)?;
    let self_logit = tape.dot(hv.z_self, wh)?;
    let nbr_logit = tape.dot(hv.z_nbr, wh)?;
    let pre = tape.affine(hv.msg_w, h, hv.msg_b)?;
    let message = tape.relu(pre);
    Ok(Projection {
        self_logit,
        nbr_logit,
        message,
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Attention weights in the order neighbors are given.
fn attention_weights(
    tape: &mut Tape<'_>,
    center: &Projection,
    neighbors: &[Projection],
) -> Result<Var> {
    let mut logits = Vec::with_capacity(neighbors.len());
    for p in neighbors {
        let raw = tape.add(center.self_logit, p.nbr_logit)?;
        logits.push(tape.relu(raw));
    }
    let stacked = tape.concat(&logits)?;
    tape.softmax(stacked)
}

fn combine(
    tape: &mut Tape<'_>,
    hv: &HopVars,
    h_u: Var,
    center: &Projection,
    mut neighbors: Vec<(Var, Projection)>,
) -> Result<Var> {
    let n_u = if neighbors.is_empty() {
        tape.constant_vector(vec![0.0; hv.dim])
    } else {
        neighbors.sort_by(|a, b| lexicographic(tape.value(a.0), tape.value(b.0)));
        let projs: Vec<Projection> = neighbors.iter().map(|(_, p)| *p).collect();
        let alpha = attention_weights(tape, center, &projs)?;
        let messages: Vec<Var> = projs.iter().map(|p| p.message).collect();
        tape.weighted_sum(alpha, &messages)?
    };
    let joined = tape.concat(&[h_u, n_u])?;
    let pre = tape.affine(hv.out_w, joined, hv.out_b)?;
    Ok(tape.relu(pre))
}

/// Attention weights `α` of `h_u` over `neighbors`, aligned with the input order.
pub fn neighbor_attention(
    tape: &mut Tape<'_>,
    h_u: Var,
    neighbors: &[Var],
    hop: &HopParams,
) -> Result<Var> {
    if neighbors.is_empty() {
        return Err(Error::invalid("neighbor attention over an empty neighbor set"));
    }
    let hv = HopVars::new(tape, hop)?;
    let center = project(tape, &hv, h_u)?;
    let projs = neighbors
        .iter()
        .map(|&h| project(tape, &hv, h))
        .collect::<Result<Vec<_>>>()?;
    attention_weights(tape, &center, &projs)
}

/// One aggregation step for a single node. An empty neighbor set yields a
/// zero neighborhood vector.
pub fn aggregate(tape: &mut Tape<'_>, h_u: Var, neighbors: &[Var], hop: &HopParams) -> Result<Var> {
    let hv = HopVars::new(tape, hop)?;
    let center = project(tape, &hv, h_u)?;
    let nbrs = neighbors
        .iter()
        .map(|&h| Ok((h, project(tape, &hv, h)?)))
        .collect::<Result<Vec<_>>>()?;
    combine(tape, &hv, h_u, &center, nbrs)
}

/// Scaled dot product `h_ad · h_c / sqrt(d)`.
pub fn score(tape: &mut Tape<'_>, h_ad: Var, h_c: Var) -> Result<Var> {
    let d = tape.shape(h_ad).first().copied().unwrap_or(1);
    let dot = tape.dot(h_ad, h_c)?;
    Ok(tape.scale(dot, 1.0 / (d as f64).sqrt()))
}

/// Output of [`gid_forward`].
#[derive(Debug, Clone, Copy)]
pub struct Intention {
    /// User implicit intention embedding `[d]`.
    pub uii: Var,
    /// Readout attention over click occurrences; `None` for an empty history.
    pub attention: Option<Var>,
}

/// Softmax-attention pooling of click representations against the ad.
pub fn readout(tape: &mut Tape<'_>, h_ad: Var, clicks: &[Var]) -> Result<Intention> {
    if clicks.is_empty() {
        let d = tape.shape(h_ad)[0];
        return Ok(Intention {
            uii: tape.constant_vector(vec![0.0; d]),
            attention: None,
        });
    }
    let scores = clicks
        .iter()
        .map(|&c| score(tape, h_ad, c))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&scores)?;
    let attn = tape.softmax(stacked)?;
    let uii = tape.weighted_sum(attn, clicks)?;
    Ok(Intention {
        uii,
        attention: Some(attn),
    })
}

/// Hop states recorded on one tape, shared between the samples of a batch.
///
/// A node's hop-`k` state depends only on the node and its Top-N list, so
/// every sample whose frontier came from the same neighbor function can
/// reuse it. A cache must only ever be used with the tape it was filled on.
#[derive(Default)]
pub struct GidCache {
    hops: Vec<HopVars>,
    /// `states[k][v]` is `h_v^(k)`.
    states: Vec<HashMap<u32, Var>>,
    /// `projections[k - 1][v]` projects `h_v^(k-1)` with hop `k` weights.
    projections: Vec<HashMap<u32, Projection>>,
}

impl GidCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, tape: &mut Tape<'_>, params: &GidParams) -> Result<()> {
        if self.states.len() != params.depth() + 1 {
            self.hops = params
                .hops
                .iter()
                .map(|hop| HopVars::new(tape, hop))
                .collect::<Result<_>>()?;
            self.states = vec![HashMap::new(); params.depth() + 1];
            self.projections = vec![HashMap::new(); params.depth()];
        }
        Ok(())
    }

    fn state(
        &mut self,
        tape: &mut Tape<'_>,
        item_table: ParamId,
        layers: &DiffusionLayers<u32>,
        k: usize,
        v: u32,
    ) -> Result<Var> {
        if let Some(&h) = self.states[k].get(&v) {
            return Ok(h);
        }
        let h = if k == 0 {
            tape.embed(item_table, v as usize)
        } else {
            let h_v = self.state(tape, item_table, layers, k - 1, v)?;
            let center = self.projection(tape, item_table, layers, k, v)?;
            let mut nbrs = Vec::with_capacity(layers.neighbors(k, &v).len());
            for &u in layers.neighbors(k, &v) {
                let h_u = self.state(tape, item_table, layers, k - 1, u)?;
                nbrs.push((h_u, self.projection(tape, item_table, layers, k, u)?));
            }
            combine(tape, &self.hops[k - 1], h_v, &center, nbrs)?
        };
        self.states[k].insert(v, h);
        Ok(h)
    }

    fn projection(
        &mut self,
        tape: &mut Tape<'_>,
        item_table: ParamId,
        layers: &DiffusionLayers<u32>,
        k: usize,
        v: u32,
    ) -> Result<Projection> {
        if let Some(&p) = self.projections[k - 1].get(&v) {
            return Ok(p);
        }
        let h = self.state(tape, item_table, layers, k - 1, v)?;
        let p = project(tape, &self.hops[k - 1], h)?;
        self.projections[k - 1].insert(v, p);
        Ok(p)
    }
}

/// Full diffusion aggregation and readout for one sample.
///
/// `clicks` are item-table rows in history order (duplicates allowed; every
/// occurrence gets its own readout slot). `layers` must come from diffusing
/// the distinct click rows; its depth selects how many hops run. Only nodes
/// in `S^(k)` are re-embedded at hop `k`.
pub fn gid_forward(
    tape: &mut Tape<'_>,
    params: &GidParams,
    item_table: ParamId,
    ad_row: usize,
    clicks: &[u32],
    layers: &DiffusionLayers<u32>,
) -> Result<Intention> {
    gid_forward_cached(tape, &mut GidCache::new(), params, item_table, ad_row, clicks, layers)
}

/// [`gid_forward`] reusing hop states already recorded in `cache`.
pub fn gid_forward_cached(
    tape: &mut Tape<'_>,
    cache: &mut GidCache,
    params: &GidParams,
    item_table: ParamId,
    ad_row: usize,
    clicks: &[u32],
    layers: &DiffusionLayers<u32>,
) -> Result<Intention> {
    let depth = layers.depth();
    if depth > params.depth() {
        return Err(Error::invalid(format!(
            "diffusion depth {depth} exceeds {} parameter hops",
            params.depth()
        )));
    }
    for &c in clicks {
        if layers.seeds().binary_search(&c).is_err() {
            return Err(Error::invalid(format!("click row {c} is not a diffusion seed")));
        }
    }
    let h_ad = tape.embed(item_table, ad_row);
    if clicks.is_empty() {
        return readout(tape, h_ad, &[]);
    }
    cache.prepare(tape, params)?;
    let click_vars = clicks
        .iter()
        .map(|&c| cache.state(tape, item_table, layers, depth, c))
        .collect::<Result<Vec<_>>>()?;
    readout(tape, h_ad, &click_vars)
}

/// Sum of the raw click embeddings; the order-insensitive pooling baseline.
pub fn sum_pool(tape: &mut Tape<'_>, item_table: ParamId, clicks: &[u32]) -> Result<Var> {
    if clicks.is_empty() {
        let d = tape.params().get(item_table).shape()[1];
        return Ok(tape.constant_vector(vec![0.0; d]));
    }
    let embs: Vec<Var> = clicks.iter().map(|&c| tape.embed(item_table, c as usize)).collect();
    tape.sum(&embs)
}
