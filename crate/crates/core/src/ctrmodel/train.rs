use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{init_params, Encoded, ModelParams, Vocabularies};
use super::sample::Sample;
use super::TrainConfig;
use crate::autodiff::{Gradients, ParamGrad, ParamStore, Tape};
use crate::cograph::CoGraph;
use crate::error::{Error, Result};

/// Dense Adam over every tensor in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; parameters without a gradient entry see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (beta1, beta2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let len = m.len();
            let data = store.get_mut(id).data_mut();
            let mut update = |i: usize, g: f64| {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            };
            match grads.raw(id) {
                Some(ParamGrad::Dense(g)) => {
                    for (i, &gi) in g.iter().enumerate() {
                        update(i, gi);
                    }
                }
                Some(ParamGrad::Rows { cols, rows }) => {
                    let mut iter = rows.iter().peekable();
                    let n_rows = len / cols;
                    for r in 0..n_rows {
                        let g = iter.next_if(|(&gr, _)| gr == r).map(|(_, g)| g);
                        for c in 0..*cols {
                            update(r * cols + c, g.map_or(0.0, |g| g[c]));
                        }
                    }
                }
                None => {
                    for i in 0..len {
                        update(i, 0.0);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss of each epoch, measured during the epoch.
    pub history: Vec<f64>,
}

fn shard_gradient(params: &ModelParams, shard: &[&Encoded], weight: f64) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(&params.store);
    let loss = params.loss_sum_tape(&mut tape, shard, weight)?;
    Ok((tape.scalar(loss), tape.backward(loss)?))
}

/// Mean loss and gradient of the mean loss over `batch`.
///
/// The batch is cut into `threads` contiguous shards. Each shard is recorded
/// on one tape so samples share diffusion states, and shard gradients are
/// summed in batch order. Results are deterministic for a given thread
/// count; different counts may differ in the last bits.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&Encoded],
    threads: usize,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let weight = 1.0 / batch.len() as f64;
    let per_shard: Vec<Result<(f64, Gradients)>> = if threads <= 1 || batch.len() < 2 {
        vec![shard_gradient(params, batch, weight)]
    } else {
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| scope.spawn(move || shard_gradient(params, part, weight)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };
    let mut total = Gradients::default();
    let mut loss = 0.0;
    for r in per_shard {
        let (l, g) = r?;
        loss += l;
        total.accumulate(&g);
    }
    Ok((loss, total))
}

/// Builds vocabularies from `data` and `graph`, initializes from `cfg.seed`
/// and trains.
pub fn train(data: &[Sample], graph: &CoGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let vocab = Vocabularies::build(data, graph);
    let params = init_params(&cfg.model, vocab, cfg.seed)?;
    train_from(params, data, graph, cfg)
}

/// Mini-batch Adam on the mean cross entropy, jointly updating the
/// perceptron, every embedding table and the diffusion parameters.
///
/// Sample order is reshuffled every epoch from `cfg.seed`; with zero epochs
/// the parameters come back untouched.
pub fn train_from(
    mut params: ModelParams,
    data: &[Sample],
    graph: &CoGraph,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    if params.config != cfg.model {
        return Err(Error::invalid("parameters were built for a different model config"));
    }
    let index = params.graph_index(graph);
    let encoded = params.encode_all(data, &index);
    let mut adam = Adam::new(&params.store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Encoded> = idx.iter().map(|&i| &encoded[i]).collect();
            let (loss, grads) = batch_gradients(&params, &batch, cfg.threads)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut params.store, &grads);
        }
        history.push(epoch_loss / encoded.len() as f64);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, -1.0]));
        let grads = {
            let mut t = Tape::new(&store);
            let x = t.param(id);
            let l = t.dot(x, x).unwrap();
            t.backward(l).unwrap()
        };
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &grads);
        // First bias-corrected Adam step moves each coordinate by ~lr.
        let x = store.get(id).data();
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] + 0.9).abs() < 1e-6);
        assert_eq!(adam.steps(), 1);
    }
}
