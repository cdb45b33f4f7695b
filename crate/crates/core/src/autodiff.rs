//! Dense f64 tensors and a per-sample reverse-mode tape.
//!
//! Parameters live in a [`ParamStore`]. A [`Tape`] borrows the store, records
//! every primitive applied during one forward pass, and [`Tape::backward`]
//! walks the records in reverse to produce [`Gradients`]. Embedding lookups
//! produce row-sparse gradients so large tables are never densified per sample.
//!
//! There is no broadcasting: every op checks that its operand shapes agree.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("invalid tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor values must be finite"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// He-uniform bound `sqrt(6 / fan_in)` for a weight matrix feeding a ReLU.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, row: usize },
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Dot(Var, Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Bce { p: Var, label: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
}

pub const PROB_CLAMP: f64 = 1e-12;

/// Records one forward pass. Rebuilt for every sample.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        let Tensor { shape, data } = t;
        self.push(Op::Input, shape, data)
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Var {
        self.input(Tensor::vector(data))
    }

    /// Leaf for a whole parameter tensor. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = self.params.get(id);
        let v = self.push(Op::Param(id), t.shape.clone(), t.data.clone());
        self.param_vars.insert(id, v);
        v
    }

    /// Row `row` of a 2-D parameter table. Out-of-range rows fall back to
    /// row 0, the reserved unknown-id row.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let t = self.params.get(table);
        let rows = t.shape[0];
        let row = if row < rows { row } else { 0 };
        let value = t.row(row).to_vec();
        self.push(Op::Embed { table, row }, vec![value.len()], value)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::shape(format!("matvec {ws:?} x {xs:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out: Vec<f64> = (0..m)
            .map(|i| {
                let row = &wv[i * n..(i + 1) * n];
                row.iter().zip(xv).map(|(a, b)| a * b).sum()
            })
            .collect();
        Ok(self.push(Op::MatVec { w, x }, vec![m], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), shape, out))
    }

    /// `W·x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Elementwise sum of equally shaped nodes, accumulated in list order.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("sum of an empty list"))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![0.0; self.value(first).len()];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::shape(format!("sum {:?} vs {shape:?}", self.shape(p))));
            }
            for (o, v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        Ok(self.push(Op::Sum(parts.to_vec()), shape, out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(x, c), shape, out)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu(x), shape, out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Sigmoid(x), shape, out)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(Error::shape("softmax expects a vector"));
        }
        let out = softmax(self.value(x));
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Softmax(x), shape, out))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of an empty list"));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::shape("concat expects vectors"));
            }
            out.extend_from_slice(self.value(p));
        }
        let len = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), vec![len], out))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 || len == 0 || start + len > xs[0] {
            return Err(Error::shape(format!("slice {start}+{len} of {xs:?}")));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, vec![len], out))
    }

    /// Inner product of two vectors, as a `[1]` node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        if self.shape(a).len() != 1 {
            return Err(Error::shape("dot expects vectors"));
        }
        let v: f64 = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), vec![1], vec![v]))
    }

    /// `Σ_i weights[i] · items[i]`, accumulated in list order.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::invalid("weighted sum of an empty list"));
        }
        if self.shape(weights) != [items.len()] {
            return Err(Error::shape(format!(
                "{} weights for {} items",
                self.value(weights).len(),
                items.len()
            )));
        }
        let shape = self.shape(items[0]).to_vec();
        let mut out = vec![0.0; self.value(items[0]).len()];
        for (i, &it) in items.iter().enumerate() {
            if self.shape(it) != shape.as_slice() {
                return Err(Error::shape("weighted sum of differently shaped items"));
            }
            let w = self.nodes[weights.0].value[i];
            for (o, v) in out.iter_mut().zip(&self.nodes[it.0].value) {
                *o += w * v;
            }
        }
        Ok(self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            shape,
            out,
        ))
    }

    /// Binary cross entropy of a probability node against a 0/1 label, with
    /// the probability clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var> {
        if self.shape(p) != [1] {
            return Err(Error::shape("bce expects a scalar probability"));
        }
        let v = bce(self.scalar(p), label);
        Ok(self.push(Op::Bce { p, label }, vec![1], vec![v]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what} {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.add_dense(*id, &g),
                Op::Embed { table, row } => {
                    grads.add_row(*table, *row, &g)
                }
                Op::MatVec { w, x } => {
                    let (m, n) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; n];
                    for r in 0..m {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &wv[r * n..(r + 1) * n];
                        let grow = &mut gw[r * n..(r + 1) * n];
                        for c in 0..n {
                            grow[c] += gr * xv[c];
                            gx[c] += gr * row[c];
                        }
                    }
                    accumulate(&mut adj, *w, &gw);
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        accumulate(&mut adj, *p, &g);
                    }
                }
                Op::Scale(x, c) => {
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Relu(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| yv * (gv - inner)).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        accumulate(&mut adj, *p, &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice { x, start } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    gx[*start..*start + g.len()].copy_from_slice(&g);
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.nodes[b.0].value.iter().map(|v| g[0] * v).collect();
                    let gb: Vec<f64> = self.nodes[a.0].value.iter().map(|v| g[0] * v).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    let mut gw = vec![0.0; items.len()];
                    for (k, it) in items.iter().enumerate() {
                        let iv = &self.nodes[it.0].value;
                        gw[k] = iv.iter().zip(&g).map(|(a, b)| a * b).sum();
                        let gi: Vec<f64> = g.iter().map(|v| v * wv[k]).collect();
                        accumulate(&mut adj, *it, &gi);
                    }
                    accumulate(&mut adj, *weights, &gw);
                }
                Op::Bce { p, label } => {
                    let pv = self.nodes[p.0].value[0];
                    let d = if pv > PROB_CLAMP && pv < 1.0 - PROB_CLAMP {
                        -label / pv + (1.0 - label) / (1.0 - pv)
                    } else {
                        0.0
                    };
                    accumulate(&mut adj, *p, &[g[0] * d]);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn bce(p: f64, label: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    /// Row-sparse gradient of a 2-D table with `cols` columns.
    Rows {
        cols: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

/// Gradient of a scalar w.r.t. every parameter it reached.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<ParamId, ParamGrad>,
}

impl Gradients {
    fn add_dense(&mut self, id: ParamId, g: &[f64]) {
        match self.map.get_mut(&id) {
            Some(ParamGrad::Dense(acc)) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Some(ParamGrad::Rows { .. }) => panic!("parameter used both densely and as a table"),
            None => {
                self.map.insert(id, ParamGrad::Dense(g.to_vec()));
            }
        }
    }

    fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let entry = self.map.entry(id).or_insert_with(|| ParamGrad::Rows {
            cols: g.len(),
            rows: BTreeMap::new(),
        });
        match entry {
            ParamGrad::Rows { rows, .. } => match rows.get_mut(&row) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    rows.insert(row, g.to_vec());
                }
            },
            ParamGrad::Dense(_) => panic!("parameter used both densely and as a table"),
        }
    }

    pub fn raw(&self, id: ParamId) -> Option<&ParamGrad> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamGrad)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    /// Dense gradient for `id`, zero if the parameter was not reached.
    pub fn get(&self, id: ParamId, store: &ParamStore) -> Tensor {
        let shape = store.get(id).shape();
        let mut out = Tensor::zeros(shape);
        match self.map.get(&id) {
            None => {}
            Some(ParamGrad::Dense(g)) => out.data.copy_from_slice(g),
            Some(ParamGrad::Rows { cols, rows }) => {
                for (r, g) in rows {
                    out.data[r * cols..(r + 1) * cols].copy_from_slice(g);
                }
            }
        }
        out
    }

    /// Adds `other` into `self`; summation order is the call order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.map {
            match g {
                ParamGrad::Dense(d) => self.add_dense(*id, d),
                ParamGrad::Rows { rows, .. } => {
                    for (r, v) in rows {
                        self.add_row(*id, *r, v);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.map.values_mut() {
            match g {
                ParamGrad::Dense(d) => d.iter_mut().for_each(|v| *v *= c),
                ParamGrad::Rows { rows, .. } => rows
                    .values_mut()
                    .flat_map(|r| r.iter_mut())
                    .for_each(|v| *v *= c),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = loss_fn(&mut tape)?;
    Ok(tape.scalar(loss))
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// `(f(p+eps) - f(p-eps)) / 2eps` for every element of every listed parameter.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    loss_fn: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        tape.backward(loss)?
    };
    compare_with_finite_differences(store, params, &grads, loss_fn, eps, tol)
}

/// Finite-difference comparison against supplied analytic gradients.
pub fn compare_with_finite_differences<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    grads: &Gradients,
    loss_fn: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if eps <= 0.0 || tol <= 0.0 {
        return Err(Error::invalid("eps and tol must be positive"));
    }
    let mut checks = Vec::with_capacity(params.len());
    for &id in params {
        let analytic = grads.get(id, store);
        let mut worst = ParamCheck {
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic.len() {
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + eps;
            let plus = eval_loss(store, &loss_fn)?;
            store.get_mut(id).data[i] = orig - eps;
            let minus = eval_loss(store, &loss_fn)?;
            store.get_mut(id).data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data[i];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || i == 0 {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, t)| s.add(*n, t.clone())).collect();
        (s, ids)
    }

    #[test]
    fn tensor_validation() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert_eq!(Tensor::zeros(&[2, 3]).len(), 6);
    }

    #[test]
    fn affine_examples() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let eye = t.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = t.constant_vector(vec![3.0, 4.0]);
        let zero_b = t.constant_vector(vec![0.0, 0.0]);
        let y = t.affine(eye, x, zero_b).unwrap();
        assert_eq!(t.value(y), [3.0, 4.0]);

        let zero_w = t.input(Tensor::zeros(&[2, 2]));
        let b = t.constant_vector(vec![1.0, 2.0]);
        let y = t.affine(zero_w, x, b).unwrap();
        assert_eq!(t.value(y), [1.0, 2.0]);

        let w = t.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let ones = t.constant_vector(vec![1.0, 1.0]);
        let y = t.affine(w, ones, zero_b).unwrap();
        assert_eq!(t.value(y), [3.0, 7.0]);

        let bad = t.constant_vector(vec![1.0, 2.0, 3.0]);
        assert!(t.affine(w, bad, zero_b).is_err());
    }

    #[test]
    fn relu_values_and_mask() {
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![-1.0, 0.0, 2.0]))]);
        let mut t = Tape::new(&store);
        let x = t.param(ids[0]);
        let y = t.relu(x);
        assert_eq!(t.value(y), [0.0, 0.0, 2.0]);
        let ones = t.constant_vector(vec![1.0, 1.0, 1.0]);
        let loss = t.dot(y, ones).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(ids[0], &store).data(), [0.0, 0.0, 1.0]);

        let neg = t.constant_vector(vec![-3.0, -0.5]);
        let z = t.relu(neg);
        assert_eq!(t.value(z), [0.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[2.5, 2.5, 2.5]);
        for v in &s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[0.0, 2f64.ln()]);
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-15);
        let x = [0.3, -1.2, 4.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 7.0).collect();
        for (a, b) in softmax(&x).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
        let big = softmax(&[1000.0, 1000.0]);
        assert_eq!(big, [0.5, 0.5]);
    }

    #[test]
    fn concat_examples() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.constant_vector(vec![1.0]);
        let b = t.constant_vector(vec![2.0, 3.0]);
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c), [1.0, 2.0, 3.0]);
        let single = t.concat(&[b]).unwrap();
        assert_eq!(t.value(single), [2.0, 3.0]);
        assert!(t.concat(&[]).is_err());
    }

    #[test]
    fn embed_lookup_and_scatter() {
        let table = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (store, ids) = store_with(&[("table", table)]);
        let mut t = Tape::new(&store);
        let r1 = t.embed(ids[0], 1);
        assert_eq!(t.value(r1), [3.0, 4.0]);
        let oov = t.embed(ids[0], 99);
        assert_eq!(t.value(oov), [1.0, 2.0]);

        let ones = t.constant_vector(vec![1.0, 1.0]);
        let loss = t.dot(r1, ones).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(ids[0], &store).data(), [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_and_constant() {
        let (store, ids) = store_with(&[
            ("x", Tensor::vector(vec![3.0])),
            ("p", Tensor::vector(vec![1.5])),
        ]);
        let mut t = Tape::new(&store);
        let x = t.param(ids[0]);
        let loss = t.dot(x, x).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(ids[0], &store).data(), [6.0]);
        // p never touched the loss.
        assert_eq!(g.get(ids[1], &store).data(), [0.0]);
        assert!(g.raw(ids[1]).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let v = t.constant_vector(vec![1.0, 2.0]);
        assert!(t.backward(v).is_err());
    }

    #[test]
    fn bce_values_and_clamp() {
        assert!((bce(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce(1.0, 1.0) < 1e-11);
        assert!(bce(0.0, 1.0).is_finite());
    }

    #[test]
    fn grad_check_quadratic_passes() {
        let (mut store, ids) = store_with(&[("x", Tensor::vector(vec![0.7, -1.3, 2.0]))]);
        let report = grad_check(
            &mut store,
            &ids,
            |t| {
                let x = t.param(ids[0]);
                t.dot(x, x)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn grad_check_detects_corrupted_gradient() {
        let (mut store, ids) = store_with(&[("x", Tensor::vector(vec![0.7, -1.3]))]);
        let f = |t: &mut Tape<'_>| {
            let x = t.param(ids[0]);
            t.dot(x, x)
        };
        let mut grads = {
            let mut t = Tape::new(&store);
            let l = f(&mut t).unwrap();
            t.backward(l).unwrap()
        };
        grads.scale(2.0);
        let report = compare_with_finite_differences(&mut store, &ids, &grads, f, 1e-5, 1e-4).unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.4);
    }

    #[test]
    fn gradients_accumulate_in_order() {
        let (store, ids) = store_with(&[("t", Tensor::matrix(3, 2, vec![0.0; 6]).unwrap())]);
        let mut total = Gradients::default();
        for row in [0usize, 2, 0] {
            let mut t = Tape::new(&store);
            let r = t.embed(ids[0], row);
            let ones = t.constant_vector(vec![1.0, 2.0]);
            let l = t.dot(r, ones).unwrap();
            total.accumulate(&t.backward(l).unwrap());
        }
        assert_eq!(
            total.get(ids[0], &store).data(),
            [2.0, 4.0, 0.0, 0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn weighted_sum_checks_shapes() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let w = t.constant_vector(vec![0.5, 0.5]);
        let a = t.constant_vector(vec![1.0, 0.0]);
        let b = t.constant_vector(vec![0.0, 1.0]);
        let s = t.weighted_sum(w, &[a, b]).unwrap();
        assert_eq!(t.value(s), [0.5, 0.5]);
        assert!(t.weighted_sum(w, &[a]).is_err());
        assert!(t.weighted_sum(w, &[]).is_err());
    }

    #[test]
    fn slice_and_sum() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.constant_vector(vec![1.0, 2.0, 3.0, 4.0]);
        let hi = t.slice(x, 2, 2).unwrap();
        assert_eq!(t.value(hi), [3.0, 4.0]);
        assert!(t.slice(x, 3, 2).is_err());
        let lo = t.slice(x, 0, 2).unwrap();
        let s = t.sum(&[lo, hi, lo]).unwrap();
        assert_eq!(t.value(s), [5.0, 8.0]);
    }

    #[test]
    fn init_is_seeded() {
        let a = Tensor::uniform(&[3, 3], 0.05, &mut ChaCha8Rng::seed_from_u64(1));
        let b = Tensor::uniform(&[3, 3], 0.05, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 0.05));
    }
}
