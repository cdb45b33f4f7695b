//! Plain-text checkpoints.
//!
//! ```text
//! GINCKPT v1
//! dim 16
//! depth 2
//! neighbors 10
//! clicks 20
//! hidden 64,32,16,8
//! aggregator gin
//! vocab items <n>
//! <one token per line>
//! vocab queries <n>
//! ...
//! vocab users <n>
//! ...
//! tensor <name> <dim> [<dim>]
//! <one row per line, values as %.16e>
//! ```
//!
//! Values carry 17 significant digits, so a reload reproduces every weight
//! bit for bit.

use std::io::{BufRead, Write};

use super::model::{init_params, ModelParams, Vocab, Vocabularies};
use super::{Aggregator, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "GINCKPT v1";

pub fn save_checkpoint<W: Write>(p: &ModelParams, mut sink: W) -> Result<()> {
    let c = &p.config;
    writeln!(sink, "{MAGIC}")?;
    writeln!(sink, "dim {}", c.dim)?;
    writeln!(sink, "depth {}", c.depth)?;
    writeln!(sink, "neighbors {}", c.neighbors)?;
    writeln!(sink, "clicks {}", c.clicks)?;
    let hidden: Vec<String> = c.hidden.iter().map(usize::to_string).collect();
    writeln!(sink, "hidden {}", hidden.join(","))?;
    writeln!(sink, "aggregator {}", c.aggregator)?;
    for (name, vocab) in [
        ("items", &p.vocab.items),
        ("queries", &p.vocab.queries),
        ("users", &p.vocab.users),
    ] {
        writeln!(sink, "vocab {name} {}", vocab.len())?;
        for tok in vocab.tokens() {
            writeln!(sink, "{tok}")?;
        }
    }
    for id in p.store.ids() {
        let t = p.store.get(id);
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(sink, "tensor {} {}", p.store.name(id), dims.join(" "))?;
        let cols = *t.shape().last().expect("tensors have a shape");
        for row in t.data().chunks(cols) {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(sink, "{}", vals.join(" "))?;
        }
    }
    sink.flush()?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    lineno: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.lineno += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::parse(self.lineno, "unexpected end of checkpoint")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.lineno, msg)
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(self.err(format!("expected `{key} ...`, found {line:?}"))),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed(key)?;
        v.parse().map_err(|_| self.err(format!("bad {key} value {v:?}")))
    }
}

/// Reads a checkpoint. With `expected` set, the stored architecture must match
/// it exactly.
pub fn load_checkpoint<R: BufRead>(source: R, expected: Option<&ModelConfig>) -> Result<ModelParams> {
    let mut lines = Lines {
        inner: source.lines(),
        lineno: 0,
    };
    if lines.next_line()? != MAGIC {
        return Err(lines.err("not a GINCKPT v1 checkpoint"));
    }
    let dim = lines.keyed_usize("dim")?;
    let depth = lines.keyed_usize("depth")?;
    let neighbors = lines.keyed_usize("neighbors")?;
    let clicks = lines.keyed_usize("clicks")?;
    let hidden_text = lines.keyed("hidden")?;
    let hidden = hidden_text
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| lines.err(format!("bad hidden widths {hidden_text:?}")))?;
    let aggregator: Aggregator = lines.keyed("aggregator")?.parse()?;
    let config = ModelConfig {
        dim,
        depth,
        neighbors,
        clicks,
        hidden,
        aggregator,
    };
    if let Some(want) = expected {
        if *want != config {
            return Err(Error::shape(format!(
                "checkpoint config {config:?} does not match requested {want:?}"
            )));
        }
    }

    let mut vocabs = Vec::with_capacity(3);
    for name in ["items", "queries", "users"] {
        let header = lines.keyed("vocab")?;
        let count = match header.split_once(' ') {
            Some((n, c)) if n == name => c
                .parse::<usize>()
                .map_err(|_| lines.err(format!("bad vocab size {c:?}")))?,
            _ => return Err(lines.err(format!("expected vocab {name}"))),
        };
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            tokens.push(lines.next_line()?);
        }
        vocabs.push(Vocab::from_ordered(tokens).map_err(|e| lines.err(e.to_string()))?);
    }
    let users = vocabs.pop().expect("three vocabularies");
    let queries = vocabs.pop().expect("three vocabularies");
    let items = vocabs.pop().expect("three vocabularies");

    let mut params = init_params(&config, Vocabularies { items, queries, users }, 0)?;
    let ids: Vec<_> = params.store.ids().collect();
    for id in ids {
        let header = lines.keyed("tensor")?;
        let mut parts = header.split(' ');
        let name = parts.next().unwrap_or_default();
        if name != params.store.name(id) {
            return Err(lines.err(format!(
                "expected tensor {}, found {name}",
                params.store.name(id)
            )));
        }
        let shape = parts
            .map(str::parse::<usize>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| lines.err("bad tensor shape"))?;
        if shape != params.store.get(id).shape() {
            return Err(Error::shape(format!(
                "tensor {name} has shape {shape:?}, model expects {:?}",
                params.store.get(id).shape()
            )));
        }
        let cols = *shape.last().expect("non-empty shape");
        let rows = params.store.get(id).len() / cols;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next_line()?;
            let before = values.len();
            for tok in line.split(' ') {
                let v: f64 = tok.parse().map_err(|_| lines.err(format!("bad value {tok:?}")))?;
                if !v.is_finite() {
                    return Err(lines.err("non-finite value"));
                }
                values.push(v);
            }
            if values.len() - before != cols {
                return Err(lines.err(format!("expected {cols} values")));
            }
        }
        params.store.get_mut(id).data_mut().copy_from_slice(&values);
    }
    Ok(params)
}
