//! Undirected weighted co-occurrence graph over items.
//!
//! Edge weights count how often two items were clicked within `window`
//! positions of each other inside one session. Adjacency lists are kept
//! sorted by weight descending, then item id ascending, so Top-N neighbor
//! selection is a prefix slice.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::clicklog::Session;
use crate::error::{Error, Result};

const GRAPH_MAGIC: &str = "GINGRAPH";
const GRAPH_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoGraph {
    /// Node names in ascending order; a node's index is its position here.
    names: Vec<String>,
    index: HashMap<String, u32>,
    /// Per node: `(neighbor index, weight)`, weight desc then index asc.
    adjacency: Vec<Vec<(u32, u64)>>,
    num_edges: usize,
}

impl CoGraph {
    /// Builds the graph from canonical undirected edges `(a, b, weight)`.
    ///
    /// Edges must have `a != b` and `weight >= 1`; the same pair may not
    /// appear twice (in either orientation).
    pub fn from_edges<I, S>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, u64)>,
        S: Into<String>,
    {
        let mut canon: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (a, b, w) in edges {
            let (a, b) = (a.into(), b.into());
            if a == b {
                return Err(Error::invalid(format!("self-loop on {a}")));
            }
            if w == 0 {
                return Err(Error::invalid(format!("edge {a}-{b} has zero weight")));
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if canon.contains_key(&key) {
                return Err(Error::invalid(format!("duplicate edge {}-{}", key.0, key.1)));
            }
            canon.insert(key, w);
        }
        Ok(Self::from_canonical(canon))
    }

    fn from_canonical(edges: BTreeMap<(String, String), u64>) -> Self {
        let names: Vec<String> = edges
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<String, u32> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        let mut adjacency = vec![Vec::new(); names.len()];
        for ((a, b), w) in &edges {
            let (ia, ib) = (index[a], index[b]);
            adjacency[ia as usize].push((ib, *w));
            adjacency[ib as usize].push((ia, *w));
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        }
        CoGraph {
            names,
            index,
            adjacency,
            num_edges: edges.len(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn node_index(&self, item: &str) -> Option<u32> {
        self.index.get(item).copied()
    }

    pub fn node_name(&self, idx: u32) -> &str {
        &self.names[idx as usize]
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<u64> {
        let (ia, ib) = (self.node_index(a)?, self.node_index(b)?);
        self.adjacency[ia as usize]
            .iter()
            .find(|(n, _)| *n == ib)
            .map(|(_, w)| *w)
    }

    /// Full adjacency list of a node by index, in Top-N order.
    pub fn adjacency(&self, idx: u32) -> &[(u32, u64)] {
        &self.adjacency[idx as usize]
    }

    /// Canonical edge list `(a, b, w)` with `a < b`, sorted by `(a, b)`.
    pub fn edges(&self) -> Vec<(&str, &str, u64)> {
        let mut out = Vec::with_capacity(self.num_edges);
        for (ia, list) in self.adjacency.iter().enumerate() {
            let a = &self.names[ia];
            for &(ib, w) in list {
                let b = &self.names[ib as usize];
                if a < b {
                    out.push((a.as_str(), b.as_str(), w));
                }
            }
        }
        out.sort();
        out
    }

    /// The `n` heaviest neighbors of `item`, ties broken by ascending id.
    /// Unknown or isolated items have no neighbors.
    pub fn neighbors_topn(&self, item: &str, n: usize) -> Vec<(&str, u64)> {
        match self.node_index(item) {
            Some(idx) => self
                .topn_indices(idx, n)
                .iter()
                .map(|&(j, w)| (self.node_name(j), w))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn topn_indices(&self, idx: u32, n: usize) -> &[(u32, u64)] {
        let list = &self.adjacency[idx as usize];
        &list[..n.min(list.len())]
    }

    /// Expands `seeds` over `depth` hops of Top-`n` neighbors.
    pub fn diffuse(&self, seeds: &[&str], depth: usize, n: usize) -> DiffusionLayers<String> {
        let seeds: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
        diffuse_with(&seeds, depth, |item: &String| {
            self.neighbors_topn(item, n)
                .into_iter()
                .map(|(name, _)| name.to_string())
                .collect()
        })
    }
}

/// Sums within-window co-occurrence counts over all sessions.
///
/// Each item at position `i` links to positions `i-1 ..= i-window` of the
/// same session. Pairs of identical items are skipped.
pub fn build_graph(sessions: &[Session], window: usize) -> Result<CoGraph> {
    let seqs: Vec<Vec<&str>> = sessions.iter().map(|s| s.items().collect()).collect();
    build_graph_from_sequences(&seqs, window)
}

pub fn build_graph_from_sequences<S: AsRef<str>>(
    sequences: &[Vec<S>],
    window: usize,
) -> Result<CoGraph> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for seq in sequences {
        for i in 1..seq.len() {
            let cur = seq[i].as_ref();
            for back in seq[i.saturating_sub(window)..i].iter() {
                let other = back.as_ref();
                if other == cur {
                    continue;
                }
                let key = if cur < other {
                    (cur.to_string(), other.to_string())
                } else {
                    (other.to_string(), cur.to_string())
                };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    Ok(CoGraph::from_canonical(counts))
}

/// Writes the graph as `GINGRAPH v1 <nodes> <edges>` followed by one
/// `src<TAB>dst<TAB>weight` line per edge, `src < dst`, sorted.
pub fn save_graph<W: Write>(g: &CoGraph, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "{GRAPH_MAGIC} {GRAPH_VERSION} {} {}",
        g.num_nodes(),
        g.num_edges()
    )?;
    for (a, b, w) in g.edges() {
        writeln!(sink, "{a}\t{b}\t{w}")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn load_graph<R: BufRead>(source: R) -> Result<CoGraph> {
    let mut lines = source.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::parse(1, "missing header")),
    };
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != GRAPH_MAGIC || parts[1] != GRAPH_VERSION {
        return Err(Error::parse(1, format!("bad header {header:?}")));
    }
    let num_nodes: usize = parts[2]
        .parse()
        .map_err(|_| Error::parse(1, "bad node count"))?;
    let num_edges: usize = parts[3]
        .parse()
        .map_err(|_| Error::parse(1, "bad edge count"))?;

    let mut edges: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut last: Option<(String, String)> = None;
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(lineno, "expected src<TAB>dst<TAB>weight"));
        }
        let (src, dst) = (fields[0], fields[1]);
        if src.is_empty() || dst.is_empty() {
            return Err(Error::parse(lineno, "empty node id"));
        }
        if src >= dst {
            return Err(Error::parse(lineno, format!("src {src:?} not < dst {dst:?}")));
        }
        let weight: u64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad weight {:?}", fields[2])))?;
        if weight < 1 {
            return Err(Error::parse(lineno, "weight must be >= 1"));
        }
        let key = (src.to_string(), dst.to_string());
        if let Some(prev) = &last {
            if *prev == key {
                return Err(Error::parse(lineno, format!("duplicate edge {src}-{dst}")));
            }
            if *prev > key {
                return Err(Error::parse(lineno, "edges not sorted by (src, dst)"));
            }
        }
        last = Some(key.clone());
        edges.insert(key, weight);
    }
    let g = CoGraph::from_canonical(edges);
    if g.num_edges() != num_edges || g.num_nodes() != num_nodes {
        return Err(Error::parse(
            1,
            format!(
                "header declares {num_nodes} nodes / {num_edges} edges, body has {} / {}",
                g.num_nodes(),
                g.num_edges()
            ),
        ));
    }
    Ok(g)
}

/// Nested multi-hop frontiers `S^(K) ⊆ … ⊆ S^(0)` with the neighbor list
/// selected for every node visited at each hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffusionLayers<T> {
    /// `layers[k]` is `S^(k)`, sorted ascending; `layers[depth]` is the seed set.
    layers: Vec<Vec<T>>,
    /// `neighbors[k]` maps each `v ∈ S^(k)` to its selected neighbors, for
    /// `k in 1..=depth`; `neighbors[0]` is empty.
    neighbors: Vec<BTreeMap<T, Vec<T>>>,
}

impl<T: Ord + Clone> DiffusionLayers<T> {
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, k: usize) -> &[T] {
        &self.layers[k]
    }

    pub fn seeds(&self) -> &[T] {
        &self.layers[self.depth()]
    }

    /// Selected neighbors of `v` at hop `k` (`1 <= k <= depth`).
    pub fn neighbors(&self, k: usize, v: &T) -> &[T] {
        self.neighbors[k].get(v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn neighbor_map(&self, k: usize) -> &BTreeMap<T, Vec<T>> {
        &self.neighbors[k]
    }

    /// Mutable access to a hop's neighbor lists; reorders only, used to check
    /// that aggregation does not depend on neighbor order.
    pub fn permute_neighbors(&mut self, mut f: impl FnMut(&mut Vec<T>)) {
        for hop in &mut self.neighbors {
            for list in hop.values_mut() {
                f(list);
            }
        }
    }

    pub fn is_nested(&self) -> bool {
        self.layers.windows(2).all(|w| {
            let outer: BTreeSet<&T> = w[0].iter().collect();
            w[1].iter().all(|v| outer.contains(v))
        })
    }
}

/// Generic frontier expansion: `S^(K) = set(seeds)` and
/// `S^(k-1) = S^(k) ∪ ⋃_{u ∈ S^(k)} select(u)`.
pub fn diffuse_with<T, F>(seeds: &[T], depth: usize, mut select: F) -> DiffusionLayers<T>
where
    T: Ord + Clone,
    F: FnMut(&T) -> Vec<T>,
{
    let top: BTreeSet<T> = seeds.iter().cloned().collect();
    let mut layers_rev: Vec<BTreeSet<T>> = vec![top];
    let mut maps_rev: Vec<BTreeMap<T, Vec<T>>> = Vec::with_capacity(depth);
    let mut cache: BTreeMap<T, Vec<T>> = BTreeMap::new();
    for _ in 0..depth {
        let current = layers_rev.last().expect("at least the seed layer");
        let mut next = current.clone();
        let mut map = BTreeMap::new();
        for u in current {
            let nbrs = cache.entry(u.clone()).or_insert_with(|| select(u)).clone();
            next.extend(nbrs.iter().cloned());
            map.insert(u.clone(), nbrs);
        }
        maps_rev.push(map);
        layers_rev.push(next);
    }
    // layers_rev[j] is S^(depth - j); flip so that index == hop.
    let layers: Vec<Vec<T>> = layers_rev
        .into_iter()
        .rev()
        .map(|s| s.into_iter().collect())
        .collect();
    let mut neighbors = vec![BTreeMap::new()];
    neighbors.extend(maps_rev.into_iter().rev());
    DiffusionLayers { layers, neighbors }
}
