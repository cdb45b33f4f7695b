use gin_core::autodiff::{ParamStore, Tape, Tensor};
use gin_core::clicklog::{parse_click_log_str, segment_sessions, SessionConfig};
use gin_core::cograph::{build_graph, diffuse_with, load_graph, save_graph, CoGraph};
use gin_core::eval::auc;
use gin_core::gid::{gid_forward, GidParams};
use gin_core::syndata::{generate, SynConfig};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

type Res<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse_graph(text: &str) -> Res<CoGraph> {
    load_graph(text.as_bytes()).map_err(err)
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn demo_graph(seed: u64) -> Res<String> {
    let cfg = SynConfig {
        num_items: 24,
        num_clusters: 3,
        num_users: 30,
        sessions_per_user: 2,
        session_len: (2, 5),
        bridge_prob: 0.15,
        seed,
        ..SynConfig::default()
    };
    let data = generate(&cfg).map_err(err)?;
    let events = parse_click_log_str(&data.click_log_text()).map_err(err)?;
    let sessions = segment_sessions(&events, &SessionConfig::default()).map_err(err)?;
    let graph = build_graph(&sessions, 1).map_err(err)?;
    let mut buf = Vec::new();
    save_graph(&graph, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(err)
}

#[derive(Serialize)]
struct Edge<'a> {
    from: &'a str,
    to: &'a str,
}

#[derive(Serialize)]
struct Diffusion<'a> {
    /// `layers[k]` is the frontier needed at hop `k`; the last entry is the seed set.
    layers: Vec<Vec<&'a str>>,
    /// `edges[k - 1]` holds the neighbor links aggregated at hop `k`.
    edges: Vec<Vec<Edge<'a>>>,
    unknown: Vec<&'a str>,
}

pub fn explain_diffusion(graph: &str, seeds: &str, depth: usize, neighbors: usize) -> Res<String> {
    let g = parse_graph(graph)?;
    let seeds = split_list(seeds);
    if seeds.is_empty() {
        return Err("enter at least one seed item".into());
    }
    let unknown: Vec<&str> = seeds.iter().copied().filter(|s| g.node_index(s).is_none()).collect();
    let layers = g.diffuse(&seeds, depth, neighbors);
    let name = |v: &String| g.node_index(v).map_or_else(|| v.clone(), |i| g.node_name(i).to_string());
    let owned: Vec<Vec<String>> = (0..=depth).map(|k| layers.layer(k).iter().map(name).collect()).collect();
    let mut edges = Vec::new();
    for k in 1..=depth {
        let mut hop = Vec::new();
        for (v, nbrs) in layers.neighbor_map(k) {
            for u in nbrs {
                hop.push((v.clone(), u.clone()));
            }
        }
        edges.push(hop);
    }
    let out = Diffusion {
        layers: owned.iter().map(|l| l.iter().map(String::as_str).collect()).collect(),
        edges: edges
            .iter()
            .map(|hop| hop.iter().map(|(a, b)| Edge { from: a, to: b }).collect())
            .collect(),
        unknown,
    };
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct Attention<'a> {
    clicks: Vec<&'a str>,
    weights: Vec<f64>,
    intention: Vec<f64>,
}

pub fn explain_attention(
    graph: &str,
    clicks: &str,
    ad: &str,
    depth: usize,
    neighbors: usize,
    dim: usize,
    seed: u64,
) -> Res<String> {
    if dim == 0 || dim > 64 {
        return Err("dimension must be between 1 and 64".into());
    }
    let g = parse_graph(graph)?;
    let clicks = split_list(clicks);
    let row = |item: &str| g.node_index(item).ok_or_else(|| format!("{item:?} is not in the graph"));
    let click_rows = clicks.iter().map(|c| row(c)).collect::<Res<Vec<u32>>>()?;
    let ad_row = row(ad.trim())? as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let table = store.add("items", Tensor::uniform(&[g.num_nodes(), dim], 1.0, &mut rng));
    let gid = GidParams::register(&mut store, dim, depth, 0.5, &mut rng);
    let layers = diffuse_with(&click_rows, depth, |&v| {
        g.topn_indices(v, neighbors).iter().map(|&(u, _)| u).collect()
    });
    let mut tape = Tape::new(&store);
    let out = gid_forward(&mut tape, &gid, table, ad_row, &click_rows, &layers).map_err(err)?;
    let weights = out.attention.map(|a| tape.value(a).to_vec()).unwrap_or_default();
    let result = Attention {
        clicks,
        weights,
        intention: tape.value(out.uii).to_vec(),
    };
    serde_json::to_string(&result).map_err(err)
}

#[derive(Serialize)]
struct Roc {
    auc: f64,
    /// `(false positive rate, true positive rate)` after each distinct score.
    points: Vec<(f64, f64)>,
}

pub fn explain_auc(scores: &str, labels: &str) -> Res<String> {
    let scores = split_list(scores)
        .into_iter()
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad score {s:?}")))
        .collect::<Res<Vec<f64>>>()?;
    let labels = split_list(labels)
        .into_iter()
        .map(|s| match s {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(format!("bad label {s:?}")),
        })
        .collect::<Res<Vec<u8>>>()?;
    let area = auc(&scores, &labels).map_err(err)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut points = vec![(0.0, 0.0)];
    for (i, &idx) in order.iter().enumerate() {
        if labels[idx] == 1 {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        let last_of_tie = order.get(i + 1).map_or(true, |&n| scores[n] != scores[idx]);
        if last_of_tie {
            points.push((fp / neg, tp / pos));
        }
    }
    serde_json::to_string(&Roc { auc: area, points }).map_err(err)
}
