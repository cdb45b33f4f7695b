//! WebAssembly bindings for a static demo page.
//!
//! Every export takes plain strings and numbers and returns a JSON string,
//! so the page needs no bundler. Errors come back as JS exceptions carrying
//! the message.

mod demo;

pub use demo::{demo_graph, explain_auc, explain_attention, explain_diffusion};

use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// A small clustered co-click graph in the text graph format.
#[wasm_bindgen(js_name = demoGraph)]
pub fn demo_graph_js(seed: u32) -> Result<String, JsValue> {
    js(demo_graph(u64::from(seed)))
}

/// Frontier layers and chosen neighbors for comma-separated seed items.
#[wasm_bindgen(js_name = diffuse)]
pub fn diffuse_js(graph: &str, seeds: &str, depth: u32, neighbors: u32) -> Result<String, JsValue> {
    js(explain_diffusion(graph, seeds, depth as usize, neighbors as usize))
}

/// Readout attention of a randomly initialized aggregator over the clicks.
#[wasm_bindgen(js_name = attention)]
pub fn attention_js(
    graph: &str,
    clicks: &str,
    ad: &str,
    depth: u32,
    neighbors: u32,
    dim: u32,
    seed: u32,
) -> Result<String, JsValue> {
    js(explain_attention(
        graph,
        clicks,
        ad,
        depth as usize,
        neighbors as usize,
        dim as usize,
        u64::from(seed),
    ))
}

/// AUC and ROC points for whitespace- or comma-separated scores and labels.
#[wasm_bindgen(js_name = auc)]
pub fn auc_js(scores: &str, labels: &str) -> Result<String, JsValue> {
    js(explain_auc(scores, labels))
}
