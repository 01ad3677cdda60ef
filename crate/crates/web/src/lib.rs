//! Browser bindings: generate a scenario, run it, and check it.
//!
//! The exports take and return plain strings; the `*_json` functions hold
//! the logic so it can be tested off the browser.

use cesim::harness;
use cesim::scenario::{Construction, Scenario};
use serde_json::json;
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn parse(text: &str) -> Result<Scenario, String> {
    Scenario::parse(text).map_err(|e| e.to_string())
}

pub fn generate_text(construction: &str, seed: u64, horizon: u32) -> Out {
    let c: Construction = construction.parse()?;
    Ok(harness::generate(c, seed, horizon)
        .map_err(|e| e.to_string())?
        .render())
}

/// Census table, final sets and the first `limit` trace records.
pub fn run_json(text: &str, limit: usize) -> Out {
    let sc = parse(text)?;
    let run = harness::run(&sc).map_err(|e| e.to_string())?;
    let census = harness::census(&run).map_err(|e| e.to_string())?;
    let sets: serde_json::Map<String, serde_json::Value> = run
        .final_sets()
        .into_iter()
        .map(|(name, m)| (name.to_string(), json!(m.keys().collect::<Vec<_>>())))
        .collect();
    let head: Vec<String> = run
        .events()
        .iter()
        .take(limit)
        .map(|e| e.to_line())
        .collect();
    Ok(json!({
        "stage": run.stage(),
        "records": run.events().len(),
        "census": census,
        "sets": sets,
        "trace": head,
    })
    .to_string())
}

/// `[{name, passed, stage, message}]`, one row per check.
pub fn check_json(text: &str) -> Out {
    let sc = parse(text)?;
    let run = harness::run(&sc).map_err(|e| e.to_string())?;
    let rows: Vec<serde_json::Value> = harness::run_invariant_suite(&run, &sc)
        .iter()
        .map(|r| {
            let first = r.first();
            json!({
                "name": r.name,
                "passed": r.passed(),
                "stage": first.map(|v| v.stage),
                "message": first.map(|v| v.msg.clone()),
            })
        })
        .collect();
    Ok(serde_json::Value::Array(rows).to_string())
}

fn js(r: Out) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn generate(construction: &str, seed: u64, horizon: u32) -> Result<String, JsError> {
    js(generate_text(construction, seed, horizon))
}

#[wasm_bindgen]
pub fn run(text: &str, limit: usize) -> Result<String, JsError> {
    js(run_json(text, limit))
}

#[wasm_bindgen]
pub fn check(text: &str) -> Result<String, JsError> {
    js(check_json(text))
}
