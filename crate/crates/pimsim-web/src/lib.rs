//! Browser bindings: compile a built-in fixture network, simulate it, and
//! hand the report to the page as JSON. Everything crosses the boundary as
//! strings so the page needs no framework and the crate builds on any
//! target.

use pimsim::compiler::{compile, Strategy};
use pimsim::engine::{simulate, SimOptions};
use pimsim::fixtures::{default_config, fixture_network, DEFAULT_INPUT_SEED, FIXTURE_NAMES};
use pimsim::metrics::finalize_report;
use pimsim::nn::{generate_input, reference_inference};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn parse_strategy(name: &str) -> Result<Strategy, String> {
    match name {
        "utilization" => Ok(Strategy::UtilizationFirst),
        "performance" => Ok(Strategy::PerformanceFirst),
        other => Err(format!("unknown strategy `{other}`")),
    }
}

fn run_point(
    fixture: &str,
    strategy: Strategy,
    rob_size: usize,
) -> Result<(pimsim::metrics::Report, usize, usize, bool), String> {
    let net = fixture_network(fixture).ok_or_else(|| format!("unknown fixture `{fixture}`"))?;
    let mut cfg = default_config();
    cfg.core.rob_size = rob_size.max(1);
    let out = compile(&net, &cfg, strategy).map_err(|e| e.to_string())?;
    let input = generate_input(DEFAULT_INPUT_SEED, net.input_elems());
    let gmem: Vec<u8> = input.iter().map(|&v| v as u8).collect();
    let sim = simulate(&out.program, &cfg, &gmem, &SimOptions::default())
        .map_err(|e| e.to_string())?;
    let expected = reference_inference(&net, &input).map_err(|e| e.to_string())?;
    let got: Vec<i8> = sim.gmem[out.out_gaddr as usize..out.out_gaddr as usize + out.out_len]
        .iter()
        .map(|&b| b as i8)
        .collect();
    let oracle_match = got == expected;
    let report = finalize_report(&sim, &cfg);
    Ok((
        report,
        out.placement.cores_used().len(),
        out.program.instruction_count(),
        oracle_match,
    ))
}

/// Names of the built-in fixture networks, as a JSON array.
#[wasm_bindgen]
pub fn fixture_names() -> String {
    json!(FIXTURE_NAMES).to_string()
}

/// Compile and simulate one configuration; returns the full report plus a
/// seat count and an oracle cross-check flag.
#[wasm_bindgen]
pub fn run_fixture(fixture: &str, strategy: &str, rob_size: usize) -> Result<String, String> {
    let strategy = parse_strategy(strategy)?;
    let (report, cores_used, instructions, oracle_match) =
        run_point(fixture, strategy, rob_size)?;
    Ok(json!({
        "report": serde_json::to_value(&report).unwrap(),
        "cores_used": cores_used,
        "instructions": instructions,
        "oracle_match": oracle_match,
    })
    .to_string())
}

/// Latency/energy over a comma-separated list of ROB sizes.
#[wasm_bindgen]
pub fn rob_sweep(fixture: &str, strategy: &str, robs: &str) -> Result<String, String> {
    let strategy = parse_strategy(strategy)?;
    let mut points = Vec::new();
    for tok in robs.split(',') {
        let rob: usize = tok
            .trim()
            .parse()
            .map_err(|_| format!("bad rob size `{tok}`"))?;
        let (report, ..) = run_point(fixture, strategy, rob)?;
        points.push(json!({
            "rob": rob,
            "total_cycles": report.total_cycles,
            "total_energy_pj": report.total_energy_pj,
        }));
    }
    Ok(json!(points).to_string())
}

/// Both mapping strategies at one ROB size.
#[wasm_bindgen]
pub fn compare_strategies(fixture: &str, rob_size: usize) -> Result<String, String> {
    let mut out = serde_json::Map::new();
    for strategy in [Strategy::UtilizationFirst, Strategy::PerformanceFirst] {
        let (report, cores_used, ..) = run_point(fixture, strategy, rob_size)?;
        out.insert(
            strategy.name().to_string(),
            json!({
                "total_cycles": report.total_cycles,
                "total_energy_pj": report.total_energy_pj,
                "avg_power_mw": report.avg_power_mw,
                "cores_used": cores_used,
            }),
        );
    }
    Ok(serde_json::Value::Object(out).to_string())
}
