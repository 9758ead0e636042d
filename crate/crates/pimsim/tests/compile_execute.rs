//! Compiler-to-engine integration: compiled programs must reproduce the
//! reference inference bit-exactly, and the emitted code must match the
//! documented shapes (transfer counts, accumulation chains, instruction
//! sequences).

use pimsim::compiler::{compile, Strategy};
use pimsim::config::ArchConfig;
use pimsim::engine::{simulate, SimOptions};
use pimsim::isa::{validate_program, Instruction};
use pimsim::nn::{generate_input, parse_network, reference_inference, Network};

fn small_cfg() -> ArchConfig {
    let mut cfg = ArchConfig::default();
    cfg.mesh.width = 6;
    cfg.mesh.height = 6;
    cfg.core.xbars_per_core = 4;
    cfg.core.xbar_rows = 16;
    cfg.core.xbar_cols = 16;
    cfg.core.local_mem_bytes = 65536;
    cfg
}

fn run_both_strategies(net: &Network, cfg: &ArchConfig, input_seed: u64) {
    let input = generate_input(input_seed, net.input_elems());
    let expected = reference_inference(net, &input).unwrap();
    let gmem: Vec<u8> = input.iter().map(|&v| v as u8).collect();

    for strategy in [Strategy::UtilizationFirst, Strategy::PerformanceFirst] {
        let out = compile(net, cfg, strategy).unwrap();
        assert!(validate_program(&out.program, cfg).is_empty());
        let sim = simulate(&out.program, cfg, &gmem, &SimOptions::default()).unwrap();
        let got: Vec<i8> = sim.gmem[out.out_gaddr as usize..out.out_gaddr as usize + out.out_len]
            .iter()
            .map(|&b| b as i8)
            .collect();
        assert_eq!(
            got, expected,
            "{} under {:?} diverged from the oracle",
            net.name, strategy
        );
    }
}

#[test]
fn single_fc_is_the_minimal_pipeline() {
    let doc = r#"{
        "name": "fc1",
        "input_shape": [16, 1, 1],
        "layers": [
            {"type": "fc", "producers": [-1], "out_features": 10,
             "quant": {"multiplier": 1, "shift": 6}, "weight_seed": 5}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    let cfg = small_cfg();
    let out = compile(&net, &cfg, Strategy::PerformanceFirst).unwrap();
    let mnemonics: Vec<&str> = out.program.cores[&0]
        .instructions
        .iter()
        .map(|i| i.mnemonic())
        .collect();
    assert_eq!(mnemonics, vec!["LOAD", "MVM", "VSCALE", "STORE", "HALT"]);
    run_both_strategies(&net, &cfg, 1);
}

#[test]
fn split_fc_accumulates_remote_partials() {
    // 48 input rows over 16-row crossbars: 3 row blocks; 1 crossbar per core
    // forces the blocks onto three cores, so two partials arrive over the NoC
    let doc = r#"{
        "name": "fc-split",
        "input_shape": [48, 1, 1],
        "layers": [
            {"type": "fc", "producers": [-1], "out_features": 8,
             "quant": {"multiplier": 1, "shift": 7}, "weight_seed": 6}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    let mut cfg = small_cfg();
    cfg.core.xbars_per_core = 1;
    let out = compile(&net, &cfg, Strategy::UtilizationFirst).unwrap();

    let site = out.placement.sites[&0];
    assert_eq!(site, 0);
    let insts = &out.program.cores[&site].instructions;
    let vadds = insts
        .iter()
        .filter(|i| matches!(i, Instruction::Vadd { .. }))
        .count();
    let recvs = insts
        .iter()
        .filter(|i| matches!(i, Instruction::Recv { .. }))
        .count();
    assert_eq!(vadds, 2, "three row blocks fold with exactly two VADD.w");
    assert_eq!(recvs, 2, "two remote row blocks send partials");
    run_both_strategies(&net, &cfg, 2);
}

#[test]
fn residual_add_receives_both_producers() {
    // performance-first puts the add on its own core, away from both convs
    let doc = r#"{
        "name": "res",
        "input_shape": [2, 4, 4],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 2, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 5}, "weight_seed": 7},
            {"type": "conv2d", "producers": [0], "out_channels": 2, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 5}, "weight_seed": 8},
            {"type": "add", "producers": [0, 1]}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    let cfg = small_cfg();
    let out = compile(&net, &cfg, Strategy::PerformanceFirst).unwrap();

    let add_site = out.placement.sites[&2];
    assert_ne!(add_site, out.placement.sites[&0]);
    assert_ne!(add_site, out.placement.sites[&1]);
    let insts = &out.program.cores[&add_site].instructions;
    let add_at = insts
        .iter()
        .position(|i| matches!(i, Instruction::Vadd { .. }))
        .unwrap();
    let recvs_before = insts[..add_at]
        .iter()
        .filter(|i| matches!(i, Instruction::Recv { .. }))
        .count();
    assert_eq!(recvs_before, 2, "the add core receives two layers' results");
    run_both_strategies(&net, &cfg, 3);
}

#[test]
fn conv_with_padding_matches_oracle() {
    let doc = r#"{
        "name": "convpad",
        "input_shape": [3, 6, 6],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 5, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 6}, "weight_seed": 11},
            {"type": "relu", "producers": [0]}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    run_both_strategies(&net, &small_cfg(), 4);
}

#[test]
fn strided_conv_no_padding_matches_oracle() {
    let doc = r#"{
        "name": "convstride",
        "input_shape": [2, 7, 7],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 3, "kernel": [3, 2],
             "stride": 2, "padding": 0, "quant": {"multiplier": 3, "shift": 7}, "weight_seed": 12}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    run_both_strategies(&net, &small_cfg(), 5);
}

#[test]
fn max_pool_matches_oracle() {
    let doc = r#"{
        "name": "pools",
        "input_shape": [4, 8, 8],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 4, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 6}, "weight_seed": 13},
            {"type": "pool", "producers": [0], "kind": "max", "kernel": 2, "stride": 2},
            {"type": "fc", "producers": [1], "out_features": 6,
             "quant": {"multiplier": 1, "shift": 7}, "weight_seed": 14}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    run_both_strategies(&net, &small_cfg(), 6);
}

#[test]
fn avg_pool_after_relu_matches_oracle() {
    let doc = r#"{
        "name": "avgp",
        "input_shape": [3, 6, 6],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 4, "kernel": 3,
             "stride": 1, "padding": 0, "quant": {"multiplier": 1, "shift": 6}, "weight_seed": 15},
            {"type": "relu", "producers": [0]},
            {"type": "pool", "producers": [1], "kind": "avg", "kernel": 2, "stride": 2}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    run_both_strategies(&net, &small_cfg(), 7);
}

#[test]
fn avg_pool_without_nonneg_input_is_rejected() {
    let doc = r#"{
        "name": "avgbad",
        "input_shape": [2, 4, 4],
        "layers": [
            {"type": "pool", "producers": [-1], "kind": "avg", "kernel": 2, "stride": 2}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    let err = compile(&net, &small_cfg(), Strategy::PerformanceFirst).unwrap_err();
    assert!(err.to_string().contains("non-negative"), "{err}");
}

#[test]
fn concat_of_branches_matches_oracle() {
    let doc = r#"{
        "name": "cat",
        "input_shape": [2, 5, 5],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 3, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 5}, "weight_seed": 16},
            {"type": "conv2d", "producers": [-1], "out_channels": 2, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 5}, "weight_seed": 17},
            {"type": "relu", "producers": [0]},
            {"type": "relu", "producers": [1]},
            {"type": "concat", "producers": [2, 3]},
            {"type": "fc", "producers": [4], "out_features": 4,
             "quant": {"multiplier": 1, "shift": 8}, "weight_seed": 18}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    run_both_strategies(&net, &small_cfg(), 8);
}

#[test]
fn timing_is_independent_of_data_values() {
    let doc = r#"{
        "name": "t",
        "input_shape": [3, 5, 5],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 4, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 6}, "weight_seed": 21},
            {"type": "relu", "producers": [0]},
            {"type": "fc", "producers": [1], "out_features": 7,
             "quant": {"multiplier": 1, "shift": 7}, "weight_seed": 22}
        ]
    }"#;
    let cfg = small_cfg();
    let mut cycles = Vec::new();
    for seed in [100u64, 200] {
        let mut net = parse_network(doc).unwrap();
        net.override_weight_seeds(seed);
        let out = compile(&net, &cfg, Strategy::PerformanceFirst).unwrap();
        let input = generate_input(seed ^ 1, net.input_elems());
        let gmem: Vec<u8> = input.iter().map(|&v| v as u8).collect();
        let sim = simulate(&out.program, &cfg, &gmem, &SimOptions::default()).unwrap();
        cycles.push(sim.total_cycles);
    }
    assert_eq!(cycles[0], cycles[1]);
}

#[test]
fn final_memory_is_invariant_across_rob_and_dispatch() {
    let doc = r#"{
        "name": "inv",
        "input_shape": [4, 6, 6],
        "layers": [
            {"type": "conv2d", "producers": [-1], "out_channels": 4, "kernel": 3,
             "stride": 1, "padding": 1, "quant": {"multiplier": 1, "shift": 6}, "weight_seed": 31},
            {"type": "relu", "producers": [0]},
            {"type": "pool", "producers": [1], "kind": "max", "kernel": 2, "stride": 2},
            {"type": "fc", "producers": [2], "out_features": 9,
             "quant": {"multiplier": 1, "shift": 7}, "weight_seed": 32}
        ]
    }"#;
    let net = parse_network(doc).unwrap();
    let input = generate_input(9, net.input_elems());
    let expected = reference_inference(&net, &input).unwrap();
    let gmem: Vec<u8> = input.iter().map(|&v| v as u8).collect();

    let mut last_cycles_by_rob: Vec<(usize, u64)> = Vec::new();
    for rob in [1usize, 2, 4, 8, 16] {
        for dw in [1usize, 4] {
            let mut cfg = small_cfg();
            cfg.core.rob_size = rob;
            cfg.core.dispatch_width = dw;
            let out = compile(&net, &cfg, Strategy::UtilizationFirst).unwrap();
            let sim = simulate(&out.program, &cfg, &gmem, &SimOptions::default()).unwrap();
            let got: Vec<i8> = sim.gmem
                [out.out_gaddr as usize..out.out_gaddr as usize + out.out_len]
                .iter()
                .map(|&b| b as i8)
                .collect();
            assert_eq!(got, expected, "rob={rob} dispatch={dw}");
            if dw == 4 {
                last_cycles_by_rob.push((rob, sim.total_cycles));
            }
        }
    }
    // larger windows never hurt on the shipped nets
    for pair in last_cycles_by_rob.windows(2) {
        assert!(
            pair[1].1 <= pair[0].1,
            "cycles increased with rob: {last_cycles_by_rob:?}"
        );
    }
}
