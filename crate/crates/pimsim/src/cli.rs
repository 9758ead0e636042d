//! The `pimsim` command line: compile networks, run simulations, sweep
//! parameters. Exit codes: 0 ok, 1 domain error, 2 usage error, 3 watchdog
//! deadlock.

use crate::compiler::{compile, CompileOutput, Strategy};
use crate::config::{parse_config, validate_config, ArchConfig};
use crate::engine::{simulate, SimError, SimOptions, SimResult, DEFAULT_WATCHDOG_CYCLES};
use crate::fixtures;
use crate::isa::{emit_asm, parse_asm, DirSource, Program};
use crate::metrics::{emit_csv_rows, emit_report, finalize_report, ReportFormat, SWEEP_CSV_HEADER};
use crate::nn::{generate_input, parse_network, reference_inference, Network};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const ENV_SEED: &str = "PIMSIM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "pimsim",
    version,
    about = "Compile and simulate neural networks on a crossbar processing-in-memory chip"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a network to assembly plus a placement report.
    Compile(CompileArgs),
    /// Simulate a compiled program or a network and print the report.
    Run(RunArgs),
    /// Run one configuration per sweep point and write a combined CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Utilization,
    Performance,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Utilization => Strategy::UtilizationFirst,
            StrategyArg::Performance => Strategy::PerformanceFirst,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Network description file, or a built-in fixture name
    /// (mlp3, tiny-cnn, tiny-resnet, tiny-vgg).
    pub network: String,
    /// Architecture configuration file (defaults to the built-in config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "performance")]
    pub strategy: StrategyArg,
    /// Output directory for program.asm, weight blobs and placement.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// A compiled .asm program or a network file / fixture name
    /// (networks are compiled on the fly with --strategy).
    pub artifact: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "performance")]
    pub strategy: StrategyArg,
    /// Raw little-endian int8 input tensor, CHW order.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Also run the reference inference and fail on any mismatch.
    #[arg(long)]
    pub check: bool,
    /// Write the per-instruction and link-occupancy trace (JSON lines).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Emit the report as CSV instead of JSON.
    #[arg(long)]
    pub csv: bool,
    /// Override the configured ROB size.
    #[arg(long)]
    pub rob_size: Option<usize>,
    /// Override the configured dispatch width.
    #[arg(long)]
    pub dispatch_width: Option<usize>,
    /// Watchdog limit in cycles.
    #[arg(long, default_value_t = DEFAULT_WATCHDOG_CYCLES)]
    pub watchdog: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Network description file or fixture name.
    pub network: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep axis: `rob=1,2,4,8,12,16` or `strategy=both`.
    #[arg(long)]
    pub axis: String,
    /// Mapping strategy for sweeps that do not vary it.
    #[arg(long, value_enum, default_value = "performance")]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
    Deadlock { cycle: u64, dump_path: PathBuf },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
            CliError::Deadlock { cycle, dump_path } => write!(
                f,
                "watchdog deadlock at cycle {cycle}; state dump written to {}",
                dump_path.display()
            ),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
            CliError::Deadlock { .. } => 3,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Run a parsed command; returns what should go to stdout.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Compile(args) => cmd_compile(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ArchConfig, CliError> {
    match path {
        None => Ok(fixtures::default_config()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(domain)
        }
    }
}

fn load_network(name_or_path: &str) -> Result<Network, CliError> {
    let mut net = if let Some(src) = fixtures::fixture_source(name_or_path) {
        parse_network(src).map_err(domain)?
    } else {
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("{name_or_path}: {e}")))?;
        let mut net = parse_network(&text).map_err(domain)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        net.resolve_weight_files(|name| {
            std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))
        })
        .map_err(domain)?;
        net
    };
    if let Ok(seed_text) = std::env::var(ENV_SEED) {
        let seed: u64 = seed_text
            .parse()
            .map_err(|_| CliError::Usage(format!("{ENV_SEED} must be an integer, got `{seed_text}`")))?;
        net.override_weight_seeds(seed);
    }
    Ok(net)
}

fn input_bytes(net: &Network, input: &Option<PathBuf>) -> Result<Vec<u8>, CliError> {
    match input {
        None => Ok(generate_input(fixtures::DEFAULT_INPUT_SEED, net.input_elems())
            .iter()
            .map(|&v| v as u8)
            .collect()),
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?;
            if bytes.len() != net.input_elems() {
                return Err(CliError::Domain(format!(
                    "input file holds {} bytes, network expects {}",
                    bytes.len(),
                    net.input_elems()
                )));
            }
            Ok(bytes)
        }
    }
}

fn apply_overrides(cfg: &mut ArchConfig, rob: Option<usize>, dw: Option<usize>) -> Result<(), CliError> {
    if let Some(r) = rob {
        cfg.core.rob_size = r;
    }
    if let Some(d) = dw {
        cfg.core.dispatch_width = d;
    }
    let violations = validate_config(cfg);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(format!(
            "invalid config after overrides: {}",
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )))
    }
}

fn cmd_compile(args: &CompileArgs) -> Result<String, CliError> {
    let cfg = load_config(&args.config)?;
    let net = load_network(&args.network)?;
    let out = compile(&net, &cfg, args.strategy.into()).map_err(domain)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Domain(format!("{}: {e}", args.out.display())))?;
    let module = emit_asm(&out.program);
    let write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        std::fs::write(args.out.join(name), bytes)
            .map_err(|e| CliError::Domain(format!("{name}: {e}")))
    };
    write("program.asm", module.text.as_bytes())?;
    for (name, bytes) in &module.weight_files {
        write(name, bytes)?;
    }
    let placement =
        serde_json::to_string_pretty(&out.report).expect("placement report serializes");
    write("placement.json", placement.as_bytes())?;

    Ok(format!(
        "compiled {}: {} instructions on {} cores -> {}\n",
        net.name,
        out.program.instruction_count(),
        out.program.cores.len(),
        args.out.display()
    ))
}

enum Artifact {
    Net(Network, CompileOutput),
    Asm(Program),
}

fn run_simulation(
    program: &Program,
    cfg: &ArchConfig,
    gmem: &[u8],
    watchdog: u64,
) -> Result<SimResult, CliError> {
    let opts = SimOptions {
        watchdog_cycles: watchdog,
    };
    simulate(program, cfg, gmem, &opts).map_err(|e| match e {
        SimError::Deadlock { cycle, dump } => {
            let dump_path = PathBuf::from("pimsim-deadlock.dump");
            let _ = std::fs::write(&dump_path, dump);
            CliError::Deadlock { cycle, dump_path }
        }
        other => domain(other),
    })
}

fn write_trace(path: &Path, sim: &SimResult) -> Result<(), CliError> {
    let mut text = String::new();
    for r in &sim.trace {
        let layer = match r.layer {
            Some(l) => l.to_string(),
            None => "null".to_string(),
        };
        writeln!(
            text,
            "{{\"kind\":\"inst\",\"core\":{},\"index\":{},\"mnemonic\":\"{}\",\"class\":\"{}\",\"layer\":{},\"issue\":{},\"complete\":{}}}",
            r.core, r.index, r.mnemonic, r.class.name(), layer, r.issue, r.complete
        )
        .unwrap();
    }
    for l in &sim.link_trace {
        writeln!(
            text,
            "{{\"kind\":\"link\",\"from\":{},\"to\":{},\"start\":{},\"end\":{},\"bytes\":{}}}",
            l.from, l.to, l.start, l.end, l.bytes
        )
        .unwrap();
    }
    std::fs::write(path, text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, args.rob_size, args.dispatch_width)?;

    let is_asm = args.artifact.ends_with(".asm");
    let artifact = if is_asm {
        let path = Path::new(&args.artifact);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let program = parse_asm(&text, &cfg, &DirSource(dir)).map_err(domain)?;
        Artifact::Asm(program)
    } else {
        let net = load_network(&args.artifact)?;
        let out = compile(&net, &cfg, args.strategy.into()).map_err(domain)?;
        Artifact::Net(net, out)
    };

    let (program, gmem) = match &artifact {
        Artifact::Asm(program) => {
            if args.check {
                return Err(CliError::Usage(
                    "--check needs a network artifact (the oracle runs on the network)".into(),
                ));
            }
            let gmem = match &args.input {
                Some(p) => std::fs::read(p)
                    .map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?,
                None => Vec::new(),
            };
            (program, gmem)
        }
        Artifact::Net(net, out) => (&out.program, input_bytes(net, &args.input)?),
    };

    let sim = run_simulation(program, &cfg, &gmem, args.watchdog)?;

    if let Some(path) = &args.trace {
        write_trace(path, &sim)?;
    }

    if args.check {
        let Artifact::Net(net, out) = &artifact else {
            unreachable!()
        };
        let input: Vec<i8> = gmem.iter().map(|&b| b as i8).collect();
        let expected = reference_inference(net, &input).map_err(domain)?;
        let got: Vec<i8> = sim.gmem[out.out_gaddr as usize..out.out_gaddr as usize + out.out_len]
            .iter()
            .map(|&b| b as i8)
            .collect();
        if let Some(idx) = (0..expected.len()).find(|&i| got.get(i) != Some(&expected[i])) {
            return Err(CliError::Domain(format!(
                "output mismatch at index {idx}: simulated {:?}, reference {}",
                got.get(idx),
                expected[idx]
            )));
        }
    }

    let report = finalize_report(&sim, &cfg);
    let format = if args.csv { ReportFormat::Csv } else { ReportFormat::Json };
    Ok(emit_report(&report, format))
}

enum Axis {
    Rob(Vec<usize>),
    StrategyBoth,
}

fn parse_axis(text: &str) -> Result<Axis, CliError> {
    if let Some(list) = text.strip_prefix("rob=") {
        let values: Result<Vec<usize>, _> = list.split(',').map(|v| v.trim().parse()).collect();
        let values =
            values.map_err(|_| CliError::Usage(format!("bad rob axis `{text}`")))?;
        if values.is_empty() || values.contains(&0) {
            return Err(CliError::Usage("rob sizes must be positive".into()));
        }
        Ok(Axis::Rob(values))
    } else if text == "strategy=both" {
        Ok(Axis::StrategyBoth)
    } else {
        Err(CliError::Usage(format!(
            "unknown axis `{text}` (expected rob=<list> or strategy=both)"
        )))
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let cfg = load_config(&args.config)?;
    let net = load_network(&args.network)?;
    let axis = parse_axis(&args.axis)?;
    let gmem = input_bytes(&net, &args.input)?;

    let mut csv = String::from(SWEEP_CSV_HEADER);
    match axis {
        Axis::Rob(values) => {
            // the program does not depend on the ROB size; compile once
            let out = compile(&net, &cfg, args.strategy.into()).map_err(domain)?;
            for rob in values {
                let mut point_cfg = cfg.clone();
                point_cfg.core.rob_size = rob;
                let sim = run_simulation(&out.program, &point_cfg, &gmem, DEFAULT_WATCHDOG_CYCLES)?;
                let report = finalize_report(&sim, &point_cfg);
                let prefix = format!("rob={rob},");
                csv.push_str(&format!("{prefix}params,rob_size,{rob}\n"));
                csv.push_str(&format!(
                    "{prefix}params,strategy,{}\n",
                    Strategy::from(args.strategy).name()
                ));
                csv.push_str(&emit_csv_rows(&report, &prefix));
            }
        }
        Axis::StrategyBoth => {
            for strategy in [Strategy::UtilizationFirst, Strategy::PerformanceFirst] {
                let out = compile(&net, &cfg, strategy).map_err(domain)?;
                let sim = run_simulation(&out.program, &cfg, &gmem, DEFAULT_WATCHDOG_CYCLES)?;
                let report = finalize_report(&sim, &cfg);
                let prefix = format!("strategy={},", strategy.name());
                csv.push_str(&format!("{prefix}params,strategy,{}\n", strategy.name()));
                csv.push_str(&emit_csv_rows(&report, &prefix));
            }
        }
    }

    std::fs::write(&args.out, &csv)
        .map_err(|e| CliError::Domain(format!("{}: {e}", args.out.display())))?;
    Ok(format!("wrote {}\n", args.out.display()))
}
