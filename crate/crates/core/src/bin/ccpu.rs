use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ccpu::energy::{
    energy_from_trace, latency_from_trace, round_uj, sparsity_saving, EnergyModel, EnergyReport, Schedule,
};
use ccpu::io::golden::{check_golden_dir, shipped_dir, write_goldens};
use ccpu::io::model::{load_model, save_model};
use ccpu::io::report::{read_json, write_csv, write_json};
use ccpu::network::{build_network, infer, quantize_frame, NetMode, NetworkSpec, WeightInit};
use ccpu::neuron::TransferMode;
use ccpu::toytrain::{
    bitwidth_sweep, default_transfer, evaluate_fixed, evaluate_float, resilience_experiment, LossConfigL2,
    ToyTaskConfig,
};
use ccpu::{ActivityTrace, MulQuant, NetworkInstance, QFormat};

#[derive(Parser)]
#[command(name = "ccpu", version, about = "Two-point neuron accelerator model and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a network on a JSON file of input frames and report energy.
    Simulate(SimulateArgs),
    /// Energy of a MAC count, an event count, a saved trace or a savings scenario.
    EstimateEnergy(EnergyArgs),
    /// Train the toy model and evaluate it at several fixed-point widths.
    QuantizeSweep(SweepArgs),
    /// Train the toy model and save it in fixed point.
    TrainToy(TrainArgs),
    /// Kill random cells and measure fixed-point error and activity.
    Resilience(ResilienceArgs),
    /// Validate the golden table files.
    CheckTables(CheckArgs),
}

#[derive(Args, Clone)]
struct NetArgs {
    /// Seed for weights, data and training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "Q3.12")]
    qformat: QFormat,
    /// mcc or baseline.
    #[arg(long, default_value = "mcc")]
    mode: NetMode,
    /// shift or upper-half.
    #[arg(long, default_value = "shift")]
    mul_quant: MulQuant,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the timestamp line from CSV reports.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransferArg {
    Relu6,
    Hgf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Uniform,
    Zeros,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON; without it the shallow audio-visual network is built.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON document `{"frames": [[[stream 0 values], [stream 1 values]], ...]}`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    init: InitArg,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EnergyArgs {
    /// Dense MAC count in thousands.
    #[arg(long)]
    mac_k: Option<u64>,
    /// Synapse event count.
    #[arg(long)]
    events: Option<u64>,
    /// Activity trace JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, requires = "mcc_uj")]
    baseline_uj: Option<f64>,
    #[arg(long, requires = "baseline_uj")]
    mcc_uj: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    activity: f64,
    #[arg(long, default_value_t = 1.0)]
    dense_activity: f64,
    /// Multiply per-inference figures by this many training updates.
    #[arg(long)]
    training_updates: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Clone)]
struct ToyArgs {
    /// Toy task configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    transfer: Option<TransferArg>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "8,9,10,11,12,13,14,15,16")]
    widths: Vec<u32>,
    /// Fold the multiplier's mean truncation error into each bias.
    #[arg(long)]
    compensate: bool,
    #[command(flatten)]
    toy: ToyArgs,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    toy: ToyArgs,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ResilienceArgs {
    /// Saved model to evaluate; otherwise one is trained.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.12,0.24,0.36,0.5,1")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    kill_seeds: u64,
    #[command(flatten)]
    toy: ToyArgs,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CheckArgs {
    /// Directory holding table1.csv and table3.csv.
    #[arg(long)]
    golden: Option<PathBuf>,
    /// Write the built-in transcription to this directory first.
    #[arg(long)]
    write: Option<PathBuf>,
}

enum CliError {
    /// Checks ran and failed.
    Validation(String),
    /// Bad arguments, files or configuration.
    Input(String),
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::EstimateEnergy(a) => estimate_energy(a),
        Command::QuantizeSweep(a) => quantize_sweep(a),
        Command::TrainToy(a) => train_toy(a),
        Command::Resilience(a) => resilience(a),
        Command::CheckTables(a) => check_tables(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(out: &OutArgs) -> Result<Option<PathBuf>, CliError> {
    if let Some(dir) = &out.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    Ok(out.out.clone())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value).map_err(input)?);
    Ok(())
}

#[derive(Deserialize)]
struct FrameFile {
    frames: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct SimulateReport {
    energy: EnergyReport,
    bias_events: u64,
    context_events: u64,
    input_events: u64,
    input_energy_uj: f64,
    zero_skips: u64,
    activity: f64,
    outputs: Vec<Vec<f64>>,
    trace: ActivityTrace,
}

fn simulate(a: SimulateArgs) -> CliResult {
    let net = match &a.model {
        Some(path) => load_model(path).map_err(input)?,
        None => {
            let mut spec = NetworkSpec::shallow_av(a.net.mode, a.net.seed.unwrap_or(0));
            spec.qformat = a.net.qformat;
            spec.mul_quant = a.net.mul_quant;
            let init = match a.init {
                InitArg::Uniform => WeightInit::UniformFanIn,
                InitArg::Zeros => WeightInit::Zeros,
            };
            build_network(&spec, init).map_err(input)?
        }
    };
    let frames: FrameFile = read_json(&a.input).map_err(input)?;
    let dataset: Vec<_> = frames.frames.iter().map(|f| quantize_frame(f, net.fmt())).collect();
    let run = infer(&net, &dataset, a.steps).map_err(input)?;
    let model = EnergyModel::default();
    let trace = run.trace;
    let mut energy = energy_from_trace(&trace, &model);
    energy.latency_us = latency_from_trace(&trace, &model, Schedule::FullyParallel).ok();
    let bias_events = trace.neurons_total;
    let input_events = trace.synapse_events - bias_events - trace.context_events;
    let outputs = run
        .outputs
        .iter()
        .map(|s| match &s.fused {
            Some(f) => f.iter().map(|v| v.to_f64()).collect(),
            None => s.outputs.iter().flatten().map(|v| v.to_f64()).collect(),
        })
        .collect();
    let report = SimulateReport {
        energy,
        bias_events,
        context_events: trace.context_events,
        input_events,
        input_energy_uj: model.events_to_uj(input_events),
        zero_skips: trace.zero_skips(),
        activity: trace.activity_fraction(),
        outputs,
        trace,
    };
    if let Some(dir) = out_dir(&a.out)? {
        write_json(&dir.join("simulate.json"), &report).map_err(input)?;
    }
    print_json(&report)
}

#[derive(Serialize)]
struct MacEnergy {
    mac_k: u64,
    energy_uj: f64,
    energy_uj_rounded: f64,
}

fn estimate_energy(a: EnergyArgs) -> CliResult {
    let model = EnergyModel::default();
    let dir = out_dir(&a.out)?;
    let mut any = false;
    let mut emit = |name: &str, value: serde_json::Value| -> CliResult {
        any = true;
        if let Some(dir) = &dir {
            write_json(&dir.join(format!("{name}.json")), &value).map_err(input)?;
        }
        print_json(&value)
    };
    let updates = a.training_updates.unwrap_or(1);
    if let Some(mac_k) = a.mac_k {
        let e = model.kilo_macs_to_uj(mac_k);
        let r = MacEnergy {
            mac_k,
            energy_uj: e,
            energy_uj_rounded: round_uj(e),
        };
        emit("mac_energy", serde_json::to_value(r).map_err(input)?)?;
    }
    if let Some(events) = a.events {
        let mut t = ActivityTrace::new();
        t.synapse_events = events;
        t.mac_total = events;
        let r = energy_from_trace(&t, &model).with_training_multiplier(updates);
        emit("event_energy", serde_json::to_value(r).map_err(input)?)?;
    }
    if let Some(path) = &a.trace {
        let t: ActivityTrace = read_json(path).map_err(input)?;
        let mut r = energy_from_trace(&t, &model).with_training_multiplier(updates);
        r.latency_us = latency_from_trace(&t, &model, Schedule::FullyParallel).ok();
        emit("trace_energy", serde_json::to_value(r).map_err(input)?)?;
    }
    if let (Some(base), Some(mcc)) = (a.baseline_uj, a.mcc_uj) {
        let r = sparsity_saving(base, mcc, a.activity, a.dense_activity)
            .map_err(input)?
            .with_training_multiplier(updates);
        emit("saving", serde_json::to_value(r).map_err(input)?)?;
    }
    if !any {
        return Err(CliError::Input(
            "nothing to estimate: pass --mac-k, --events, --trace or --baseline-uj with --mcc-uj".into(),
        ));
    }
    Ok(())
}

fn toy_config(toy: &ToyArgs, net: &NetArgs) -> Result<ToyTaskConfig, CliError> {
    let mut cfg: ToyTaskConfig = match &toy.config {
        Some(path) => read_json(path).map_err(input)?,
        None => ToyTaskConfig::default(),
    };
    if let Some(seed) = net.seed {
        cfg.net_seed = seed;
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(g) = toy.gamma {
        cfg.train.loss = LossConfigL2 { gamma: g, ..cfg.train.loss };
    }
    if let Some(e) = toy.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.loss.validate().map_err(input)?;
    Ok(cfg)
}

fn transfer_for(toy: &ToyArgs, mode: NetMode) -> TransferMode {
    match (mode, toy.transfer) {
        (NetMode::Baseline, _) => TransferMode::point(),
        (NetMode::Mcc, Some(TransferArg::Relu6)) => TransferMode::relu6(),
        (NetMode::Mcc, Some(TransferArg::Hgf)) => default_transfer(NetMode::Mcc),
        (NetMode::Mcc, None) => default_transfer(NetMode::Mcc),
    }
}

struct Trained {
    cfg: ToyTaskConfig,
    result: ccpu::toytrain::TrainResult,
    train: ccpu::toytrain::Dataset,
    test: ccpu::toytrain::Dataset,
}

fn train(toy: &ToyArgs, net: &NetArgs, default: TransferArg) -> Result<Trained, CliError> {
    let cfg = toy_config(toy, net)?;
    let toy = ToyArgs {
        transfer: toy.transfer.or(Some(default)),
        ..toy.clone()
    };
    let (train, test) = cfg.split().map_err(input)?;
    let float = ccpu::toytrain::FloatNet::new(
        &NetworkSpec {
            qformat: net.qformat,
            mul_quant: net.mul_quant,
            ..cfg.network(net.mode)
        },
        transfer_for(&toy, net.mode),
    )
    .map_err(input)?;
    let result = ccpu::toytrain::train_supervised(float, &train, &cfg.train).map_err(input)?;
    Ok(Trained {
        cfg,
        result,
        train,
        test,
    })
}

fn export(t: &Trained, fmt: QFormat, compensate: bool) -> Result<NetworkInstance, CliError> {
    let net = &t.result.net;
    if compensate {
        net.export_quantized_compensated(fmt, &t.train).map_err(input)
    } else {
        net.export_quantized(fmt).map_err(input)
    }
}

fn quantize_sweep(a: SweepArgs) -> CliResult {
    let dir = out_dir(&a.out)?;
    let t = train(&a.toy, &a.net, TransferArg::Relu6)?;
    let rows = if a.compensate {
        let mut rows = Vec::new();
        for &w in &a.widths {
            if w < 4 {
                return Err(CliError::Input(format!("width {w} is below 4 bits")));
            }
            let fmt = QFormat::with_three_int_bits(w).map_err(input)?;
            let e = evaluate_fixed(&export(&t, fmt, true)?, &t.test).map_err(input)?;
            rows.push(ccpu::toytrain::SweepRow {
                width: w,
                mse: e.mse,
                activity: e.activity,
            });
        }
        rows
    } else {
        bitwidth_sweep(&t.result.net, &t.test, &a.widths).map_err(input)?
    };
    if let Some(dir) = &dir {
        write_csv(&dir.join("sweep.csv"), &rows, a.out.deterministic).map_err(input)?;
        write_csv(&dir.join("curve.csv"), &t.result.curve, a.out.deterministic).map_err(input)?;
    }
    println!("width,mse,activity");
    for r in &rows {
        println!("{},{:.6},{:.4}", r.width, r.mse, r.activity);
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    config: ToyTaskConfig,
    mode: NetMode,
    transfer: ccpu::neuron::TransferKind,
    float_test_mse: f64,
    float_test_activity: f64,
    fixed_test_mse: f64,
    fixed_test_activity: f64,
    qformat: QFormat,
}

fn train_toy(a: TrainArgs) -> CliResult {
    let dir = out_dir(&a.out)?;
    let t = train(&a.toy, &a.net, TransferArg::Hgf)?;
    let float = evaluate_float(&t.result.net, &t.test).map_err(input)?;
    let fixed_net = export(&t, a.net.qformat, false)?;
    let fixed = evaluate_fixed(&fixed_net, &t.test).map_err(input)?;
    let summary = TrainSummary {
        config: t.cfg,
        mode: a.net.mode,
        transfer: t.result.net.transfer().kind,
        float_test_mse: float.mse,
        float_test_activity: float.activity,
        fixed_test_mse: fixed.mse,
        fixed_test_activity: fixed.activity,
        qformat: a.net.qformat,
    };
    if let Some(dir) = &dir {
        write_csv(&dir.join("curve.csv"), &t.result.curve, a.out.deterministic).map_err(input)?;
        write_json(&dir.join("summary.json"), &summary).map_err(input)?;
        save_model(&fixed_net, &dir.join("model.json")).map_err(input)?;
    }
    print_json(&summary)
}

fn resilience(a: ResilienceArgs) -> CliResult {
    let dir = out_dir(&a.out)?;
    let (net, test) = match &a.model {
        Some(path) => {
            let cfg = toy_config(&a.toy, &a.net)?;
            let (_, test) = cfg.split().map_err(input)?;
            (load_model(path).map_err(input)?, test)
        }
        None => {
            let t = train(&a.toy, &a.net, TransferArg::Relu6)?;
            (export(&t, a.net.qformat, false)?, t.test)
        }
    };
    let seeds: Vec<u64> = (0..a.kill_seeds).collect();
    let rows = resilience_experiment(&net, &test, &a.fractions, &seeds).map_err(input)?;
    if let Some(dir) = &dir {
        write_csv(&dir.join("resilience.csv"), &rows, a.out.deterministic).map_err(input)?;
    }
    println!("fraction,mse_mean,mse_sd,activity_mean,activity_sd,relative_mse_increase");
    for r in &rows {
        println!(
            "{},{:.6},{:.6},{:.4},{:.4},{:.4}",
            r.fraction, r.mse_mean, r.mse_sd, r.activity_mean, r.activity_sd, r.relative_mse_increase
        );
    }
    Ok(())
}

fn check_tables(a: CheckArgs) -> CliResult {
    if let Some(dir) = &a.write {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        write_goldens(dir).map_err(input)?;
    }
    let dir = a.golden.unwrap_or_else(shipped_dir);
    let violations = check_golden_dir(Path::new(&dir), &EnergyModel::default()).map_err(input)?;
    if violations.is_empty() {
        println!("all table checks passed ({})", dir.display());
        return Ok(());
    }
    for v in &violations {
        println!("FAIL {v}");
    }
    Err(CliError::Validation(format!("{} table check(s) failed", violations.len())))
}
