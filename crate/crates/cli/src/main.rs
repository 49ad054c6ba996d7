//! `hybridgate`: simulate circuits, sweep MIS delay curves, characterize
//! NOR gates and probe continuity from the command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use hybridgate::characterize::{characterize_gate, CharacteristicDelays, CharacterizeError};
use hybridgate::circuit::{
    build_execution_with, validate, EngineConfig, EngineError, Execution, Netlist, NetlistError, NetlistFile,
    VertexKind,
};
use hybridgate::delay::{sweep_curve, DelayError, Edge};
use hybridgate::gate_core::{continuity_bound, continuity_probe, GateError};
use hybridgate::gate_models::{NorAdvancedParams, ParamsFile};
use hybridgate::signals::{l1_distance, pure_delay_shift, BinarySignal, SignalError, StimulusFile, Transition};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Read { .. } | CliError::Write { .. } | CliError::Parse { .. } => 2,
            CliError::Invalid(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::EventLimit(_) | EngineError::Gate { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<NetlistError> for CliError {
    fn from(e: NetlistError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<DelayError> for CliError {
    fn from(e: DelayError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<CharacterizeError> for CliError {
    fn from(e: CharacterizeError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<GateError> for CliError {
    fn from(e: GateError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "hybridgate", version, about = "Dynamic timing analysis with digitized hybrid gate models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EdgeArg {
    RisingOutput,
    FallingOutput,
}

impl From<EdgeArg> for Edge {
    fn from(e: EdgeArg) -> Self {
        match e {
            EdgeArg::RisingOutput => Edge::RisingOutput,
            EdgeArg::FallingOutput => Edge::FallingOutput,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a circuit on input stimuli and write its transition trace.
    Simulate {
        netlist: PathBuf,
        stimuli: PathBuf,
        /// Trace CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a value change dump.
        #[arg(long)]
        vcd: Option<PathBuf>,
        /// Overrides the horizon of the stimulus file [s].
        #[arg(long, allow_hyphen_values = true)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = EngineConfig::default().max_events)]
        max_events: usize,
    },
    /// Tabulate the MIS delay of an advanced NOR over input separations.
    Sweep {
        params: PathBuf,
        #[arg(long, value_enum)]
        edge: EdgeArg,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        steps: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive advanced NOR parameters from six characteristic delays.
    Characterize {
        delays: PathBuf,
        /// Load capacitance [F].
        #[arg(long)]
        capacitance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Relative tolerance for reproducing the input delays.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Compare gate responses under nominal and perturbed stimuli.
    Continuity {
        netlist: PathBuf,
        stimuli: PathBuf,
        perturbation: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        horizon: Option<f64>,
        /// Slack allowed on the analog bound before a row is flagged.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
        /// Sample points for the analog sup-distance.
        #[arg(long, default_value_t = 2000)]
        grid: usize,
    },
}

/// How the stimulus of one input port is perturbed, with one report block per `eps`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Perturbation {
    /// Delays every transition of `port` by `eps`.
    Shift { port: String, eps: Vec<f64> },
    /// Inverts `port` on `[at, at + eps)`.
    Pulse { port: String, at: f64, eps: Vec<f64> },
}

impl Perturbation {
    fn port(&self) -> &str {
        match self {
            Perturbation::Shift { port, .. } | Perturbation::Pulse { port, .. } => port,
        }
    }

    fn eps(&self) -> &[f64] {
        match self {
            Perturbation::Shift { eps, .. } | Perturbation::Pulse { eps, .. } => eps,
        }
    }

    fn apply(&self, s: &BinarySignal, eps: f64) -> Result<BinarySignal, CliError> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(CliError::Invalid(format!("perturbation eps must be finite and nonnegative, got {eps}")));
        }
        match self {
            Perturbation::Shift { .. } => Ok(pure_delay_shift(s, eps)?),
            Perturbation::Pulse { at, .. } => Ok(invert_window(s, *at, *at + eps)?),
        }
    }
}

/// `s` with its value flipped on `[a, b)`.
fn invert_window(s: &BinarySignal, a: f64, b: f64) -> Result<BinarySignal, SignalError> {
    let inside = |t: f64| a <= t && t < b;
    let mut times: Vec<f64> = s.transitions().iter().map(|t| t.time).collect();
    times.extend([a, b].into_iter().filter(|&t| t < s.horizon()));
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut value = s.initial();
    let mut out = Vec::new();
    for t in times {
        let v = s.value_at(t) ^ inside(t);
        if v != value {
            out.push(Transition::new(t, v));
            value = v;
        }
    }
    BinarySignal::new(s.initial(), out, s.horizon())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Write { path: path.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_netlist(path: &Path) -> Result<Netlist, CliError> {
    let file: NetlistFile = parse(path)?;
    let net = Netlist::from_file(&file)?;
    let diagnostics = validate(&net);
    if !diagnostics.is_empty() {
        return Err(EngineError::Invalid(diagnostics).into());
    }
    Ok(net)
}

fn load_stimuli(path: &Path, horizon: Option<f64>) -> Result<(BTreeMap<String, BinarySignal>, f64), CliError> {
    let mut file: StimulusFile = parse(path)?;
    if let Some(h) = horizon {
        file.horizon = h;
    }
    if !(file.horizon.is_finite() && file.horizon > 0.0) {
        return Err(CliError::Invalid(format!("horizon must be positive and finite, got {}", file.horizon)));
    }
    Ok((file.to_signals()?, file.horizon))
}

fn load_nor_params(path: &Path) -> Result<NorAdvancedParams, CliError> {
    let value: serde_json::Value = parse(path)?;
    fn parse_as<T: for<'de> Deserialize<'de>>(path: &Path, v: serde_json::Value) -> Result<T, CliError> {
        serde_json::from_value(v).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
    }
    let params: NorAdvancedParams = if value.get("model").is_some() {
        let file: ParamsFile = parse_as(path, value)?;
        if file.model != "nor_advanced" {
            return Err(CliError::Invalid(format!("sweeps need a nor_advanced model, got {:?}", file.model)));
        }
        parse_as(path, file.params)?
    } else {
        parse_as(path, value)?
    };
    params.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(params)
}

fn simulate(
    netlist: &Path,
    stimuli: &Path,
    out: Option<&Path>,
    vcd: Option<&Path>,
    horizon: Option<f64>,
    max_events: usize,
) -> Result<(), CliError> {
    let net = load_netlist(netlist)?;
    let (signals, horizon) = load_stimuli(stimuli, horizon)?;
    let exec = build_execution_with(&net, &signals, horizon, EngineConfig { max_events })?;
    emit(out, &exec.to_csv())?;
    if let Some(path) = vcd {
        fs::write(path, exec.to_vcd()).map_err(|source| CliError::Write { path: path.to_path_buf(), source })?;
    }
    Ok(())
}

fn sweep(params: &Path, edge: Edge, from: f64, to: f64, steps: usize, out: Option<&Path>) -> Result<(), CliError> {
    let p = load_nor_params(params)?;
    let curve = sweep_curve(edge, from, to, steps, &p)?;
    emit(out, &curve.to_csv())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn characterize(delays: &Path, capacitance: f64, out: Option<&Path>, tol: f64) -> Result<(), CliError> {
    let d: CharacteristicDelays = parse(delays)?;
    let ch = characterize_gate(&d, capacitance)?;
    if ch.sign_changes > 1 {
        eprintln!(
            "warning: resistance equation has {} sign changes; the smallest root was taken",
            ch.sign_changes
        );
    }
    let back = CharacteristicDelays::from_params(&ch.params)?;
    let pairs = [
        ("fall_minus_inf", back.fall_minus_inf, d.fall_minus_inf),
        ("fall_zero", back.fall_zero, d.fall_zero),
        ("fall_plus_inf", back.fall_plus_inf, d.fall_plus_inf),
        ("rise_minus_inf", back.rise_minus_inf, d.rise_minus_inf),
        ("rise_zero", back.rise_zero, d.rise_zero),
        ("rise_plus_inf", back.rise_plus_inf, d.rise_plus_inf),
    ];
    for (name, got, want) in pairs {
        if !(rel(got, want) <= tol) {
            return Err(CliError::Invalid(format!(
                "characterized gate gives {name} = {got:e} s instead of {want:e} s (tolerance {tol:e})"
            )));
        }
    }
    let file = ParamsFile {
        model: "nor_advanced".to_string(),
        params: serde_json::to_value(&ch.params).expect("parameters serialize"),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("parameters serialize");
    text.push('\n');
    emit(out, &text)
}

fn continuity(
    netlist: &Path,
    stimuli: &Path,
    perturbation: &Path,
    out: Option<&Path>,
    horizon: Option<f64>,
    tol: f64,
    grid: usize,
) -> Result<(), CliError> {
    let net = load_netlist(netlist)?;
    let (signals, horizon) = load_stimuli(stimuli, horizon)?;
    let pert: Perturbation = parse(perturbation)?;
    let port = pert.port();
    let nominal_port = signals
        .get(port)
        .ok_or_else(|| CliError::Invalid(format!("perturbation names {port:?}, which has no stimulus")))?;
    let config = EngineConfig::default();
    let nominal = build_execution_with(&net, &signals, horizon, config)?;

    let mut report = String::from("eps_s,vertex,d_in_s,d_out_s,sup_analog_v,bound_v,within_bound\n");
    for &eps in pert.eps() {
        let mut perturbed_signals = signals.clone();
        let moved = pert.apply(nominal_port, eps)?;
        let d_port = l1_distance(nominal_port, &moved)?;
        perturbed_signals.insert(port.to_string(), moved);
        let perturbed = build_execution_with(&net, &perturbed_signals, horizon, config)?;
        write_rows(&mut report, &net, &nominal, &perturbed, eps, d_port, horizon, tol, grid)?;
    }
    emit(out, &report)
}

/// One row per gate (mode distance, analog bound) and per output port.
#[allow(clippy::too_many_arguments)]
fn write_rows(
    report: &mut String,
    net: &Netlist,
    nominal: &Execution,
    perturbed: &Execution,
    eps: f64,
    d_port: f64,
    horizon: f64,
    tol: f64,
    grid: usize,
) -> Result<(), CliError> {
    for (v, vertex) in net.vertices.iter().enumerate() {
        match &vertex.kind {
            VertexKind::Gate { gate, .. } => {
                let drivers: Vec<usize> = net.drivers(v).into_iter().flatten().collect();
                let a: Vec<BinarySignal> = drivers.iter().map(|&u| nominal.signal(u)).collect();
                let b: Vec<BinarySignal> = drivers.iter().map(|&u| perturbed.signal(u)).collect();
                let g = gate.as_dyn();
                let probe = continuity_probe(g, &a, &b, grid)?;
                let bound = continuity_bound(g, horizon, probe.d_in);
                let ok = probe.sup_analog <= bound + tol;
                let _ = writeln!(
                    report,
                    "{eps:.16e},{},{:.16e},{:.16e},{:.16e},{bound:.16e},{}",
                    vertex.id, probe.d_in, probe.d_out, probe.sup_analog, ok as u8
                );
            }
            VertexKind::Output => {
                let d_out = l1_distance(&nominal.signal(v), &perturbed.signal(v))?;
                let _ = writeln!(report, "{eps:.16e},{},{d_port:.16e},{d_out:.16e},,,", vertex.id);
            }
            _ => {}
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { netlist, stimuli, out, vcd, horizon, max_events } => {
            simulate(&netlist, &stimuli, out.as_deref(), vcd.as_deref(), horizon, max_events)
        }
        Command::Sweep { params, edge, from, to, steps, out } => {
            let steps = usize::try_from(steps).map_err(|_| CliError::Usage(format!("too many steps: {steps}")))?;
            sweep(&params, edge.into(), from, to, steps, out.as_deref())
        }
        Command::Characterize { delays, capacitance, out, tol } => {
            characterize(&delays, capacitance, out.as_deref(), tol)
        }
        Command::Continuity { netlist, stimuli, perturbation, out, horizon, tol, grid } => {
            continuity(&netlist, &stimuli, &perturbation, out.as_deref(), horizon, tol, grid)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
