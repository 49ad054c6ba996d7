//! Circuits of hybrid gates: netlists, event-driven executions with causal
//! depths, and k-unrollings of feedback circuits.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate_core::{crossing_tolerance, gate_response, GateError, HybridGate, Mode, ModeTrajectory};
use crate::gate_models::{Gate, ModelError};
use crate::signals::{BinarySignal, SignalError, Transition};

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("netlist is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate vertex id {0:?}")]
    DuplicateId(String),
    #[error("edge refers to unknown vertex {0:?}")]
    UnknownVertex(String),
    #[error("vertex {id:?}: {source}")]
    Model { id: String, source: ModelError },
    #[error("vertex {0:?} is a gate but has no model")]
    MissingModel(String),
    #[error("vertex {0:?} is a constant but has no value")]
    MissingValue(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("circuit is invalid:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("no stimulus for input port {0:?}")]
    MissingStimulus(String),
    #[error("stimulus {0:?} does not name an input port")]
    UnknownStimulus(String),
    #[error("stimulus horizon {0} differs from simulation horizon {1}")]
    HorizonMismatch(f64, f64),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("gate {id:?}: {source}")]
    Gate { id: String, source: GateError },
    #[error("event limit of {0} exceeded")]
    EventLimit(usize),
    #[error("unknown vertex {0:?}")]
    UnknownVertex(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

mod bit_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|b| b as u8).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        match Option::<u8>::deserialize(d)? {
            None => Ok(None),
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            Some(other) => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKindSpec {
    Input,
    Output,
    Gate,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexSpec {
    pub id: String,
    pub kind: VertexKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
    /// Digital output at `0-` for gates; derived from the inputs when absent.
    #[serde(default, with = "bit_opt", skip_serializing_if = "Option::is_none")]
    pub initial_output: Option<bool>,
    /// Output value of a constant vertex.
    #[serde(default, with = "bit_opt", skip_serializing_if = "Option::is_none")]
    pub value: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub input_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistFile {
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VertexKind {
    Input,
    Output,
    Gate { gate: Gate, initial_output: Option<bool> },
    /// Holds `value` from time 0 on; `initial` is its value at `0-`.
    Constant { value: bool, initial: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
}

impl Vertex {
    pub fn gate(&self) -> Option<&dyn HybridGate> {
        match &self.kind {
            VertexKind::Gate { gate, .. } => Some(gate.as_dyn()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connection {
    pub from: usize,
    pub to: usize,
    pub input_index: usize,
}

/// Directed circuit graph. Vertices are referred to by their position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Netlist {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Connection>,
}

impl Netlist {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, id: &str, kind: VertexKind) -> usize {
        self.vertices.push(Vertex { id: id.to_string(), kind });
        self.vertices.len() - 1
    }

    pub fn add_input(&mut self, id: &str) -> usize {
        self.push(id, VertexKind::Input)
    }

    pub fn add_output(&mut self, id: &str) -> usize {
        self.push(id, VertexKind::Output)
    }

    pub fn add_gate(&mut self, id: &str, gate: Gate) -> usize {
        self.push(id, VertexKind::Gate { gate, initial_output: None })
    }

    pub fn add_constant(&mut self, id: &str, value: bool, initial: bool) -> usize {
        self.push(id, VertexKind::Constant { value, initial })
    }

    pub fn set_initial_output(&mut self, v: usize, value: bool) {
        if let VertexKind::Gate { initial_output, .. } = &mut self.vertices[v].kind {
            *initial_output = Some(value);
        }
    }

    pub fn connect(&mut self, from: usize, to: usize, input_index: usize) {
        self.edges.push(Connection { from, to, input_index });
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v.id == id)
    }

    pub fn from_file(file: &NetlistFile) -> Result<Self, NetlistError> {
        let mut net = Netlist::new();
        let mut ids = HashMap::new();
        for spec in &file.vertices {
            if ids.insert(spec.id.clone(), net.vertices.len()).is_some() {
                return Err(NetlistError::DuplicateId(spec.id.clone()));
            }
            let kind = match spec.kind {
                VertexKindSpec::Input => VertexKind::Input,
                VertexKindSpec::Output => VertexKind::Output,
                VertexKindSpec::Constant => {
                    let value = spec.value.ok_or_else(|| NetlistError::MissingValue(spec.id.clone()))?;
                    VertexKind::Constant { value, initial: spec.initial_output.unwrap_or(value) }
                }
                VertexKindSpec::Gate => {
                    let model = spec.model.as_deref().ok_or_else(|| NetlistError::MissingModel(spec.id.clone()))?;
                    let params = spec.params.clone().unwrap_or(serde_json::Value::Null);
                    let gate = Gate::from_json(model, &params)
                        .map_err(|source| NetlistError::Model { id: spec.id.clone(), source })?;
                    VertexKind::Gate { gate, initial_output: spec.initial_output }
                }
            };
            net.push(&spec.id, kind);
        }
        for e in &file.edges {
            let from = *ids.get(&e.from).ok_or_else(|| NetlistError::UnknownVertex(e.from.clone()))?;
            let to = *ids.get(&e.to).ok_or_else(|| NetlistError::UnknownVertex(e.to.clone()))?;
            net.connect(from, to, e.input_index);
        }
        Ok(net)
    }

    pub fn from_json_str(text: &str) -> Result<Self, NetlistError> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    /// Driver of each input of vertex `v`, by input index.
    pub fn drivers(&self, v: usize) -> Vec<Option<usize>> {
        let n = match &self.vertices[v].kind {
            VertexKind::Gate { gate, .. } => gate.as_dyn().input_count(),
            VertexKind::Output => 1,
            _ => 0,
        };
        let mut out = vec![None; n];
        for e in self.edges.iter().filter(|e| e.to == v) {
            if let Some(slot) = out.get_mut(e.input_index) {
                *slot = Some(e.from);
            }
        }
        out
    }

    /// Minimal pure delay over all gate inputs.
    pub fn min_pure_delay(&self) -> f64 {
        self.vertices
            .iter()
            .filter_map(|v| v.gate())
            .flat_map(|g| (0..g.input_count()).map(move |j| g.pure_delay(j)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    /// Input ports have no incoming edges.
    InputHasNoFanin,
    /// Output ports have exactly one incoming and no outgoing edge.
    OutputSingleDriver,
    /// Every gate input is fed by exactly one edge.
    GateInputsDriven,
    /// Every pure delay is positive.
    StrictCausality,
    /// Constants have no incoming edges.
    ConstantHasNoFanin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.rule, self.message)
    }
}

/// Lists every violated well-formedness constraint; empty iff the circuit is valid.
pub fn validate(net: &Netlist) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |rule, message: String| out.push(Diagnostic { rule, message });
    for (v, vertex) in net.vertices.iter().enumerate() {
        let incoming: Vec<&Connection> = net.edges.iter().filter(|e| e.to == v).collect();
        let outgoing = net.edges.iter().filter(|e| e.from == v).count();
        let id = &vertex.id;
        match &vertex.kind {
            VertexKind::Input => {
                if !incoming.is_empty() {
                    diag(Rule::InputHasNoFanin, format!("input port {id:?} has {} incoming edges", incoming.len()));
                }
            }
            VertexKind::Constant { .. } => {
                if !incoming.is_empty() {
                    diag(Rule::ConstantHasNoFanin, format!("constant {id:?} has incoming edges"));
                }
            }
            VertexKind::Output => {
                if incoming.len() != 1 {
                    diag(Rule::OutputSingleDriver, format!("output port {id:?} has {} incoming edges", incoming.len()));
                } else if incoming[0].input_index != 0 {
                    diag(Rule::OutputSingleDriver, format!("output port {id:?} is fed at input index {}", incoming[0].input_index));
                }
                if outgoing != 0 {
                    diag(Rule::OutputSingleDriver, format!("output port {id:?} has {outgoing} outgoing edges"));
                }
            }
            VertexKind::Gate { gate, .. } => {
                let g = gate.as_dyn();
                for j in 0..g.input_count() {
                    let n = incoming.iter().filter(|e| e.input_index == j).count();
                    if n != 1 {
                        diag(Rule::GateInputsDriven, format!("gate {id:?} input {j} is fed by {n} edges"));
                    }
                    let d = g.pure_delay(j);
                    if !(d > 0.0) {
                        diag(Rule::StrictCausality, format!("gate {id:?} input {j} has pure delay {d}, must be positive"));
                    }
                }
                for e in incoming.iter().filter(|e| e.input_index >= g.input_count()) {
                    diag(Rule::GateInputsDriven, format!("gate {id:?} has no input {}", e.input_index));
                }
            }
        }
    }
    out
}

/// One recorded transition of an execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceTransition {
    pub time: f64,
    pub value: bool,
    pub causal_depth: u32,
    /// The input transition whose arrival started the mode that produced
    /// this transition: `(driver vertex, time at the driver)`.
    pub cause: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexTrace {
    pub initial: bool,
    pub transitions: Vec<TraceTransition>,
}

/// Binary signals of every vertex on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub ids: Vec<String>,
    pub traces: Vec<VertexTrace>,
    pub horizon: f64,
}

impl Execution {
    pub fn signal(&self, v: usize) -> BinarySignal {
        let t = &self.traces[v];
        let trs = t.transitions.iter().map(|x| Transition::new(x.time, x.value)).collect();
        BinarySignal::new(t.initial, trs, self.horizon).expect("engine produces well-formed signals")
    }

    pub fn signal_by_id(&self, id: &str) -> Option<BinarySignal> {
        self.ids.iter().position(|x| x == id).map(|v| self.signal(v))
    }

    /// All transitions as `(time, vertex id, value, depth)` sorted by time, then vertex id.
    pub fn rows(&self) -> Vec<(f64, &str, bool, u32)> {
        let mut rows: Vec<(f64, &str, bool, u32)> = self
            .traces
            .iter()
            .enumerate()
            .flat_map(|(v, t)| {
                t.transitions.iter().map(move |x| (x.time, self.ids[v].as_str(), x.value, x.causal_depth))
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,vertex,value,causal_depth\n");
        for (t, id, v, d) in self.rows() {
            let _ = writeln!(out, "{t:.16e},{id},{},{d}", v as u8);
        }
        out
    }

    /// Value change dump with a 1 fs timescale.
    pub fn to_vcd(&self) -> String {
        let codes: Vec<String> = (0..self.ids.len()).map(vcd_code).collect();
        let mut out = String::new();
        out.push_str("$timescale 1fs $end\n$scope module circuit $end\n");
        for (id, code) in self.ids.iter().zip(&codes) {
            let name: String = id.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
            let _ = writeln!(out, "$var wire 1 {code} {name} $end");
        }
        out.push_str("$upscope $end\n$enddefinitions $end\n$dumpvars\n");
        for (t, code) in self.traces.iter().zip(&codes) {
            let _ = writeln!(out, "{}{code}", t.initial as u8);
        }
        out.push_str("$end\n");
        let mut changes: Vec<(u64, usize, bool)> = self
            .traces
            .iter()
            .enumerate()
            .flat_map(|(v, t)| t.transitions.iter().map(move |x| ((x.time * 1e15).round() as u64, v, x.value)))
            .collect();
        changes.sort_by_key(|&(t, v, _)| (t, v));
        let mut current = None;
        for (t, v, value) in changes {
            if current != Some(t) {
                let _ = writeln!(out, "#{t}");
                current = Some(t);
            }
            let _ = writeln!(out, "{}{}", value as u8, codes[v]);
        }
        out
    }

    /// Causal depths of every vertex's transitions, in time order.
    pub fn causal_depths(&self) -> BTreeMap<String, Vec<u32>> {
        self.ids
            .iter()
            .zip(&self.traces)
            .map(|(id, t)| (id.clone(), t.transitions.iter().map(|x| x.causal_depth).collect()))
            .collect()
    }
}

fn vcd_code(mut n: usize) -> String {
    let mut s = String::new();
    loop {
        s.push((b'!' + (n % 94) as u8) as char);
        n /= 94;
        if n == 0 {
            break;
        }
        n -= 1;
    }
    s
}

pub fn causal_depths(execution: &Execution) -> BTreeMap<String, Vec<u32>> {
    execution.causal_depths()
}

/// Digital output of every vertex at `0-`. Gates without an explicit value
/// settle by repeated Boolean evaluation in vertex order; in a circuit
/// without a stable assignment (e.g. an odd ring) the last round is used.
pub fn initial_values(net: &Netlist, port_initials: &BTreeMap<String, bool>) -> Vec<bool> {
    let mut values: Vec<bool> = net
        .vertices
        .iter()
        .map(|v| match &v.kind {
            VertexKind::Input => port_initials.get(&v.id).copied().unwrap_or(false),
            VertexKind::Constant { initial, .. } => *initial,
            VertexKind::Gate { initial_output, .. } => initial_output.unwrap_or(false),
            VertexKind::Output => false,
        })
        .collect();
    let drivers: Vec<Vec<Option<usize>>> = (0..net.vertices.len()).map(|v| net.drivers(v)).collect();
    for _ in 0..=net.vertices.len() {
        let mut changed = false;
        for (v, vertex) in net.vertices.iter().enumerate() {
            let new = match &vertex.kind {
                VertexKind::Gate { gate, initial_output: None } => {
                    let ins: Vec<bool> = drivers[v].iter().map(|d| d.is_some_and(|d| values[d])).collect();
                    gate.as_dyn().boolean(&ins)
                }
                VertexKind::Output => drivers[v][0].is_some_and(|d| values[d]),
                _ => continue,
            };
            if new != values[v] {
                values[v] = new;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    values
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub max_events: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { max_events: 10_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    /// A driver transition reaching gate input `input` after its pure delay.
    Arrival { gate: usize, input: usize, value: bool, depth: u32, driver: usize },
    /// A threshold crossing of a gate's current trajectory piece.
    Crossing { gate: usize, value: bool, generation: u64 },
    /// A stimulus transition at an input port.
    Port { vertex: usize, value: bool },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    /// Time of the causing transition at the driver, for arrivals.
    origin: f64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.kind.cmp(&other.kind))
            .then_with(|| self.origin.total_cmp(&other.origin))
    }
}

struct GateState {
    piece: ModeTrajectory,
    level: bool,
    generation: u64,
    mode_depth: u32,
    mode_cause: Option<(usize, f64)>,
    input_depth: Vec<Option<u32>>,
}

/// Builds the unique execution of a valid circuit for the given input-port stimuli.
pub fn build_execution(
    net: &Netlist,
    stimuli: &BTreeMap<String, BinarySignal>,
    horizon: f64,
) -> Result<Execution, EngineError> {
    build_execution_with(net, stimuli, horizon, EngineConfig::default())
}

pub fn build_execution_with(
    net: &Netlist,
    stimuli: &BTreeMap<String, BinarySignal>,
    horizon: f64,
    config: EngineConfig,
) -> Result<Execution, EngineError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(EngineError::BadHorizon(horizon));
    }
    let diags = validate(net);
    if !diags.is_empty() {
        return Err(EngineError::Invalid(diags));
    }
    for (name, s) in stimuli {
        match net.index_of(name) {
            Some(v) if matches!(net.vertices[v].kind, VertexKind::Input) => {}
            _ => return Err(EngineError::UnknownStimulus(name.clone())),
        }
        if s.horizon() != horizon {
            return Err(EngineError::HorizonMismatch(s.horizon(), horizon));
        }
    }
    let port_initials: BTreeMap<String, bool> =
        stimuli.iter().map(|(k, s)| (k.clone(), s.initial())).collect();
    let initial = initial_values(net, &port_initials);
    let n = net.vertices.len();
    let drivers: Vec<Vec<Option<usize>>> = (0..n).map(|v| net.drivers(v)).collect();
    let mut fanout: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for e in &net.edges {
        fanout[e.from].push((e.to, e.input_index));
    }
    let tol = crossing_tolerance(horizon);

    let mut traces: Vec<VertexTrace> =
        initial.iter().map(|&b| VertexTrace { initial: b, transitions: Vec::new() }).collect();
    let mut queue: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
    let mut gates: Vec<Option<GateState>> = Vec::with_capacity(n);

    for (v, vertex) in net.vertices.iter().enumerate() {
        match &vertex.kind {
            VertexKind::Input => {
                let s = stimuli.get(&vertex.id).ok_or_else(|| EngineError::MissingStimulus(vertex.id.clone()))?;
                for tr in s.transitions() {
                    queue.push(Reverse(Event {
                        time: tr.time,
                        kind: EventKind::Port { vertex: v, value: tr.value },
                        origin: tr.time,
                    }));
                }
                gates.push(None);
            }
            VertexKind::Constant { value, initial } => {
                if value != initial {
                    queue.push(Reverse(Event { time: 0.0, kind: EventKind::Port { vertex: v, value: *value }, origin: 0.0 }));
                }
                gates.push(None);
            }
            VertexKind::Output => gates.push(None),
            VertexKind::Gate { gate, .. } => {
                let g = gate.as_dyn();
                let ins: Vec<bool> = drivers[v].iter().map(|d| initial[d.expect("validated")]).collect();
                let mode = Mode::initial(g, ins);
                let x0 = g.steady_state(&mode);
                let piece = g
                    .piece(mode, 0.0, &x0)
                    .map_err(|source| EngineError::Gate { id: vertex.id.clone(), source })?;
                gates.push(Some(GateState {
                    piece,
                    level: initial[v],
                    generation: 0,
                    mode_depth: 0,
                    mode_cause: None,
                    input_depth: vec![None; g.input_count()],
                }));
            }
        }
    }

    // Output changes decided within one batch: vertex -> (value, depth, cause).
    type Commit = BTreeMap<usize, (bool, u32, Option<(usize, f64)>)>;

    // Enters a fresh piece at time t: returns the digital value right after t
    // and schedules the later crossings.
    let enter_piece = |v: usize,
                           st: &mut GateState,
                           t: f64,
                           queue: &mut BinaryHeap<Reverse<Event>>,
                           commits: &mut Commit|
     -> Result<(), EngineError> {
        let xi = net.vertices[v].gate().expect("gate").threshold();
        let mut level = st.level;
        let mut apply = |value: bool| level = value;
        apply(st.piece.entry_state[0] > xi);
        let crossings = st
            .piece
            .crossings(xi, horizon, tol)
            .map_err(|source| EngineError::Gate { id: net.vertices[v].id.clone(), source })?;
        for (tc, value) in crossings {
            if tc <= t {
                apply(value);
            } else if tc <= horizon {
                queue.push(Reverse(Event {
                    time: tc,
                    kind: EventKind::Crossing { gate: v, value, generation: st.generation },
                    origin: tc,
                }));
            }
        }
        if level != st.level {
            st.level = level;
            commits.insert(v, (level, st.mode_depth, st.mode_cause));
        }
        Ok(())
    };

    let mut processed = 0usize;
    let mut commits: Commit = BTreeMap::new();
    // Initial pieces at time 0.
    for v in 0..n {
        if let Some(st) = gates[v].as_mut() {
            enter_piece(v, st, 0.0, &mut queue, &mut commits)?;
        }
    }
    let mut pending_commits = commits;

    loop {
        let t = match (queue.peek(), pending_commits.is_empty()) {
            (_, false) => 0.0,
            (Some(Reverse(e)), true) => e.time,
            (None, true) => break,
        };
        let mut batch = Vec::new();
        while let Some(Reverse(e)) = queue.peek() {
            if e.time != t {
                break;
            }
            batch.push(queue.pop().expect("peeked").0);
        }
        processed += batch.len();
        if processed > config.max_events {
            return Err(EngineError::EventLimit(config.max_events));
        }
        batch.sort();
        let mut commits = std::mem::take(&mut pending_commits);

        // Mode switches from arrivals, one per gate with the batch-final input vector.
        let mut switched: BTreeMap<usize, Vec<(usize, bool, u32, usize, f64)>> = BTreeMap::new();
        for e in &batch {
            if let EventKind::Arrival { gate, input, value, depth, driver } = e.kind {
                switched.entry(gate).or_default().push((input, value, depth, driver, e.origin));
            }
        }
        for (&v, arrivals) in &switched {
            let st = gates[v].as_mut().expect("arrival at gate");
            let g = net.vertices[v].gate().expect("gate");
            let mut inputs = st.piece.mode.inputs.clone();
            let mut last_change = st.piece.mode.last_change.clone();
            let mut cause = None;
            for &(j, value, depth, driver, origin) in arrivals {
                inputs[j] = value;
                last_change[j] = t;
                st.input_depth[j] = Some(depth);
                cause = Some((driver, origin));
            }
            let state = st.piece.eval(t);
            let mode = Mode::select(g, inputs, last_change);
            st.piece = g
                .piece(mode, t, &state)
                .map_err(|source| EngineError::Gate { id: net.vertices[v].id.clone(), source })?;
            st.generation += 1;
            st.mode_depth = 1 + st.input_depth.iter().flatten().copied().max().unwrap_or(0);
            st.mode_cause = cause;
            commits.remove(&v);
            let before = traces[v].transitions.last().map_or(traces[v].initial, |x| x.value);
            st.level = before;
            enter_piece(v, st, t, &mut queue, &mut commits)?;
        }

        for e in &batch {
            match e.kind {
                EventKind::Crossing { gate, value, generation } => {
                    let st = gates[gate].as_mut().expect("crossing at gate");
                    if st.generation != generation || switched.contains_key(&gate) {
                        continue;
                    }
                    if value != st.level {
                        st.level = value;
                        // A second change at the same instant cancels the first.
                        if commits.remove(&gate).is_none() {
                            commits.insert(gate, (value, st.mode_depth, st.mode_cause));
                        }
                    }
                }
                EventKind::Port { vertex, value } => {
                    commits.insert(vertex, (value, 0, None));
                }
                EventKind::Arrival { .. } => {}
            }
        }

        for (&v, &(value, depth, cause)) in &commits {
            let last = traces[v].transitions.last().map_or(traces[v].initial, |x| x.value);
            if last == value {
                continue;
            }
            let record = TraceTransition { time: t, value, causal_depth: depth, cause };
            traces[v].transitions.push(record);
            for &(to, j) in &fanout[v] {
                match &net.vertices[to].kind {
                    VertexKind::Output => traces[to].transitions.push(record),
                    VertexKind::Gate { gate, .. } => {
                        let arrival = t + gate.as_dyn().pure_delay(j);
                        if arrival <= horizon {
                            queue.push(Reverse(Event {
                                time: arrival,
                                kind: EventKind::Arrival { gate: to, input: j, value, depth, driver: v },
                                origin: t,
                            }));
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    Ok(Execution { ids: net.vertices.iter().map(|v| v.id.clone()).collect(), traces, horizon })
}

/// Re-evaluates every gate on its recorded input signals and compares with
/// its recorded output; returns the ids of gates that disagree.
pub fn check_gate_consistency(net: &Netlist, exec: &Execution) -> Result<Vec<String>, EngineError> {
    let mut bad = Vec::new();
    for (v, vertex) in net.vertices.iter().enumerate() {
        let Some(g) = vertex.gate() else { continue };
        let inputs: Vec<BinarySignal> =
            net.drivers(v).iter().map(|d| exec.signal(d.expect("validated"))).collect();
        let response =
            gate_response(g, &inputs).map_err(|source| EngineError::Gate { id: vertex.id.clone(), source })?;
        if !same_on_window(&response, &exec.signal(v)) {
            bad.push(vertex.id.clone());
        }
    }
    Ok(bad)
}

/// Equal as functions on `[0, T]`: same value at 0 and identical later transitions.
fn same_on_window(a: &BinarySignal, b: &BinarySignal) -> bool {
    let later = |s: &BinarySignal| -> Vec<(u64, bool)> {
        s.transitions().iter().filter(|t| t.time > 0.0).map(|t| (t.time.to_bits(), t.value)).collect()
    };
    a.value_at(0.0) == b.value_at(0.0) && later(a) == later(b)
}

/// Acyclic unrolling from one sink, with z-values and the original vertex of every copy.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledCircuit {
    pub netlist: Netlist,
    /// Distance from the nearest cut constant; `None` is infinity.
    pub z: Vec<Option<u32>>,
    pub origin: Vec<usize>,
}

impl UnrolledCircuit {
    pub fn z_of(&self, id: &str) -> Option<Option<u32>> {
        self.netlist.index_of(id).map(|v| self.z[v])
    }
}

/// Name of the level-`k` copy of a vertex.
pub fn copy_id(id: &str, k: usize) -> String {
    format!("{id}^({k})")
}

/// Name of the constant replacing a vertex at level 0.
pub fn cut_id(id: &str) -> String {
    format!("X_{id}")
}

/// k-unrolling from `sink`. A gate at level 0 becomes a constant holding its
/// initial digitized output; the level-`k` copy of a gate reads the level
/// `k-1` copies of its drivers. Input ports are shared. Copies of one vertex
/// at one level are shared, and so are copies whose sub-unrolling reaches no
/// cut, so the result is the tree unrolling compressed to a DAG. `port_initials` gives the input-port values at `0-`, which fix
/// the gates' initial outputs.
pub fn unroll(
    net: &Netlist,
    k: usize,
    sink: &str,
    port_initials: &BTreeMap<String, bool>,
) -> Result<UnrolledCircuit, EngineError> {
    let diags = validate(net);
    if !diags.is_empty() {
        return Err(EngineError::Invalid(diags));
    }
    let s = net.index_of(sink).ok_or_else(|| EngineError::UnknownVertex(sink.to_string()))?;
    let initial = initial_values(net, port_initials);
    let depth = acyclic_depths(net);
    let mut u = Unroller {
        net,
        initial,
        depth,
        out: Netlist::new(),
        z: Vec::new(),
        origin: Vec::new(),
        memo: HashMap::new(),
    };
    u.copy(s, k)?;
    Ok(UnrolledCircuit { netlist: u.out, z: u.z, origin: u.origin })
}

/// Longest gate count on a path into each vertex, or `None` if a cycle
/// feeds the vertex.
fn acyclic_depths(net: &Netlist) -> Vec<Option<usize>> {
    fn visit(
        net: &Netlist,
        v: usize,
        state: &mut Vec<u8>,
        memo: &mut Vec<Option<usize>>,
    ) -> Option<usize> {
        match state[v] {
            1 => return None,
            2 => return memo[v],
            _ => {}
        }
        state[v] = 1;
        let drivers = net.drivers(v);
        let mut deepest = Some(0);
        for d in drivers.into_iter().flatten() {
            deepest = match (deepest, visit(net, d, state, memo)) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
        }
        let own = match net.vertices[v].kind {
            VertexKind::Gate { .. } => deepest.map(|x| x + 1),
            _ => deepest,
        };
        state[v] = 2;
        memo[v] = own;
        own
    }
    let n = net.vertices.len();
    let mut state = vec![0u8; n];
    let mut memo = vec![None; n];
    for v in 0..n {
        visit(net, v, &mut state, &mut memo);
    }
    memo
}

/// Memo level for copies that contain no cut and are therefore identical at all levels.
const FULL: usize = usize::MAX - 1;

struct Unroller<'a> {
    net: &'a Netlist,
    initial: Vec<bool>,
    depth: Vec<Option<usize>>,
    out: Netlist,
    z: Vec<Option<u32>>,
    origin: Vec<usize>,
    memo: HashMap<(usize, usize), usize>,
}

impl Unroller<'_> {
    fn add(&mut self, v: usize, level: usize, vertex: Vertex, z: Option<u32>) -> usize {
        self.out.vertices.push(vertex);
        self.z.push(z);
        self.origin.push(v);
        let idx = self.out.vertices.len() - 1;
        self.memo.insert((v, level), idx);
        idx
    }

    fn copy(&mut self, v: usize, level: usize) -> Result<usize, EngineError> {
        let vertex = &self.net.vertices[v];
        // Ports and constants are shared across levels.
        let key_level = match vertex.kind {
            VertexKind::Input | VertexKind::Constant { .. } => usize::MAX,
            _ if self.depth[v].is_some_and(|d| level >= d) => FULL,
            _ => level,
        };
        if let Some(&idx) = self.memo.get(&(v, key_level)) {
            return Ok(idx);
        }
        match &vertex.kind {
            VertexKind::Input | VertexKind::Constant { .. } => {
                Ok(self.add(v, key_level, vertex.clone(), None))
            }
            VertexKind::Output => {
                let driver = self.net.drivers(v)[0].expect("validated");
                let d = self.copy(driver, level)?;
                let z = self.z[d];
                let idx = self.add(v, key_level, Vertex { id: copy_id(&vertex.id, level), kind: VertexKind::Output }, z);
                self.out.connect(d, idx, 0);
                Ok(idx)
            }
            VertexKind::Gate { gate, .. } => {
                if level == 0 {
                    let g = gate.as_dyn();
                    let ins: Vec<bool> =
                        self.net.drivers(v).iter().map(|d| self.initial[d.expect("validated")]).collect();
                    let x0 = g.steady_state(&Mode::initial(g, ins));
                    let value = x0[0] > g.threshold();
                    let kind = VertexKind::Constant { value, initial: self.initial[v] };
                    return Ok(self.add(v, 0, Vertex { id: cut_id(&vertex.id), kind }, Some(0)));
                }
                let drivers = self.net.drivers(v);
                let mut ins = Vec::with_capacity(drivers.len());
                for d in drivers {
                    ins.push(self.copy(d.expect("validated"), level - 1)?);
                }
                let z = ins
                    .iter()
                    .map(|&i| self.z[i])
                    .min_by(|a, b| match (a, b) {
                        (None, None) => Ordering::Equal,
                        (None, _) => Ordering::Greater,
                        (_, None) => Ordering::Less,
                        (Some(x), Some(y)) => x.cmp(y),
                    })
                    .flatten()
                    .map(|m| m + 1);
                let kind = VertexKind::Gate { gate: gate.clone(), initial_output: Some(self.initial[v]) };
                let idx = self.add(v, key_level, Vertex { id: copy_id(&vertex.id, level), kind }, z);
                for (j, i) in ins.into_iter().enumerate() {
                    self.out.connect(i, idx, j);
                }
                Ok(idx)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EquivalenceReport {
    /// Number of transitions compared in both directions by causal depth.
    pub compared: usize,
    /// Copies whose transitions of depth at most `z` differ from the original's.
    pub mismatches: Vec<String>,
    /// Number of transitions compared inside the agreement windows.
    pub window_compared: usize,
    /// Copies that differ from the original before their agreement window ends.
    pub window_mismatches: Vec<String>,
}

impl EquivalenceReport {
    /// The depth-based comparison found no differences.
    pub fn passes(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// The time-window comparison found no differences.
    pub fn window_passes(&self) -> bool {
        self.window_mismatches.is_empty()
    }
}

/// Time up to which each copy must agree with its original: a cut constant
/// agrees until the original gate's first transition after 0, and every gate
/// copy until the earliest window of its drivers plus the pure delay.
fn agreement_windows(unrolled: &UnrolledCircuit, original: &Execution) -> Vec<f64> {
    let net = &unrolled.netlist;
    let mut window = vec![f64::INFINITY; net.vertices.len()];
    // Copies are created after their drivers, so index order is topological.
    for c in 0..net.vertices.len() {
        window[c] = match &net.vertices[c].kind {
            VertexKind::Input => f64::INFINITY,
            VertexKind::Constant { .. } if unrolled.z[c] == Some(0) => original.traces[unrolled.origin[c]]
                .transitions
                .iter()
                .map(|t| t.time)
                .find(|&t| t > 0.0)
                .unwrap_or(f64::INFINITY),
            VertexKind::Constant { .. } => f64::INFINITY,
            VertexKind::Output => window[net.drivers(c)[0].expect("validated")],
            VertexKind::Gate { gate, .. } => net
                .drivers(c)
                .iter()
                .enumerate()
                .map(|(j, d)| window[d.expect("validated")] + gate.as_dyn().pure_delay(j))
                .fold(f64::INFINITY, f64::min),
        };
    }
    window
}

/// Simulates the circuit and its k-unrolling from every output port and
/// compares each vertex with its copies in two ways: transitions of causal
/// depth at most `z` must agree in both directions, and all transitions
/// before the copy's agreement window closes must agree.
pub fn simulation_equivalence_check(
    net: &Netlist,
    k: usize,
    stimuli: &BTreeMap<String, BinarySignal>,
    horizon: f64,
) -> Result<EquivalenceReport, EngineError> {
    let original = build_execution(net, stimuli, horizon)?;
    let port_initials: BTreeMap<String, bool> =
        stimuli.iter().map(|(k, s)| (k.clone(), s.initial())).collect();
    let mut report = EquivalenceReport::default();
    for sink in net.vertices.iter().filter(|v| matches!(v.kind, VertexKind::Output)) {
        let unrolled = unroll(net, k, &sink.id, &port_initials)?;
        let used: BTreeMap<String, BinarySignal> = stimuli
            .iter()
            .filter(|(name, _)| unrolled.netlist.index_of(name).is_some())
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        let copy = build_execution(&unrolled.netlist, &used, horizon)?;
        let windows = agreement_windows(&unrolled, &original);
        for (c, &v) in unrolled.origin.iter().enumerate() {
            let names = (&net.vertices[v].id, &unrolled.netlist.vertices[c].id);
            let same_initial = original.traces[v].initial == copy.traces[c].initial;

            let bound = unrolled.z[c].unwrap_or(u32::MAX);
            let by_depth = |t: &VertexTrace| -> Vec<(u64, bool)> {
                t.transitions
                    .iter()
                    .filter(|x| x.causal_depth <= bound)
                    .map(|x| (x.time.to_bits(), x.value))
                    .collect()
            };
            let (a, b) = (by_depth(&original.traces[v]), by_depth(&copy.traces[c]));
            report.compared += a.len() + b.len();
            if a != b || !same_initial {
                report.mismatches.push(format!(
                    "{} vs {}: {} vs {} transitions of depth <= {}",
                    names.0,
                    names.1,
                    a.len(),
                    b.len(),
                    bound
                ));
            }

            let until = windows[c];
            let by_time = |t: &VertexTrace| -> Vec<(u64, bool)> {
                t.transitions
                    .iter()
                    .filter(|x| x.time < until)
                    .map(|x| (x.time.to_bits(), x.value))
                    .collect()
            };
            let (a, b) = (by_time(&original.traces[v]), by_time(&copy.traces[c]));
            report.window_compared += a.len() + b.len();
            if a != b || !same_initial {
                report.window_mismatches.push(format!(
                    "{} vs {}: {} vs {} transitions before {until:e} s",
                    names.0,
                    names.1,
                    a.len(),
                    b.len()
                ));
            }
        }
    }
    Ok(report)
}
