//! Digitized hybrid gates: pure delays feed a mode-switch signal, each mode
//! has a closed-form trajectory, and pasting the pieces gives the analog
//! output, which is thresholded to a binary signal.

use std::fmt;

use thiserror::Error;

use crate::numerics::{find_root, Bracket, NumericsError};
use crate::signals::{
    l1_distance, mode_distance, pure_delay_shift, BinarySignal, ModeSwitchSignal, SignalError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("expected {expected} input signals, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("state {value} leaves the admissible range [0, {vdd}]")]
    StateEscape { value: f64, vdd: f64 },
    #[error("state has dimension {got}, model expects {expected}")]
    StateDimension { expected: usize, got: usize },
    #[error("threshold crossing could not be resolved: {0}")]
    Crossing(#[from] NumericsError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter { name: &'static str, value: f64, reason: &'static str },
}

/// Label of a mode; two modes with the same label use the same right-hand side family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeId(pub &'static str);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// A mode together with the input history it was selected from.
///
/// `last_change[j]` is the time input `j` (after its pure delay) last took
/// its current value, or `-inf` if it has held it since `0-`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub id: ModeId,
    pub inputs: Vec<bool>,
    pub last_change: Vec<f64>,
}

impl Mode {
    pub fn select(gate: &dyn HybridGate, inputs: Vec<bool>, last_change: Vec<f64>) -> Mode {
        let id = gate.mode_id(&inputs, &last_change);
        Mode { id, inputs, last_change }
    }

    /// Mode selected by the inputs' values at `0-`.
    pub fn initial(gate: &dyn HybridGate, inputs: Vec<bool>) -> Mode {
        let n = inputs.len();
        Self::select(gate, inputs, vec![f64::NEG_INFINITY; n])
    }
}

/// Pull-up through two pMOS transistors whose resistances decay as
/// `alpha / (time since switch-on)` towards a combined series value `2r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullUp {
    pub vdd: f64,
    pub c: f64,
    pub r: f64,
    /// Coefficient of the transistor that switched on last.
    pub alpha_late: f64,
    /// Coefficient of the transistor that switched on first.
    pub alpha_early: f64,
    /// Time between the two switch-on events; `None` when the early one has
    /// been on forever.
    pub gap: Option<f64>,
    /// Switch-on time of the late transistor.
    pub origin: f64,
}

impl PullUp {
    /// Total resistance `s` seconds after the late switch-on.
    pub fn resistance(&self, s: f64) -> f64 {
        let early = match self.gap {
            Some(gap) => self.alpha_early / (s + gap),
            None => 0.0,
        };
        self.alpha_late / s + early + 2.0 * self.r
    }

    /// `∫_0^s 1/R(u) du` in closed form.
    pub fn conductance_integral(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let two_r = 2.0 * self.r;
        // A gap too large to square behaves like an early pMOS that was always on.
        let gap = self.gap.filter(|g| (g * g).is_finite());
        match gap {
            None => {
                let b = self.alpha_late / two_r;
                (s - b * (s / b).ln_1p()) / two_r
            }
            Some(gap) if gap == 0.0 => {
                let a = (self.alpha_late + self.alpha_early) / two_r;
                (s - a * (s / a).ln_1p()) / two_r
            }
            Some(gap) => {
                // 1/R = (1/2r)[1 - (a u + c') / ((u + r1)(u + r2))]
                let a = (self.alpha_late + self.alpha_early) / two_r;
                let d = a + gap;
                let cp = self.alpha_late * gap / two_r;
                let chi = d * d - 4.0 * cp;
                let sqrt_chi = chi.max(0.0).sqrt();
                let r1 = 0.5 * (d + sqrt_chi);
                let r2 = cp / r1;
                // r1 - a without cancellation.
                let sqrt_chi_minus_a = gap * (2.0 * a + gap - 2.0 * self.alpha_late / self.r)
                    / (sqrt_chi + a);
                let r1_minus_a = 0.5 * (gap + sqrt_chi_minus_a);
                let q = cp * r1_minus_a / (r1 * (r1 - r2));
                let p = a - q;
                (s - p * (s / r1).ln_1p() - q * (s / r2).ln_1p()) / two_r
            }
        }
    }

    /// Right-hand side of the pull-up ODE.
    pub fn rhs(&self, t: f64, v: f64) -> f64 {
        let s = t - self.origin;
        if s <= 0.0 {
            return 0.0;
        }
        (self.vdd - v) / (self.c * self.resistance(s))
    }
}

/// Closed-form solution family of one trajectory piece. The state is a
/// vector whose component 0 is the gate output voltage.
#[derive(Debug, Clone, PartialEq)]
pub enum Form {
    /// The state does not move.
    Constant,
    /// Scalar `x' = -rate (x - target)`.
    Exp { target: f64, rate: f64 },
    /// Planar linear system `x' = m (x - fixed)` with real eigenvalues `l1 >= l2`.
    Linear2 { m: [[f64; 2]; 2], fixed: [f64; 2], l1: f64, l2: f64 },
    /// Scalar pull-up with time-varying resistance.
    PullUp(PullUp),
}

impl Form {
    /// Linear planar form with eigenvalues of `m` computed here.
    pub fn linear2(m: [[f64; 2]; 2], fixed: [f64; 2]) -> Form {
        let tr = m[0][0] + m[1][1];
        let diff = m[0][0] - m[1][1];
        let disc = diff * diff + 4.0 * m[0][1] * m[1][0];
        let root = disc.max(0.0).sqrt();
        // Avoid cancellation in the eigenvalue of smaller magnitude.
        let (l1, l2) = if tr < 0.0 {
            let big = 0.5 * (tr - root);
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let small = if big != 0.0 { det / big } else { 0.0 };
            (small.max(big), small.min(big))
        } else {
            (0.5 * (tr + root), 0.5 * (tr - root))
        };
        Form::Linear2 { m, fixed, l1, l2 }
    }
}

/// One piece of a pasted trajectory, valid from `entry_time` on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    pub mode: Mode,
    pub entry_time: f64,
    pub entry_state: Vec<f64>,
    pub form: Form,
    entry_integral: f64,
}

impl ModeTrajectory {
    pub fn new(mode: Mode, entry_time: f64, entry_state: Vec<f64>, form: Form) -> Self {
        let entry_integral = match &form {
            Form::PullUp(p) => p.conductance_integral(entry_time - p.origin),
            _ => 0.0,
        };
        ModeTrajectory { mode, entry_time, entry_state, form, entry_integral }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let s = (t - self.entry_time).max(0.0);
        let x0 = &self.entry_state;
        match &self.form {
            Form::Constant => x0.clone(),
            Form::Exp { target, rate } => vec![target + (x0[0] - target) * (-rate * s).exp()],
            Form::Linear2 { m, fixed, l1, l2 } => {
                let y = [x0[0] - fixed[0], x0[1] - fixed[1]];
                let phi = if l1 == l2 { s } else { ((l1 - l2) * s).exp_m1() / (l1 - l2) };
                let e = (l2 * s).exp();
                // e^{Ms} = e^{l2 s} [I + (M - l2 I) phi]
                let my = [m[0][0] * y[0] + m[0][1] * y[1], m[1][0] * y[0] + m[1][1] * y[1]];
                vec![
                    fixed[0] + e * (y[0] + (my[0] - l2 * y[0]) * phi),
                    fixed[1] + e * (y[1] + (my[1] - l2 * y[1]) * phi),
                ]
            }
            Form::PullUp(p) => {
                let i = p.conductance_integral(t - p.origin) - self.entry_integral;
                vec![p.vdd + (x0[0] - p.vdd) * (-i / p.c).exp()]
            }
        }
    }

    pub fn output_at(&self, t: f64) -> f64 {
        self.eval(t)[0]
    }

    /// Time derivative of the output voltage.
    fn output_slope(&self, t: f64) -> f64 {
        let s = (t - self.entry_time).max(0.0);
        match &self.form {
            Form::Constant => 0.0,
            Form::Exp { target, rate } => -rate * (self.output_at(t) - target),
            Form::Linear2 { m, fixed, l1, l2 } => {
                // (M e^{Ms} y)_0 = (e^{Ms} M y)_0
                let y = [self.entry_state[0] - fixed[0], self.entry_state[1] - fixed[1]];
                let my = [m[0][0] * y[0] + m[0][1] * y[1], m[1][0] * y[0] + m[1][1] * y[1]];
                let mmy0 = m[0][0] * my[0] + m[0][1] * my[1];
                let phi = if l1 == l2 { s } else { ((l1 - l2) * s).exp_m1() / (l1 - l2) };
                (l2 * s).exp() * (my[0] + (mmy0 - l2 * my[0]) * phi)
            }
            Form::PullUp(p) => p.rhs(t, self.output_at(t)),
        }
    }

    /// Threshold crossings of the output on `[entry_time, until]`, as
    /// `(time, new digital value)`. Tangential touches are not reported.
    pub fn crossings(&self, xi: f64, until: f64, tol: f64) -> Result<Vec<(f64, bool)>, GateError> {
        let t0 = self.entry_time;
        if until < t0 {
            return Ok(Vec::new());
        }
        let v0 = self.entry_state[0];
        match &self.form {
            Form::Constant => Ok(Vec::new()),
            Form::Exp { target, rate } => {
                let between = (v0 > xi && xi > *target) || (v0 <= xi && xi < *target);
                if !between {
                    return Ok(Vec::new());
                }
                let t = t0 + ((v0 - target) / (xi - target)).ln() / rate;
                Ok(if t <= until { vec![(t, *target > xi)] } else { Vec::new() })
            }
            Form::PullUp(p) => {
                if !(v0 <= xi && xi < p.vdd) {
                    return Ok(Vec::new());
                }
                let goal = ((p.vdd - v0) / (p.vdd - xi)).ln() * p.c;
                let g = |t: f64| p.conductance_integral(t - p.origin) - self.entry_integral - goal;
                if g(until) < 0.0 {
                    return Ok(Vec::new());
                }
                let t = find_root(g, Bracket::new(t0, until)?, tol)?;
                Ok(vec![(t, true)])
            }
            Form::Linear2 { .. } => {
                // The output slope is a combination of two exponentials, so
                // it has at most one zero; split there and solve on each side.
                let mut cuts = vec![t0];
                let (s0, s1) = (self.output_slope(t0), self.output_slope(until));
                if s0 * s1 < 0.0 {
                    let tc = find_root(|t| self.output_slope(t), Bracket::new(t0, until)?, tol)?;
                    cuts.push(tc);
                }
                cuts.push(until);
                let mut out = Vec::new();
                for w in cuts.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let (fa, fb) = (self.output_at(a) - xi, self.output_at(b) - xi);
                    let rising = fb > fa;
                    if (fa <= 0.0 && fb > 0.0) || (fa > 0.0 && fb <= 0.0) {
                        let t = if fa == 0.0 {
                            a
                        } else if fb == 0.0 {
                            b
                        } else {
                            find_root(|t| self.output_at(t) - xi, Bracket::new(a, b)?, tol)?
                        };
                        out.push((t, rising));
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Pasted analog trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pieces: Vec<ModeTrajectory>,
    horizon: f64,
}

impl Trajectory {
    pub fn pieces(&self) -> &[ModeTrajectory] {
        &self.pieces
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn piece_at(&self, t: f64) -> &ModeTrajectory {
        let idx = self.pieces.partition_point(|p| p.entry_time <= t);
        &self.pieces[idx.saturating_sub(1)]
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.piece_at(t).eval(t)
    }

    pub fn output_at(&self, t: f64) -> f64 {
        self.piece_at(t).output_at(t)
    }

    /// Thresholds the output at `xi`: the result is 1 exactly where the output exceeds `xi`.
    pub fn digitize(&self, xi: f64, horizon: f64) -> Result<BinarySignal, GateError> {
        let tol = crossing_tolerance(horizon);
        let initial = self.pieces[0].entry_state[0] > xi;
        let mut changes = Vec::new();
        for (k, piece) in self.pieces.iter().enumerate() {
            let end = self.pieces.get(k + 1).map_or(f64::INFINITY, |p| p.entry_time);
            changes.push((piece.entry_time, piece.entry_state[0] > xi));
            for (t, v) in piece.crossings(xi, horizon, tol)? {
                if t < end && t <= horizon {
                    changes.push((t, v));
                }
            }
        }
        Ok(BinarySignal::from_levels(initial, &changes, horizon))
    }
}

/// Absolute time tolerance for locating threshold crossings.
pub fn crossing_tolerance(horizon: f64) -> f64 {
    1e-15 * horizon
}

/// A digitized hybrid gate with `input_count` inputs.
pub trait HybridGate: Send + Sync + fmt::Debug {
    fn input_count(&self) -> usize;
    /// Pure delay of input `j`.
    fn pure_delay(&self, j: usize) -> f64;
    fn threshold(&self) -> f64;
    fn vdd(&self) -> f64;
    fn state_dim(&self) -> usize;
    /// Mode label for the current input vector and its change history.
    fn mode_id(&self, inputs: &[bool], last_change: &[f64]) -> ModeId;
    /// Steady state of a mode, used as the initial state.
    fn steady_state(&self, mode: &Mode) -> Vec<f64>;
    /// Closed-form solution family for `mode` entered at `entry_time`.
    fn form(&self, mode: &Mode) -> Form;
    /// Right-hand side `F(t, x)` of the mode's ODE.
    fn rhs(&self, mode: &Mode, t: f64, x: &[f64]) -> Vec<f64>;
    /// `(M, K)`: a bound on every mode right-hand side over the admissible box,
    /// and a common Lipschitz constant.
    fn continuity_constants(&self) -> (f64, f64);
    /// Boolean function computed in steady state.
    fn boolean(&self, inputs: &[bool]) -> bool;

    /// Builds the piece for `mode` entered at `entry_time` in `entry_state`,
    /// clamping rounding overshoot into `[0, V_DD]`.
    fn piece(&self, mode: Mode, entry_time: f64, entry_state: &[f64]) -> Result<ModeTrajectory, GateError> {
        let state = admissible(entry_state, self.vdd(), self.state_dim())?;
        let form = self.form(&mode);
        Ok(ModeTrajectory::new(mode, entry_time, state, form))
    }
}

fn admissible(x: &[f64], vdd: f64, dim: usize) -> Result<Vec<f64>, GateError> {
    if x.len() != dim {
        return Err(GateError::StateDimension { expected: dim, got: x.len() });
    }
    let slack = 1e-9 * vdd;
    x.iter()
        .map(|&v| {
            if v.is_finite() && v >= -slack && v <= vdd + slack {
                Ok(v.clamp(0.0, vdd))
            } else {
                Err(GateError::StateEscape { value: v, vdd })
            }
        })
        .collect()
}

fn check_inputs(gate: &dyn HybridGate, inputs: &[BinarySignal]) -> Result<f64, GateError> {
    if inputs.len() != gate.input_count() {
        return Err(GateError::InputCount { expected: gate.input_count(), got: inputs.len() });
    }
    let horizon = inputs[0].horizon();
    for s in inputs {
        if s.horizon() != horizon {
            return Err(SignalError::HorizonMismatch(horizon, s.horizon()).into());
        }
    }
    Ok(horizon)
}

/// Delays every input by its pure delay and maps the merged input vector to modes.
pub fn build_mode_switch_signal(
    gate: &dyn HybridGate,
    inputs: &[BinarySignal],
) -> Result<ModeSwitchSignal<Mode>, GateError> {
    let horizon = check_inputs(gate, inputs)?;
    let delayed = inputs
        .iter()
        .enumerate()
        .map(|(j, s)| pure_delay_shift(s, gate.pure_delay(j)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut events: Vec<(f64, usize, bool)> = delayed
        .iter()
        .enumerate()
        .flat_map(|(j, s)| s.transitions().iter().map(move |tr| (tr.time, j, tr.value)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let initial = Mode::initial(gate, delayed.iter().map(|s| s.initial()).collect());
    let mut values = initial.inputs.clone();
    let mut last_change = initial.last_change.clone();
    let mut switches = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            let (_, j, v) = events[i];
            values[j] = v;
            last_change[j] = t;
            i += 1;
        }
        switches.push((t, Mode::select(gate, values.clone(), last_change.clone())));
    }
    Ok(ModeSwitchSignal::new(initial, switches, horizon)?)
}

/// Pastes the closed-form pieces of every mode, starting from `x0`.
pub fn matching_output(
    gate: &dyn HybridGate,
    mode_signal: &ModeSwitchSignal<Mode>,
    x0: &[f64],
) -> Result<Trajectory, GateError> {
    let mut pieces = vec![gate.piece(mode_signal.initial_mode().clone(), 0.0, x0)?];
    for (t, mode) in mode_signal.switches() {
        let state = pieces.last().expect("at least one piece").eval(*t);
        pieces.push(gate.piece(mode.clone(), *t, &state)?);
    }
    Ok(Trajectory { pieces, horizon: mode_signal.horizon() })
}

/// Mode signal and trajectory of a gate driven by `inputs` from the steady
/// state of its initial mode.
pub fn gate_trajectory(
    gate: &dyn HybridGate,
    inputs: &[BinarySignal],
) -> Result<(ModeSwitchSignal<Mode>, Trajectory), GateError> {
    let modes = build_mode_switch_signal(gate, inputs)?;
    let x0 = gate.steady_state(modes.initial_mode());
    let traj = matching_output(gate, &modes, &x0)?;
    Ok((modes, traj))
}

/// The digitized gate function.
pub fn gate_response(gate: &dyn HybridGate, inputs: &[BinarySignal]) -> Result<BinarySignal, GateError> {
    let (modes, traj) = gate_trajectory(gate, inputs)?;
    traj.digitize(gate.threshold(), modes.horizon())
}

/// Distances between the responses to two input vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityProbe {
    /// Measure of the set where the two mode signals select different mode labels.
    pub d_in: f64,
    /// 1-norm distance of the thresholded outputs.
    pub d_out: f64,
    /// Largest output-voltage difference over the sample grid.
    pub sup_analog: f64,
}

pub fn continuity_probe(
    gate: &dyn HybridGate,
    inputs: &[BinarySignal],
    perturbed: &[BinarySignal],
    grid_points: usize,
) -> Result<ContinuityProbe, GateError> {
    let (ma, ta) = gate_trajectory(gate, inputs)?;
    let (mb, tb) = gate_trajectory(gate, perturbed)?;
    let d_in = mode_distance(&ma.map(|m| m.id), &mb.map(|m| m.id))?;
    let xi = gate.threshold();
    let d_out = l1_distance(&ta.digitize(xi, ta.horizon())?, &tb.digitize(xi, tb.horizon())?)?;
    let horizon = ta.horizon();
    let mut times: Vec<f64> = (0..=grid_points.max(1))
        .map(|k| horizon * k as f64 / grid_points.max(1) as f64)
        .collect();
    times.extend(ta.pieces().iter().chain(tb.pieces()).map(|p| p.entry_time));
    let sup_analog = times
        .iter()
        .map(|&t| (ta.output_at(t) - tb.output_at(t)).abs())
        .fold(0.0, f64::max);
    Ok(ContinuityProbe { d_in, d_out, sup_analog })
}

/// The bound `2 M e^{T K} d` on the analog sup-distance.
pub fn continuity_bound(gate: &dyn HybridGate, horizon: f64, d_in: f64) -> f64 {
    let (m, k) = gate.continuity_constants();
    2.0 * m * (horizon * k).exp() * d_in
}
