//! Concrete gate families: exp-channels, the 4-mode NOR with an internal
//! node, and the NOR with time-varying pMOS resistances.

use serde::{Deserialize, Serialize};

use crate::gate_core::{Form, GateError, HybridGate, Mode, ModeId, PullUp};

fn default_vdd() -> f64 {
    1.0
}

/// Pure delay shared by all inputs or given per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PureDelays {
    Same(f64),
    PerInput(Vec<f64>),
}

impl PureDelays {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            PureDelays::Same(d) => *d,
            PureDelays::PerInput(v) => v[j],
        }
    }

    fn check(&self, inputs: usize) -> Result<(), GateError> {
        let values: Vec<f64> = match self {
            PureDelays::Same(d) => vec![*d],
            PureDelays::PerInput(v) => {
                if v.len() != inputs {
                    return Err(GateError::Parameter {
                        name: "delta_min",
                        value: v.len() as f64,
                        reason: "needs one entry per input",
                    });
                }
                v.clone()
            }
        };
        for d in values {
            if !(d.is_finite() && d >= 0.0) {
                return Err(GateError::Parameter {
                    name: "delta_min",
                    value: d,
                    reason: "must be finite and non-negative",
                });
            }
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        match self {
            PureDelays::Same(d) => *d,
            PureDelays::PerInput(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), GateError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(GateError::Parameter { name, value, reason: "must be positive and finite" })
    }
}

fn threshold_inside(xi: f64, vdd: f64) -> Result<(), GateError> {
    if xi > 0.0 && xi < vdd {
        Ok(())
    } else {
        Err(GateError::Parameter { name: "xi", value: xi, reason: "must lie strictly between 0 and vdd" })
    }
}

/// Boolean function realized by a multi-input exp-channel gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolFn {
    Buf,
    Not,
    And,
    Or,
    Nand,
    Nor,
    Xor,
}

impl BoolFn {
    pub fn eval(self, inputs: &[bool]) -> bool {
        let any = inputs.iter().any(|&b| b);
        let all = inputs.iter().all(|&b| b);
        match self {
            BoolFn::Buf => inputs[0],
            BoolFn::Not => !inputs[0],
            BoolFn::And => all,
            BoolFn::Or => any,
            BoolFn::Nand => !all,
            BoolFn::Nor => !any,
            BoolFn::Xor => inputs.iter().filter(|&&b| b).count() % 2 == 1,
        }
    }

    fn unary(self) -> bool {
        matches!(self, BoolFn::Buf | BoolFn::Not)
    }
}

/// Exp-channel: first-order low-pass switching towards `vdd` or 0 with time
/// constant `tau`. A single-input channel by default; `function` turns it into
/// a gate over several inputs whose target follows the Boolean function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmExpParams {
    pub tau: f64,
    pub delta_min: PureDelays,
    #[serde(default = "default_vdd")]
    pub vdd: f64,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub inverting: bool,
    #[serde(default)]
    pub function: Option<BoolFn>,
    #[serde(default)]
    pub inputs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdmExp {
    pub params: IdmExpParams,
    function: BoolFn,
    inputs: usize,
    xi: f64,
}

const UP: ModeId = ModeId("up");
const DOWN: ModeId = ModeId("down");

impl IdmExp {
    pub fn new(params: IdmExpParams) -> Result<Self, GateError> {
        positive("tau", params.tau)?;
        positive("vdd", params.vdd)?;
        let xi = params.xi.unwrap_or(params.vdd / 2.0);
        threshold_inside(xi, params.vdd)?;
        let function = params
            .function
            .unwrap_or(if params.inverting { BoolFn::Not } else { BoolFn::Buf });
        let inputs = if function.unary() { 1 } else { params.inputs.unwrap_or(2) };
        if inputs == 0 || (function.unary() && params.inputs.is_some_and(|n| n != 1)) {
            return Err(GateError::Parameter {
                name: "inputs",
                value: params.inputs.unwrap_or(0) as f64,
                reason: "does not match the function's arity",
            });
        }
        params.delta_min.check(inputs)?;
        Ok(IdmExp { params, function, inputs, xi })
    }

    /// Single-input channel.
    pub fn channel(tau: f64, delta_min: f64, inverting: bool) -> Result<Self, GateError> {
        Self::new(IdmExpParams {
            tau,
            delta_min: PureDelays::Same(delta_min),
            vdd: 1.0,
            xi: None,
            inverting,
            function: None,
            inputs: None,
        })
    }
}

impl HybridGate for IdmExp {
    fn input_count(&self) -> usize {
        self.inputs
    }
    fn pure_delay(&self, j: usize) -> f64 {
        self.params.delta_min.get(j)
    }
    fn threshold(&self) -> f64 {
        self.xi
    }
    fn vdd(&self) -> f64 {
        self.params.vdd
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn mode_id(&self, inputs: &[bool], _last_change: &[f64]) -> ModeId {
        if self.function.eval(inputs) {
            UP
        } else {
            DOWN
        }
    }
    fn steady_state(&self, mode: &Mode) -> Vec<f64> {
        vec![if mode.id == UP { self.params.vdd } else { 0.0 }]
    }
    fn form(&self, mode: &Mode) -> Form {
        Form::Exp { target: self.steady_state(mode)[0], rate: 1.0 / self.params.tau }
    }
    fn rhs(&self, mode: &Mode, _t: f64, x: &[f64]) -> Vec<f64> {
        vec![(self.steady_state(mode)[0] - x[0]) / self.params.tau]
    }
    fn continuity_constants(&self) -> (f64, f64) {
        (self.params.vdd / self.params.tau, 1.0 / self.params.tau)
    }
    fn boolean(&self, inputs: &[bool]) -> bool {
        self.function.eval(inputs)
    }
}

const M00: ModeId = ModeId("(0,0)");
const M01: ModeId = ModeId("(0,1)");
const M10: ModeId = ModeId("(1,0)");
const M11: ModeId = ModeId("(1,1)");

/// NOR with an internal node between the two pMOS transistors. Resistors:
/// `r1` pMOS A, `r2` pMOS B, `r3` nMOS A, `r4` nMOS B. State is `[V_out, V_int]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorSimpleParams {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub c: f64,
    pub c_int: f64,
    #[serde(default = "default_vdd")]
    pub vdd: f64,
    #[serde(default)]
    pub xi: Option<f64>,
    pub delta_min: PureDelays,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NorSimple {
    pub params: NorSimpleParams,
    xi: f64,
}

impl NorSimple {
    pub fn new(params: NorSimpleParams) -> Result<Self, GateError> {
        for (name, v) in [
            ("r1", params.r1),
            ("r2", params.r2),
            ("r3", params.r3),
            ("r4", params.r4),
            ("c", params.c),
            ("c_int", params.c_int),
            ("vdd", params.vdd),
        ] {
            positive(name, v)?;
        }
        let xi = params.xi.unwrap_or(params.vdd / 2.0);
        threshold_inside(xi, params.vdd)?;
        params.delta_min.check(2)?;
        Ok(NorSimple { params, xi })
    }

    /// Coefficient matrix and fixed point of the mode for input values `(a, b)`.
    /// In mode (1,1) the internal node is isolated; its steady value is taken as 0.
    pub fn system(&self, a: bool, b: bool) -> ([[f64; 2]; 2], [f64; 2]) {
        let p = &self.params;
        let (c, ci, vdd) = (p.c, p.c_int, p.vdd);
        match (a, b) {
            (true, true) => ([[-(1.0 / (c * p.r3) + 1.0 / (c * p.r4)), 0.0], [0.0, 0.0]], [0.0, 0.0]),
            (true, false) => (
                [
                    [-(1.0 / (c * p.r2) + 1.0 / (c * p.r3)), 1.0 / (c * p.r2)],
                    [1.0 / (ci * p.r2), -1.0 / (ci * p.r2)],
                ],
                [0.0, 0.0],
            ),
            (false, true) => ([[-1.0 / (c * p.r4), 0.0], [0.0, -1.0 / (ci * p.r1)]], [0.0, vdd]),
            (false, false) => (
                [
                    [-1.0 / (c * p.r2), 1.0 / (c * p.r2)],
                    [1.0 / (ci * p.r2), -(1.0 / (ci * p.r1) + 1.0 / (ci * p.r2))],
                ],
                [vdd, vdd],
            ),
        }
    }
}

fn op_norm2(m: &[[f64; 2]; 2]) -> f64 {
    // Largest singular value from the eigenvalues of m^T m.
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    (0.5 * (tr + disc)).sqrt()
}

impl HybridGate for NorSimple {
    fn input_count(&self) -> usize {
        2
    }
    fn pure_delay(&self, j: usize) -> f64 {
        self.params.delta_min.get(j)
    }
    fn threshold(&self) -> f64 {
        self.xi
    }
    fn vdd(&self) -> f64 {
        self.params.vdd
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn mode_id(&self, inputs: &[bool], _last_change: &[f64]) -> ModeId {
        match (inputs[0], inputs[1]) {
            (false, false) => M00,
            (false, true) => M01,
            (true, false) => M10,
            (true, true) => M11,
        }
    }
    fn steady_state(&self, mode: &Mode) -> Vec<f64> {
        self.system(mode.inputs[0], mode.inputs[1]).1.to_vec()
    }
    fn form(&self, mode: &Mode) -> Form {
        let (m, fixed) = self.system(mode.inputs[0], mode.inputs[1]);
        Form::linear2(m, fixed)
    }
    fn rhs(&self, mode: &Mode, _t: f64, x: &[f64]) -> Vec<f64> {
        let (m, f) = self.system(mode.inputs[0], mode.inputs[1]);
        let y = [x[0] - f[0], x[1] - f[1]];
        vec![m[0][0] * y[0] + m[0][1] * y[1], m[1][0] * y[0] + m[1][1] * y[1]]
    }
    fn continuity_constants(&self) -> (f64, f64) {
        let vdd = self.params.vdd;
        let corners = [[0.0, 0.0], [0.0, vdd], [vdd, 0.0], [vdd, vdd]];
        let mut big_m: f64 = 0.0;
        let mut big_k: f64 = 0.0;
        for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
            let (m, f) = self.system(a, b);
            big_k = big_k.max(op_norm2(&m));
            for x in corners {
                let y = [x[0] - f[0], x[1] - f[1]];
                let fx = [m[0][0] * y[0] + m[0][1] * y[1], m[1][0] * y[0] + m[1][1] * y[1]];
                big_m = big_m.max(fx[0].hypot(fx[1]));
            }
        }
        (big_m, big_k)
    }
    fn boolean(&self, inputs: &[bool]) -> bool {
        !(inputs[0] || inputs[1])
    }
}

/// Parameters of the NOR with time-varying pMOS resistances
/// `alpha_i / (time since switch-on)` on top of the series value `2r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorAdvancedParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub r: f64,
    pub r_na: f64,
    pub r_nb: f64,
    pub c: f64,
    #[serde(default = "default_vdd")]
    pub vdd: f64,
    #[serde(default)]
    pub xi: Option<f64>,
    pub delta_min: f64,
}

impl NorAdvancedParams {
    /// 15 nm CMOS reference instance.
    pub fn reference_15nm() -> Self {
        NorAdvancedParams {
            alpha1: 20.4461e-9,
            alpha2: 9.3487e-9,
            r: 6539.995525955,
            r_na: 8760.489389736,
            r_nb: 8658.111065573,
            c: 3.6331599443276e-15,
            vdd: 1.0,
            xi: None,
            delta_min: 16.963423585525e-12,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.xi.unwrap_or(self.vdd / 2.0)
    }

    pub fn validate(&self) -> Result<(), GateError> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("r", self.r),
            ("r_na", self.r_na),
            ("r_nb", self.r_nb),
            ("c", self.c),
            ("vdd", self.vdd),
        ] {
            positive(name, v)?;
        }
        if !(self.delta_min.is_finite() && self.delta_min >= 0.0) {
            return Err(GateError::Parameter {
                name: "delta_min",
                value: self.delta_min,
                reason: "must be finite and non-negative",
            });
        }
        threshold_inside(self.threshold(), self.vdd)
    }
}

/// Exchanges the roles of inputs A and B, so that formulas stated for
/// `Δ >= 0` apply to negative separations.
pub fn symmetry_swap(p: &NorAdvancedParams, delta: f64) -> (NorAdvancedParams, f64) {
    let swapped = NorAdvancedParams {
        alpha1: p.alpha2,
        alpha2: p.alpha1,
        r_na: p.r_nb,
        r_nb: p.r_na,
        ..p.clone()
    };
    (swapped, delta.abs())
}

/// Coefficients of the pull-up conductance integral for input separation `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCoefficients {
    pub delta: f64,
    pub a: f64,
    pub d: f64,
    pub c_prime: f64,
    pub chi: f64,
    pub sqrt_chi: f64,
    /// Coefficient of `-log(1 + 2t/(d - sqrt(chi)))` in the integral.
    pub big_a: f64,
    /// The two zeros of `s^2 + d s + c'`.
    pub s1: f64,
    pub s2: f64,
}

impl DerivedCoefficients {
    pub fn new(p: &NorAdvancedParams, delta: f64) -> Self {
        let two_r = 2.0 * p.r;
        let a = (p.alpha1 + p.alpha2) / two_r;
        let d = a + delta;
        let c_prime = p.alpha2 * delta / two_r;
        let chi = d * d - 4.0 * c_prime;
        let sqrt_chi = chi.max(0.0).sqrt();
        let big = if d >= 0.0 { -0.5 * (d + sqrt_chi) } else { -0.5 * (d - sqrt_chi) };
        let small = if big != 0.0 { c_prime / big } else { 0.0 };
        // s1 = (-d + sqrt(chi))/2, s2 = (-d - sqrt(chi))/2
        let (s1, s2) = if d >= 0.0 { (small, big) } else { (big, small) };
        let big_a = if s2 != s1 { (-a * s1 - c_prime) / (s2 - s1) } else { 0.0 };
        DerivedCoefficients { delta, a, d, c_prime, chi, sqrt_chi, big_a, s1, s2 }
    }
}

const M00_FROM_10: ModeId = ModeId("(0,0)<-(1,0)");
const M00_FROM_01: ModeId = ModeId("(0,0)<-(0,1)");
const M00_FROM_11: ModeId = ModeId("(0,0)<-(1,1)");

#[derive(Debug, Clone, PartialEq)]
pub struct NorAdvanced {
    pub params: NorAdvancedParams,
}

impl NorAdvanced {
    pub fn new(params: NorAdvancedParams) -> Result<Self, GateError> {
        params.validate()?;
        Ok(NorAdvanced { params })
    }

    fn pull_down_rate(&self, a: bool, b: bool) -> f64 {
        let p = &self.params;
        let ga = if a { 1.0 / p.r_na } else { 0.0 };
        let gb = if b { 1.0 / p.r_nb } else { 0.0 };
        (ga + gb) / p.c
    }

    /// Pull-up description for mode (0,0) given the pMOS switch-on times.
    pub fn pull_up(&self, last_change: &[f64]) -> Option<PullUp> {
        let p = &self.params;
        let (ta, tb) = (last_change[0], last_change[1]);
        if ta == f64::NEG_INFINITY && tb == f64::NEG_INFINITY {
            return None;
        }
        let a_late = ta >= tb;
        let (late, early) = if a_late { (ta, tb) } else { (tb, ta) };
        let (alpha_late, alpha_early) = if a_late { (p.alpha1, p.alpha2) } else { (p.alpha2, p.alpha1) };
        let gap = (early != f64::NEG_INFINITY).then(|| late - early);
        Some(PullUp { vdd: p.vdd, c: p.c, r: p.r, alpha_late, alpha_early, gap, origin: late })
    }
}

impl HybridGate for NorAdvanced {
    fn input_count(&self) -> usize {
        2
    }
    fn pure_delay(&self, _j: usize) -> f64 {
        self.params.delta_min
    }
    fn threshold(&self) -> f64 {
        self.params.threshold()
    }
    fn vdd(&self) -> f64 {
        self.params.vdd
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn mode_id(&self, inputs: &[bool], last_change: &[f64]) -> ModeId {
        match (inputs[0], inputs[1]) {
            (true, true) => M11,
            (true, false) => M10,
            (false, true) => M01,
            (false, false) => {
                let (ta, tb) = (last_change[0], last_change[1]);
                if ta == f64::NEG_INFINITY && tb == f64::NEG_INFINITY {
                    M00
                } else if ta == tb {
                    M00_FROM_11
                } else if ta > tb {
                    M00_FROM_10
                } else {
                    M00_FROM_01
                }
            }
        }
    }
    fn steady_state(&self, mode: &Mode) -> Vec<f64> {
        let up = !(mode.inputs[0] || mode.inputs[1]);
        vec![if up { self.params.vdd } else { 0.0 }]
    }
    fn form(&self, mode: &Mode) -> Form {
        let p = &self.params;
        let (a, b) = (mode.inputs[0], mode.inputs[1]);
        if a || b {
            return Form::Exp { target: 0.0, rate: self.pull_down_rate(a, b) };
        }
        match self.pull_up(&mode.last_change) {
            Some(pu) => Form::PullUp(pu),
            None => Form::Exp { target: p.vdd, rate: 1.0 / (2.0 * p.r * p.c) },
        }
    }
    fn rhs(&self, mode: &Mode, t: f64, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let (a, b) = (mode.inputs[0], mode.inputs[1]);
        if a || b {
            return vec![-self.pull_down_rate(a, b) * x[0]];
        }
        match self.pull_up(&mode.last_change) {
            Some(pu) => vec![pu.rhs(t, x[0])],
            None => vec![(p.vdd - x[0]) / (2.0 * p.r * p.c)],
        }
    }
    fn continuity_constants(&self) -> (f64, f64) {
        let p = &self.params;
        let rate = self.pull_down_rate(true, true).max(1.0 / (2.0 * p.r * p.c));
        (p.vdd * rate, rate)
    }
    fn boolean(&self, inputs: &[bool]) -> bool {
        !(inputs[0] || inputs[1])
    }
}

/// Any supported gate model.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    IdmExp(IdmExp),
    NorSimple(NorSimple),
    NorAdvanced(NorAdvanced),
}

impl Gate {
    pub fn as_dyn(&self) -> &dyn HybridGate {
        match self {
            Gate::IdmExp(g) => g,
            Gate::NorSimple(g) => g,
            Gate::NorAdvanced(g) => g,
        }
    }

    /// Builds a gate from a model name and its JSON parameter object.
    pub fn from_json(model: &str, params: &serde_json::Value) -> Result<Gate, ModelError> {
        let parse_err = |e: serde_json::Error| ModelError::Params(model.to_string(), e.to_string());
        Ok(match model {
            "idm_exp" => Gate::IdmExp(IdmExp::new(
                serde_json::from_value(params.clone()).map_err(parse_err)?,
            )?),
            "nor_simple" => Gate::NorSimple(NorSimple::new(
                serde_json::from_value(params.clone()).map_err(parse_err)?,
            )?),
            "nor_advanced" => Gate::NorAdvanced(NorAdvanced::new(
                serde_json::from_value(params.clone()).map_err(parse_err)?,
            )?),
            other => return Err(ModelError::UnknownModel(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown gate model {0:?}")]
    UnknownModel(String),
    #[error("bad parameters for {0}: {1}")]
    Params(String, String),
    #[error(transparent)]
    Invalid(#[from] GateError),
}

/// Parameter file: a model name plus its fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub model: String,
    pub params: serde_json::Value,
}

impl ParamsFile {
    pub fn gate(&self) -> Result<Gate, ModelError> {
        Gate::from_json(&self.model, &self.params)
    }
}
