//! Binary and mode-switch signals over a bounded window `[0, T]`.
//!
//! A signal is a right-continuous step function given by its value at `0-`
//! and a strictly increasing list of value changes. Distances between
//! signals are measures of disagreement sets, computed exactly from the
//! change lists.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate_core::{GateError, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("transition {index} at time {time} lies outside [0, {horizon}]")]
    OutOfWindow { index: usize, time: f64, horizon: f64 },
    #[error("transition {index} at time {time} is not after the previous one")]
    NotIncreasing { index: usize, time: f64 },
    #[error("transition {index} at time {time} does not change the signal value")]
    NotAlternating { index: usize, time: f64 },
    #[error("horizons differ: {0} vs {1}")]
    HorizonMismatch(f64, f64),
    #[error("pure delay must be non-negative, got {0}")]
    NegativeDelay(f64),
    #[error("transition value must be 0 or 1, got {0}")]
    BadBit(u8),
}

/// A value change of a binary signal: `(t, 0)` is falling, `(t, 1)` rising.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub time: f64,
    pub value: bool,
}

impl Transition {
    pub fn new(time: f64, value: bool) -> Self {
        Transition { time, value }
    }

    pub fn is_rising(&self) -> bool {
        self.value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySignal {
    initial: bool,
    transitions: Vec<Transition>,
    horizon: f64,
}

fn check_horizon(horizon: f64) -> Result<(), SignalError> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(SignalError::BadHorizon(horizon))
    }
}

impl BinarySignal {
    pub fn new(
        initial: bool,
        transitions: Vec<Transition>,
        horizon: f64,
    ) -> Result<Self, SignalError> {
        check_horizon(horizon)?;
        let mut level = initial;
        let mut last = f64::NEG_INFINITY;
        for (index, tr) in transitions.iter().enumerate() {
            let time = tr.time;
            if !(time.is_finite() && (0.0..=horizon).contains(&time)) {
                return Err(SignalError::OutOfWindow { index, time, horizon });
            }
            if time <= last {
                return Err(SignalError::NotIncreasing { index, time });
            }
            if tr.value == level {
                return Err(SignalError::NotAlternating { index, time });
            }
            level = tr.value;
            last = time;
        }
        Ok(BinarySignal { initial, transitions, horizon })
    }

    pub fn constant(value: bool, horizon: f64) -> Result<Self, SignalError> {
        Self::new(value, Vec::new(), horizon)
    }

    /// Builds a signal from a list that may repeat values; redundant entries
    /// are dropped. Times must still be non-decreasing within the window.
    pub(crate) fn from_levels(initial: bool, changes: &[(f64, bool)], horizon: f64) -> Self {
        let mut transitions: Vec<Transition> = Vec::new();
        for &(time, value) in changes {
            let level = transitions.last().map_or(initial, |t| t.value);
            if value == level {
                continue;
            }
            if transitions.last().is_some_and(|t| t.time == time) {
                // Two changes at one instant cancel out.
                transitions.pop();
            } else {
                transitions.push(Transition::new(time, value));
            }
        }
        BinarySignal { initial, transitions, horizon }
    }

    /// Value at `0-`.
    pub fn initial(&self) -> bool {
        self.initial
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Right-continuous value at `t`; times before 0 give the initial value.
    pub fn value_at(&self, t: f64) -> bool {
        let idx = self.transitions.partition_point(|tr| tr.time <= t);
        if idx == 0 {
            self.initial
        } else {
            self.transitions[idx - 1].value
        }
    }

    pub fn final_value(&self) -> bool {
        self.transitions.last().map_or(self.initial, |t| t.value)
    }

    pub fn is_zero(&self) -> bool {
        !self.initial && self.transitions.is_empty()
    }

    fn changes(&self) -> Vec<(f64, bool)> {
        self.transitions.iter().map(|t| (t.time, t.value)).collect()
    }
}

/// Step function into a finite set of modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSwitchSignal<M> {
    initial_mode: M,
    switches: Vec<(f64, M)>,
    horizon: f64,
}

impl<M: Clone + PartialEq> ModeSwitchSignal<M> {
    pub fn new(initial_mode: M, switches: Vec<(f64, M)>, horizon: f64) -> Result<Self, SignalError> {
        check_horizon(horizon)?;
        let mut last = f64::NEG_INFINITY;
        let mut current = &initial_mode;
        for (index, (time, mode)) in switches.iter().enumerate() {
            let time = *time;
            if !(time.is_finite() && (0.0..=horizon).contains(&time)) {
                return Err(SignalError::OutOfWindow { index, time, horizon });
            }
            if time <= last {
                return Err(SignalError::NotIncreasing { index, time });
            }
            if mode == current {
                return Err(SignalError::NotAlternating { index, time });
            }
            last = time;
            current = mode;
        }
        Ok(ModeSwitchSignal { initial_mode, switches, horizon })
    }

    pub fn initial_mode(&self) -> &M {
        &self.initial_mode
    }

    pub fn switches(&self) -> &[(f64, M)] {
        &self.switches
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mode_at(&self, t: f64) -> &M {
        let idx = self.switches.partition_point(|(s, _)| *s <= t);
        if idx == 0 {
            &self.initial_mode
        } else {
            &self.switches[idx - 1].1
        }
    }

    /// Relabels every mode; consecutive equal labels are merged.
    pub fn map<N: Clone + PartialEq>(&self, f: impl Fn(&M) -> N) -> ModeSwitchSignal<N> {
        let initial_mode = f(&self.initial_mode);
        let mut switches: Vec<(f64, N)> = Vec::with_capacity(self.switches.len());
        let mut current = initial_mode.clone();
        for (t, m) in &self.switches {
            let n = f(m);
            if n != current {
                current = n.clone();
                switches.push((*t, n));
            }
        }
        ModeSwitchSignal { initial_mode, switches, horizon: self.horizon }
    }
}

/// Measure of `{t in [0, horizon] : a(t) != b(t)}` for two step functions.
fn disagreement<V: PartialEq>(
    a_init: &V,
    a: &[(f64, V)],
    b_init: &V,
    b: &[(f64, V)],
    horizon: f64,
) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut va, mut vb) = (a_init, b_init);
    let mut t = 0.0;
    let mut total = 0.0;
    // Changes at time 0 replace the initial values.
    while i < a.len() && a[i].0 <= 0.0 {
        va = &a[i].1;
        i += 1;
    }
    while j < b.len() && b[j].0 <= 0.0 {
        vb = &b[j].1;
        j += 1;
    }
    loop {
        let next_a = a.get(i).map_or(horizon, |c| c.0.min(horizon));
        let next_b = b.get(j).map_or(horizon, |c| c.0.min(horizon));
        let next = next_a.min(next_b);
        if va != vb {
            total += next - t;
        }
        t = next;
        if t >= horizon {
            break;
        }
        while i < a.len() && a[i].0 <= t {
            va = &a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 <= t {
            vb = &b[j].1;
            j += 1;
        }
    }
    total
}

/// Shifts a signal later by `delay`, holding the initial value on `[0, delay)`.
/// Transitions pushed past the horizon are dropped.
pub fn pure_delay_shift(s: &BinarySignal, delay: f64) -> Result<BinarySignal, SignalError> {
    if !(delay >= 0.0) || !delay.is_finite() {
        return Err(SignalError::NegativeDelay(delay));
    }
    let transitions = s
        .transitions
        .iter()
        .map(|tr| Transition::new(tr.time + delay, tr.value))
        .filter(|tr| tr.time <= s.horizon)
        .collect();
    Ok(BinarySignal { initial: s.initial, transitions, horizon: s.horizon })
}

/// 1-norm distance: the total time on `[0, T]` where the signals differ.
pub fn l1_distance(s1: &BinarySignal, s2: &BinarySignal) -> Result<f64, SignalError> {
    if s1.horizon != s2.horizon {
        return Err(SignalError::HorizonMismatch(s1.horizon, s2.horizon));
    }
    Ok(disagreement(&s1.initial, &s1.changes(), &s2.initial, &s2.changes(), s1.horizon))
}

/// `d_T`: the total time on `[0, T]` where the two signals select different modes.
pub fn mode_distance<M: Clone + PartialEq>(
    a: &ModeSwitchSignal<M>,
    b: &ModeSwitchSignal<M>,
) -> Result<f64, SignalError> {
    if a.horizon != b.horizon {
        return Err(SignalError::HorizonMismatch(a.horizon, b.horizon));
    }
    Ok(disagreement(&a.initial_mode, &a.switches, &b.initial_mode, &b.switches, a.horizon))
}

/// `Θ_ξ`: 1 exactly where the trajectory's output exceeds `xi`.
pub fn threshold_digitize(x: &Trajectory, xi: f64, horizon: f64) -> Result<BinarySignal, GateError> {
    x.digitize(xi, horizon)
}

/// Returns `(T0, Δ)` when `s` is the zero signal with exactly one pulse.
pub fn is_pulse(s: &BinarySignal) -> Option<(f64, f64)> {
    match (s.initial, s.transitions.as_slice()) {
        (false, [up, down]) if up.value && !down.value => Some((up.time, down.time - up.time)),
        _ => None,
    }
}

/// Outcome of checking an output signal against the short-pulse filtration
/// conditions for one input pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpfReport {
    /// The output is not the zero signal.
    pub nonzero: bool,
    /// Output pulses `(T0, Δ)` with `Δ <= ε`.
    pub short_pulses: Vec<(f64, f64)>,
    /// Output transition times at or after `T0 + Δ + K`.
    pub late_transitions: Vec<f64>,
}

impl SpfReport {
    pub fn violates_no_short_pulses(&self) -> bool {
        !self.short_pulses.is_empty()
    }

    pub fn violates_bounded_stabilization(&self) -> bool {
        !self.late_transitions.is_empty()
    }

    pub fn passes(&self) -> bool {
        !self.violates_no_short_pulses() && !self.violates_bounded_stabilization()
    }
}

pub fn spf_check(output: &BinarySignal, eps: f64, k: f64, input_pulse: (f64, f64)) -> SpfReport {
    let (t0, width) = input_pulse;
    let deadline = t0 + width + k;
    let trs = output.transitions();
    let short_pulses = trs
        .windows(2)
        .filter(|w| w[0].value && !w[1].value && w[1].time - w[0].time <= eps)
        .map(|w| (w[0].time, w[1].time - w[0].time))
        .collect();
    let late_transitions = trs.iter().filter(|t| t.time >= deadline).map(|t| t.time).collect();
    SpfReport { nonzero: !output.is_zero(), short_pulses, late_transitions }
}

mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

/// One signal entry of a stimulus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    #[serde(with = "bit")]
    pub initial: bool,
    #[serde(default)]
    pub transitions: Vec<(f64, u8)>,
}

/// Stimulus file: named input signals sharing one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusFile {
    pub signals: BTreeMap<String, SignalSpec>,
    pub horizon: f64,
}

impl SignalSpec {
    pub fn to_signal(&self, horizon: f64) -> Result<BinarySignal, SignalError> {
        let transitions = self
            .transitions
            .iter()
            .map(|&(time, v)| match v {
                0 => Ok(Transition::new(time, false)),
                1 => Ok(Transition::new(time, true)),
                other => Err(SignalError::BadBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        BinarySignal::new(self.initial, transitions, horizon)
    }

    pub fn from_signal(s: &BinarySignal) -> Self {
        SignalSpec {
            initial: s.initial(),
            transitions: s.transitions().iter().map(|t| (t.time, t.value as u8)).collect(),
        }
    }
}

impl StimulusFile {
    pub fn to_signals(&self) -> Result<BTreeMap<String, BinarySignal>, SignalError> {
        check_horizon(self.horizon)?;
        self.signals
            .iter()
            .map(|(name, spec)| Ok((name.clone(), spec.to_signal(self.horizon)?)))
            .collect()
    }
}
