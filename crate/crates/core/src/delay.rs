//! MIS delay functions of the advanced NOR: closed-form asymptotic
//! expressions and exact values from the trajectories.
//!
//! `delta` is the separation `t_B - t_A` of the delayed input transitions.
//! Falling-output delays are measured from the earlier input, rising-output
//! delays from the later one; neither includes the pure delay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate_core::{Form, GateError, Mode, ModeId, ModeTrajectory, PullUp};
use crate::gate_models::{symmetry_swap, NorAdvancedParams};
use crate::numerics::{find_root, lambert_wm1, Bracket, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DelayError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("a sweep needs at least 2 steps, got {0}")]
    Steps(usize),
    #[error("sweep range [{0}, {1}] is empty or not finite")]
    Range(f64, f64),
    #[error("no threshold crossing found for delta = {0}")]
    NoCrossing(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    RisingOutput,
    FallingOutput,
}

/// Rising-output delays at `delta = 0` and in the limits `delta -> ±inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalDelays {
    pub zero: f64,
    pub plus_inf: f64,
    pub minus_inf: f64,
}

/// `ln(V_DD / (V_DD - xi))`: the value of `∫ 1/(RC)` a pull-up from 0 needs to reach `xi`.
fn rise_log(p: &NorAdvancedParams) -> f64 {
    (p.vdd / (p.vdd - p.threshold())).ln()
}

/// `ln(V_DD / xi)`: the same for a pull-down from `V_DD`.
fn fall_log(p: &NorAdvancedParams) -> f64 {
    (p.vdd / p.threshold()).ln()
}

/// Falling-output MIS delay (rising inputs).
pub fn mis_delay_falling_output(delta: f64, p: &NorAdvancedParams) -> f64 {
    let (q, d) = if delta < 0.0 { symmetry_swap(p, delta) } else { (p.clone(), delta) };
    let l = fall_log(&q);
    let single = l * q.c * q.r_na;
    if d >= single {
        single
    } else {
        (l * q.c * q.r_na * q.r_nb - d * q.r_nb) / (q.r_na + q.r_nb) + d
    }
}

/// Falling-output delay from the pasted trajectory: mode (1,0) from `V_DD`,
/// then (1,1) once the second input arrives.
pub fn exact_delay_falling_output(delta: f64, p: &NorAdvancedParams) -> Result<f64, DelayError> {
    let (q, d) = if delta < 0.0 { symmetry_swap(p, delta) } else { (p.clone(), delta) };
    let xi = q.threshold();
    let first = ModeTrajectory::new(
        mode_stub("(1,0)"),
        0.0,
        vec![q.vdd],
        Form::Exp { target: 0.0, rate: 1.0 / (q.c * q.r_na) },
    );
    let single = fall_log(&q) * q.c * q.r_na;
    let tol = 0.0;
    if let Some(&(t, _)) = first.crossings(xi, d.min(2.0 * single), tol)?.first() {
        if t <= d {
            return Ok(t);
        }
    }
    let second = ModeTrajectory::new(
        mode_stub("(1,1)"),
        d,
        first.eval(d),
        Form::Exp { target: 0.0, rate: (1.0 / q.r_na + 1.0 / q.r_nb) / q.c },
    );
    second
        .crossings(xi, d + 2.0 * single, tol)?
        .first()
        .map(|&(t, _)| t)
        .ok_or(DelayError::NoCrossing(delta))
}

fn mode_stub(id: &'static str) -> Mode {
    Mode { id: ModeId(id), inputs: Vec::new(), last_change: Vec::new() }
}

/// `-a [1 + W_{-1}(-exp(-1 - 2RC L / a))]`: time for the pull-up with series
/// `a·2R/t + 2R` to bring the output from 0 to the threshold.
fn lambert_delay(a: f64, p: &NorAdvancedParams) -> Result<f64, NumericsError> {
    let k = 2.0 * p.r * p.c * rise_log(p) / a;
    let w = lambert_wm1(-(-1.0 - k).exp())?;
    Ok(-a * (1.0 + w))
}

pub fn extremal_delays(p: &NorAdvancedParams) -> Result<ExtremalDelays, DelayError> {
    let two_r = 2.0 * p.r;
    Ok(ExtremalDelays {
        zero: lambert_delay((p.alpha1 + p.alpha2) / two_r, p)?,
        plus_inf: lambert_delay(p.alpha2 / two_r, p)?,
        minus_inf: lambert_delay(p.alpha1 / two_r, p)?,
    })
}

/// Asymptotic rising-output MIS delay: the linear expansion around
/// `delta = 0` pasted with the constant limits.
pub fn mis_delay_rising_output(delta: f64, p: &NorAdvancedParams) -> Result<f64, DelayError> {
    let e = extremal_delays(p)?;
    Ok(rising_from_extremal(delta, p, &e))
}

fn rising_from_extremal(delta: f64, p: &NorAdvancedParams, e: &ExtremalDelays) -> f64 {
    let sum = p.alpha1 + p.alpha2;
    if delta >= 0.0 {
        let knee = sum * (e.zero - e.plus_inf) / p.alpha1;
        if delta < knee {
            e.zero - p.alpha1 / sum * delta
        } else {
            e.plus_inf
        }
    } else {
        let d = -delta;
        let knee = sum * (e.zero - e.minus_inf) / p.alpha2;
        if d < knee {
            e.zero - p.alpha2 / sum * d
        } else {
            e.minus_inf
        }
    }
}

/// Exact rising-output delay: the root of `I_1(t) = C·L` for the pull-up
/// whose early pMOS switched on `|delta|` before the late one.
pub fn exact_delay_rising_output(delta: f64, p: &NorAdvancedParams) -> Result<f64, DelayError> {
    let e = extremal_delays(p)?;
    exact_rising_with_hint(delta, p, e.zero)
}

fn exact_rising_with_hint(delta: f64, p: &NorAdvancedParams, delta0: f64) -> Result<f64, DelayError> {
    let (q, d) = if delta < 0.0 { symmetry_swap(p, delta) } else { (p.clone(), delta) };
    // For delta >= 0, input A switched first, so B (alpha2) is the late pMOS.
    let pull = PullUp {
        vdd: q.vdd,
        c: q.c,
        r: q.r,
        alpha_late: q.alpha2,
        alpha_early: q.alpha1,
        gap: d.is_finite().then_some(d),
        origin: 0.0,
    };
    let goal = q.c * rise_log(&q);
    let g = |t: f64| pull.conductance_integral(t) - goal;
    let mut hi = 10.0 * (delta0 + 2.0 * q.r * q.c);
    let mut tries = 0;
    while g(hi) <= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 200 || !hi.is_finite() {
            return Err(DelayError::NoCrossing(delta));
        }
    }
    Ok(find_root(g, Bracket::new(0.0, hi)?, 0.0)?)
}

/// Delay from the first causing input transition at the gate inputs to the
/// output crossing, including the pure delay. Rising outputs use the exact
/// delay and are measured from the later input.
pub fn total_gate_delay(delta: f64, edge: Edge, p: &NorAdvancedParams) -> Result<f64, DelayError> {
    let mis = match edge {
        Edge::FallingOutput => mis_delay_falling_output(delta, p),
        Edge::RisingOutput => exact_delay_rising_output(delta, p)?,
    };
    Ok(p.delta_min + mis)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub delta: f64,
    pub asymptotic: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisDelayCurve {
    pub edge: Edge,
    pub samples: Vec<CurveSample>,
}

impl MisDelayCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta_s,delay_asymptotic_s,delay_exact_s\n");
        for s in &self.samples {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", s.delta, s.asymptotic, s.exact));
        }
        out
    }
}

/// Evaluates both delay variants on `steps` evenly spaced separations in `[lo, hi]`.
pub fn sweep_curve(
    edge: Edge,
    lo: f64,
    hi: f64,
    steps: usize,
    p: &NorAdvancedParams,
) -> Result<MisDelayCurve, DelayError> {
    if steps < 2 {
        return Err(DelayError::Steps(steps));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(DelayError::Range(lo, hi));
    }
    let e = extremal_delays(p)?;
    let samples = (0..steps)
        .into_par_iter()
        .map(|k| {
            let delta = if k == steps - 1 { hi } else { lo + (hi - lo) * k as f64 / (steps - 1) as f64 };
            let (asymptotic, exact) = match edge {
                Edge::FallingOutput => {
                    (mis_delay_falling_output(delta, p), exact_delay_falling_output(delta, p)?)
                }
                Edge::RisingOutput => {
                    (rising_from_extremal(delta, p, &e), exact_rising_with_hint(delta, p, e.zero)?)
                }
            };
            Ok(CurveSample { delta, asymptotic, exact })
        })
        .collect::<Result<Vec<_>, DelayError>>()?;
    Ok(MisDelayCurve { edge, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_params() -> NorAdvancedParams {
        NorAdvancedParams::reference_15nm()
    }

    #[test]
    fn falling_saturates() {
        let p = reference_params();
        let sat_a = 2f64.ln() * p.c * p.r_na;
        let sat_b = 2f64.ln() * p.c * p.r_nb;
        assert_eq!(mis_delay_falling_output(sat_a * 1.5, &p), sat_a);
        assert_eq!(mis_delay_falling_output(-sat_b * 1.5, &p), sat_b);
        // Continuous at both knees.
        let below = mis_delay_falling_output(sat_a * (1.0 - 1e-12), &p);
        assert!((below - sat_a).abs() < 1e-12 * sat_a * 10.0);
        let below = mis_delay_falling_output(-sat_b * (1.0 - 1e-12), &p);
        assert!((below - sat_b).abs() < 1e-12 * sat_b * 10.0);
    }

    #[test]
    fn falling_symmetric_zero() {
        let mut p = reference_params();
        p.r_nb = p.r_na;
        let want = 2f64.ln() * p.c * p.r_na / 2.0;
        assert!((mis_delay_falling_output(0.0, &p) - want).abs() < 1e-15 * want.max(1.0));
    }

    #[test]
    fn falling_formula_matches_trajectory() {
        let p = reference_params();
        for delta in [-30e-12, -5e-12, 0.0, 5e-12, 12e-12, 40e-12] {
            let f = mis_delay_falling_output(delta, &p);
            let x = exact_delay_falling_output(delta, &p).unwrap();
            assert!((f - x).abs() <= 1e-12 * f, "{delta}: {f} vs {x}");
        }
    }

    #[test]
    fn rising_asymptote_endpoints() {
        let p = reference_params();
        let e = extremal_delays(&p).unwrap();
        assert_eq!(mis_delay_rising_output(0.0, &p).unwrap(), e.zero);
        let knee = (p.alpha1 + p.alpha2) * (e.zero - e.plus_inf) / p.alpha1;
        assert_eq!(mis_delay_rising_output(knee, &p).unwrap(), e.plus_inf);
        let left = mis_delay_rising_output(knee * (1.0 - 1e-12), &p).unwrap();
        assert!((left - e.plus_inf).abs() < 1e-9 * e.plus_inf);
        assert!(e.zero > e.plus_inf.max(e.minus_inf));
    }

    #[test]
    fn symmetric_alphas_give_equal_limits() {
        let mut p = reference_params();
        p.alpha2 = p.alpha1;
        let e = extremal_delays(&p).unwrap();
        assert_eq!(e.plus_inf, e.minus_inf);
    }

    #[test]
    fn time_scaling() {
        let p = reference_params();
        let k = 3.0;
        let mut q = p.clone();
        q.alpha1 *= k;
        q.alpha2 *= k;
        q.c *= k;
        let (a, b) = (extremal_delays(&p).unwrap(), extremal_delays(&q).unwrap());
        for (x, y) in [(a.zero, b.zero), (a.plus_inf, b.plus_inf), (a.minus_inf, b.minus_inf)] {
            assert!((y - k * x).abs() < 1e-12 * y);
        }
    }

    #[test]
    fn sweep_shapes() {
        let p = reference_params();
        assert!(matches!(sweep_curve(Edge::FallingOutput, 0.0, 1.0, 1, &p), Err(DelayError::Steps(1))));
        let c = sweep_curve(Edge::FallingOutput, -1e-12, 1e-12, 2, &p).unwrap();
        assert_eq!(c.samples.len(), 2);
        assert_eq!(c.samples[0].delta, -1e-12);
        assert_eq!(c.samples[1].delta, 1e-12);
        assert!(c.to_csv().starts_with("delta_s,delay_asymptotic_s,delay_exact_s\n"));
    }

    #[test]
    fn negative_exact_uses_swap() {
        let p = reference_params();
        let (q, d) = symmetry_swap(&p, -7e-12);
        let direct = exact_delay_rising_output(d, &q).unwrap();
        assert_eq!(exact_delay_rising_output(-7e-12, &p).unwrap(), direct);
    }
}
