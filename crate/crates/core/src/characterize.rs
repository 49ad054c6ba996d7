//! Parametrizing the advanced NOR from six measured delays, without fitting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{extremal_delays, mis_delay_falling_output, DelayError};
use crate::gate_models::NorAdvancedParams;
use crate::numerics::{find_root, lambert_wm1, Bracket, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharacterizeError {
    #[error("delay {name} = {value} must be positive and finite")]
    NonPositive { name: &'static str, value: f64 },
    #[error("capacitance must be positive and finite, got {0}")]
    Capacitance(f64),
    #[error("falling-output delays are inconsistent: (d(inf) - d(0)) (d(-inf) - d(0)) = {0} is negative")]
    NegativeRadicand(f64),
    #[error("derived pure delay {delta_min} must lie in (0, {fall_zero})")]
    PureDelay { delta_min: f64, fall_zero: f64 },
    #[error("A(t, R, C) needs t > 2RC ln 2 (t = {t}, R = {r}, C = {c})")]
    Domain { t: f64, r: f64, c: f64 },
    #[error("no sign change of the resistance equation for R in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Delay(#[from] DelayError),
}

/// Six total (measured) delays: falling and rising output, each for the
/// input separations `-inf`, `0` and `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicDelays {
    pub fall_minus_inf: f64,
    pub fall_zero: f64,
    pub fall_plus_inf: f64,
    pub rise_minus_inf: f64,
    pub rise_zero: f64,
    pub rise_plus_inf: f64,
}

impl CharacteristicDelays {
    /// The delays a given parameter set produces, pure delay included.
    pub fn from_params(p: &NorAdvancedParams) -> Result<Self, CharacterizeError> {
        let e = extremal_delays(p)?;
        let fall_log = (p.vdd / p.threshold()).ln();
        Ok(CharacteristicDelays {
            fall_minus_inf: p.delta_min + fall_log * p.c * p.r_nb,
            fall_zero: p.delta_min + mis_delay_falling_output(0.0, p),
            fall_plus_inf: p.delta_min + fall_log * p.c * p.r_na,
            rise_minus_inf: p.delta_min + e.minus_inf,
            rise_zero: p.delta_min + e.zero,
            rise_plus_inf: p.delta_min + e.plus_inf,
        })
    }

    fn check(&self) -> Result<(), CharacterizeError> {
        for (name, value) in [
            ("fall_minus_inf", self.fall_minus_inf),
            ("fall_zero", self.fall_zero),
            ("fall_plus_inf", self.fall_plus_inf),
            ("rise_minus_inf", self.rise_minus_inf),
            ("rise_zero", self.rise_zero),
            ("rise_plus_inf", self.rise_plus_inf),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(CharacterizeError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// Pure delay and nMOS resistances from the falling-output delays.
pub fn derive_pure_delay_and_nmos(
    d: &CharacteristicDelays,
    c: f64,
) -> Result<(f64, f64, f64), CharacterizeError> {
    d.check()?;
    if !(c.is_finite() && c > 0.0) {
        return Err(CharacterizeError::Capacitance(c));
    }
    let radicand = (d.fall_plus_inf - d.fall_zero) * (d.fall_minus_inf - d.fall_zero);
    if radicand < 0.0 {
        return Err(CharacterizeError::NegativeRadicand(radicand));
    }
    let delta_min = d.fall_zero - radicand.sqrt();
    if !(delta_min > 0.0 && delta_min < d.fall_zero) {
        return Err(CharacterizeError::PureDelay { delta_min, fall_zero: d.fall_zero });
    }
    let ln2 = 2f64.ln();
    let r_nb = (d.fall_minus_inf - delta_min) / (c * ln2);
    let r_na = (d.fall_plus_inf - delta_min) / (c * ln2);
    Ok((delta_min, r_na, r_nb))
}

/// The sum of pMOS coefficients for which a pull-up from 0 with series
/// resistance `2R` reaches `V_DD/2` after `t` when both pMOS switch on together.
pub fn a_of(t: f64, r: f64, c: f64) -> Result<f64, CharacterizeError> {
    let k = 2.0 * r * c * 2f64.ln();
    if !(t > k) {
        return Err(CharacterizeError::Domain { t, r, c });
    }
    let q = k / t;
    let w = lambert_wm1((q - 1.0) * (q - 1.0).exp())?;
    let denom = w + 1.0 - q;
    if !(denom < 0.0) {
        return Err(CharacterizeError::Domain { t, r, c });
    }
    Ok(-2.0 * r * (t - k) / denom)
}

/// Characterized parameters plus diagnostics from the resistance search.
#[derive(Debug, Clone, PartialEq)]
pub struct Characterization {
    pub params: NorAdvancedParams,
    /// Number of sign changes found while scanning `R`; more than one means
    /// the equation has several roots and the smallest was taken.
    pub sign_changes: usize,
}

const SCAN_POINTS: usize = 4000;
const R_LO: f64 = 1.0;
const R_HI: f64 = 1e9;

pub fn characterize_gate(d: &CharacteristicDelays, c: f64) -> Result<Characterization, CharacterizeError> {
    let (delta_min, r_na, r_nb) = derive_pure_delay_and_nmos(d, c)?;
    let t0 = d.rise_zero - delta_min;
    let t_plus = d.rise_plus_inf - delta_min;
    let t_minus = d.rise_minus_inf - delta_min;
    for (name, value) in [("rise_zero", t0), ("rise_plus_inf", t_plus), ("rise_minus_inf", t_minus)] {
        if !(value > 0.0) {
            return Err(CharacterizeError::NonPositive { name, value });
        }
    }
    let residual = |r: f64| -> Result<f64, CharacterizeError> {
        Ok(a_of(t0, r, c)? - a_of(t_plus, r, c)? - a_of(t_minus, r, c)?)
    };

    // A(t, R, C) only exists for R < t / (2 C ln 2).
    let r_max = t0.min(t_plus).min(t_minus) / (2.0 * c * 2f64.ln());
    let hi = R_HI.min(r_max * (1.0 - 1e-9));
    if !(hi > R_LO) {
        return Err(CharacterizeError::NoRoot { lo: R_LO, hi });
    }
    let ratio = (hi / R_LO).ln();
    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|k| if k == SCAN_POINTS { hi } else { R_LO * (ratio * k as f64 / SCAN_POINTS as f64).exp() })
        .collect();
    let values = grid.iter().map(|&r| residual(r)).collect::<Result<Vec<_>, _>>()?;
    let brackets: Vec<(f64, f64)> = grid
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[0] == 0.0 || v[0].signum() != v[1].signum())
        .map(|(g, _)| (g[0], g[1]))
        .collect();
    let &(lo, up) = brackets.first().ok_or(CharacterizeError::NoRoot { lo: R_LO, hi })?;
    let r = find_root(|r| residual(r).unwrap_or(f64::NAN), Bracket::new(lo, up)?, 1e-14 * up)?;

    let params = NorAdvancedParams {
        alpha1: a_of(t_minus, r, c)?,
        alpha2: a_of(t_plus, r, c)?,
        r,
        r_na,
        r_nb,
        c,
        vdd: 1.0,
        xi: None,
        delta_min,
    };
    Ok(Characterization { params, sign_changes: brackets.len() })
}
