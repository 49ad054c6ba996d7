//! Real Lambert W branches and a bracketing root finder.
//!
//! Both Lambert W branches start from a series or asymptotic estimate and
//! are polished with Halley's iteration. Near the branch point `-1/e` the
//! estimate comes from the branch-point series in `p = ±sqrt(2(e·x + 1))`,
//! where `e·x + 1` is formed with a split constant for `1/e` so that the
//! distance to the branch point keeps its leading digits.

use thiserror::Error;

/// `1/e` split into a double and its rounding remainder.
const INV_E_HI: f64 = 0.367_879_441_171_442_33;
const INV_E_LO: f64 = -1.242_875_367_278_836_3e-17;

/// Inputs within about one ulp of `-1/e` return exactly `-1`.
const BRANCH_SNAP: f64 = 6e-17;

const HALLEY_MAX_ITER: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("lambert W{branch}: argument {x} outside the real domain")]
    Domain { branch: &'static str, x: f64 },
    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi}")]
    NoSignChange { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("non-finite function value {fx} at {x}")]
    NotFinite { x: f64, fx: f64 },
    #[error("root finder did not converge after {iterations} iterations (last bracket [{lo}, {hi}])")]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },
}

/// Distance `x + 1/e`, carried with the low part of `1/e`.
fn branch_offset(x: f64) -> f64 {
    (x + INV_E_HI) + INV_E_LO
}

/// Series of W around the branch point in `p = ±sqrt(2(e·x + 1))`.
fn branch_series(p: f64) -> f64 {
    const C: [f64; 7] = [
        -1.0,
        1.0,
        -1.0 / 3.0,
        11.0 / 72.0,
        -43.0 / 540.0,
        769.0 / 17280.0,
        -221.0 / 8505.0,
    ];
    C.iter().rev().fold(0.0, |acc, c| acc * p + c)
}

fn halley(mut w: f64, x: f64) -> f64 {
    for _ in 0..HALLEY_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = w - step;
        // Halley steps never legitimately cross the branch point.
        let next = if (w + 1.0).signum() != (next + 1.0).signum() {
            0.5 * (w - 1.0)
        } else {
            next
        };
        if (next - w).abs() <= 4.0 * f64::EPSILON * next.abs() {
            w = next;
            break;
        }
        w = next;
    }
    w
}

/// Principal branch `W0(x)`, defined for `x >= -1/e`, with `W0(x) >= -1`.
pub fn lambert_w0(x: f64) -> Result<f64, NumericsError> {
    if x.is_nan() {
        return Err(NumericsError::Domain { branch: "0", x });
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let off = branch_offset(x);
    if off < -BRANCH_SNAP {
        return Err(NumericsError::Domain { branch: "0", x });
    }
    if off.abs() <= BRANCH_SNAP {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let guess = if off < 0.05 {
        branch_series((2.0 * std::f64::consts::E * off).sqrt())
    } else if x.abs() < 1e-3 {
        // W0(x) = x - x^2 + 3/2 x^3 - ...
        x * (1.0 - x * (1.0 - 1.5 * x))
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    Ok(halley(guess, x))
}

/// Lower branch `W_{-1}(x)`, defined for `-1/e <= x < 0`, with `W_{-1}(x) <= -1`.
pub fn lambert_wm1(x: f64) -> Result<f64, NumericsError> {
    if x.is_nan() || x >= 0.0 {
        return Err(NumericsError::Domain { branch: "-1", x });
    }
    let off = branch_offset(x);
    if off < -BRANCH_SNAP {
        return Err(NumericsError::Domain { branch: "-1", x });
    }
    if off.abs() <= BRANCH_SNAP {
        return Ok(-1.0);
    }
    let guess = if off < 0.05 {
        branch_series(-(2.0 * std::f64::consts::E * off).sqrt())
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    let w = halley(guess, x);
    Ok(w.min(-1.0))
}

/// Closed search interval handed to [`find_root`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self, NumericsError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Bracket { lo, hi })
        } else {
            Err(NumericsError::InvalidBracket { lo, hi })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

const ROOT_MAX_ITER: usize = 200;

/// Brent's method: bisection interleaved with secant and inverse quadratic
/// interpolation steps. Stops when `f` vanishes or the bracket shrinks below
/// `tol` (plus a few ulps of the current iterate).
pub fn find_root<F>(mut f: F, bracket: Bracket, tol: f64) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (bracket.lo, bracket.hi);
    let mut fa = f(a);
    let mut fb = f(b);
    for (x, fx) in [(a, fa), (b, fb)] {
        if !fx.is_finite() {
            return Err(NumericsError::NotFinite { x, fx });
        }
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange { lo: a, hi: b, flo: fa, fhi: fb });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..ROOT_MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(NumericsError::NotFinite { x: b, fx: fb });
        }
    }
    Err(NumericsError::NoConvergence {
        iterations: ROOT_MAX_ITER,
        lo: b.min(c),
        hi: b.max(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if f(mid).signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn rel_residual(w: f64, x: f64) -> f64 {
        ((w * w.exp() - x) / x).abs()
    }

    #[test]
    fn w0_identity_and_branch_point() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_eq!(lambert_w0(-INV_E_HI).unwrap(), -1.0);
        assert_eq!(lambert_wm1(-INV_E_HI).unwrap(), -1.0);
    }

    #[test]
    fn omega_constant_matches_bisection() {
        let oracle = bisect(|w| w * w.exp() - 1.0, 0.5, 0.6);
        let w = lambert_w0(1.0).unwrap();
        assert!((w - oracle).abs() < 1e-14, "{w} vs {oracle}");
        assert!((w - 0.567_143_290_4).abs() < 1e-10);
    }

    #[test]
    fn wm1_small_argument_matches_bisection() {
        let x = -1e-3;
        let oracle = bisect(|w| w * w.exp() - x, -20.0, -1.0);
        let w = lambert_wm1(x).unwrap();
        assert!(w <= -1.0);
        assert!((w - oracle).abs() < 1e-12 * oracle.abs());
        assert!(rel_residual(w, x) < 1e-12);
    }

    #[test]
    fn wm1_quarter() {
        let w = lambert_wm1(-0.25).unwrap();
        assert!(w > -3.0 && w < -1.0);
        assert!(rel_residual(w, -0.25) < 1e-12);
        let oracle = bisect(|w| w * w.exp() + 0.25, -3.0, -1.0);
        assert!((w - oracle).abs() < 1e-13);
    }

    #[test]
    fn domain_errors() {
        assert!(lambert_w0(-0.4).is_err());
        assert!(lambert_wm1(-0.4).is_err());
        assert!(lambert_wm1(0.0).is_err());
        assert!(lambert_wm1(0.5).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn near_branch_point_residuals() {
        for k in 1..=15 {
            let x = -INV_E_HI + 10f64.powi(-k);
            for w in [lambert_w0(x).unwrap(), lambert_wm1(x).unwrap()] {
                assert!(rel_residual(w, x) <= 1e-12, "x = {x:e}, w = {w}");
            }
            assert!(lambert_w0(x).unwrap() >= -1.0);
            assert!(lambert_wm1(x).unwrap() <= -1.0);
        }
    }

    #[test]
    fn large_and_tiny_arguments() {
        for x in [1e-300, 1e-12, 1e-5, 0.1, 2.0, 10.0, 1e6, 1e100, 1e300] {
            let w = lambert_w0(x).unwrap();
            assert!(rel_residual(w, x) <= 1e-12, "x = {x:e}");
            let w = lambert_w0(-x.min(0.3)).unwrap();
            assert!(rel_residual(w, -x.min(0.3)) <= 1e-12, "x = {:e}", -x);
        }
        for x in [-1e-300, -1e-100, -1e-20, -1e-8, -0.01, -0.2, -0.36] {
            let w = lambert_wm1(x).unwrap();
            assert!(rel_residual(w, x) <= 1e-12, "x = {x:e}");
        }
    }

    #[test]
    fn brent_simple_roots() {
        let r = find_root(|x| x * x - 2.0, Bracket::new(1.0, 2.0).unwrap(), 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        let r = find_root(|x| x.exp() - 3.0, Bracket::new(0.0, 2.0).unwrap(), 1e-14).unwrap();
        assert!((r - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn brent_errors_and_determinism() {
        let br = Bracket::new(0.0, 1.0).unwrap();
        assert!(matches!(
            find_root(|x| x + 1.0, br, 1e-12),
            Err(NumericsError::NoSignChange { .. })
        ));
        assert!(Bracket::new(1.0, 1.0).is_err());
        let f = |x: f64| (x - 0.3).powi(3) + 1e-3 * x;
        let a = find_root(f, br, 1e-15).unwrap();
        let b = find_root(f, br, 1e-15).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a >= br.lo && a <= br.hi);
    }
}
