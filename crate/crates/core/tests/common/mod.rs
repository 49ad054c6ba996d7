//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use hybridgate::circuit::{Execution, Netlist};
use hybridgate::gate_models::{
    BoolFn, Gate, IdmExp, IdmExpParams, NorAdvanced, NorAdvancedParams, NorSimple, NorSimpleParams, PureDelays,
};
use hybridgate::signals::{BinarySignal, Transition};

/// Adaptive Dormand–Prince 5(4) integration of `x' = f(t, x)` from `t0` to `t1`.
pub fn rk45<F>(f: F, t0: f64, x0: &[f64], t1: f64, rtol: f64, atol: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = x0.len();
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut h = (t1 - t0) / 1000.0;
    if h == 0.0 {
        return x;
    }
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let xs: Vec<f64> = (0..n)
                .map(|i| x[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                .collect();
            k.push(f(t + C[s] * h, &xs));
        }
        let x5: Vec<f64> = (0..n).map(|i| x[i] + h * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>()).collect();
        let x4: Vec<f64> = (0..n).map(|i| x[i] + h * (0..7).map(|j| B4[j] * k[j][i]).sum::<f64>()).collect();
        let err = (0..n)
            .map(|i| {
                let sc = atol + rtol * x[i].abs().max(x5[i].abs());
                ((x5[i] - x4[i]) / sc).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let err = err.sqrt();
        if err <= 1.0 {
            t += h;
            x = x5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    x
}

/// Plain bisection on a sign-changing bracket.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "bisection bracket has no sign change");
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Adaptive Simpson quadrature.
pub fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Disagreement measure of two predicates estimated on cell midpoints of a uniform grid.
pub fn sampled_measure<F: Fn(f64) -> bool>(differ: F, horizon: f64, cells: usize) -> f64 {
    let step = horizon / cells as f64;
    (0..cells).filter(|&i| differ((i as f64 + 0.5) * step)).count() as f64 * step
}

pub fn signal(initial: bool, trs: &[(f64, bool)], horizon: f64) -> BinarySignal {
    BinarySignal::new(initial, trs.iter().map(|&(t, v)| Transition::new(t, v)).collect(), horizon).unwrap()
}

pub fn reference_params() -> NorAdvancedParams {
    NorAdvancedParams::reference_15nm()
}

pub fn nor_advanced() -> NorAdvanced {
    NorAdvanced::new(reference_params()).unwrap()
}

pub fn nor_simple_params() -> NorSimpleParams {
    NorSimpleParams {
        r1: 5000.0,
        r2: 7000.0,
        r3: 8000.0,
        r4: 9000.0,
        c: 3e-15,
        c_int: 1e-15,
        vdd: 1.0,
        xi: None,
        delta_min: PureDelays::Same(10e-12),
    }
}

pub fn nor_simple() -> NorSimple {
    NorSimple::new(nor_simple_params()).unwrap()
}

pub fn idm_inverter(tau: f64, delta: f64) -> Gate {
    Gate::IdmExp(IdmExp::channel(tau, delta, true).unwrap())
}

pub fn stimuli(pairs: &[(&str, BinarySignal)]) -> BTreeMap<String, BinarySignal> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

use hybridgate::gate_core::Mode;

/// A single trajectory piece to check against its ODE.
pub struct Case {
    pub name: String,
    pub gate: Gate,
    pub mode: Mode,
    pub x0: Vec<f64>,
    /// Length of the checked window.
    pub span: f64,
    /// Finite-difference step.
    pub h: f64,
    /// Derivative scale the residual is measured against.
    pub scale: f64,
}

pub fn trajectory_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    let tau = 5e-12;
    let idm = idm_inverter(tau, 1e-12);
    for (inputs, x0) in [(vec![false], 0.0), (vec![false], 0.3), (vec![true], 1.0), (vec![true], 0.7)] {
        let mode = Mode::select(idm.as_dyn(), inputs.clone(), vec![0.0]);
        cases.push(Case {
            name: format!("idm {} from {x0}", mode.id),
            gate: idm.clone(),
            mode,
            x0: vec![x0],
            span: 5.0 * tau,
            h: 1e-3 * tau,
            scale: 1.0 / tau,
        });
    }

    let simple = Gate::NorSimple(nor_simple());
    let sp = nor_simple_params();
    let tmin = [sp.c * sp.r2, sp.c_int * sp.r1, sp.c_int * sp.r2, sp.c * sp.r3, sp.c * sp.r4]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let tmax = [sp.c * sp.r2, sp.c * sp.r3, sp.c * (sp.r1 + sp.r2), sp.c * sp.r4]
        .into_iter()
        .fold(0.0, f64::max);
    for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
        for x0 in [[0.0, 0.0], [1.0, 1.0], [0.2, 0.9], [0.8, 0.1]] {
            let mode = Mode::select(simple.as_dyn(), vec![a, b], vec![0.0, 0.0]);
            cases.push(Case {
                name: format!("simple {} from {x0:?}", mode.id),
                gate: simple.clone(),
                mode,
                x0: x0.to_vec(),
                span: 5.0 * 4.0 * tmax,
                h: 1e-3 * tmin,
                scale: 1.0 / tmin,
            });
        }
    }

    let p = reference_params();
    let adv = Gate::NorAdvanced(nor_advanced());
    let two_rc = 2.0 * p.r * p.c;
    let a = (p.alpha1 + p.alpha2) / (2.0 * p.r);
    for (a_in, b_in) in [(true, false), (false, true), (true, true)] {
        let mode = Mode::select(adv.as_dyn(), vec![a_in, b_in], vec![0.0, 0.0]);
        cases.push(Case {
            name: format!("advanced {} from vdd", mode.id),
            gate: adv.clone(),
            mode,
            x0: vec![1.0],
            span: 5.0 * p.c * p.r_na,
            h: 1e-3 * p.c * p.r_na * 0.5,
            scale: 1.0 / (p.c * p.r_na),
        });
    }
    let ninf = f64::NEG_INFINITY;
    let histories: Vec<(&str, [f64; 2])> = vec![
        ("no history", [ninf, ninf]),
        ("A late, B forever", [0.0, ninf]),
        ("B late, A forever", [ninf, 0.0]),
        ("simultaneous", [0.0, 0.0]),
        ("A late by 1e-13", [0.0, -1e-13]),
        ("A late by 5e-12", [0.0, -5e-12]),
        ("B late by 2e-12", [-2e-12, 0.0]),
        ("B late by 3e-11", [-3e-11, 0.0]),
        ("B late by 1e-9", [-1e-9, 0.0]),
    ];
    for (label, hist) in histories {
        for x0 in [0.0, 0.35] {
            let mode = Mode::select(adv.as_dyn(), vec![false, false], hist.to_vec());
            cases.push(Case {
                name: format!("advanced {} ({label}) from {x0}", mode.id),
                gate: adv.clone(),
                mode,
                x0: vec![x0],
                span: 5.0 * two_rc,
                h: 1e-4 * a,
                scale: 1.0 / two_rc,
            });
        }
    }
    cases
}

/// Largest `|dx/dt - F(t, x)|` over a grid, relative to `vdd * scale`, with the
/// derivative taken by a five-point stencil of the closed form.
pub fn max_ode_residual(case: &Case, points: usize) -> f64 {
    let g = case.gate.as_dyn();
    let piece = g.piece(case.mode.clone(), 0.0, &case.x0).unwrap();
    let h = case.h;
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let t = 2.0 * h + (case.span - 4.0 * h) * k as f64 / (points - 1) as f64;
        let f = |s: f64| piece.eval(s);
        let (a, b, c, d) = (f(t - 2.0 * h), f(t - h), f(t + h), f(t + 2.0 * h));
        let rhs = g.rhs(&case.mode, t, &piece.eval(t));
        for i in 0..case.x0.len() {
            let deriv = (a[i] - 8.0 * b[i] + 8.0 * c[i] - d[i]) / (12.0 * h);
            worst = worst.max((deriv - rhs[i]).abs() / (g.vdd() * case.scale));
        }
    }
    worst
}

/// Largest relative deviation between the closed form and RK45 integration
/// of the mode's ODE, sampled at a few times.
pub fn max_integrator_deviation(case: &Case) -> f64 {
    let g = case.gate.as_dyn();
    let piece = g.piece(case.mode.clone(), 0.0, &case.x0).unwrap();
    let mut worst: f64 = 0.0;
    let mut t_prev = 0.0;
    let mut x = case.x0.clone();
    for k in 1..=10 {
        let t = case.span * k as f64 / 10.0;
        x = rk45(|s, y| g.rhs(&case.mode, s, y), t_prev, &x, t, 1e-11, 1e-15);
        t_prev = t;
        let exact = piece.eval(t);
        for i in 0..x.len() {
            let denom = exact[i].abs().max(1e-3 * g.vdd());
            worst = worst.max((x[i] - exact[i]).abs() / denom);
        }
    }
    worst
}

/// Signal with up to `max_transitions` transitions at uniformly random times in `(0, h)`.
pub fn random_signal<R: rand::Rng>(rng: &mut R, h: f64, max_transitions: usize) -> BinarySignal {
    let n = rng.gen_range(0..=max_transitions);
    let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..h)).filter(|&t| t > 0.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let initial: bool = rng.gen();
    let mut level = initial;
    let trs = times
        .into_iter()
        .map(|t| {
            level = !level;
            Transition::new(t, level)
        })
        .collect();
    BinarySignal::new(initial, trs, h).unwrap()
}

/// Mode signal over labels `0..labels` with up to `max_switches` switches.
pub fn random_mode_signal<R: rand::Rng>(
    rng: &mut R,
    h: f64,
    labels: u8,
    max_switches: usize,
) -> hybridgate::signals::ModeSwitchSignal<u8> {
    let n = rng.gen_range(0..=max_switches);
    let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..h)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let initial = rng.gen_range(0..labels);
    let mut current = initial;
    let switches = times
        .into_iter()
        .map(|t| {
            current = (current + rng.gen_range(1..labels)) % labels;
            (t, current)
        })
        .collect();
    hybridgate::signals::ModeSwitchSignal::new(initial, switches, h).unwrap()
}

/// Advanced NOR parameters scaled from the reference set by the given factors.
pub fn scaled_params(f: [f64; 7]) -> NorAdvancedParams {
    let p = reference_params();
    NorAdvancedParams {
        alpha1: p.alpha1 * f[0],
        alpha2: p.alpha2 * f[1],
        r: p.r * f[2],
        r_na: p.r_na * f[3],
        r_nb: p.r_nb * f[4],
        c: p.c * f[5],
        delta_min: p.delta_min * f[6],
        ..p
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn nor_gate() -> Gate {
    Gate::NorAdvanced(nor_advanced())
}

/// Exp-channel gate computing `function` over `inputs` inputs.
pub fn idm(function: BoolFn, inputs: usize, tau: f64, delta: f64) -> Gate {
    Gate::IdmExp(
        IdmExp::new(IdmExpParams {
            tau,
            delta_min: PureDelays::Same(delta),
            vdd: 1.0,
            xi: None,
            inverting: false,
            function: Some(function),
            inputs: Some(inputs),
        })
        .unwrap(),
    )
}

pub fn single_nor() -> Netlist {
    let mut net = Netlist::new();
    let a = net.add_input("A");
    let b = net.add_input("B");
    let g = net.add_gate("G", nor_gate());
    let o = net.add_output("O");
    net.connect(a, g, 0);
    net.connect(b, g, 1);
    net.connect(g, o, 0);
    net
}

/// Three NORs wired as inverters in a loop, second inputs tied low.
pub fn ring() -> Netlist {
    let mut net = Netlist::new();
    let zero = net.add_constant("zero", false, false);
    let gates: Vec<usize> = (0..3).map(|i| net.add_gate(&format!("G{i}"), nor_gate())).collect();
    for i in 0..3 {
        net.connect(gates[(i + 2) % 3], gates[i], 0);
        net.connect(zero, gates[i], 1);
    }
    let o = net.add_output("O");
    net.connect(gates[2], o, 0);
    net
}

/// Input I feeds a buffer A and a storage loop B = OR(I, B) with initial
/// value 0; C = NOR(A, B) drives O. Unrolled from O with k = 3 it has
/// z(X_B) = 0, z(A^(2)) = inf, z(B^(1)) = 1, z(B^(2)) = 2, z(O^(3)) = 3.
pub fn latch_circuit() -> Netlist {
    const PS: f64 = 1e-12;
    let mut net = Netlist::new();
    let i = net.add_input("I");
    let a = net.add_gate("A", idm(BoolFn::Buf, 1, 8.0 * PS, 5.0 * PS));
    let b = net.add_gate("B", idm(BoolFn::Or, 2, 6.0 * PS, 4.0 * PS));
    let c = net.add_gate("C", nor_gate());
    let o = net.add_output("O");
    net.connect(i, a, 0);
    net.connect(i, b, 0);
    net.connect(b, b, 1);
    net.connect(a, c, 0);
    net.connect(b, c, 1);
    net.connect(c, o, 0);
    net.set_initial_output(b, false);
    net
}

/// Every caused gate transition lies at least the pure delay of the
/// connecting input after its cause. Returns the number of pairs checked.
pub fn causal_separation_violations(net: &Netlist, exec: &Execution) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for (v, vertex) in net.vertices.iter().enumerate() {
        let Some(g) = vertex.gate() else { continue };
        for t in &exec.traces[v].transitions {
            let Some((driver, cause_time)) = t.cause else { continue };
            let gap = net
                .edges
                .iter()
                .filter(|e| e.from == driver && e.to == v)
                .map(|e| g.pure_delay(e.input_index))
                .fold(f64::INFINITY, f64::min);
            checked += 1;
            if !(t.time - cause_time >= gap) {
                bad.push(format!("{}: {} - {} < {gap}", vertex.id, t.time, cause_time));
            }
        }
    }
    (checked, bad)
}
