mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hybridgate::characterize::{characterize_gate, CharacteristicDelays};
use hybridgate::delay::{exact_delay_rising_output, mis_delay_falling_output, sweep_curve, Edge};
use hybridgate::gate_core::{gate_trajectory, Form, HybridGate};
use hybridgate::gate_models::{symmetry_swap, DerivedCoefficients, NorAdvanced};
use hybridgate::signals::{l1_distance, mode_distance, pure_delay_shift};

const H: f64 = 1e-9;

fn factors() -> impl Strategy<Value = [f64; 7]> {
    prop::array::uniform7(0.5f64..2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn l1_is_a_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_signal(&mut rng, H, 12);
        let b = random_signal(&mut rng, H, 12);
        let c = random_signal(&mut rng, H, 12);
        let ab = l1_distance(&a, &b).unwrap();
        prop_assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, l1_distance(&b, &a).unwrap());
        prop_assert!(ab >= 0.0 && ab <= H);
        let slack = 8.0 * f64::EPSILON * H;
        prop_assert!(l1_distance(&a, &c).unwrap() <= ab + l1_distance(&b, &c).unwrap() + slack);
    }

    #[test]
    fn mode_distance_is_a_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mode_signal(&mut rng, H, 4, 10);
        let b = random_mode_signal(&mut rng, H, 4, 10);
        let c = random_mode_signal(&mut rng, H, 4, 10);
        let ab = mode_distance(&a, &b).unwrap();
        prop_assert_eq!(mode_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, mode_distance(&b, &a).unwrap());
        let slack = 8.0 * f64::EPSILON * H;
        prop_assert!(mode_distance(&a, &c).unwrap() <= ab + mode_distance(&b, &c).unwrap() + slack);
    }

    #[test]
    fn delay_shifts_compose(seed in any::<u64>(), d1 in 0.0..2e-10, d2 in 0.0..2e-10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_signal(&mut rng, H, 10);
        let twice = pure_delay_shift(&pure_delay_shift(&s, d1).unwrap(), d2).unwrap();
        let once = pure_delay_shift(&s, d1 + d2).unwrap();
        prop_assert!(l1_distance(&twice, &once).unwrap() <= 4.0 * f64::EPSILON * H * 10.0);
        // Shifting moves every transition by the delay, so the distance is at most n·d.
        let n = s.transitions().len() as f64;
        prop_assert!(l1_distance(&s, &once).unwrap() <= n * (d1 + d2) * (1.0 + 1e-12));
    }

    #[test]
    fn discriminant_is_nonnegative(f in factors(), delta in -1e-9f64..1e-9) {
        let p = scaled_params(f);
        let (q, d) = symmetry_swap(&p, delta);
        let k = DerivedCoefficients::new(&q, d);
        prop_assert!(k.chi >= -1e-12 * k.d * k.d, "chi = {}", k.chi);
    }

    #[test]
    fn digitized_output_matches_sampling(seed in any::<u64>(), f in factors()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gate = NorAdvanced::new(scaled_params(f)).unwrap();
        let inputs = [random_signal(&mut rng, H, 6), random_signal(&mut rng, H, 6)];
        let (_, traj) = gate_trajectory(&gate, &inputs).unwrap();
        let digital = traj.digitize(gate.threshold(), H).unwrap();
        let edges: Vec<f64> = digital.transitions().iter().map(|t| t.time).collect();
        for k in 0..2000 {
            let t = H * (k as f64 + 0.5) / 2000.0;
            // Skip samples indistinguishable from a crossing.
            if edges.iter().any(|&e| (e - t).abs() < 1e-6 * H) {
                continue;
            }
            prop_assert_eq!(digital.value_at(t), traj.output_at(t) > gate.threshold(), "t = {}", t);
        }
    }

    #[test]
    fn first_order_pieces_are_monotone(seed in any::<u64>(), f in factors()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gate = NorAdvanced::new(scaled_params(f)).unwrap();
        let inputs = [random_signal(&mut rng, H, 6), random_signal(&mut rng, H, 6)];
        let (_, traj) = gate_trajectory(&gate, &inputs).unwrap();
        let pieces = traj.pieces();
        for (i, piece) in pieces.iter().enumerate() {
            let end = pieces.get(i + 1).map_or(H, |p| p.entry_time);
            let rising = match piece.form {
                Form::Exp { target, .. } => target >= piece.entry_state[0],
                Form::PullUp(_) => true,
                _ => continue,
            };
            let mut prev = piece.output_at(piece.entry_time);
            for k in 1..=50 {
                let t = piece.entry_time + (end - piece.entry_time) * k as f64 / 50.0;
                let v = piece.output_at(t);
                let slack = 1e-12;
                let ordered = if rising { v >= prev - slack } else { v <= prev + slack };
                prop_assert!(ordered, "piece {} not monotone at {}", i, t);
                prev = v;
            }
        }
    }

    #[test]
    fn falling_delay_grows_with_separation(f in factors(), x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let p = scaled_params(f);
        let span = 3.0 * p.c * p.r_na.max(p.r_nb);
        let (small, large) = (span * x.min(y), span * x.max(y));
        for sign in [1.0, -1.0] {
            prop_assert!(mis_delay_falling_output(sign * small, &p) <= mis_delay_falling_output(sign * large, &p) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rising_delay_shrinks_with_separation(f in factors(), x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let p = scaled_params(f);
        let span = 3.0 * (p.alpha1 + p.alpha2) / (2.0 * p.r);
        let (small, large) = (span * x.min(y), span * x.max(y));
        for sign in [1.0, -1.0] {
            let near = exact_delay_rising_output(sign * small, &p).unwrap();
            let far = exact_delay_rising_output(sign * large, &p).unwrap();
            prop_assert!(far <= near * (1.0 + 1e-12), "{} > {}", far, near);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn characterization_round_trips(f in factors()) {
        let p = scaled_params(f);
        let d = CharacteristicDelays::from_params(&p).unwrap();
        let got = characterize_gate(&d, p.c).unwrap().params;
        prop_assert!(rel(got.delta_min, p.delta_min) <= 1e-9);
        prop_assert!(rel(got.r_na, p.r_na) <= 1e-9);
        prop_assert!(rel(got.r_nb, p.r_nb) <= 1e-9);
        prop_assert!(rel(got.r, p.r) <= 1e-6, "R {} vs {}", got.r, p.r);
        prop_assert!(rel(got.alpha1, p.alpha1) <= 1e-6);
        prop_assert!(rel(got.alpha2, p.alpha2) <= 1e-6);
    }

    #[test]
    fn capacitance_is_a_free_scale(f in factors(), scale in 0.1f64..10.0) {
        let d = CharacteristicDelays::from_params(&scaled_params(f)).unwrap();
        let c = reference_params().c;
        let a = characterize_gate(&d, c).unwrap().params;
        let b = characterize_gate(&d, scale * c).unwrap().params;
        for edge in [Edge::FallingOutput, Edge::RisingOutput] {
            let ca = sweep_curve(edge, -60e-12, 60e-12, 41, &a).unwrap();
            let cb = sweep_curve(edge, -60e-12, 60e-12, 41, &b).unwrap();
            for (x, y) in ca.samples.iter().zip(&cb.samples) {
                prop_assert!(rel(x.exact, y.exact) <= 1e-9, "{:?}: {} vs {}", edge, x.exact, y.exact);
                prop_assert!(rel(x.asymptotic, y.asymptotic) <= 1e-9);
            }
        }
    }
}
