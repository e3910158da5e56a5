use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sponge_core::energy::{energy, l0_hat, l0_hat_grad, l2_energy, objective_value, Objective, Sigma};
use sponge_core::nn::build_network;

mod common;

fn sigma() -> impl Strategy<Value = f64> {
    (-10.0f64..2.0).prop_map(|e| 10f64.powf(e))
}

fn entries(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), -10.0f64..10.0], 1..max_len)
}

proptest! {
    #[test]
    fn l0_hat_lies_in_zero_to_dimension(phi in entries(256), s in sigma()) {
        let v = l0_hat(&phi, Sigma::new(s).unwrap());
        prop_assert!(v >= 0.0);
        prop_assert!(v < phi.len() as f64);
        prop_assert_eq!(v == 0.0, phi.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn l0_hat_is_even(phi in entries(64), s in sigma()) {
        let s = Sigma::new(s).unwrap();
        let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
        prop_assert_eq!(l0_hat(&phi, s), l0_hat(&neg, s));
    }

    #[test]
    fn l0_hat_does_not_increase_with_sigma(phi in entries(64), a in sigma(), b in sigma()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = l0_hat(&phi, Sigma::new(lo).unwrap());
        let large = l0_hat(&phi, Sigma::new(hi).unwrap());
        prop_assert!(small >= large - 1e-12 * phi.len() as f64);
    }

    #[test]
    fn l0_hat_grows_with_magnitude(phi in entries(64), s in sigma(), scale in 1.0f64..10.0) {
        let s = Sigma::new(s).unwrap();
        let scaled: Vec<f64> = phi.iter().map(|v| v * scale).collect();
        prop_assert!(l0_hat(&scaled, s) >= l0_hat(&phi, s) - 1e-12 * phi.len() as f64);
    }

    #[test]
    fn l0_hat_adds_over_concatenation(a in entries(64), b in entries(64), s in sigma()) {
        let s = Sigma::new(s).unwrap();
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let sum = l0_hat(&a, s) + l0_hat(&b, s);
        prop_assert!((l0_hat(&joined, s) - sum).abs() <= 1e-12 * joined.len() as f64);
    }

    #[test]
    fn l0_hat_is_bounded_by_the_exact_count(phi in entries(128), s in sigma()) {
        let nnz = phi.iter().filter(|v| **v != 0.0).count() as f64;
        prop_assert!(l0_hat(&phi, Sigma::new(s).unwrap()) <= nnz);
    }

    #[test]
    fn gradient_is_odd_and_points_away_from_zero(phi in entries(64), s in sigma()) {
        let s = Sigma::new(s).unwrap();
        let g = l0_hat_grad(&phi, s);
        let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
        let gn = l0_hat_grad(&neg, s);
        for i in 0..phi.len() {
            prop_assert_eq!(g[i], -gn[i]);
            if phi[i] == 0.0 {
                prop_assert_eq!(g[i], 0.0);
            } else {
                prop_assert!(g[i] * phi[i] >= 0.0);
            }
        }
    }

    #[test]
    fn network_energy_normalization_divides_by_m(seed in 0u64..500, s in sigma()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = common::random_net(&mut rng, false);
        let net = build_network(&spec, seed).unwrap();
        let x = common::batch_tensor(&mut rng, 3, &spec.input_shape);
        let (_, trace) = net.forward(&x).unwrap();
        let s = Sigma::new(s).unwrap();
        let raw = energy(&trace, s, None);
        let norm = energy(&trace, s, Some(net.param_count()));
        prop_assert_eq!(norm.normalizer, net.param_count());
        prop_assert!((norm.value * net.param_count() as f64 - raw.value).abs() <= 1e-9 * (1.0 + raw.value));
        prop_assert_eq!(raw.per_layer.len(), trace.len());
        let dims: usize = (0..trace.len()).map(|k| trace.dim(k)).sum();
        prop_assert!(raw.value <= dims as f64);
        let l2 = l2_energy(&trace, None);
        prop_assert!(l2.value >= 0.0);
        prop_assert_eq!(objective_value(&trace, Objective::L2, s, None), l2);
        prop_assert_eq!(objective_value(&trace, Objective::L0Hat, s, None), raw);
    }
}

#[test]
fn sigma_must_be_positive() {
    assert!(Sigma::new(0.0).is_err());
    assert!(Sigma::new(-1e-4).is_err());
    assert!(Sigma::new(f64::NAN).is_err());
    assert!(Sigma::new(1e-12).is_ok());
}

#[test]
fn small_sigma_counts_nonzeros() {
    let phi = [0.0, 0.5, -2.0, 0.0, 1e-1];
    let v = l0_hat(&phi, Sigma::new(1e-10).unwrap());
    assert!((v - 3.0).abs() < 1e-6, "{v}");
}
