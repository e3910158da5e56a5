mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{batch_tensor, rel_err, two_conv_two_dense};
use sponge_core::energy::{energy, energy_weight_gradient, Objective, Sigma};
use sponge_core::nn::{build_network, cross_entropy, Gradients, LayerSpec, Network, NetworkSpec};
use sponge_core::train::{batch_gradient, Mode, SpongeConfig};
use sponge_core::Tensor;

fn with_random_biases(mut net: Network, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params_mut() {
        for b in p.bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    net
}

fn loss(net: &Network, x: &Tensor, y: &[usize]) -> f64 {
    let (logits, _) = net.forward(x).unwrap();
    cross_entropy(&logits, y).unwrap().0
}

fn loss_gradient(net: &Network, x: &Tensor, y: &[usize]) -> Vec<f64> {
    let (logits, trace) = net.forward(x).unwrap();
    let (_, d) = cross_entropy(&logits, y).unwrap();
    net.backward(&trace, &d).unwrap().flat()
}

fn central_difference(net: &Network, i: usize, f: impl Fn(&Network) -> f64) -> f64 {
    let w = net.param(i);
    let h = 1e-6 * (1.0 + w.abs());
    let mut p = net.clone();
    p.set_param(i, w + h);
    let up = f(&p);
    p.set_param(i, w - h);
    let dn = f(&p);
    (up - dn) / (2.0 * h)
}

/// Checks the loss gradient of every parameter of a small net.
fn check_all_params(spec: NetworkSpec, seed: u64) {
    let net = with_random_biases(build_network(&spec, seed).unwrap(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = batch_tensor(&mut rng, 3, &spec.input_shape);
    let classes = net.classes();
    let y: Vec<usize> = (0..3).map(|_| rng.random_range(0..classes)).collect();
    let g = loss_gradient(&net, &x, &y);
    for (i, gi) in g.iter().enumerate() {
        let n = central_difference(&net, i, |p| loss(p, &x, &y));
        assert!(rel_err(*gi, n) < 1e-4, "param {i}: backward {gi} vs numeric {n}");
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    check_all_params(
        NetworkSpec { input_shape: vec![5], layers: vec![LayerSpec::Dense { inputs: 5, outputs: 3 }] },
        1,
    );
}

#[test]
fn relu_gradients_match_finite_differences() {
    check_all_params(
        NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Dense { inputs: 4, outputs: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 8, outputs: 3 },
            ],
        },
        2,
    );
}

#[test]
fn strided_conv_gradients_match_finite_differences() {
    check_all_params(
        NetworkSpec {
            input_shape: vec![2, 7, 7],
            layers: vec![
                LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 27, outputs: 2 },
            ],
        },
        3,
    );
}

#[test]
fn maxpool_gradients_match_finite_differences() {
    check_all_params(
        NetworkSpec {
            input_shape: vec![1, 6, 6],
            layers: vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3, stride: 1 },
                LayerSpec::MaxPool2d { size: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 8, outputs: 3 },
            ],
        },
        4,
    );
}

#[test]
fn overlapping_avgpool_gradients_match_finite_differences() {
    check_all_params(
        NetworkSpec {
            input_shape: vec![1, 6, 6],
            layers: vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 2, stride: 1 },
                LayerSpec::AvgPool2d { size: 3, stride: 1 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 18, outputs: 3 },
            ],
        },
        5,
    );
}

#[test]
fn two_conv_two_dense_loss_and_energy_gradients_on_sampled_coordinates() {
    let spec = two_conv_two_dense();
    let net = with_random_biases(build_network(&spec, 11).unwrap(), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = batch_tensor(&mut rng, 4, &spec.input_shape);
    let y = vec![0, 1, 2, 1];
    let (_, trace) = net.forward(&x).unwrap();
    let g_loss = loss_gradient(&net, &x, &y);
    let sigma = Sigma::new(0.3).unwrap();
    let g_energy = energy_weight_gradient(&net, &trace, Objective::L0Hat, sigma, false).unwrap().flat();
    for _ in 0..60 {
        let i = rng.random_range(0..net.param_count());
        let n = central_difference(&net, i, |p| loss(p, &x, &y));
        assert!(rel_err(g_loss[i], n) < 1e-4, "loss param {i}: {} vs {n}", g_loss[i]);
        let n = central_difference(&net, i, |p| energy(&p.forward(&x).unwrap().1, sigma, None).value);
        assert!(rel_err(g_energy[i], n) < 1e-4, "energy param {i}: {} vs {n}", g_energy[i]);
    }
}

struct Fixture {
    net: Network,
    x: Tensor,
    y: Vec<usize>,
    lambda: f64,
    sigma: Sigma,
}

fn fixture() -> Fixture {
    let spec = two_conv_two_dense();
    let net = with_random_biases(build_network(&spec, 21).unwrap(), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    Fixture { x: batch_tensor(&mut rng, 6, &spec.input_shape), net, y: vec![0, 1, 2, 0, 1, 2], lambda: 0.7, sigma: Sigma::new(1e-3).unwrap() }
}

fn cfg(f: &Fixture, mode: Mode) -> SpongeConfig {
    SpongeConfig { lambda: f.lambda, sigma: f.sigma, poison_fraction: 0.5, mode, ..SpongeConfig::clean(0) }
}

fn assert_close(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len());
    for (i, (u, v)) in a.iter().zip(b).enumerate() {
        assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs())), "{what}, coordinate {i}: {u} vs {v}");
    }
}

/// Separately computed ∇L and ∇E (batch means, E normalized by m) on `rows`.
fn separate(f: &Fixture, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let x = f.x.select_rows(rows);
    let y: Vec<usize> = rows.iter().map(|&r| f.y[r]).collect();
    let (_, trace) = f.net.forward(&x).unwrap();
    let ge = energy_weight_gradient(&f.net, &trace, Objective::L0Hat, f.sigma, true).unwrap();
    (loss_gradient(&f.net, &x, &y), ge.flat())
}

#[test]
fn all_poisoned_batch_applies_loss_minus_lambda_energy_gradient() {
    let f = fixture();
    let all: Vec<usize> = (0..6).collect();
    let (gl, ge) = separate(&f, &all);
    let flags = vec![true; 6];
    let (_, sponge) = batch_gradient(&f.net, &f.x, &f.y, &flags, &cfg(&f, Mode::Sponge)).unwrap();
    let (_, heal) = batch_gradient(&f.net, &f.x, &f.y, &flags, &cfg(&f, Mode::Sanitize)).unwrap();
    let expect_sponge: Vec<f64> = gl.iter().zip(&ge).map(|(l, e)| l - f.lambda * e).collect();
    let expect_heal: Vec<f64> = gl.iter().zip(&ge).map(|(l, e)| l + f.lambda * e).collect();
    assert_close(&sponge.flat(), &expect_sponge, "sponge");
    assert_close(&heal.flat(), &expect_heal, "sanitize");
}

#[test]
fn mixed_batch_adds_energy_term_only_for_poisoned_rows() {
    let f = fixture();
    let flags = vec![true, false, false, true, false, false];
    let poisoned: Vec<usize> = vec![0, 3];
    let (gl, _) = separate(&f, &(0..6).collect::<Vec<_>>());
    let (_, ge_p) = separate(&f, &poisoned);
    let share = poisoned.len() as f64 / 6.0;
    let (_, got) = batch_gradient(&f.net, &f.x, &f.y, &flags, &cfg(&f, Mode::Sponge)).unwrap();
    let expect: Vec<f64> = gl.iter().zip(&ge_p).map(|(l, e)| l - f.lambda * share * e).collect();
    assert_close(&got.flat(), &expect, "mixed batch");
}

#[test]
fn sponge_and_sanitize_differ_only_in_the_sign_of_the_energy_term() {
    let f = fixture();
    let flags = vec![true, true, false, false, true, false];
    let (ls, sponge) = batch_gradient(&f.net, &f.x, &f.y, &flags, &cfg(&f, Mode::Sponge)).unwrap();
    let (lh, heal) = batch_gradient(&f.net, &f.x, &f.y, &flags, &cfg(&f, Mode::Sanitize)).unwrap();
    let (lc, clean) = batch_gradient(&f.net, &f.x, &f.y, &flags, &SpongeConfig::clean(0)).unwrap();
    assert_eq!(ls, lh);
    assert_eq!(ls, lc);
    let (s, h, c) = (sponge.flat(), heal.flat(), clean.flat());
    for i in 0..s.len() {
        let (ds, dh) = (s[i] - c[i], h[i] - c[i]);
        assert!((ds + dh).abs() <= 1e-12 * (1.0 + c[i].abs()), "coordinate {i}: {ds} vs {dh}");
    }
    let mut sum = Gradients::zeros_like(&f.net);
    sum.add_scaled(&sponge, 0.5);
    sum.add_scaled(&heal, 0.5);
    assert_close(&sum.flat(), &c, "mean of the two modes");
}

#[test]
fn clean_mode_ignores_poison_flags_exactly() {
    let f = fixture();
    let (_, flagged) = batch_gradient(&f.net, &f.x, &f.y, &[true; 6], &SpongeConfig::clean(0)).unwrap();
    let plain = loss_gradient(&f.net, &f.x, &f.y);
    assert_eq!(flagged.flat(), plain);
}

#[test]
fn zero_lambda_sponge_equals_clean_exactly() {
    let f = fixture();
    let c = SpongeConfig { lambda: 0.0, ..cfg(&f, Mode::Sponge) };
    let (_, got) = batch_gradient(&f.net, &f.x, &f.y, &[true; 6], &c).unwrap();
    assert_eq!(got.flat(), loss_gradient(&f.net, &f.x, &f.y));
}
