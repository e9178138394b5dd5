use plume2rate::models::{build_model, finite_difference_check, ModelConfig};
use plume2rate::nn::{CountParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cnn_count(base: usize, depth: usize) -> usize {
    let mut cin = 4;
    let mut n = 0;
    for l in 0..depth {
        let w = base << l;
        n += 9 * cin * w + 2 * w;
        cin = w;
    }
    let s = 64 >> depth;
    n + cin * s * s + 1
}

fn unet_count(base: usize, depth: usize) -> usize {
    let dc = |cin: usize, cout: usize| 9 * cin * cout + 9 * cout * cout + 4 * cout;
    let mut n = 0;
    let mut cin = 4;
    for l in 0..depth {
        n += dc(cin, base << l);
        cin = base << l;
    }
    let mut c = base << depth;
    n += dc(cin, c);
    for l in (0..depth).rev() {
        let w = base << l;
        n += 9 * c * c + c;
        n += dc(c + w, w);
        c = w;
    }
    n + c + 1
}

#[test]
fn parameter_counts_match_closed_form() {
    for (base, depth) in [(2, 1), (4, 2), (8, 3), (32, 4)] {
        for (arch, want) in [("cnn", cnn_count(base, depth)), ("unet", unet_count(base, depth))] {
            let cfg = ModelConfig {
                arch: arch.into(),
                base_channels: base,
                depth,
                ..ModelConfig::unet()
            };
            let mut m = build_model::<f32>(&cfg, 0).unwrap();
            let mut counter = CountParams::default();
            m.visit(&mut counter);
            assert_eq!(m.parameter_count(), want, "{arch} base {base} depth {depth}");
            assert_eq!(counter.0, want);
        }
    }
    assert!(unet_count(32, 4) > cnn_count(32, 4));
}

fn toy_batch(seed: u64) -> (Tensor<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..2 * 4 * 64 * 64).map(|_| rng.random::<f64>()).collect();
    let targets = (0..2).map(|_| rng.random_range(0.5..2.0)).collect();
    (Tensor::from_vec([2, 4, 64, 64], data), targets)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for arch in ["cnn", "unet"] {
        let cfg = ModelConfig {
            arch: arch.into(),
            base_channels: 2,
            depth: 1,
            ..ModelConfig::unet()
        };
        let mut m = build_model::<f64>(&cfg, 3).unwrap();
        let (x, y) = toy_batch(5);
        let r = finite_difference_check(&mut m, &x, &y, 1e-6, 1e-4, 1e-9);
        assert!(r.pass_fraction() >= 0.99, "{arch}: {r:?}");
    }
}
