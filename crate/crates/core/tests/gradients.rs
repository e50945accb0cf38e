//! Analytic backward passes against central finite differences (64-bit).

mod common;

use automr_core::model::{BlockConfig, ForwardCtx, ModelInstance, QuartzConfig};
use automr_core::tape::{Graph, Tape};
use automr_core::tensor::*;
use common::*;
use rand::Rng;

const CASES: u64 = 120;

#[test]
fn conv_forward_matches_nested_loops() {
    let mut rng = rng(1);
    for _ in 0..CASES {
        let spec = random_spec(&mut rng);
        let len = rng.random_range(1..=16);
        let x = random_tensor(&mut rng, &[2, spec.in_channels, len]);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let b = random_tensor(&mut rng, &[spec.out_channels]);
        let want = naive_conv(&x, &spec, &w, Some(&b));
        match conv1d_forward(&x, &spec, &w, Some(&b)) {
            Ok(y) => {
                assert_eq!(y.shape()[2], spec.output_len(len).unwrap());
                for (a, e) in y.data().iter().zip(&want) {
                    assert!((a - e).abs() < 1e-12, "{spec:?}");
                }
            }
            Err(TensorError::WindowTooShort { .. }) => assert!(want.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn conv_backward_matches_finite_differences() {
    let mut rng = rng(2);
    let mut checked = 0;
    while checked < CASES {
        let spec = random_spec(&mut rng);
        let len = rng.random_range(1..=16);
        if spec.output_len(len).is_none() {
            continue;
        }
        checked += 1;
        let x = random_tensor(&mut rng, &[2, spec.in_channels, len]);
        let w = random_tensor(&mut rng, &spec.weight_shape());
        let b = random_tensor(&mut rng, &[spec.out_channels]);
        let y = conv1d_forward(&x, &spec, &w, Some(&b)).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let record = ConvRecord {
            spec,
            input: Some(x.clone()),
            weight: Some(w.clone()),
            has_bias: true,
        };
        let g = conv1d_backward(&record, &r).unwrap();

        let nx = central_diff(&x, |p| dot(&conv1d_forward(p, &spec, &w, Some(&b)).unwrap(), &r));
        let nw = central_diff(&w, |p| dot(&conv1d_forward(&x, &spec, p, Some(&b)).unwrap(), &r));
        let nb = central_diff(&b, |p| dot(&conv1d_forward(&x, &spec, &w, Some(p)).unwrap(), &r));
        assert!(max_rel_err(g.input.data(), &nx, 1e-6) < 1e-6, "{spec:?}");
        assert!(max_rel_err(g.weight.data(), &nw, 1e-6) < 1e-6, "{spec:?}");
        assert!(max_rel_err(g.bias.unwrap().data(), &nb, 1e-6) < 1e-6, "{spec:?}");
    }
}

#[test]
fn batch_norm_backward_matches_finite_differences() {
    let mut rng = rng(3);
    for case in 0..CASES {
        let mode = if case % 2 == 0 { Mode::Train } else { Mode::Eval };
        // With batch*length == 2 the normalized output is ±1 up to eps, and the
        // eps-driven gradient is too curved for h = 1e-3; start at 4 samples.
        let shape = [rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(4..=8)];
        let x = random_tensor(&mut rng, &shape);
        let gamma = random_tensor(&mut rng, &[shape[1]]);
        let beta = random_tensor(&mut rng, &[shape[1]]);
        let mut stats = RunningStats::<f64> {
            mean: (0..shape[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
            var: (0..shape[1]).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let cfg = BatchNormConfig::default();
        let frozen = stats.clone();
        let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            let mut s = frozen.clone();
            batch_norm_forward(x, g, b, &mut s, mode, cfg).unwrap().0
        };
        let (y, cache) = batch_norm_forward(&x, &gamma, &beta, &mut stats, mode, cfg).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let (gx, gg, gb) = batch_norm_backward(&cache, &gamma, &r).unwrap();
        let nx = central_diff(&x, |p| dot(&f(p, &gamma, &beta), &r));
        let ng = central_diff(&gamma, |p| dot(&f(&x, p, &beta), &r));
        let nb = central_diff(&beta, |p| dot(&f(&x, &gamma, p), &r));
        assert!(max_rel_err(gx.data(), &nx, 1e-6) < 1e-5, "{mode:?} {shape:?}");
        assert!(max_rel_err(gg.data(), &ng, 1e-6) < 1e-5);
        assert!(max_rel_err(gb.data(), &nb, 1e-6) < 1e-5);
    }
}

#[test]
fn elementwise_pool_and_linear_backward_match_finite_differences() {
    let mut rng = rng(4);
    for _ in 0..CASES {
        let shape = [rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=8)];
        // keep ReLU inputs away from the kink
        let x = Tensor::<f64>::from_fn(shape.to_vec(), |_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        });
        let r = random_tensor(&mut rng, &shape);
        let y = relu_forward(&x);
        let g = relu_backward(&y, &r);
        let n = central_diff(&x, |p| dot(&relu_forward(p), &r));
        assert!(max_rel_err(g.data(), &n, 1e-6) < 1e-5);

        let key = DropoutKey { seed: rng.random(), layer: 3, step: 9 };
        let (_, mask) = dropout_forward(&x, 0.3, key, Mode::Train).unwrap();
        let g = dropout_backward(mask.as_deref(), &r);
        let n = central_diff(&x, |p| dot(&dropout_forward(p, 0.3, key, Mode::Train).unwrap().0, &r));
        assert!(max_rel_err(g.data(), &n, 1e-6) < 1e-5);

        let rp = random_tensor(&mut rng, &shape[..2]);
        let g = global_avg_pool_backward(&shape, &rp).unwrap();
        let n = central_diff(&x, |p| dot(&global_avg_pool_forward(p).unwrap(), &rp));
        assert!(max_rel_err(g.data(), &n, 1e-6) < 1e-5);

        let (batch, feats, outs) = (shape[0], shape[1], rng.random_range(1..=5));
        let xi = random_tensor(&mut rng, &[batch, feats]);
        let w = random_tensor(&mut rng, &[outs, feats]);
        let b = random_tensor(&mut rng, &[outs]);
        let rl = random_tensor(&mut rng, &[batch, outs]);
        let lg = linear_backward(&xi, &w, &rl).unwrap();
        let nx = central_diff(&xi, |p| dot(&linear_forward(p, &w, &b).unwrap(), &rl));
        let nw = central_diff(&w, |p| dot(&linear_forward(&xi, p, &b).unwrap(), &rl));
        let nb = central_diff(&b, |p| dot(&linear_forward(&xi, &w, p).unwrap(), &rl));
        assert!(max_rel_err(lg.input.data(), &nx, 1e-6) < 1e-5);
        assert!(max_rel_err(lg.weight.data(), &nw, 1e-6) < 1e-5);
        assert!(max_rel_err(lg.bias.data(), &nb, 1e-6) < 1e-5);
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let mut rng = rng(5);
    for _ in 0..CASES {
        let (batch, classes) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let logits = Tensor::<f64>::from_fn([batch, classes], |_| rng.random_range(-3.0..3.0));
        let targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let ce = softmax_cross_entropy(&logits, &targets).unwrap();
        let n = central_diff(&logits, |p| softmax_cross_entropy(p, &targets).unwrap().loss);
        assert!(max_rel_err(ce.grad_logits.data(), &n, 1e-6) < 1e-6);

        let p = softmax(&logits).unwrap();
        for (i, (&g, &pi)) in ce.grad_logits.data().iter().zip(p.data()).enumerate() {
            let onehot = if targets[i / classes] == i % classes { 1.0 } else { 0.0 };
            assert!((g * batch as f64 - (pi - onehot)).abs() < 1e-12);
        }
    }
}

fn tiny_model_config() -> QuartzConfig {
    QuartzConfig {
        in_channels: 2,
        num_classes: 3,
        blocks: vec![BlockConfig::new(1, 4, 3)],
        head_channels: 4,
        dropout: 0.0,
        stem_kernel: 3,
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let mut rng = rng(6);
    let mut model = ModelInstance::<f64>::build(tiny_model_config(), 6).unwrap();
    // Populate running statistics so eval-mode normalization is non-trivial.
    let warm = random_tensor(&mut rng, &[4, 2, 16]);
    model
        .forward(&mut Tape::new(), warm, ForwardCtx::train(0, 0))
        .unwrap();

    let x = random_tensor(&mut rng, &[3, 2, 16]);
    let targets = [0usize, 2, 1];
    // Loss plus the ReLU activation pattern of the same forward pass.
    let eval = |m: &ModelInstance<f64>| {
        let mut tape = Tape::new();
        let mut m = m.clone();
        let root = m.forward(&mut tape, x.clone(), ForwardCtx::eval()).unwrap();
        let loss = softmax_cross_entropy(tape.value(&root), &targets).unwrap().loss;
        (loss, tape.relu_pattern())
    };

    let mut tape = Tape::new();
    let mut probe = model.clone();
    let root = probe.forward(&mut tape, x.clone(), ForwardCtx::eval()).unwrap();
    let ce = softmax_cross_entropy(tape.value(&root), &targets).unwrap();
    let base_pattern = tape.relu_pattern();
    let grads = tape.backward(root, ce.grad_logits).unwrap();
    assert_eq!(grads.params.len(), model.params().len(), "every parameter gets a gradient");

    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for (id, p) in model.params().iter().enumerate() {
        let analytic = grads.params[&id].data();
        let (mut a_ok, mut n_ok) = (Vec::new(), Vec::new());
        for i in 0..p.value.len() {
            let side = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[id].value.data_mut()[i] += delta;
                eval(&m)
            };
            let (up, up_pattern) = side(FD_STEP);
            let (down, down_pattern) = side(-FD_STEP);
            // Central differences are only an oracle where the network stays
            // on one linear piece across [θ - h, θ + h].
            if up_pattern != base_pattern || down_pattern != base_pattern {
                kinks += 1;
                continue;
            }
            a_ok.push(analytic[i]);
            n_ok.push((up - down) / (2.0 * FD_STEP));
        }
        checked += a_ok.len();
        if !a_ok.is_empty() {
            // scale by the full tensor so skipped entries don't shrink it
            let scale = analytic.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
            let e = a_ok
                .iter()
                .zip(&n_ok)
                .map(|(a, n)| (a - n).abs() / scale)
                .fold(0.0, f64::max);
            worst = worst.max(e);
        }
    }
    assert!(kinks * 20 <= checked + kinks, "{kinks} of {} coordinates straddle a kink", checked + kinks);
    assert!(worst < 1e-4, "max relative error {worst}");
}
