//! Hand-rolled network layer: finite-difference gradient checks, the
//! optimizer, structured softmax helpers, and text checkpoints.

use approx::assert_abs_diff_eq;
use ndarray::{arr2, Array2};
use privmarket::diffnet::{
    adam_step, checkpoint_hash, parse_checkpoint, read_checkpoint, render_checkpoint, sigmoid,
    softmax_columns, softmax_columns_backward, write_checkpoint, AdamState, Mlp, OutputActivation,
};
use proptest::prelude::*;

const FD_H: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_GUARD: f64 = 1e-6;

/// Scalar probe loss: weighted sum of outputs (weights fixed per position) so
/// the analytic output gradient is the weight pattern itself.
fn probe_loss(output: &Array2<f64>) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(output.raw_dim());
    let mut loss = 0.0;
    for ((r, c), &y) in output.indexed_iter() {
        let w = 1.0 + 0.3 * r as f64 - 0.7 * c as f64;
        loss += w * y;
        grad[(r, c)] = w;
    }
    (loss, grad)
}

fn loss_of(net: &Mlp, input: &Array2<f64>) -> f64 {
    let (out, _) = net.forward(input).unwrap();
    probe_loss(&out).0
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_GUARD)
}

fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Central-difference check of every parameter and every input coordinate.
fn check_gradients(mut net: Mlp, input: Array2<f64>) {
    let (out, tape) = net.forward(&input).unwrap();
    let (_, out_grad) = probe_loss(&out);
    let grads = net.backward_select(&tape, &out_grad, true).unwrap();

    for l in 0..net.layers.len() {
        let shape = net.layers[l].weight.raw_dim();
        for r in 0..shape[0] {
            for c in 0..shape[1] {
                let orig = net.layers[l].weight[(r, c)];
                net.layers[l].weight[(r, c)] = orig + FD_H;
                let up = loss_of(&net, &input);
                net.layers[l].weight[(r, c)] = orig - FD_H;
                let dn = loss_of(&net, &input);
                net.layers[l].weight[(r, c)] = orig;
                let fd = (up - dn) / (2.0 * FD_H);
                let an = grads.layers[l].weight[(r, c)];
                assert!(
                    rel_err(fd, an) < FD_REL_TOL,
                    "layer {l} weight ({r},{c}): fd {fd} vs analytic {an}"
                );
            }
        }
        for b in 0..net.layers[l].bias.len() {
            let orig = net.layers[l].bias[b];
            net.layers[l].bias[b] = orig + FD_H;
            let up = loss_of(&net, &input);
            net.layers[l].bias[b] = orig - FD_H;
            let dn = loss_of(&net, &input);
            net.layers[l].bias[b] = orig;
            let fd = (up - dn) / (2.0 * FD_H);
            let an = grads.layers[l].bias[b];
            assert!(
                rel_err(fd, an) < FD_REL_TOL,
                "layer {l} bias {b}: fd {fd} vs analytic {an}"
            );
        }
    }

    let mut input = input;
    for r in 0..input.nrows() {
        for c in 0..input.ncols() {
            let orig = input[(r, c)];
            input[(r, c)] = orig + FD_H;
            let up = loss_of(&net, &input);
            input[(r, c)] = orig - FD_H;
            let dn = loss_of(&net, &input);
            input[(r, c)] = orig;
            let fd = (up - dn) / (2.0 * FD_H);
            let an = grads.input_grad[(r, c)];
            assert!(
                rel_err(fd, an) < FD_REL_TOL,
                "input ({r},{c}): fd {fd} vs analytic {an}"
            );
        }
    }
}

#[test]
fn gradients_match_finite_differences_identity_head() {
    let net = Mlp::new(&[3, 5, 4], OutputActivation::Identity, 1);
    check_gradients(net, random_input(3, 3, 2));
}

#[test]
fn gradients_match_finite_differences_sigmoid_head() {
    let net = Mlp::new(&[4, 6, 3], OutputActivation::Sigmoid, 3);
    check_gradients(net, random_input(2, 4, 4));
}

#[test]
fn gradients_match_finite_differences_softmax_head() {
    let net = Mlp::new(&[3, 7, 4], OutputActivation::Softmax, 5);
    check_gradients(net, random_input(2, 3, 6));
}

#[test]
fn deep_relu_stack_fd_check() {
    let net = Mlp::new(&[2, 8, 8, 8, 3], OutputActivation::Identity, 7);
    check_gradients(net, random_input(4, 2, 8));
}

#[test]
fn construction_is_seeded_and_shaped() {
    let a = Mlp::new(&[5, 16, 2], OutputActivation::Identity, 11);
    let b = Mlp::new(&[5, 16, 2], OutputActivation::Identity, 11);
    let c = Mlp::new(&[5, 16, 2], OutputActivation::Identity, 12);
    assert_eq!(a.layers[0].weight, b.layers[0].weight);
    assert_ne!(a.layers[0].weight, c.layers[0].weight);
    assert_eq!(a.input_dim(), 5);
    assert_eq!(a.output_dim(), 2);
    assert_eq!(a.param_count(), 5 * 16 + 16 + 16 * 2 + 2);
}

#[test]
fn forward_rejects_wrong_width() {
    let net = Mlp::new(&[3, 4, 2], OutputActivation::Identity, 0);
    assert!(net.forward(&random_input(2, 5, 0)).is_err());
}

#[test]
fn sigmoid_and_softmax_basics() {
    assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
    assert!(sigmoid(30.0) > 0.999_999);
    assert!(sigmoid(-30.0) < 1e-6);

    // Column softmax over logits (ln 1, ln 3) gives (0.25, 0.75).
    let z = softmax_columns(&arr2(&[[0.0_f64], [3.0_f64.ln()]]));
    assert_abs_diff_eq!(z[(0, 0)], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(z[(1, 0)], 0.75, epsilon = 1e-12);
}

#[test]
fn column_softmax_backward_matches_finite_differences() {
    let logits = arr2(&[[0.3, -0.2], [1.1, 0.4], [-0.5, 0.9]]);
    let weights = arr2(&[[1.0, -0.5], [0.2, 0.7], [-1.3, 0.1]]);
    let scalar = |l: &Array2<f64>| -> f64 {
        let z = softmax_columns(l);
        (z.clone() * weights.clone()).sum()
    };
    let z = softmax_columns(&logits);
    let grad = softmax_columns_backward(&z, &weights);
    let mut probe = logits.clone();
    for ((r, c), &g) in grad.indexed_iter() {
        let orig = probe[(r, c)];
        probe[(r, c)] = orig + FD_H;
        let up = scalar(&probe);
        probe[(r, c)] = orig - FD_H;
        let dn = scalar(&probe);
        probe[(r, c)] = orig;
        let fd = (up - dn) / (2.0 * FD_H);
        assert!(rel_err(fd, g) < FD_REL_TOL, "({r},{c}): fd {fd} vs {g}");
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate_times_sign() {
    // y = w·x + b on a single sample x = 3: dL/dw = 3, dL/db = 1 under the
    // unit-weight probe. Bias correction makes the first Adam step
    // lr·g/(|g| + tiny), i.e. essentially lr·sign(g).
    let mut net = Mlp::new(&[1, 1], OutputActivation::Identity, 0);
    net.layers[0].weight[(0, 0)] = 0.5;
    net.layers[0].bias[0] = -0.2;
    let input = arr2(&[[3.0]]);
    let (out, tape) = net.forward(&input).unwrap();
    let mut grad = Array2::zeros(out.raw_dim());
    grad[(0, 0)] = 1.0;
    let grads = net.backward_select(&tape, &grad, true).unwrap();
    assert_abs_diff_eq!(grads.layers[0].weight[(0, 0)], 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(grads.layers[0].bias[0], 1.0, epsilon = 1e-12);

    let mut adam = AdamState::new(&net, 0.01);
    adam_step(&mut adam, &mut net, &grads).unwrap();
    assert_abs_diff_eq!(net.layers[0].weight[(0, 0)], 0.49, epsilon = 1e-6);
    assert_abs_diff_eq!(net.layers[0].bias[0], -0.21, epsilon = 1e-6);
}

#[test]
fn adam_descends_a_quadratic() {
    // Minimize (w·1 + b − 2)² by feeding its gradient through Adam.
    let mut net = Mlp::new(&[1, 1], OutputActivation::Identity, 9);
    let mut adam = AdamState::new(&net, 0.05);
    let input = arr2(&[[1.0]]);
    let mut last = f64::INFINITY;
    for step in 0..400 {
        let (out, tape) = net.forward(&input).unwrap();
        let err = out[(0, 0)] - 2.0;
        let grads = net
            .backward_select(&tape, &arr2(&[[2.0 * err]]), true)
            .unwrap();
        adam_step(&mut adam, &mut net, &grads).unwrap();
        if step % 100 == 99 {
            let val = err * err;
            assert!(val < last + 1e-9, "loss should trend down: {val} vs {last}");
            last = val;
        }
    }
    let (out, _) = net.forward(&input).unwrap();
    assert_abs_diff_eq!(out[(0, 0)], 2.0, epsilon = 1e-2);
}

#[test]
fn checkpoint_text_round_trip_is_bit_exact() {
    let net1 = Mlp::new(&[3, 8, 2], OutputActivation::Sigmoid, 21);
    let net2 = Mlp::new(&[2, 4, 1], OutputActivation::Identity, 22);
    let manifest = vec![
        ("purpose".to_string(), "round-trip".to_string()),
        ("seed".to_string(), "21".to_string()),
    ];
    let text = render_checkpoint(&manifest, &[("first", &net1), ("second", &net2)]);
    let (manifest2, sections) = parse_checkpoint(&text).unwrap();
    assert_eq!(manifest2, manifest);
    assert_eq!(sections.len(), 2);
    assert_eq!(sections[0].name, "first");
    assert_eq!(sections[0].net.layer_dims, net1.layer_dims);
    assert_eq!(sections[0].net.output_activation, net1.output_activation);
    for (a, b) in sections[0].net.layers.iter().zip(net1.layers.iter()) {
        assert_eq!(a.weight, b.weight, "weights must survive exactly");
        assert_eq!(a.bias, b.bias);
    }
    for (a, b) in sections[1].net.layers.iter().zip(net2.layers.iter()) {
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
    }
    // Re-rendering reproduces the identical file, hence the identical hash.
    let text2 = render_checkpoint(
        &manifest2,
        &[("first", &sections[0].net), ("second", &sections[1].net)],
    );
    assert_eq!(text, text2);
    assert_eq!(checkpoint_hash(&text), checkpoint_hash(&text2));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.txt");
    let net = Mlp::new(&[4, 6, 3], OutputActivation::Softmax, 5);
    let manifest = vec![("k".to_string(), "v".to_string())];
    write_checkpoint(&path, &manifest, &[("net", &net)]).unwrap();
    let (m2, sections) = read_checkpoint(&path).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(sections[0].net.layers[0].weight, net.layers[0].weight);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let net = Mlp::new(&[2, 3, 1], OutputActivation::Identity, 1);
    let good = render_checkpoint(&[], &[("net", &net)]);
    assert!(parse_checkpoint("not a checkpoint").is_err());
    let truncated = &good[..good.len() / 2];
    assert!(parse_checkpoint(truncated).is_err());
    let tampered = good.replace("2 3 1", "2 3");
    assert!(parse_checkpoint(&tampered).is_err());
}

#[test]
fn checkpoint_hash_is_content_sensitive() {
    let h1 = checkpoint_hash("abc");
    let h2 = checkpoint_hash("abd");
    assert_ne!(h1, h2);
    assert_eq!(h1, checkpoint_hash("abc"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Column softmax always yields a distribution per column.
    #[test]
    fn column_softmax_is_a_distribution(
        vals in proptest::collection::vec(-20.0f64..20.0, 6),
    ) {
        let logits = Array2::from_shape_vec((3, 2), vals).unwrap();
        let z = softmax_columns(&logits);
        for c in 0..2 {
            let col: f64 = z.column(c).sum();
            prop_assert!((col - 1.0).abs() < 1e-9);
            for r in 0..3 {
                prop_assert!(z[(r, c)] > 0.0 && z[(r, c)] < 1.0);
            }
        }
    }

    /// Shift invariance: adding a constant to a column leaves it unchanged.
    #[test]
    fn column_softmax_is_shift_invariant(
        vals in proptest::collection::vec(-5.0f64..5.0, 4),
        shift in -50.0f64..50.0,
    ) {
        let logits = Array2::from_shape_vec((4, 1), vals).unwrap();
        let shifted = &logits + shift;
        let a = softmax_columns(&logits);
        let b = softmax_columns(&shifted);
        for r in 0..4 {
            prop_assert!((a[(r, 0)] - b[(r, 0)]).abs() < 1e-9);
        }
    }
}
