//! Minimal reverse-mode autodiff and the network building blocks used by the
//! learned planner and the adapter policy. Double precision throughout, no
//! BLAS; correctness is checked against central finite differences.

mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use layers::{LayerNorm, Linear, Mlp, MultiHeadAttention, TransformerLayer};
pub use optim::{cosine_lr, AdamW};
pub use params::{ParamId, ParamSet, Session};
pub use tape::{gelu, Tape, TapeId};
pub use tensor::Tensor;

/// Max relative error between analytic and central-finite-difference
/// gradients for a scalar function of plain tensor inputs.
pub fn gradient_check<F>(build: F, inputs: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[TapeId]) -> TapeId,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<TapeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.value(root).item()
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<TapeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &ids);
    let grads = tape.backward(root);

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads[ids[i].0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(input.shape.clone()));
        for j in 0..input.len() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + eps;
            let up = eval(&work);
            work[i].data[j] = orig - eps;
            let down = eval(&work);
            work[i].data[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic.data[j];
            let denom = (ad.abs() + fd.abs()).max(1e-6);
            worst = worst.max((ad - fd).abs() / denom);
        }
    }
    worst
}

/// Gradient check through a parameterized model: compares analytic parameter
/// gradients against finite differences on a deterministic sample of at most
/// `max_per_param` elements per parameter.
pub fn gradient_check_params<F>(
    params: &ParamSet,
    build: F,
    eps: f64,
    max_per_param: usize,
    seed: u64,
) -> f64
where
    F: Fn(&mut Session<'_>) -> TapeId,
{
    let eval = |p: &ParamSet| -> f64 {
        let mut sess = Session::new(p);
        let root = build(&mut sess);
        sess.tape.value(root).item()
    };

    let mut sess = Session::new(params);
    let root = build(&mut sess);
    let grads = sess.param_grads(root);

    let mut rng = crate::rng::Rng::new(seed);
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for (i, tensor) in params.tensors().enumerate() {
        let analytic = grads[i]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tensor.shape.clone()));
        let n = tensor.len();
        let picks: Vec<usize> = if n <= max_per_param {
            (0..n).collect()
        } else {
            (0..max_per_param).map(|_| rng.below(n)).collect()
        };
        for j in picks {
            let orig = tensor.data[j];
            work.tensors_mut().nth(i).unwrap().data[j] = orig + eps;
            let up = eval(&work);
            work.tensors_mut().nth(i).unwrap().data[j] = orig - eps;
            let down = eval(&work);
            work.tensors_mut().nth(i).unwrap().data[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic.data[j];
            let denom = (ad.abs() + fd.abs()).max(1e-6);
            worst = worst.max((ad - fd).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.range(-1.5, 1.5)).collect())
    }

    fn rand_positive(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.range(0.2, 2.0)).collect())
    }

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    #[test]
    fn gradcheck_matmul() {
        let mut rng = Rng::new(10);
        let a = rand_tensor(vec![4, 4], &mut rng);
        let b = rand_tensor(vec![4, 4], &mut rng);
        let err = gradient_check(
            |t, ids| {
                let m = t.matmul(ids[0], ids[1]).unwrap();
                t.sum(m)
            },
            &[a, b],
            EPS,
        );
        assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn gradcheck_elementwise_ops() {
        let mut rng = Rng::new(11);
        let a = rand_tensor(vec![4, 4], &mut rng);
        let b = rand_tensor(vec![4, 4], &mut rng);

        let cases: Vec<(&str, Box<dyn Fn(&mut Tape, &[TapeId]) -> TapeId>)> = vec![
            ("add", Box::new(|t, ids| {
                let x = t.add(ids[0], ids[1]).unwrap();
                t.sum(x)
            })),
            ("sub", Box::new(|t, ids| {
                let x = t.sub(ids[0], ids[1]).unwrap();
                t.sum(x)
            })),
            ("mul", Box::new(|t, ids| {
                let x = t.mul(ids[0], ids[1]).unwrap();
                t.sum(x)
            })),
            ("scale", Box::new(|t, ids| {
                let x = t.scale(ids[0], -2.5);
                t.sum(x)
            })),
            ("tanh", Box::new(|t, ids| {
                let x = t.tanh(ids[0]);
                t.sum(x)
            })),
            ("gelu", Box::new(|t, ids| {
                let x = t.gelu(ids[0]);
                t.sum(x)
            })),
            ("exp", Box::new(|t, ids| {
                let x = t.exp(ids[0]);
                t.sum(x)
            })),
            ("mse", Box::new(|t, ids| t.mse_loss(ids[0], ids[1]).unwrap())),
        ];
        for (name, build) in cases {
            let err = gradient_check(&build, &[a.clone(), b.clone()], EPS);
            assert!(err < TOL, "{name}: max rel err {err}");
        }
    }

    #[test]
    fn gradcheck_positive_domain_ops() {
        let mut rng = Rng::new(12);
        let a = rand_positive(vec![4, 4], &mut rng);
        for (name, build) in [
            ("ln", Box::new(|t: &mut Tape, ids: &[TapeId]| {
                let x = t.ln(ids[0]);
                t.sum(x)
            }) as Box<dyn Fn(&mut Tape, &[TapeId]) -> TapeId>),
            ("sqrt", Box::new(|t: &mut Tape, ids: &[TapeId]| {
                let x = t.sqrt(ids[0]);
                t.sum(x)
            })),
        ] {
            let err = gradient_check(&build, &[a.clone()], EPS);
            assert!(err < TOL, "{name}: max rel err {err}");
        }
    }

    #[test]
    fn gradcheck_softmax_and_layer_norm() {
        let mut rng = Rng::new(13);
        let x = rand_tensor(vec![4, 4], &mut rng);
        let w = rand_tensor(vec![4], &mut rng);
        // Weighted sums so the row-coupled gradients are nontrivial.
        let err = gradient_check(
            |t, ids| {
                let s = t.softmax(ids[0]);
                let m = t.mul(s, ids[1]).unwrap();
                t.sum(m)
            },
            &[x.clone(), rand_tensor(vec![4, 4], &mut rng)],
            EPS,
        );
        assert!(err < TOL, "softmax: max rel err {err}");

        let gamma = rand_positive(vec![4], &mut rng);
        let beta = rand_tensor(vec![4], &mut rng);
        let err = gradient_check(
            |t, ids| {
                let ln = t.layer_norm(ids[0], ids[1], ids[2]).unwrap();
                let m = t.mul(ln, ids[3]).unwrap();
                t.sum(m)
            },
            &[x, gamma, beta, Tensor::new(vec![4, 4], (0..16).map(|i| 0.3 + 0.1 * i as f64).collect())],
            EPS,
        );
        assert!(err < TOL, "layer_norm: max rel err {err}");
        let _ = w;
    }

    #[test]
    fn gradcheck_shape_ops() {
        let mut rng = Rng::new(14);
        let a = rand_tensor(vec![3, 4], &mut rng);
        let b = rand_tensor(vec![2, 4], &mut rng);
        let c = rand_tensor(vec![3, 2], &mut rng);
        let weights = rand_tensor(vec![5, 4], &mut rng);
        let err = gradient_check(
            |t, ids| {
                let cat = t.concat_rows(&[ids[0], ids[1]]).unwrap();
                let m = t.mul(cat, ids[3]).unwrap();
                let sl = t.slice_rows(m, 1, 3).unwrap();
                t.sum(sl)
            },
            &[a.clone(), b, c.clone(), weights],
            EPS,
        );
        assert!(err < TOL, "concat/slice rows: {err}");

        let err = gradient_check(
            |t, ids| {
                let cat = t.concat_cols(&[ids[0], ids[2]]).unwrap();
                let tr = t.transpose(cat);
                let sl = t.slice_cols(tr, 0, 2).unwrap();
                let r = t.reshape(sl, vec![12]).unwrap();
                let e = t.exp(r);
                t.mean(e)
            },
            &[a, Tensor::zeros(vec![1]), c],
            EPS,
        );
        assert!(err < TOL, "concat cols/transpose/reshape: {err}");
    }

    #[test]
    fn gradcheck_multi_head_attention_and_bias() {
        let mut rng = Rng::new(15);
        let mut params = ParamSet::new();
        let mha = MultiHeadAttention::new(&mut params, "mha", 8, 2, &mut rng);
        let x = rand_tensor(vec![5, 8], &mut rng);
        let err = gradient_check_params(
            &params,
            |sess| {
                let x = sess.tape.leaf(x.clone());
                let out = mha.forward(sess, x, x, None).unwrap();
                sess.tape.sum(out)
            },
            EPS,
            6,
            99,
        );
        assert!(err < TOL, "mha params: max rel err {err}");

        // Input gradients through the attention, including a mask.
        let mut params2 = ParamSet::new();
        let mha2 = MultiHeadAttention::new(&mut params2, "mha", 8, 2, &mut rng);
        let mask = Tensor::new(
            vec![5, 5],
            (0..25)
                .map(|i| if i % 7 == 0 { -1e9 } else { 0.0 })
                .collect(),
        );
        let xs = rand_tensor(vec![5, 8], &mut rng);
        let err = gradient_check(
            |t, ids| {
                let mut sess_tape = std::mem::take(t);
                // Rebuild a session around this tape.
                let mut sess = Session::new(&params2);
                sess.tape = sess_tape;
                let m = sess.tape.leaf(mask.clone());
                let out = mha2.forward(&mut sess, ids[0], ids[0], Some(m)).unwrap();
                let root = sess.tape.sum(out);
                sess_tape = std::mem::take(&mut sess.tape);
                *t = sess_tape;
                root
            },
            &[xs],
            EPS,
        );
        assert!(err < TOL, "mha input: max rel err {err}");
    }

    #[test]
    fn gradcheck_full_transformer_block() {
        let mut rng = Rng::new(16);
        let mut params = ParamSet::new();
        let l1 = TransformerLayer::new(&mut params, "l1", 8, 2, &mut rng);
        let l2 = TransformerLayer::new(&mut params, "l2", 8, 2, &mut rng);
        let x = rand_tensor(vec![4, 8], &mut rng);
        let target = rand_tensor(vec![4, 8], &mut rng);
        let err = gradient_check_params(
            &params,
            |sess| {
                let xin = sess.tape.leaf(x.clone());
                let t = sess.tape.leaf(target.clone());
                let h = l1.forward(sess, xin).unwrap();
                let h = l2.forward(sess, h).unwrap();
                sess.tape.mse_loss(h, t).unwrap()
            },
            EPS,
            4,
            123,
        );
        assert!(err < 1e-3, "transformer block: max rel err {err}");
    }

    #[test]
    fn gradcheck_broadcast_and_piecewise_ops() {
        let mut rng = Rng::new(19);
        let x = rand_tensor(vec![4, 3], &mut rng);
        let row = rand_tensor(vec![3], &mut rng);
        let err = gradient_check(
            |t, ids| {
                let m = t.mul_row(ids[0], ids[1]).unwrap();
                t.sum(m)
            },
            &[x.clone(), row],
            EPS,
        );
        assert!(err < TOL, "mul_row: {err}");

        // Clamp and min: keep sample points away from the kinks.
        let a = Tensor::new(vec![4], vec![-2.0, -0.4, 0.3, 1.7]);
        let err = gradient_check(
            |t, ids| {
                let c = t.clamp(ids[0], -1.0, 1.0);
                let e = t.exp(c);
                t.sum(e)
            },
            &[a],
            EPS,
        );
        assert!(err < TOL, "clamp: {err}");

        let a = Tensor::new(vec![4], vec![0.1, 2.0, -1.0, 0.6]);
        let b = Tensor::new(vec![4], vec![0.9, 1.0, -2.0, 0.2]);
        let err = gradient_check(
            |t, ids| {
                let m = t.min_elem(ids[0], ids[1]).unwrap();
                let e = t.tanh(m);
                t.sum(e)
            },
            &[a, b],
            EPS,
        );
        assert!(err < TOL, "min_elem: {err}");
    }

    #[test]
    fn mse_of_identical_tensors_is_zero_with_zero_gradient() {
        let mut rng = Rng::new(17);
        let x = rand_tensor(vec![4, 4], &mut rng);
        let mut tape = Tape::new();
        let a = tape.leaf(x.clone());
        let b = tape.leaf(x);
        let loss = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        let grads = tape.backward(loss);
        for g in grads[a.0].as_ref().unwrap().data.iter() {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(18);
        let x = rand_tensor(vec![6, 9], &mut rng);
        let mut tape = Tape::new();
        let a = tape.leaf(x);
        let s = tape.softmax(a);
        let v = tape.value(s);
        for i in 0..6 {
            let sum: f64 = v.data[i * 9..(i + 1) * 9].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_errors_name_the_operands() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let run = || {
            let mut rng = Rng::new(77);
            let mut params = ParamSet::new();
            let net = Mlp::new(&mut params, "net", 4, 16, 2, &mut rng);
            let mut opt = AdamW::new(&params, 1e-4);
            let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
            let y = Tensor::new(vec![3, 2], (0..6).map(|i| (i as f64 * 0.71).cos()).collect());
            for step in 0..25 {
                let mut sess = Session::new(&params);
                let xi = sess.tape.leaf(x.clone());
                let yi = sess.tape.leaf(y.clone());
                let out = net.forward(&mut sess, xi).unwrap();
                let loss = sess.tape.mse_loss(out, yi).unwrap();
                let grads = sess.param_grads(loss);
                opt.step(&mut params, &grads, cosine_lr(step, 25, 1e-3));
            }
            let snapshot: Vec<f64> = params.tensors().flat_map(|t| t.data.clone()).collect();
            snapshot
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
