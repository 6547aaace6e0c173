//! Randomized gradient checks: every differentiable operation against fp64
//! central differences, 100 seeded trials per op, relative error < 1e-4.

use pixssr_core::check::{central_diff, max_rel_err};
use pixssr_core::rng::Rng;
use pixssr_core::ssm::ScanDirection;
use pixssr_core::{Tape, Tensor, VarId};

const TRIALS: u64 = 100;
const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Sample in [lo, hi).
fn rand_in(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.uniform())
}

/// Check d loss / d inputs[i] for every input, where
/// loss = sum(w * build(inputs)) for a fixed random weighting w.
fn check_op(
    name: &str,
    seed: u64,
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[VarId]) -> VarId,
) {
    let run = |tensors: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars);
        let mut wrng = Rng::from_seed(seed ^ 0xABCD);
        let w = Tensor::from_fn(tape.val(out).shape(), |_| wrng.uniform() + 0.5);
        let wc = tape.constant(w);
        let prod = tape.mul(out, wc).unwrap();
        let loss = tape.sum_all(prod);
        let lv = tape.val(loss).item();
        let grads = tape.backward(loss).unwrap();
        let gs = vars
            .iter()
            .map(|&v| grads.get(v).unwrap().data().to_vec())
            .collect();
        (lv, gs)
    };
    let (_, analytic) = run(inputs);
    for (i, input) in inputs.iter().enumerate() {
        let mut f = |flat: &[f64]| {
            let mut ts = inputs.to_vec();
            ts[i] = Tensor::new(input.shape().to_vec(), flat.to_vec()).unwrap();
            run(&ts).0
        };
        let fd = central_diff(&mut f, input.data(), H);
        let err = max_rel_err(&analytic[i], &fd, 1e-6);
        assert!(
            err < TOL,
            "{name} seed {seed} input {i}: rel err {err:.3e}"
        );
    }
}

#[test]
fn elementwise_binary_ops() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(seed);
        let a = rand_in(&[2, 3], &mut rng, -1.0, 1.0);
        let b = rand_in(&[2, 3], &mut rng, 0.5, 1.5); // safe divisor
        let bb = rand_in(&[1, 3], &mut rng, 0.5, 1.5); // broadcast partner
        check_op("add", seed, &[a.clone(), b.clone()], &|t, v| {
            t.add(v[0], v[1]).unwrap()
        });
        check_op("sub", seed, &[a.clone(), b.clone()], &|t, v| {
            t.sub(v[0], v[1]).unwrap()
        });
        check_op("mul", seed, &[a.clone(), b.clone()], &|t, v| {
            t.mul(v[0], v[1]).unwrap()
        });
        check_op("div", seed, &[a.clone(), b.clone()], &|t, v| {
            t.div(v[0], v[1]).unwrap()
        });
        check_op("mul_broadcast", seed, &[a.clone(), bb.clone()], &|t, v| {
            t.mul(v[0], v[1]).unwrap()
        });
        check_op("div_broadcast", seed, &[a, bb], &|t, v| {
            t.div(v[0], v[1]).unwrap()
        });
    }
}

#[test]
fn elementwise_unary_ops() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(1000 + seed);
        let x = rand_in(&[7], &mut rng, -2.0, 2.0);
        let pos = rand_in(&[7], &mut rng, 0.5, 2.0);
        let off = rand_in(&[7], &mut rng, 0.2, 2.0); // away from |x|=0 kink
        check_op("silu", seed, &[x.clone()], &|t, v| t.silu(v[0]));
        check_op("gelu", seed, &[x.clone()], &|t, v| t.gelu(v[0]));
        check_op("softplus", seed, &[x.clone()], &|t, v| t.softplus(v[0]));
        check_op("exp", seed, &[x.clone()], &|t, v| t.exp(v[0]));
        check_op("sqrt", seed, &[pos], &|t, v| t.sqrt(v[0]));
        check_op("neg", seed, &[x.clone()], &|t, v| t.neg(v[0]));
        check_op("abs", seed, &[off.clone()], &|t, v| t.abs(v[0]));
        check_op("scale", seed, &[x.clone()], &|t, v| t.scale(v[0], -1.7));
        check_op("add_scalar", seed, &[x], &|t, v| t.add_scalar(v[0], 0.31));
        check_op("l1_sum", seed, &[off], &|t, v| t.l1_sum(v[0]));
    }
}

#[test]
fn softmax_and_reductions() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(2000 + seed);
        let x = rand_in(&[3, 4], &mut rng, -2.0, 2.0);
        check_op("softmax_rows", seed, &[x.clone()], &|t, v| {
            t.softmax_axis(v[0], 1).unwrap()
        });
        check_op("softmax_cols", seed, &[x.clone()], &|t, v| {
            t.softmax_axis(v[0], 0).unwrap()
        });
        check_op("sum_all", seed, &[x.clone()], &|t, v| t.sum_all(v[0]));
        check_op("mean_all", seed, &[x.clone()], &|t, v| t.mean_all(v[0]));
        check_op("sum_axis0", seed, &[x.clone()], &|t, v| {
            t.sum_axis(v[0], 0).unwrap()
        });
        check_op("sum_axis1", seed, &[x], &|t, v| t.sum_axis(v[0], 1).unwrap());
    }
}

#[test]
fn linear_algebra_ops() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(3000 + seed);
        let a = rand_in(&[3, 4], &mut rng, -1.0, 1.0);
        let b = rand_in(&[4, 2], &mut rng, -1.0, 1.0);
        check_op("matmul", seed, &[a.clone(), b], &|t, v| {
            t.matmul(v[0], v[1]).unwrap()
        });
        check_op("transpose2", seed, &[a], &|t, v| t.transpose2(v[0]).unwrap());
        let ba = rand_in(&[2, 2, 3], &mut rng, -1.0, 1.0);
        let bb = rand_in(&[2, 3, 2], &mut rng, -1.0, 1.0);
        check_op("matmul_batched", seed, &[ba, bb], &|t, v| {
            t.matmul(v[0], v[1]).unwrap()
        });
    }
}

#[test]
fn conv_and_resampling_ops() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(4000 + seed);
        let x = rand_in(&[2, 4, 4], &mut rng, -1.0, 1.0);
        let w = rand_in(&[3, 2, 3, 3], &mut rng, -0.5, 0.5);
        let b = rand_in(&[3], &mut rng, -0.5, 0.5);
        check_op("conv3x3", seed, &[x.clone(), w.clone(), b.clone()], &|t, v| {
            t.conv3x3(v[0], v[1], v[2], 1).unwrap()
        });
        check_op("conv3x3_s2", seed, &[x.clone(), w, b], &|t, v| {
            t.conv3x3(v[0], v[1], v[2], 2).unwrap()
        });
        check_op("avgpool2", seed, &[x.clone()], &|t, v| {
            t.avgpool2(v[0]).unwrap()
        });
        check_op("upsample2", seed, &[x.clone()], &|t, v| {
            t.upsample2(v[0]).unwrap()
        });
        let small = rand_in(&[1, 3, 3], &mut rng, -1.0, 1.0);
        check_op("edge_pad", seed, &[small], &|t, v| {
            t.edge_pad_to(v[0], 5, 4).unwrap()
        });
        let img = rand_in(&[1, 6, 6], &mut rng, -1.0, 1.0);
        check_op("gauss_valid", seed, &[img], &|t, v| {
            t.gauss_valid(v[0], 3, 0.9).unwrap()
        });
        let map = rand_in(&[3, 3], &mut rng, -1.0, 1.0);
        check_op("bilinear", seed, &[map], &|t, v| {
            t.bilinear_resize(v[0], 5, 4).unwrap()
        });
    }
}

#[test]
fn structural_ops() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(5000 + seed);
        let a = rand_in(&[2, 3], &mut rng, -1.0, 1.0);
        let b = rand_in(&[1, 3], &mut rng, -1.0, 1.0);
        check_op("concat0", seed, &[a.clone(), b], &|t, v| {
            t.concat0(&[v[0], v[1]]).unwrap()
        });
        check_op("slice0", seed, &[a.clone()], &|t, v| {
            t.slice0(v[0], 1, 2).unwrap()
        });
        check_op("reshape", seed, &[a], &|t, v| {
            t.reshape(v[0], vec![3, 2]).unwrap()
        });
        let cube = rand_in(&[2, 3, 3], &mut rng, -1.0, 1.0);
        check_op("gather_pixels", seed, &[cube.clone()], &|t, v| {
            t.gather_pixels(v[0], &[(0, 1), (2, 2)]).unwrap()
        });
        for dir in ScanDirection::ALL {
            check_op("flatten_dir", seed, &[cube.clone()], &|t, v| {
                t.flatten_dir(v[0], dir).unwrap()
            });
        }
        let seq = rand_in(&[9, 2], &mut rng, -1.0, 1.0);
        check_op("unflatten_dir", seed, &[seq], &|t, v| {
            t.unflatten_dir(v[0], ScanDirection::TopDown, 3, 3).unwrap()
        });
    }
}

#[test]
fn selective_scan_op() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(6000 + seed);
        let (l, c, n) = (5usize, 2usize, 3usize);
        let x = rand_in(&[l, c], &mut rng, -1.0, 1.0);
        let delta = rand_in(&[l, c], &mut rng, 0.05, 0.8);
        let b_seq = rand_in(&[l, n], &mut rng, -1.0, 1.0);
        let c_seq = rand_in(&[l, n], &mut rng, -1.0, 1.0);
        let a = rand_in(&[c, n], &mut rng, -2.0, -0.1);
        let d = rand_in(&[c], &mut rng, -1.0, 1.0);
        check_op(
            "selective_scan",
            seed,
            &[x, delta, b_seq, c_seq, a, d],
            &|t, v| t.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap(),
        );
    }
}

#[test]
fn frft_op() {
    for seed in 0..TRIALS {
        let mut rng = Rng::from_seed(7000 + seed);
        let x = rand_in(&[2, 1, 4, 4], &mut rng, -1.0, 1.0);
        let order = [0.3, 0.5, 1.0, 1.3][(seed % 4) as usize];
        check_op("frft2", seed, &[x], &|t, v| t.frft2(v[0], order).unwrap());
    }
}

#[test]
fn frft_real_sum_gradient_identity() {
    // gradient of real(sum(frft(x))) vs finite differences, rel err < 1e-5
    let mut rng = Rng::from_seed(99);
    let x0 = rand_in(&[2, 1, 4, 4], &mut rng, -1.0, 1.0);
    let run = |flat: &[f64]| -> f64 {
        let mut t = Tape::new();
        let x = t.leaf(
            Tensor::new(vec![2, 1, 4, 4], flat.to_vec()).unwrap(),
            true,
        );
        let y = t.frft2(x, 0.5).unwrap();
        let re = t.slice0(y, 0, 1).unwrap();
        let s = t.sum_all(re);
        t.val(s).item()
    };
    let mut t = Tape::new();
    let xv = t.leaf(x0.clone(), true);
    let y = t.frft2(xv, 0.5).unwrap();
    let re = t.slice0(y, 0, 1).unwrap();
    let s = t.sum_all(re);
    let g = t.backward(s).unwrap();
    let mut f = |flat: &[f64]| run(flat);
    let fd = central_diff(&mut f, x0.data(), 1e-5);
    let err = max_rel_err(g.get(xv).unwrap().data(), &fd, 1e-8);
    assert!(err < 1e-5, "rel err {err:.3e}");
}

#[test]
fn broadcast_is_associative_on_shapes() {
    use pixssr_core::tensor::broadcast_shape;
    let shapes: Vec<Vec<usize>> = vec![
        vec![2, 3],
        vec![1, 3],
        vec![2, 1],
        vec![3],
        vec![1],
        vec![4, 2, 3],
        vec![4, 1, 1],
    ];
    for a in &shapes {
        for b in &shapes {
            for c in &shapes {
                let left = broadcast_shape(a, b).and_then(|ab| broadcast_shape(&ab, c));
                let right = broadcast_shape(b, c).and_then(|bc| broadcast_shape(a, &bc));
                match (left, right) {
                    (Ok(l), Ok(r)) => assert_eq!(l, r, "{a:?} {b:?} {c:?}"),
                    (Err(_), Err(_)) => {}
                    (l, r) => panic!("associativity mismatch on {a:?} {b:?} {c:?}: {l:?} vs {r:?}"),
                }
            }
        }
    }
}
