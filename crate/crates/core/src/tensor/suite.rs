//! Randomized finite-difference sweep over every differentiable op, used by
//! the engine's own tests and by the acceptance suite. Runs at f64; inputs
//! are sampled away from non-smooth points (ReLU kink, max ties, sampling
//! cell boundaries).

use super::{batchnorm::batch_norm, grad_check, resample::identity_grid, Rng, Tensor};
use crate::Result;
use std::sync::{Arc, Mutex};

pub struct OpGradReport {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    /// per-op tolerance (1e-3 for grid sampling near-kink geometry, 1e-4 otherwise)
    pub tol: f64,
}

type Loss = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

fn rand_t(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.range(lo, hi)).collect()).unwrap()
}

/// Values spread apart so no axis has near-ties (for reduce_max).
fn rand_distinct(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.11).collect();
    // deterministic shuffle
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        vals.swap(i, j);
    }
    for v in vals.iter_mut() {
        *v += rng.range(-0.01, 0.01);
    }
    Tensor::from_vec(shape, vals).unwrap()
}

/// Away from the ReLU kink by at least `margin`.
fn rand_off_zero(rng: &mut Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.range(-1.0, 1.0);
            if v.abs() < margin {
                v + 3.0 * margin * v.signum().max(0.0).max(0.5)
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn weighted(rng: &mut Rng, out_shape: &[usize]) -> Tensor<f64> {
    rand_t(rng, out_shape, 0.5, 1.5)
}

struct Case {
    op: &'static str,
    eps: f64,
    tol: f64,
    build: Box<dyn Fn(&mut Rng) -> (Vec<Tensor<f64>>, Loss)>,
}

fn cases() -> Vec<Case> {
    let mut v: Vec<Case> = Vec::new();
    let mut case = |op: &'static str,
                    eps: f64,
                    tol: f64,
                    build: Box<dyn Fn(&mut Rng) -> (Vec<Tensor<f64>>, Loss)>| {
        v.push(Case { op, eps, tol, build });
    };

    case("conv2d", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[1, 2, 5, 5], -1.0, 1.0);
        let w = rand_t(rng, &[4, 2, 3, 3], -0.7, 0.7);
        let b = rand_t(rng, &[4], -0.3, 0.3);
        let wt = weighted(rng, &[1, 4, 3, 3]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].conv2d(&p[1], Some(&p[2]), 2, 1, 1)?.mul(&wt)?.sum_all())
        });
        (vec![x, w, b], f)
    }));

    case("conv2d_pointwise", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[2, 3, 4, 4], -1.0, 1.0);
        let w = rand_t(rng, &[5, 3, 1, 1], -0.7, 0.7);
        let b = rand_t(rng, &[5], -0.3, 0.3);
        let wt = weighted(rng, &[2, 5, 4, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].conv2d(&p[1], Some(&p[2]), 1, 0, 1)?.mul(&wt)?.sum_all())
        });
        (vec![x, w, b], f)
    }));

    case("conv2d_depthwise", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[2, 3, 4, 4], -1.0, 1.0);
        let w = rand_t(rng, &[3, 1, 3, 3], -0.7, 0.7);
        let wt = weighted(rng, &[2, 3, 4, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].conv2d(&p[1], None, 1, 1, 3)?.mul(&wt)?.sum_all())
        });
        (vec![x, w], f)
    }));

    case("batch_norm_train", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[2, 3, 4, 4], -2.0, 2.0);
        let g = rand_t(rng, &[3], 0.5, 1.5);
        let b = rand_t(rng, &[3], -0.5, 0.5);
        let wt = weighted(rng, &[2, 3, 4, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            let rm = Arc::new(Mutex::new(vec![0.0; 3]));
            let rv = Arc::new(Mutex::new(vec![1.0; 3]));
            Ok(batch_norm(&p[0], &p[1], &p[2], &rm, &rv, true, 0.1, 1e-5)?.mul(&wt)?.sum_all())
        });
        (vec![x, g, b], f)
    }));

    case("batch_norm_infer", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[2, 3, 3, 3], -2.0, 2.0);
        let g = rand_t(rng, &[3], 0.5, 1.5);
        let b = rand_t(rng, &[3], -0.5, 0.5);
        let rm = Arc::new(Mutex::new(vec![0.1, -0.2, 0.3]));
        let rv = Arc::new(Mutex::new(vec![1.1, 0.8, 1.4]));
        let wt = weighted(rng, &[2, 3, 3, 3]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(batch_norm(&p[0], &p[1], &p[2], &rm, &rv, false, 0.1, 1e-5)?.mul(&wt)?.sum_all())
        });
        (vec![x, g, b], f)
    }));

    case("relu", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_off_zero(rng, &[3, 5], 1e-3 * 3.0);
        let wt = weighted(rng, &[3, 5]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| Ok(p[0].relu().mul(&wt)?.sum_all()));
        (vec![x], f)
    }));

    case("sigmoid", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[3, 5], -3.0, 3.0);
        let wt = weighted(rng, &[3, 5]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| Ok(p[0].sigmoid().mul(&wt)?.sum_all()));
        (vec![x], f)
    }));

    case("matmul", 1e-5, 1e-4, Box::new(|rng| {
        let a = rand_t(rng, &[2, 3, 4], -1.0, 1.0);
        let b = rand_t(rng, &[2, 4, 5], -1.0, 1.0);
        let wt = weighted(rng, &[2, 3, 5]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].matmul_scaled(&p[1], 0.37)?.mul(&wt)?.sum_all())
        });
        (vec![a, b], f)
    }));

    case("matmul_shared_rhs", 1e-5, 1e-4, Box::new(|rng| {
        let a = rand_t(rng, &[2, 3, 4], -1.0, 1.0);
        let b = rand_t(rng, &[4, 5], -1.0, 1.0);
        let wt = weighted(rng, &[2, 3, 5]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].matmul(&p[1])?.mul(&wt)?.sum_all())
        });
        (vec![a, b], f)
    }));

    case("reduce_max", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_distinct(rng, &[3, 6]);
        let wt = weighted(rng, &[3, 1]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].reduce_max(1)?.mul(&wt)?.sum_all())
        });
        (vec![x], f)
    }));

    case("reduce_mean", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[3, 4, 2], -1.0, 1.0);
        let wt = weighted(rng, &[3, 1, 2]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].reduce_mean(1)?.mul(&wt)?.sum_all())
        });
        (vec![x], f)
    }));

    case("bilinear_resize", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[1, 2, 3, 4], -1.0, 1.0);
        let wt = weighted(rng, &[1, 2, 6, 8]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].bilinear_resize(6, 8, false)?.mul(&wt)?.sum_all())
        });
        (vec![x], f)
    }));

    case("grid_sample", 1e-5, 1e-3, Box::new(|rng| {
        let x = rand_t(rng, &[1, 1, 4, 4], -1.0, 1.0);
        // keep sampling points well inside interpolation cells
        let base = identity_grid::<f64>(1, 3, 3);
        let jit: Vec<f64> = base
            .data()
            .iter()
            .map(|v| v + rng.range(0.06, 0.09) * if rng.uniform() > 0.5 { 1.0 } else { -1.0 })
            .collect();
        let grid = Tensor::from_vec(&[1, 3, 3, 2], jit).unwrap();
        let wt = weighted(rng, &[1, 1, 3, 3]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            Ok(p[0].grid_sample(&p[1])?.mul(&wt)?.sum_all())
        });
        (vec![x, grid], f)
    }));

    case("softmax", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[3, 5], -2.0, 2.0);
        let wt = weighted(rng, &[3, 5]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| Ok(p[0].softmax(1)?.mul(&wt)?.sum_all()));
        (vec![x], f)
    }));

    case("add_broadcast", 1e-5, 1e-4, Box::new(|rng| {
        let a = rand_t(rng, &[2, 3, 4], -1.0, 1.0);
        let b = rand_t(rng, &[4], -1.0, 1.0);
        let wt = weighted(rng, &[2, 3, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| Ok(p[0].add(&p[1])?.mul(&wt)?.sum_all()));
        (vec![a, b], f)
    }));

    case("sub_mul_div", 1e-5, 1e-4, Box::new(|rng| {
        let a = rand_t(rng, &[3, 4], -1.0, 1.0);
        let b = rand_t(rng, &[3, 4], 0.5, 2.0);
        let wt = weighted(rng, &[3, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            let s = p[0].sub(&p[1])?;
            let m = s.mul(&p[0])?;
            Ok(m.div(&p[1])?.mul(&wt)?.sum_all())
        });
        (vec![a, b], f)
    }));

    case("min2", 1e-5, 1e-4, Box::new(|rng| {
        let a = rand_distinct(rng, &[3, 4]);
        let b = rand_distinct(rng, &[3, 4]);
        let wt = weighted(rng, &[3, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| Ok(p[0].min2(&p[1])?.mul(&wt)?.sum_all()));
        (vec![a, b], f)
    }));

    case("unary_chain", 1e-5, 1e-4, Box::new(|rng| {
        // sqrt(exp) then trig and affine on a positive-range input
        let x = rand_t(rng, &[3, 4], 0.2, 1.5);
        let wt = weighted(rng, &[3, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            let y = p[0].exp().sqrt().ln().sin().add(&p[0].cos())?;
            Ok(y.affine(0.7, 0.1).mul(&wt)?.sum_all())
        });
        (vec![x], f)
    }));

    case("abs_clamp", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_off_zero(rng, &[3, 4], 5e-3);
        let wt = weighted(rng, &[3, 4]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            // clamp boundary at -2 keeps all samples strictly on one side
            Ok(p[0].abs().clamp_min(-2.0).mul(&wt)?.sum_all())
        });
        (vec![x], f)
    }));

    case("shape_ops", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[2, 3, 4], -1.0, 1.0);
        let y = rand_t(rng, &[2, 3, 2], -1.0, 1.0);
        let wt = weighted(rng, &[2, 6, 3]);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| {
            let c = Tensor::concat(&[&p[0], &p[1]], 2)?;
            let s = c.slice(2, 0, 6)?;
            let t = s.transpose(1, 2)?;
            Ok(t.reshape(&[2, 6, 3])?.mul(&wt)?.sum_all())
        });
        (vec![x, y], f)
    }));

    case("mean_all", 1e-5, 1e-4, Box::new(|rng| {
        let x = rand_t(rng, &[3, 4], -1.0, 1.0);
        let f: Loss = Box::new(move |p: &[Tensor<f64>]| Ok(p[0].mul(&p[0])?.mean_all()));
        (vec![x], f)
    }));

    v
}

/// Run `trials` random finite-difference checks per differentiable op.
/// Returns one report per op; callers assert `max_rel_err` under tolerance.
pub fn op_gradient_suite(trials: usize, seed: u64) -> Result<Vec<OpGradReport>> {
    let mut reports = Vec::new();
    for case in cases() {
        let mut rng = Rng::new(seed).derive(case.op);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let (params, f) = (case.build)(&mut rng);
            let err = grad_check(f, &params, case.eps)?;
            worst = worst.max(err);
        }
        reports.push(OpGradReport { op: case.op, trials, max_rel_err: worst, tol: case.tol });
    }
    Ok(reports)
}
