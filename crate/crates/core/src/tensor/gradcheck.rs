//! Central finite-difference verification of the tape gradients.

use super::{backward, Elem, Tensor};
use crate::Result;

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

fn perturbed<E: Elem>(params: &[Tensor<E>], pi: usize, ci: usize, delta: f64) -> Vec<Tensor<E>> {
    params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == pi {
                let mut data = p.to_vec();
                data[ci] = E::from_f64(data[ci].to_f64() + delta);
                Tensor::leaf(p.shape(), data, false).expect("perturbed leaf")
            } else {
                p.detach(false)
            }
        })
        .collect()
}

/// Compare the tape gradient of the scalar `f(params)` against central finite
/// differences at every listed `(param, coordinate)` pair; returns the worst
/// relative error. `f` must be deterministic.
pub fn grad_check_sampled<E: Elem>(
    f: impl Fn(&[Tensor<E>]) -> Result<Tensor<E>>,
    params: &[Tensor<E>],
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<f64> {
    let tracked: Vec<Tensor<E>> = params.iter().map(|p| p.detach(true)).collect();
    let loss = f(&tracked)?;
    backward(&loss)?;
    let grads: Vec<Vec<E>> = tracked
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![E::ZERO; p.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for &(pi, ci) in coords {
        let plus = f(&perturbed(params, pi, ci, eps))?.item().to_f64();
        let minus = f(&perturbed(params, pi, ci, -eps))?.item().to_f64();
        let fd = (plus - minus) / (2.0 * eps);
        let an = grads[pi][ci].to_f64();
        worst = worst.max(rel_err(fd, an));
    }
    Ok(worst)
}

/// Finite-difference check over every coordinate of every parameter.
pub fn grad_check<E: Elem>(
    f: impl Fn(&[Tensor<E>]) -> Result<Tensor<E>>,
    params: &[Tensor<E>],
    eps: f64,
) -> Result<f64> {
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
        .collect();
    grad_check_sampled(f, params, eps, &coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{OpKind, Rng};

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let mut rng = Rng::new(17);
        let a: Vec<f64> = (0..6).map(|_| rng.range(0.5, 2.0)).collect();
        let x = Tensor::from_vec(&[6], (0..6).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let coef = Tensor::from_vec(&[6], a).unwrap();
        let f = move |p: &[Tensor<f64>]| {
            let sq = p[0].mul(&p[0])?;
            Ok(sq.mul(&coef)?.sum_all())
        };
        let err = grad_check(f, &[x], 1e-4).unwrap();
        assert!(err < 1e-8, "quadratic FD should be exact, got {err}");
    }

    #[test]
    fn relu_network_away_from_kinks() {
        let mut rng = Rng::new(18);
        // keep every preactivation away from 0 by at least 1e-3
        let x = Tensor::from_vec(
            &[8],
            (0..8)
                .map(|_| {
                    let v: f64 = rng.range(-1.0, 1.0);
                    if v.abs() < 0.05 {
                        v + 0.1
                    } else {
                        v
                    }
                })
                .collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(&[8], (0..8).map(|_| rng.range(0.5, 1.5)).collect()).unwrap();
        let f = move |p: &[Tensor<f64>]| Ok(p[0].relu().mul(&w)?.sum_all());
        let err = grad_check(f, &[x], 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        // negative control: a deliberately wrong backward rule must produce a
        // large discrepancy, proving the checker has teeth
        fn bad_square(x: &Tensor<f64>) -> Tensor<f64> {
            let data: Vec<f64> = x.data().iter().map(|v| v * v).collect();
            let px = x.clone();
            let xd = x.data_arc();
            let backward: crate::tensor::BackFn<f64> = Box::new(move |up: &[f64]| {
                // wrong: should be 2*x*up, uses 3*x*up
                let dx: Vec<f64> =
                    up.iter().enumerate().map(|(i, u)| 3.0 * xd[i] * u).collect();
                px.accumulate_grad(&dx);
            });
            Tensor::new_node(x.shape().to_vec(), data, OpKind::Mul, vec![x.clone()], Some(backward))
        }
        let x = Tensor::from_vec(&[4], vec![0.7, -1.3, 2.0, 0.4]).unwrap();
        let f = move |p: &[Tensor<f64>]| Ok(bad_square(&p[0]).sum_all());
        let err = grad_check(f, &[x], 1e-5).unwrap();
        assert!(err > 1e-2, "corrupted rule must be detected, got {err}");
    }
}
