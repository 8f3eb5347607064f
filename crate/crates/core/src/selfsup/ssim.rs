//! SSIM with 3x3 mean-pooled local statistics, differentiable end to end.

use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Depth-wise 3x3 mean filter, zero padded.
fn mean_pool<E: Elem>(x: &Tensor<E>, window: &Tensor<E>, c: usize) -> Result<Tensor<E>> {
    x.conv2d(window, None, 1, 1, c)
}

/// Per-pixel structural similarity of two `[B,C,H,W]` images, in [-1, 1].
pub fn ssim<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(Error::invalid(
            "ssim",
            format!("need equal [B,C,H,W], got {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let c = a.shape()[1];
    let window = Tensor::full(&[c, 1, 3, 3], E::from_f64(1.0 / 9.0));

    let mu_a = mean_pool(a, &window, c)?;
    let mu_b = mean_pool(b, &window, c)?;
    let mu_aa = mu_a.mul(&mu_a)?;
    let mu_bb = mu_b.mul(&mu_b)?;
    let mu_ab = mu_a.mul(&mu_b)?;

    let sigma_a = mean_pool(&a.mul(a)?, &window, c)?.sub(&mu_aa)?;
    let sigma_b = mean_pool(&b.mul(b)?, &window, c)?.sub(&mu_bb)?;
    let sigma_ab = mean_pool(&a.mul(b)?, &window, c)?.sub(&mu_ab)?;

    let c1 = E::from_f64(C1);
    let c2 = E::from_f64(C2);
    let num = mu_ab.affine(E::from_f64(2.0), c1).mul(&sigma_ab.affine(E::from_f64(2.0), c2))?;
    let den = mu_aa.add(&mu_bb)?.affine(E::ONE, c1).mul(&sigma_a.add(&sigma_b)?.affine(E::ONE, c2))?;
    num.div(&den)
}
