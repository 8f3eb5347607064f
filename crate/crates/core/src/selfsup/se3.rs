//! SE(3) rigid motions: a plain f64 form for ground truth and evaluation,
//! and a tensor-side Rodrigues exponential so pose gradients flow through
//! the warp.

use super::super::net::PoseVector;
use crate::tensor::{Elem, Tensor};
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct SE3Transform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl SE3Transform {
    pub fn identity() -> Self {
        SE3Transform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rodrigues exponential map; below 1e-8 radians the sin/cos factors use
    /// their series expansions.
    pub fn from_axis_angle(aa: [f64; 3], translation: [f64; 3]) -> Self {
        let theta2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
        let theta = theta2.sqrt();
        let (sinc, a) = if theta < 1e-8 {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        let k = [
            [0.0, -aa[2], aa[1]],
            [aa[2], 0.0, -aa[0]],
            [-aa[1], aa[0], 0.0],
        ];
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let k2 = (0..3).map(|l| k[i][l] * k[l][j]).sum::<f64>();
                rotation[i][j] = (i == j) as usize as f64 + sinc * k[i][j] + a * k2;
            }
        }
        SE3Transform { rotation, translation }
    }

    pub fn from_pose(p: &PoseVector) -> Self {
        Self::from_axis_angle(p.axis_angle, p.translation)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// self after other: (self * other)(p) = self(other(p)).
    pub fn compose(&self, other: &SE3Transform) -> SE3Transform {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = (0..3).map(|l| self.rotation[i][l] * other.rotation[l][j]).sum();
            }
        }
        SE3Transform { rotation, translation: self.apply(other.translation) }
    }

    pub fn inverse(&self) -> SE3Transform {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = self.rotation[j][i];
            }
        }
        let t = self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        SE3Transform { rotation, translation }
    }

    pub fn max_abs_diff(&self, other: &SE3Transform) -> f64 {
        let mut d = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.rotation[i][j] - other.rotation[i][j]).abs());
            }
            d = d.max((self.translation[i] - other.translation[i]).abs());
        }
        d
    }
}

/// Constant tensors (no grad) for warping with a known transform.
pub fn se3_to_tensors<E: Elem>(t: &SE3Transform, batch: usize) -> (Tensor<E>, Tensor<E>) {
    let mut r = Vec::with_capacity(batch * 9);
    let mut tr = Vec::with_capacity(batch * 3);
    for _ in 0..batch {
        for row in &t.rotation {
            r.extend(row.iter().map(|v| E::from_f64(*v)));
        }
        tr.extend(t.translation.iter().map(|v| E::from_f64(*v)));
    }
    (
        Tensor::from_vec(&[batch, 3, 3], r).expect("rotation tensor"),
        Tensor::from_vec(&[batch, 3, 1], tr).expect("translation tensor"),
    )
}

/// Differentiable Rodrigues map: `[B,3]` axis-angle -> `[B,3,3]` rotations.
/// A 1e-12 floor under the square root keeps the zero pose exact (the sinc
/// and (1-cos)/theta^2 factors still evaluate to 1 and 0) while every
/// division in the backward pass sees an f32-normal denominator.
pub fn rotation_from_axis_angle<E: Elem>(aa: &Tensor<E>) -> Result<Tensor<E>> {
    let b = aa.shape()[0];
    let theta2 = aa.mul(aa)?.reduce_mean(1)?.scale(E::from_f64(3.0)); // [B,1] sum of squares
    let theta2_safe = theta2.affine(E::ONE, E::from_f64(1e-12));
    let theta = theta2_safe.sqrt();
    let sinc = theta.sin().div(&theta)?.reshape(&[b, 1, 1])?;
    let one_minus_cos = theta.cos().affine(-E::ONE, E::ONE);
    let a = one_minus_cos.div(&theta2_safe)?.reshape(&[b, 1, 1])?;

    let ax = aa.slice(1, 0, 1)?;
    let ay = aa.slice(1, 1, 1)?;
    let az = aa.slice(1, 2, 1)?;
    let zero = Tensor::zeros(&[b, 1]);
    let k = Tensor::concat(
        &[
            &zero, &az.neg(), &ay,
            &az, &zero, &ax.neg(),
            &ay.neg(), &ax, &zero,
        ],
        1,
    )?
    .reshape(&[b, 3, 3])?;
    let k2 = k.matmul(&k)?;
    let eye = Tensor::from_vec(&[3, 3], {
        let mut v = vec![E::ZERO; 9];
        v[0] = E::ONE;
        v[4] = E::ONE;
        v[8] = E::ONE;
        v
    })?;
    k.mul(&sinc)?.add(&k2.mul(&a)?)?.add(&eye)
}
