//! Differentiable view synthesis: backproject the target depth to 3D, move
//! the points by the predicted rigid motion, reproject into the source view
//! and bilinearly sample the source image there.

use super::CameraIntrinsics;
use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};

/// Camera-ray directions ((u-cx)/fx, (v-cy)/fy, 1) as a constant `[1,3,H,W]`.
fn ray_dirs<E: Elem>(h: usize, w: usize, k: &CameraIntrinsics) -> Tensor<E> {
    let mut data = Vec::with_capacity(3 * h * w);
    for v in 0..h {
        for u in 0..w {
            let _ = (u, v);
            data.push(E::from_f64((u as f64 - k.cx) / k.fx));
        }
    }
    for v in 0..h {
        for _u in 0..w {
            data.push(E::from_f64((v as f64 - k.cy) / k.fy));
        }
    }
    data.extend(std::iter::repeat_n(E::ONE, h * w));
    Tensor::from_vec(&[1, 3, h, w], data).expect("ray dirs")
}

/// depth `[B,1,H,W]` -> camera-frame points `[B,3,H,W]`.
pub fn backproject<E: Elem>(depth: &Tensor<E>, k: &CameraIntrinsics) -> Result<Tensor<E>> {
    let s = depth.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::invalid("backproject", format!("depth must be [B,1,H,W], got {s:?}")));
    }
    debug_assert!(depth.data().iter().all(|v| *v > E::ZERO), "backproject wants positive depth");
    depth.mul(&ray_dirs(s[2], s[3], k))
}

/// Rigid-transform points and project to a normalized sampling grid
/// `[B,H,W,2]` in [-1,1]. z is clamped at 1e-3 so behind-camera points land
/// far out of range instead of producing non-finite values.
pub fn project<E: Elem>(
    points: &Tensor<E>,
    k: &CameraIntrinsics,
    rotation: &Tensor<E>,
    translation: &Tensor<E>,
) -> Result<Tensor<E>> {
    let s = points.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::invalid("project", format!("points must be [B,3,H,W], got {s:?}")));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let n = h * w;
    let flat = points.reshape(&[b, 3, n])?;
    let cam = rotation.matmul(&flat)?.add(translation)?;
    let x = cam.slice(1, 0, 1)?;
    let y = cam.slice(1, 1, 1)?;
    let z = cam.slice(1, 2, 1)?.clamp_min(E::from_f64(1e-3));
    // u = fx*x/z + cx, then normalized: gx = (2u+1)/W - 1
    let u = x.div(&z)?.affine(E::from_f64(k.fx), E::from_f64(k.cx));
    let v = y.div(&z)?.affine(E::from_f64(k.fy), E::from_f64(k.cy));
    let gx = u.affine(E::from_f64(2.0 / w as f64), E::from_f64(1.0 / w as f64 - 1.0));
    let gy = v.affine(E::from_f64(2.0 / h as f64), E::from_f64(1.0 / h as f64 - 1.0));
    Tensor::concat(&[&gx, &gy], 1)?
        .reshape(&[b, 2, h, w])?
        .transpose(1, 2)?
        .transpose(2, 3)
}

/// Synthesize the target view from `src` using the target depth and the
/// target-to-source motion. Differentiable w.r.t. image, depth and pose.
pub fn warp<E: Elem>(
    src: &Tensor<E>,
    depth: &Tensor<E>,
    k: &CameraIntrinsics,
    rotation: &Tensor<E>,
    translation: &Tensor<E>,
) -> Result<Tensor<E>> {
    if src.shape()[0] != depth.shape()[0]
        || src.shape()[2..] != depth.shape()[2..]
        || src.shape().len() != 4
    {
        return Err(Error::invalid(
            "warp",
            format!("src {:?} and depth {:?} disagree", src.shape(), depth.shape()),
        ));
    }
    let grid = project(&backproject(depth, k)?, k, rotation, translation)?;
    src.grid_sample(&grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selfsup::se3::{se3_to_tensors, SE3Transform};
    use crate::tensor::{identity_grid, Rng, Tensor};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(20.0, 18.0, 7.5, 5.5).unwrap()
    }

    #[test]
    fn principal_point_backprojects_to_axis() {
        let k = CameraIntrinsics::new(100.0, 100.0, 3.0, 2.0).unwrap();
        let depth = Tensor::<f64>::full(&[1, 1, 8, 8], 2.5);
        let pts = backproject(&depth, &k).unwrap();
        // pixel (u=3, v=2) is the principal point
        let idx = |c: usize| (c * 8 + 2) * 8 + 3;
        let d = pts.to_vec();
        assert!(d[idx(0)].abs() < 1e-12);
        assert!(d[idx(1)].abs() < 1e-12);
        assert!((d[idx(2)] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn doubling_depth_doubles_points() {
        let mut rng = Rng::new(1);
        let dv: Vec<f64> = (0..12 * 16).map(|_| rng.range(1.0, 5.0)).collect();
        let d1 = Tensor::from_vec(&[1, 1, 12, 16], dv.clone()).unwrap();
        let d2 = Tensor::from_vec(&[1, 1, 12, 16], dv.iter().map(|v| 2.0 * v).collect()).unwrap();
        let p1 = backproject(&d1, &k()).unwrap();
        let p2 = backproject(&d2, &k()).unwrap();
        for (a, b) in p1.to_vec().iter().zip(p2.to_vec()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_transform_roundtrips_to_identity_grid() {
        let k = k();
        let mut rng = Rng::new(2);
        let dv: Vec<f64> = (0..12 * 16).map(|_| rng.range(1.0, 5.0)).collect();
        let depth = Tensor::from_vec(&[1, 1, 12, 16], dv).unwrap();
        let (r, t) = se3_to_tensors::<f64>(&SE3Transform::identity(), 1);
        let grid = project(&backproject(&depth, &k).unwrap(), &k, &r, &t).unwrap();
        assert_eq!(grid.shape(), &[1, 12, 16, 2]);
        let want = identity_grid::<f64>(1, 12, 16);
        for (a, b) in grid.to_vec().iter().zip(want.to_vec()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_translation_pushes_grid_outward() {
        let k = k();
        let depth = Tensor::<f64>::full(&[1, 1, 12, 16], 4.0);
        // moving the source camera forward means target points get closer:
        // z shrinks, so projected offsets from the principal point grow
        let (r, t) = se3_to_tensors::<f64>(
            &SE3Transform { rotation: SE3Transform::identity().rotation, translation: [0.0, 0.0, -0.5] },
            1,
        );
        let grid = project(&backproject(&depth, &k).unwrap(), &k, &r, &t).unwrap();
        let ident = identity_grid::<f64>(1, 12, 16);
        let (g, i) = (grid.to_vec(), ident.to_vec());
        // principal point in normalized coords
        let pp = [(2.0 * k.cx + 1.0) / 16.0 - 1.0, (2.0 * k.cy + 1.0) / 12.0 - 1.0];
        for p in 0..12 * 16 {
            for c in 0..2 {
                let before = i[p * 2 + c] - pp[c];
                let after = g[p * 2 + c] - pp[c];
                if before.abs() > 1e-9 {
                    assert!(after.signum() == before.signum(), "radial direction flips");
                    assert!(after.abs() > before.abs() - 1e-12, "must move outward");
                }
            }
        }
    }

    #[test]
    fn behind_camera_points_clamp_without_nan() {
        let k = k();
        let depth = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let (r, t) = se3_to_tensors::<f64>(
            &SE3Transform { rotation: SE3Transform::identity().rotation, translation: [0.0, 0.0, -2.0] },
            1,
        );
        let grid = project(&backproject(&depth, &k).unwrap(), &k, &r, &t).unwrap();
        assert!(grid.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_pose_warp_returns_source() {
        let k = k();
        let mut rng = Rng::new(3);
        let iv: Vec<f64> = (0..3 * 12 * 16).map(|_| rng.range(0.0, 1.0)).collect();
        let img = Tensor::from_vec(&[1, 3, 12, 16], iv.clone()).unwrap();
        let dv: Vec<f64> = (0..12 * 16).map(|_| rng.range(1.0, 6.0)).collect();
        let depth = Tensor::from_vec(&[1, 1, 12, 16], dv).unwrap();
        let (r, t) = se3_to_tensors::<f64>(&SE3Transform::identity(), 1);
        let out = warp(&img, &depth, &k, &r, &t).unwrap();
        for (a, b) in out.to_vec().iter().zip(&iv) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn warp_gradient_wrt_translation_matches_fd() {
        let k = k();
        let mut rng = Rng::new(4);
        // smooth image so finite differences see gentle interpolation slopes
        let iv: Vec<f64> = (0..12 * 16)
            .map(|i| {
                let (y, x) = (i / 16, i % 16);
                0.5 + 0.3 * ((x as f64) * 0.35).sin() * ((y as f64) * 0.4).cos()
            })
            .collect();
        let img = Tensor::from_vec(&[1, 1, 12, 16], iv).unwrap();
        let target: Vec<f64> = (0..12 * 16).map(|_| rng.range(0.0, 1.0)).collect();
        let tgt = Tensor::from_vec(&[1, 1, 12, 16], target).unwrap();
        let depth = Tensor::<f64>::full(&[1, 1, 12, 16], 4.0);
        let (r, _) = se3_to_tensors::<f64>(&SE3Transform::identity(), 1);
        let tr = Tensor::from_vec(&[1, 3, 1], vec![0.04, -0.03, 0.06]).unwrap();
        let f = move |p: &[Tensor<f64>]| {
            let w = warp(&img, &depth, &k, &r, &p[0])?;
            Ok(w.sub(&tgt)?.abs().mean_all())
        };
        let err = crate::tensor::grad_check(f, &[tr], 1e-6).unwrap();
        assert!(err < 1e-3, "{err}");
    }
}
