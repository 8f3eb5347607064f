//! Synthetic scenes: a slanted, value-noise-textured plane rendered through
//! a pinhole camera from three nearby viewpoints. Ground-truth depth and
//! poses are closed-form, which makes warping and training verifiable end to
//! end at desk scale.

use crate::selfsup::{CameraIntrinsics, SE3Transform};
use crate::tensor::{Elem, Rng, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct SceneParams {
    pub h: usize,
    pub w: usize,
    pub depth_range: (f64, f64),
    pub texture_octaves: usize,
    /// Per-axis translation bound in scene units; rotations scale with it.
    pub motion_magnitude: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            h: 64,
            w: 192,
            depth_range: (2.0, 6.0),
            texture_octaves: 3,
            motion_magnitude: 0.07,
        }
    }
}

/// One (prev, target, next) triplet with ground truth.
pub struct SceneTriplet<E: Elem> {
    /// frames `[3,H,W]` in [0,1]
    pub prev: Tensor<E>,
    pub target: Tensor<E>,
    pub next: Tensor<E>,
    /// analytic target-frame depth `[1,H,W]`
    pub gt_depth: Tensor<E>,
    /// target-to-previous and target-to-next rigid motions
    pub pose_to_prev: SE3Transform,
    pub pose_to_next: SE3Transform,
    pub k: CameraIntrinsics,
    pub seed: u64,
}

impl<E: Elem> SceneTriplet<E> {
    /// `[3,H,W]` -> `[1,3,H,W]` for network input.
    pub fn batched(img: &Tensor<E>) -> Tensor<E> {
        let s = img.shape();
        img.reshape(&[1, s[0], s[1], s[2]]).expect("batched")
    }

    pub fn gt_depth_batched(&self) -> Tensor<E> {
        let s = self.gt_depth.shape();
        self.gt_depth.reshape(&[1, s[0], s[1], s[2]]).expect("batched depth")
    }
}

fn hash2(ix: i64, iy: i64, salt: u64) -> f64 {
    let mut h = salt ^ 0x9E3779B97F4A7C15;
    for v in [ix as u64, iy as u64] {
        h ^= v.wrapping_mul(0xff51afd7ed558ccd);
        h = h.rotate_left(31).wrapping_mul(0xc4ceb9fe1a85ec53);
    }
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (ix, iy) = (x.floor(), y.floor());
    let (fx, fy) = (smoothstep(x - ix), smoothstep(y - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = hash2(ix, iy, salt);
    let v10 = hash2(ix + 1, iy, salt);
    let v01 = hash2(ix, iy + 1, salt);
    let v11 = hash2(ix + 1, iy + 1, salt);
    let top = v00 + fx * (v10 - v00);
    let bot = v01 + fx * (v11 - v01);
    top + fy * (bot - top)
}

struct Plane {
    normal: [f64; 3],
    d: f64,
    /// orthonormal in-plane texture axes
    e1: [f64; 3],
    e2: [f64; 3],
}

struct Texture {
    salt: u64,
    octaves: usize,
    base_freq: f64,
}

impl Texture {
    fn sample(&self, s: f64, t: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut amp = 1.0;
            let mut freq = self.base_freq;
            let mut total = 0.0;
            let mut norm = 0.0;
            for oct in 0..self.octaves {
                let salt = self.salt ^ ((c as u64) << 32) ^ (oct as u64);
                total += amp * value_noise(s * freq, t * freq, salt);
                norm += amp;
                // fast amplitude falloff keeps the signal smooth enough for
                // bilinear resampling to stay within the warp-error budget
                amp *= 0.4;
                freq *= 2.0;
            }
            // keep a margin inside [0,1] so interpolation never clips
            *o = 0.1 + 0.8 * (total / norm);
        }
        out
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Render the plane seen from the camera displaced by `motion`
/// (X_cam = R X_target + t). With the identity motion this is the target view.
fn render<E: Elem>(
    params: &SceneParams,
    k: &CameraIntrinsics,
    plane: &Plane,
    tex: &Texture,
    motion: &SE3Transform,
) -> Result<Tensor<E>> {
    let (h, w) = (params.h, params.w);
    let n_cam = {
        let r = &motion.rotation;
        [
            r[0][0] * plane.normal[0] + r[0][1] * plane.normal[1] + r[0][2] * plane.normal[2],
            r[1][0] * plane.normal[0] + r[1][1] * plane.normal[1] + r[1][2] * plane.normal[2],
            r[2][0] * plane.normal[0] + r[2][1] * plane.normal[1] + r[2][2] * plane.normal[2],
        ]
    };
    let d_cam = plane.d + dot(n_cam, motion.translation);
    let inv = motion.inverse();
    let mut data = vec![E::ZERO; 3 * h * w];
    for v in 0..h {
        for u in 0..w {
            let dir = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let denom = dot(n_cam, dir);
            if denom <= 1e-6 {
                return Err(Error::invalid("synth_scene", "plane fell behind the camera"));
            }
            let z = d_cam / denom;
            let p_cam = [z * dir[0], z * dir[1], z * dir[2]];
            let p_world = inv.apply(p_cam);
            let rgb = tex.sample(dot(plane.e1, p_world), dot(plane.e2, p_world));
            for (c, val) in rgb.iter().enumerate() {
                data[(c * h + v) * w + u] = E::from_f64(*val);
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Deterministically generate one scene triplet for `seed`.
pub fn synth_scene<E: Elem>(seed: u64, params: &SceneParams) -> Result<SceneTriplet<E>> {
    let (h, w) = (params.h, params.w);
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::invalid("synth_scene", format!("{h}x{w} must be divisible by 16")));
    }
    let (lo, hi) = params.depth_range;
    if !(0.0 < lo && lo < hi) {
        return Err(Error::invalid("synth_scene", format!("bad depth range {lo}..{hi}")));
    }
    let mut rng = Rng::new(seed).derive("scene");
    // wide field of view: radial (dolly) flow then differs strongly across
    // the frame, which keeps translation distinguishable from rotation
    let k = CameraIntrinsics::new(
        0.45 * w as f64,
        0.45 * w as f64,
        w as f64 / 2.0 - 0.5,
        h as f64 / 2.0 - 0.5,
    )?;

    // sample a slanted plane whose depth stays inside the range over the
    // whole frame; extremes occur at the corners since 1/z is affine in (u,v).
    // The slant azimuth concentrates around a ground-plane orientation
    // (lower pixels closer) with random magnitude and lateral jitter, the
    // desk-scale stand-in for the geometry bias of driving sequences.
    let mut plane = None;
    for attempt in 0..64 {
        let shrink = 0.85f64.powi(attempt);
        let sx = rng.range(-0.2, 0.2) * shrink;
        let sy = rng.range(0.15, 0.5) * shrink;
        let z0 = rng.range(lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo));
        let normal = normalize([sx, sy, 1.0]);
        let d = z0 * normal[2];
        let corners_ok = [(0usize, 0usize), (0, w - 1), (h - 1, 0), (h - 1, w - 1)]
            .iter()
            .all(|(v, u)| {
                let dir = [(*u as f64 - k.cx) / k.fx, (*v as f64 - k.cy) / k.fy, 1.0];
                let denom = dot(normal, dir);
                if denom <= 0.2 {
                    return false; // near-parallel to the viewing ray
                }
                let z = d / denom;
                lo <= z && z <= hi
            });
        if corners_ok {
            let e1 = normalize(cross(normal, [0.0, 1.0, 0.0]));
            let e2 = cross(normal, e1);
            plane = Some(Plane { normal, d, e1, e2 });
            break;
        }
    }
    let plane = plane
        .ok_or_else(|| Error::invalid("synth_scene", "no valid plane after bounded retries"))?;

    // texture features of roughly 16 screen pixels at the center depth
    let z_center = plane.d / plane.normal[2];
    let tex = Texture {
        salt: rng.next_u64(),
        octaves: params.texture_octaves.max(1),
        base_freq: k.fx / (16.0 * z_center),
    };

    // dolly-dominant motion: forward/backward translation produces radial
    // flow that rotation cannot imitate, so pose and depth stay jointly
    // identifiable from two frames. Lateral axes and rotations get tight
    // bounds (rotations cost fx pixels per radian, vertical translation hits
    // the short image side).
    let m = params.motion_magnitude;
    let tx_bound = m / 3.0;
    let ty_bound = m * (h as f64 / w as f64) / 3.0;
    let rot_bound = m / 40.0;
    let mut motion = |_: ()| {
        SE3Transform::from_axis_angle(
            [
                rng.range(-rot_bound, rot_bound),
                rng.range(-rot_bound, rot_bound),
                rng.range(-rot_bound, rot_bound),
            ],
            [
                rng.range(-tx_bound, tx_bound),
                rng.range(-ty_bound, ty_bound),
                rng.range(-m, m),
            ],
        )
    };
    let pose_to_prev = motion(());
    let pose_to_next = motion(());

    let target = render(params, &k, &plane, &tex, &SE3Transform::identity())?;
    let prev = render(params, &k, &plane, &tex, &pose_to_prev)?;
    let next = render(params, &k, &plane, &tex, &pose_to_next)?;

    let mut depth = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let dir = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            depth.push(E::from_f64(plane.d / dot(plane.normal, dir)));
        }
    }

    Ok(SceneTriplet {
        prev,
        target,
        next,
        gt_depth: Tensor::from_vec(&[1, h, w], depth)?,
        pose_to_prev,
        pose_to_next,
        k,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SceneParams {
        SceneParams { h: 32, w: 48, ..SceneParams::default() }
    }

    #[test]
    fn deterministic_per_seed_distinct_across_seeds() {
        let a: SceneTriplet<f32> = synth_scene(7, &params()).unwrap();
        let b: SceneTriplet<f32> = synth_scene(7, &params()).unwrap();
        assert_eq!(a.target.to_vec(), b.target.to_vec());
        assert_eq!(a.pose_to_prev.translation, b.pose_to_prev.translation);
        let c: SceneTriplet<f32> = synth_scene(8, &params()).unwrap();
        assert_ne!(a.target.to_vec(), c.target.to_vec());
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let p = SceneParams { motion_magnitude: 0.0, ..params() };
        let s: SceneTriplet<f32> = synth_scene(3, &p).unwrap();
        assert_eq!(s.prev.to_vec(), s.target.to_vec());
        assert_eq!(s.next.to_vec(), s.target.to_vec());
    }

    #[test]
    fn depth_stays_in_range() {
        for seed in 0..20 {
            let p = params();
            let s: SceneTriplet<f64> = synth_scene(seed, &p).unwrap();
            let (lo, hi) = p.depth_range;
            for d in s.gt_depth.to_vec() {
                assert!(lo <= d && d <= hi, "depth {d} outside {lo}..{hi} (seed {seed})");
            }
        }
    }

    #[test]
    fn frames_are_in_unit_range() {
        let s: SceneTriplet<f32> = synth_scene(5, &params()).unwrap();
        for img in [&s.prev, &s.target, &s.next] {
            assert!(img.to_vec().iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        let p = SceneParams { h: 30, w: 48, ..SceneParams::default() };
        assert!(synth_scene::<f32>(1, &p).is_err());
    }
}
