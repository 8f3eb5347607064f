//! Differentiable bilinear resizing (half-pixel-center convention) and
//! bilinear grid sampling with zero padding outside [-1, 1].

use super::{Elem, OpKind, Tensor};
use crate::{Error, Result};

/// Per-axis sampling table: (lo index, hi index, hi weight).
fn resize_axis(out_dim: usize, in_dim: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..out_dim)
        .map(|d| {
            let src = if align_corners {
                if out_dim == 1 {
                    0.0
                } else {
                    d as f64 * (in_dim - 1) as f64 / (out_dim - 1) as f64
                }
            } else {
                ((d as f64 + 0.5) * in_dim as f64 / out_dim as f64 - 0.5).max(0.0)
            };
            let lo = (src.floor() as usize).min(in_dim - 1);
            let hi = (lo + 1).min(in_dim - 1);
            let w = if hi > lo { src - lo as f64 } else { 0.0 };
            (lo, hi, w)
        })
        .collect()
}

impl<E: Elem> Tensor<E> {
    /// Resize `[B,C,H,W]` to `[B,C,out_h,out_w]` by bilinear interpolation.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize, align_corners: bool) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::invalid("bilinear_resize", format!("need [B,C,H,W], got {s:?}")));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize", "output dims must be >= 1"));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if (out_h, out_w) == (h, w) {
            // same-size resize is the identity
            let px = self.clone();
            let backward: super::BackFn<E> = Box::new(move |up: &[E]| px.accumulate_grad(up));
            return Ok(Tensor::new_node(
                s.to_vec(),
                self.to_vec(),
                OpKind::BilinearResize,
                vec![self.clone()],
                Some(backward),
            ));
        }
        let ytab = resize_axis(out_h, h, align_corners);
        let xtab = resize_axis(out_w, w, align_corners);
        let x = self.data_arc();
        let mut out = Vec::with_capacity(b * c * out_h * out_w);
        for plane in 0..b * c {
            let xp = &x[plane * h * w..(plane + 1) * h * w];
            for (y0, y1, wy) in &ytab {
                let wy = E::from_f64(*wy);
                let r0 = &xp[y0 * w..y0 * w + w];
                let r1 = &xp[y1 * w..y1 * w + w];
                for (x0, x1, wx) in &xtab {
                    let wx = E::from_f64(*wx);
                    let top = r0[*x0] + wx * (r0[*x1] - r0[*x0]);
                    let bot = r1[*x0] + wx * (r1[*x1] - r1[*x0]);
                    out.push(top + wy * (bot - top));
                }
            }
        }
        let px = self.clone();
        let (ytab_b, xtab_b) = (ytab.clone(), xtab.clone());
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut dx = vec![E::ZERO; b * c * h * w];
            let mut i = 0usize;
            for plane in 0..b * c {
                let dxp = &mut dx[plane * h * w..(plane + 1) * h * w];
                for (y0, y1, wy) in &ytab_b {
                    let wy = E::from_f64(*wy);
                    for (x0, x1, wx) in &xtab_b {
                        let wx = E::from_f64(*wx);
                        let u = up[i];
                        i += 1;
                        dxp[y0 * w + x0] += u * (E::ONE - wy) * (E::ONE - wx);
                        dxp[y0 * w + x1] += u * (E::ONE - wy) * wx;
                        dxp[y1 * w + x0] += u * wy * (E::ONE - wx);
                        dxp[y1 * w + x1] += u * wy * wx;
                    }
                }
            }
            px.accumulate_grad(&dx);
        });
        Ok(Tensor::new_node(
            vec![b, c, out_h, out_w],
            out,
            OpKind::BilinearResize,
            vec![self.clone()],
            Some(backward),
        ))
    }

    /// Sample `[B,C,H,W]` at `grid: [B,Ho,Wo,2]` of normalized (x, y) in
    /// [-1, 1] (half-pixel centers). Out-of-range taps read zero. Gradients
    /// flow to the input and to the grid.
    pub fn grid_sample(&self, grid: &Tensor<E>) -> Result<Tensor<E>> {
        let s = self.shape();
        let gs = grid.shape();
        if s.len() != 4 || gs.len() != 4 || gs[3] != 2 {
            return Err(Error::invalid(
                "grid_sample",
                format!("need x [B,C,H,W] and grid [B,Ho,Wo,2], got {s:?} and {gs:?}"),
            ));
        }
        if s[0] != gs[0] {
            return Err(Error::invalid(
                "grid_sample",
                format!("batch mismatch: x {s:?} vs grid {gs:?}"),
            ));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (gs[1], gs[2]);
        let xd = self.data_arc();
        let gd = grid.data_arc();

        let half_w = 0.5 * w as f64;
        let half_h = 0.5 * h as f64;
        // (x0, y0, fx, fy) per grid point
        let unnorm = move |gx: E, gy: E| {
            let px = (gx.to_f64() + 1.0) * half_w - 0.5;
            let py = (gy.to_f64() + 1.0) * half_h - 0.5;
            let x0 = px.floor();
            let y0 = py.floor();
            (x0 as isize, y0 as isize, px - x0, py - y0)
        };

        let mut out = vec![E::ZERO; b * c * ho * wo];
        for bi in 0..b {
            for gy_i in 0..ho {
                for gx_i in 0..wo {
                    let gbase = ((bi * ho + gy_i) * wo + gx_i) * 2;
                    let (x0, y0, fx, fy) = unnorm(gd[gbase], gd[gbase + 1]);
                    let corners = [
                        (x0, y0, (1.0 - fx) * (1.0 - fy)),
                        (x0 + 1, y0, fx * (1.0 - fy)),
                        (x0, y0 + 1, (1.0 - fx) * fy),
                        (x0 + 1, y0 + 1, fx * fy),
                    ];
                    for ci in 0..c {
                        let xp = &xd[(bi * c + ci) * h * w..][..h * w];
                        let mut acc = 0.0f64;
                        for (cx, cy, wgt) in corners {
                            if cx >= 0 && cx < w as isize && cy >= 0 && cy < h as isize {
                                acc += wgt * xp[cy as usize * w + cx as usize].to_f64();
                            }
                        }
                        out[((bi * c + ci) * ho + gy_i) * wo + gx_i] = E::from_f64(acc);
                    }
                }
            }
        }

        let (px, pg) = (self.clone(), grid.clone());
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            let mut dx = vec![E::ZERO; b * c * h * w];
            let mut dgrid = vec![E::ZERO; b * ho * wo * 2];
            for bi in 0..b {
                for gy_i in 0..ho {
                    for gx_i in 0..wo {
                        let gbase = ((bi * ho + gy_i) * wo + gx_i) * 2;
                        let (x0, y0, fx, fy) = unnorm(gd[gbase], gd[gbase + 1]);
                        let mut dpx = 0.0f64;
                        let mut dpy = 0.0f64;
                        for ci in 0..c {
                            let u = up[((bi * c + ci) * ho + gy_i) * wo + gx_i].to_f64();
                            if u == 0.0 {
                                continue;
                            }
                            let pbase = (bi * c + ci) * h * w;
                            let mut v = [0.0f64; 4];
                            let corners = [
                                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                                (x0 + 1, y0, fx * (1.0 - fy)),
                                (x0, y0 + 1, (1.0 - fx) * fy),
                                (x0 + 1, y0 + 1, fx * fy),
                            ];
                            for (k, (cx, cy, wgt)) in corners.iter().enumerate() {
                                if *cx >= 0 && *cx < w as isize && *cy >= 0 && *cy < h as isize {
                                    let idx = pbase + *cy as usize * w + *cx as usize;
                                    dx[idx] += E::from_f64(u * wgt);
                                    v[k] = xd[idx].to_f64();
                                }
                            }
                            dpx += u * ((v[1] - v[0]) * (1.0 - fy) + (v[3] - v[2]) * fy);
                            dpy += u * ((v[2] - v[0]) * (1.0 - fx) + (v[3] - v[1]) * fx);
                        }
                        dgrid[gbase] = E::from_f64(dpx * half_w);
                        dgrid[gbase + 1] = E::from_f64(dpy * half_h);
                    }
                }
            }
            px.accumulate_grad(&dx);
            pg.accumulate_grad(&dgrid);
        });

        Ok(Tensor::new_node(
            vec![b, c, ho, wo],
            out,
            OpKind::GridSample,
            vec![self.clone(), grid.clone()],
            Some(backward),
        ))
    }
}

/// Identity sampling grid `[B,H,W,2]` for an H x W image.
pub fn identity_grid<E: Elem>(b: usize, h: usize, w: usize) -> Tensor<E> {
    let mut data = Vec::with_capacity(b * h * w * 2);
    for _ in 0..b {
        for y in 0..h {
            for x in 0..w {
                data.push(E::from_f64((2.0 * x as f64 + 1.0) / w as f64 - 1.0));
                data.push(E::from_f64((2.0 * y as f64 + 1.0) / h as f64 - 1.0));
            }
        }
    }
    Tensor::from_vec(&[b, h, w, 2], data).expect("identity_grid")
}

#[cfg(test)]
mod tests {
    use super::super::{Rng, Tensor};
    use super::identity_grid;

    #[test]
    fn resize_same_size_is_identity() {
        let mut rng = Rng::new(1);
        let xv: Vec<f32> = (0..2 * 3 * 5 * 7).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        let x = Tensor::from_vec(&[2, 3, 5, 7], xv.clone()).unwrap();
        let y = x.bilinear_resize(5, 7, false).unwrap();
        assert_eq!(y.to_vec(), xv);
    }

    #[test]
    fn resize_1x1_fills_constant() {
        let x = Tensor::<f32>::full(&[1, 2, 1, 1], 0.7);
        let y = x.bilinear_resize(4, 4, false).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        assert!(y.to_vec().iter().all(|v| (*v - 0.7).abs() < 1e-7));
    }

    #[test]
    fn resize_2x2_to_4x4_matches_hand_formula() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = x.bilinear_resize(4, 4, false).unwrap();
        // independent per-pixel evaluation of the half-pixel-center formula
        let src = [1.0, 2.0, 3.0, 4.0];
        let coord = |d: usize| ((d as f64 + 0.5) * 0.5 - 0.5).max(0.0);
        let mut want = vec![0.0f64; 16];
        for oy in 0..4 {
            for ox in 0..4 {
                let sy = coord(oy);
                let sx = coord(ox);
                let y0 = (sy.floor() as usize).min(1);
                let x0 = (sx.floor() as usize).min(1);
                let y1 = (y0 + 1).min(1);
                let x1 = (x0 + 1).min(1);
                let fy = if y1 > y0 { sy - y0 as f64 } else { 0.0 };
                let fx = if x1 > x0 { sx - x0 as f64 } else { 0.0 };
                let top = src[y0 * 2 + x0] * (1.0 - fx) + src[y0 * 2 + x1] * fx;
                let bot = src[y1 * 2 + x0] * (1.0 - fx) + src[y1 * 2 + x1] * fx;
                want[oy * 4 + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
        for (a, b) in y.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn grid_sample_identity_grid() {
        // power-of-two dims keep the normalization arithmetic exact in f64
        let mut rng = Rng::new(2);
        let xv: Vec<f64> = (0..1 * 2 * 4 * 4).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = Tensor::from_vec(&[1, 2, 4, 4], xv.clone()).unwrap();
        let grid = identity_grid::<f64>(1, 4, 4);
        let y = x.grid_sample(&grid).unwrap();
        for (a, b) in y.to_vec().iter().zip(&xv) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_sample_far_outside_is_zero() {
        let x = Tensor::<f32>::full(&[1, 3, 4, 4], 5.0);
        let grid = Tensor::from_vec(&[1, 2, 2, 2], vec![-3.0f32; 8]).unwrap();
        let y = x.grid_sample(&grid).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grid_sample_half_in_averages_with_zero() {
        // one pixel image, sampled exactly at its center vs at the left edge
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0f64, 4.0]).unwrap();
        let grid = Tensor::from_vec(&[1, 1, 1, 2], vec![-0.5, 0.0]).unwrap();
        // px = ((-0.5+1)*2)/... = (0.5*1.0) - 0.5 -> 0.0 exactly: lands on pixel 0 center
        let y = x.grid_sample(&grid).unwrap();
        assert!((y.item() - 2.0).abs() < 1e-12);
    }
}
