//! 2D convolution (cross-correlation, zero padding) with grouping; depth-wise
//! convolution is the groups == Cin == Cout case.

use super::ops::gemm;

use super::par::par_rows;
use super::{Elem, OpKind, Tensor};
use crate::{Error, Result};

pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    cin_g: usize,
    cout_g: usize,
}

fn conv_forward<E: Elem>(x: &[E], wt: &[E], bias: Option<&[E]>, g: &ConvGeom) -> Vec<E> {
    let plane = g.oh * g.ow;
    let mut out = vec![E::ZERO; g.b * g.cout * plane];
    let work = g.cin_g * g.kh * g.kw * g.ow;
    par_rows(&mut out, plane, work, |plane0, chunk| {
        for (pi, oplane) in chunk.chunks_mut(plane).enumerate() {
            let p = plane0 + pi;
            let (bi, co) = (p / g.cout, p % g.cout);
            if let Some(bias) = bias {
                oplane.fill(bias[co]);
            }
            let grp = co / g.cout_g;
            for ci_l in 0..g.cin_g {
                let ci = grp * g.cin_g + ci_l;
                let xplane = &x[(bi * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for khi in 0..g.kh {
                    for kwi in 0..g.kw {
                        let wv = wt[((co * g.cin_g + ci_l) * g.kh + khi) * g.kw + kwi];
                        for oh in 0..g.oh {
                            let ih = (oh * g.stride + khi) as isize - g.pad as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            let xrow = &xplane[ih as usize * g.w..][..g.w];
                            let orow = &mut oplane[oh * g.ow..][..g.ow];
                            if g.stride == 1 {
                                // iw = ow + kwi - pad; clamp ow to the valid window
                                let off = kwi as isize - g.pad as isize;
                                let ow0 = (-off).max(0) as usize;
                                let ow1 = ((g.w as isize - off).min(g.ow as isize)).max(0) as usize;
                                let src = &xrow[(ow0 as isize + off) as usize..];
                                for (o, xv) in orow[ow0..ow1].iter_mut().zip(src) {
                                    *o += wv * *xv;
                                }
                            } else {
                                for (ow, o) in orow.iter_mut().enumerate() {
                                    let iw = (ow * g.stride + kwi) as isize - g.pad as isize;
                                    if iw >= 0 && iw < g.w as isize {
                                        *o += wv * xrow[iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_backward_input<E: Elem>(dy: &[E], wt: &[E], g: &ConvGeom) -> Vec<E> {
    let xplane = g.h * g.w;
    let mut dx = vec![E::ZERO; g.b * g.cin * xplane];
    let work = g.cout_g * g.kh * g.kw * g.ow;
    par_rows(&mut dx, xplane, work, |plane0, chunk| {
        for (pi, dxp) in chunk.chunks_mut(xplane).enumerate() {
            let p = plane0 + pi;
            let (bi, ci) = (p / g.cin, p % g.cin);
            let grp = ci / g.cin_g;
            let ci_l = ci % g.cin_g;
            for co_l in 0..g.cout_g {
                let co = grp * g.cout_g + co_l;
                let dyplane = &dy[(bi * g.cout + co) * g.oh * g.ow..][..g.oh * g.ow];
                for khi in 0..g.kh {
                    for kwi in 0..g.kw {
                        let wv = wt[((co * g.cin_g + ci_l) * g.kh + khi) * g.kw + kwi];
                        for oh in 0..g.oh {
                            let ih = (oh * g.stride + khi) as isize - g.pad as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            let dyrow = &dyplane[oh * g.ow..][..g.ow];
                            let dxrow = &mut dxp[ih as usize * g.w..][..g.w];
                            if g.stride == 1 {
                                let off = kwi as isize - g.pad as isize;
                                let ow0 = (-off).max(0) as usize;
                                let ow1 = ((g.w as isize - off).min(g.ow as isize)).max(0) as usize;
                                let dst = &mut dxrow[(ow0 as isize + off) as usize..];
                                for (d, u) in dst.iter_mut().zip(&dyrow[ow0..ow1]) {
                                    *d += wv * *u;
                                }
                            } else {
                                for (ow, u) in dyrow.iter().enumerate() {
                                    let iw = (ow * g.stride + kwi) as isize - g.pad as isize;
                                    if iw >= 0 && iw < g.w as isize {
                                        dxrow[iw as usize] += wv * *u;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// 1x1/stride-1/no-pad/no-group backward: dx[b] = W^T (Cin x Cout) @ dy[b].
fn pointwise_backward_input<E: Elem>(dy: &[E], wt: &[E], g: &ConvGeom) -> Vec<E> {
    let hw = g.h * g.w;
    let mut wtrans = vec![E::ZERO; g.cin * g.cout];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            wtrans[ci * g.cout + co] = wt[co * g.cin + ci];
        }
    }
    let mut dx = vec![E::ZERO; g.b * g.cin * hw];
    for bi in 0..g.b {
        gemm(
            &wtrans,
            &dy[bi * g.cout * hw..(bi + 1) * g.cout * hw],
            g.cin,
            g.cout,
            hw,
            &mut dx[bi * g.cin * hw..(bi + 1) * g.cin * hw],
        );
    }
    dx
}

/// dw[co, ci] = sum_b sum_hw dy[b, co, hw] * x[b, ci, hw].
fn pointwise_backward_weight<E: Elem>(dy: &[E], x: &[E], g: &ConvGeom) -> Vec<E> {
    let hw = g.h * g.w;
    let mut dw = vec![E::ZERO; g.cout * g.cin];
    let mut xtrans = vec![E::ZERO; hw * g.cin];
    for bi in 0..g.b {
        let xb = &x[bi * g.cin * hw..(bi + 1) * g.cin * hw];
        for ci in 0..g.cin {
            for (p, v) in xb[ci * hw..(ci + 1) * hw].iter().enumerate() {
                xtrans[p * g.cin + ci] = *v;
            }
        }
        gemm(&dy[bi * g.cout * hw..(bi + 1) * g.cout * hw], &xtrans, g.cout, hw, g.cin, &mut dw);
    }
    dw
}

fn conv_backward_weight<E: Elem>(dy: &[E], x: &[E], g: &ConvGeom) -> Vec<E> {
    let wrow = g.cin_g * g.kh * g.kw;
    let mut dw = vec![E::ZERO; g.cout * wrow];
    let work = g.b * g.oh * g.ow;
    par_rows(&mut dw, wrow, work, |co0, chunk| {
        for (r, dwrow) in chunk.chunks_mut(wrow).enumerate() {
            let co = co0 + r;
            let grp = co / g.cout_g;
            for bi in 0..g.b {
                let dyplane = &dy[(bi * g.cout + co) * g.oh * g.ow..][..g.oh * g.ow];
                for ci_l in 0..g.cin_g {
                    let ci = grp * g.cin_g + ci_l;
                    let xplane = &x[(bi * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    for khi in 0..g.kh {
                        for kwi in 0..g.kw {
                            let mut acc = E::ZERO;
                            for oh in 0..g.oh {
                                let ih = (oh * g.stride + khi) as isize - g.pad as isize;
                                if ih < 0 || ih >= g.h as isize {
                                    continue;
                                }
                                let xrow = &xplane[ih as usize * g.w..][..g.w];
                                let dyrow = &dyplane[oh * g.ow..][..g.ow];
                                if g.stride == 1 {
                                    let off = kwi as isize - g.pad as isize;
                                    let ow0 = (-off).max(0) as usize;
                                    let ow1 =
                                        ((g.w as isize - off).min(g.ow as isize)).max(0) as usize;
                                    let src = &xrow[(ow0 as isize + off) as usize..];
                                    for (u, xv) in dyrow[ow0..ow1].iter().zip(src) {
                                        acc += *u * *xv;
                                    }
                                } else {
                                    for (ow, u) in dyrow.iter().enumerate() {
                                        let iw =
                                            (ow * g.stride + kwi) as isize - g.pad as isize;
                                        if iw >= 0 && iw < g.w as isize {
                                            acc += *u * xrow[iw as usize];
                                        }
                                    }
                                }
                            }
                            dwrow[(ci_l * g.kh + khi) * g.kw + kwi] += acc;
                        }
                    }
                }
            }
        }
    });
    dw
}

impl<E: Elem> Tensor<E> {
    /// 2D cross-correlation. `x: [B,Cin,H,W]`, `weight: [Cout,Cin/g,kh,kw]`,
    /// optional `bias: [Cout]`, symmetric zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Tensor<E>> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::invalid("conv2d", format!("need 4-d x and w, got {xs:?} and {ws:?}")));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("groups {groups} must divide Cin {cin} and Cout {cout}"),
            ));
        }
        if cin_g != cin / groups {
            return Err(Error::invalid(
                "conv2d",
                format!("weight {ws:?} expects Cin/groups = {cin_g}, input has {} ({cin}/{groups})", cin / groups),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return Err(Error::invalid(
                    "conv2d",
                    format!("bias shape {:?} != [{cout}]", bias.shape()),
                ));
            }
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let oh = conv_out_dim(h, kh, stride, pad);
        let ow = conv_out_dim(w, kw, stride, pad);
        let geom = ConvGeom {
            b,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
            cin_g,
            cout_g: cout / groups,
        };

        let x = self.data_arc();
        let wt = weight.data_arc();
        let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1;
        let data = if pointwise {
            // 1x1 conv is a plain matmul per batch element
            let hw = h * w;
            let mut out = vec![E::ZERO; b * cout * hw];
            for bi in 0..b {
                let ob = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
                if let Some(bias) = bias {
                    for (co, plane) in ob.chunks_mut(hw).enumerate() {
                        plane.fill(bias.data()[co]);
                    }
                }
                gemm(&wt, &x[bi * cin * hw..(bi + 1) * cin * hw], cout, cin, hw, ob);
            }
            out
        } else {
            conv_forward(&x, &wt, bias.map(|t| t.data()), &geom)
        };

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        let (px, pw) = (self.clone(), weight.clone());
        let pb = bias.cloned();
        let backward: super::BackFn<E> = Box::new(move |up: &[E]| {
            if px.tracked() {
                let dx = if pointwise {
                    pointwise_backward_input(up, &wt, &geom)
                } else {
                    conv_backward_input(up, &wt, &geom)
                };
                px.accumulate_grad(&dx);
            }
            if pw.tracked() {
                let dw = if pointwise {
                    pointwise_backward_weight(up, &x, &geom)
                } else {
                    conv_backward_weight(up, &x, &geom)
                };
                pw.accumulate_grad(&dw);
            }
            if let Some(pb) = &pb {
                if pb.tracked() {
                    let plane = geom.oh * geom.ow;
                    let mut db = vec![E::ZERO; geom.cout];
                    for bi in 0..geom.b {
                        for (co, d) in db.iter_mut().enumerate() {
                            let dyp = &up[(bi * geom.cout + co) * plane..][..plane];
                            for u in dyp {
                                *d += *u;
                            }
                        }
                    }
                    pb.accumulate_grad(&db);
                }
            }
        });

        Ok(Tensor::new_node(
            vec![b, cout, oh, ow],
            data,
            OpKind::Conv2d { kh, kw, stride, pad, groups },
            parents,
            Some(backward),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{backward, Rng, Tensor};

    /// Independent 6-nested-loop reference, optionally counting every
    /// multiply-accumulate tap (zero-padded taps included).
    pub(crate) fn naive_conv2d(
        x: &[f64],
        xs: &[usize],
        w: &[f64],
        ws: &[usize],
        bias: Option<&[f64]>,
        stride: usize,
        pad: usize,
        groups: usize,
        macs: Option<&mut u64>,
    ) -> (Vec<f64>, Vec<usize>) {
        let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let cout_g = cout / groups;
        let mut out = vec![0.0; b * cout * oh * ow];
        let mut count = 0u64;
        for bi in 0..b {
            for co in 0..cout {
                let grp = co / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map(|bv| bv[co]).unwrap_or(0.0);
                        for ci_l in 0..cin_g {
                            let ci = grp * cin_g + ci_l;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    let xv = if iy >= 0
                                        && iy < h as isize
                                        && ix >= 0
                                        && ix < wd as isize
                                    {
                                        x[((bi * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    } else {
                                        0.0
                                    };
                                    acc += xv * w[((co * cin_g + ci_l) * kh + ky) * kw + kx];
                                    count += 1;
                                }
                            }
                        }
                        out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        if let Some(m) = macs {
            *m = count;
        }
        (out, vec![b, cout, oh, ow])
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, None, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = Rng::new(11);
        let xv: Vec<f32> = (0..2 * 3 * 5 * 5).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        let x = Tensor::from_vec(&[2, 3, 5, 5], xv.clone()).unwrap();
        // depth-wise identity: center tap 1
        let mut wv = vec![0.0f32; 3 * 1 * 3 * 3];
        for c in 0..3 {
            wv[c * 9 + 4] = 1.0;
        }
        let w = Tensor::from_vec(&[3, 1, 3, 3], wv).unwrap();
        let y = x.conv2d(&w, None, 1, 1, 3).unwrap();
        assert_eq!(y.to_vec(), xv);
    }

    #[test]
    fn matches_naive_loop_reference() {
        let mut rng = Rng::new(21);
        let xv: Vec<f64> = (0..1 * 2 * 5 * 5).map(|_| rng.range(-1.0, 1.0)).collect();
        let wv: Vec<f64> = (0..4 * 2 * 3 * 3).map(|_| rng.range(-1.0, 1.0)).collect();
        let bv: Vec<f64> = (0..4).map(|_| rng.range(-1.0, 1.0)).collect();
        let x = Tensor::from_vec(&[1, 2, 5, 5], xv.clone()).unwrap();
        let w = Tensor::from_vec(&[4, 2, 3, 3], wv.clone()).unwrap();
        let b = Tensor::from_vec(&[4], bv.clone()).unwrap();
        let y = x.conv2d(&w, Some(&b), 2, 1, 1).unwrap();
        let (want, wshape) =
            naive_conv2d(&xv, &[1, 2, 5, 5], &wv, &[4, 2, 3, 3], Some(&bv), 2, 1, 1, None);
        assert_eq!(y.shape(), wshape.as_slice());
        for (a, b) in y.to_vec().iter().zip(&want) {
            let rel = (a - b).abs() / b.abs().max(1.0);
            assert!(rel < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn depthwise_equals_per_channel_convs() {
        let mut rng = Rng::new(31);
        let c = 3;
        let xv: Vec<f32> = (0..2 * c * 6 * 6).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        let wv: Vec<f32> = (0..c * 1 * 3 * 3).map(|_| rng.range(-1.0, 1.0) as f32).collect();
        let x = Tensor::from_vec(&[2, c, 6, 6], xv.clone()).unwrap();
        let w = Tensor::from_vec(&[c, 1, 3, 3], wv.clone()).unwrap();
        let grouped = x.conv2d(&w, None, 1, 1, c).unwrap();

        // per-channel independent convolutions must agree exactly
        for ch in 0..c {
            let xc = x.slice(1, ch, 1).unwrap();
            let wc = w.slice(0, ch, 1).unwrap();
            let yc = xc.conv2d(&wc, None, 1, 1, 1).unwrap();
            let gc = grouped.slice(1, ch, 1).unwrap();
            assert_eq!(yc.to_vec(), gc.to_vec());
        }
    }

    #[test]
    fn shape_error_names_dims() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let err = x.conv2d(&w, None, 1, 1, 1).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("Cin/groups") || msg.contains('3'), "{msg}");
    }

    #[test]
    fn gradients_flow_to_all_inputs() {
        let mut rng = Rng::new(41);
        let xv: Vec<f64> = (0..1 * 2 * 4 * 4).map(|_| rng.range(-1.0, 1.0)).collect();
        let wv: Vec<f64> = (0..3 * 2 * 3 * 3).map(|_| rng.range(-0.5, 0.5)).collect();
        let x = Tensor::leaf(&[1, 2, 4, 4], xv, true).unwrap();
        let w = Tensor::leaf(&[3, 2, 3, 3], wv, true).unwrap();
        let b = Tensor::leaf(&[3], vec![0.1, -0.2, 0.3], true).unwrap();
        let y = x.conv2d(&w, Some(&b), 1, 1, 1).unwrap();
        backward(&y.sum_all()).unwrap();
        assert!(x.grad().unwrap().iter().any(|v| *v != 0.0));
        assert!(w.grad().unwrap().iter().any(|v| *v != 0.0));
        assert_eq!(b.grad().unwrap(), vec![16.0, 16.0, 16.0]);
    }
}
