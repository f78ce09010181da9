//! Raw compute kernels behind the tape operations.
//!
//! Convolution is im2col plus a register-blocked GEMM. Everything here is
//! single-threaded with a fixed accumulation order, which is what makes
//! whole-run bit-determinism possible.

use super::{Real, Tensor, TensorError};

/// `out = a @ b` for row-major `a: m x k`, `b: k x n`.
///
/// SAXPY-form inner loop over four C rows at a time: each pass over a B row
/// updates four output rows, which keeps B traffic low and lets the
/// auto-vectorizer work on contiguous slices.
pub fn gemm<E: Real>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut row_vec: Vec<&mut [E]> = out.chunks_exact_mut(n).collect();
    let mut rows: &mut [&mut [E]] = &mut row_vec;
    let mut i = 0;
    while rows.len() >= 4 {
        let (quad, rest) = std::mem::take(&mut rows).split_at_mut(4);
        let [r0, r1, r2, r3] = quad else { unreachable!() };
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            if a0 == E::ZERO && a1 == E::ZERO && a2 == E::ZERO && a3 == E::ZERO {
                continue; // im2col padding rows are all zero
            }
            let brow = &b[p * n..(p + 1) * n];
            for ((((c0, c1), c2), c3), &bv) in r0
                .iter_mut()
                .zip(r1.iter_mut())
                .zip(r2.iter_mut())
                .zip(r3.iter_mut())
                .zip(brow)
            {
                *c0 += a0 * bv;
                *c1 += a1 * bv;
                *c2 += a2 * bv;
                *c3 += a3 * bv;
            }
        }
        rows = rest;
        i += 4;
    }
    for (row_off, row) in rows.iter_mut().enumerate() {
        let ai = i + row_off;
        for p in 0..k {
            let av = a[ai * k + p];
            if av == E::ZERO {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// `out = a^T @ g` for row-major `a: m x k`, `g: m x n`, `out: k x n`.
///
/// Accumulation over `m` runs in strictly ascending order for every output
/// element regardless of blocking, so results are reproducible.
pub fn gemm_at_b<E: Real>(a: &[E], g: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    let mut i = 0;
    while i + 4 <= m {
        let g0 = &g[i * n..(i + 1) * n];
        let g1 = &g[(i + 1) * n..(i + 2) * n];
        let g2 = &g[(i + 2) * n..(i + 3) * n];
        let g3 = &g[(i + 3) * n..(i + 4) * n];
        for (r, orow) in out.chunks_exact_mut(n).enumerate() {
            let a0 = a[i * k + r];
            let a1 = a[(i + 1) * k + r];
            let a2 = a[(i + 2) * k + r];
            let a3 = a[(i + 3) * k + r];
            if a0 == E::ZERO && a1 == E::ZERO && a2 == E::ZERO && a3 == E::ZERO {
                continue;
            }
            for ((((o, &v0), &v1), &v2), &v3) in
                orow.iter_mut().zip(g0).zip(g1).zip(g2).zip(g3)
            {
                *o += a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3;
            }
        }
        i += 4;
    }
    while i < m {
        let grow = &g[i * n..(i + 1) * n];
        for (r, orow) in out.chunks_exact_mut(n).enumerate() {
            let av = a[i * k + r];
            if av == E::ZERO {
                continue;
            }
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
        i += 1;
    }
}

/// Unrolls `x: [b, h, w, c]` into patch rows `[(b, oh, ow), (kh, kw, c)]`.
///
/// Out-of-range taps stay zero. Returns the matrix plus output extents.
pub fn im2col<E: Real>(
    x: &Tensor<E>,
    kernel: usize,
    pad: usize,
) -> (Vec<E>, usize, usize) {
    let (b, h, w, c) = dims4(x);
    let oh = h + 2 * pad + 1 - kernel;
    let ow = w + 2 * pad + 1 - kernel;
    let patch = kernel * kernel * c;
    let mut cols = vec![E::ZERO; b * oh * ow * patch];
    let xd = x.data();
    for bi in 0..b {
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((bi * oh + ohi) * ow + owi) * patch;
                for kh in 0..kernel {
                    let ih = (ohi + kh).wrapping_sub(pad);
                    if ih >= h {
                        continue;
                    }
                    // contiguous kw range that stays inside the image
                    let kw0 = pad.saturating_sub(owi);
                    let kw1 = kernel.min(w + pad - owi);
                    if kw0 >= kw1 {
                        continue;
                    }
                    let iw0 = owi + kw0 - pad;
                    let src = ((bi * h + ih) * w + iw0) * c;
                    let dst = row + (kh * kernel + kw0) * c;
                    let len = (kw1 - kw0) * c;
                    cols[dst..dst + len].copy_from_slice(&xd[src..src + len]);
                }
            }
        }
    }
    (cols, oh, ow)
}

fn dims4<E: Real>(x: &Tensor<E>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    debug_assert_eq!(s.len(), 4);
    (s[0], s[1], s[2], s[3])
}

fn require_rank4<E: Real>(op: &'static str, x: &Tensor<E>) -> Result<(), TensorError> {
    if x.rank() != 4 {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected rank 4, got shape {:?}", x.shape()),
        });
    }
    Ok(())
}

/// Cross-correlation of `x: [b, h, w, ci]` with `w: [k, k, ci, co]`,
/// stride 1, symmetric zero padding.
pub fn conv2d_fwd<E: Real>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    pad: usize,
) -> Result<Tensor<E>, TensorError> {
    require_rank4("conv2d", x)?;
    require_rank4("conv2d", w)?;
    let (b, h, wd, ci) = dims4(x);
    let ws = w.shape();
    let (kh, kw, wci, co) = (ws[0], ws[1], ws[2], ws[3]);
    if kh != kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("non-square kernel {kh}x{kw}"),
        });
    }
    if wci != ci {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {ci} channels, weight expects {wci}"),
        });
    }
    if h + 2 * pad < kh || wd + 2 * pad < kh {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("spatial {h}x{wd} with pad {pad} smaller than kernel {kh}"),
        });
    }
    // padding beyond kernel - 1 only adds all-zero taps and has no
    // complementary-padding backward; none of the layers need it
    if pad >= kh {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("pad {pad} must be smaller than kernel {kh}"),
        });
    }
    let (cols, oh, ow) = im2col(x, kh, pad);
    let m = b * oh * ow;
    let kdim = kh * kw * ci;
    let mut out = vec![E::ZERO; m * co];
    gemm(&cols, w.data(), m, kdim, co, &mut out);
    Tensor::new(vec![b, oh, ow, co], out)
}

/// Input gradient of [`conv2d_fwd`], also used directly as a full-overlap
/// transposed convolution: `g: [b, oh, ow, co]`, `w: [k, k, ci, co]`,
/// result `[b, oh + k - 1 - 2 pad, ..., ci]`.
pub fn conv2d_dx<E: Real>(
    g: &Tensor<E>,
    w: &Tensor<E>,
    pad: usize,
) -> Result<Tensor<E>, TensorError> {
    require_rank4("conv2d_dx", g)?;
    require_rank4("conv2d_dx", w)?;
    let ws = w.shape();
    let (k, ci, co) = (ws[0], ws[2], ws[3]);
    if g.shape()[3] != co {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_dx",
            detail: format!("gradient has {} channels, weight expects {co}", g.shape()[3]),
        });
    }
    if k < pad + 1 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_dx",
            detail: format!("kernel {k} smaller than pad {pad} + 1"),
        });
    }
    // Flip the kernel spatially and swap channel roles, then run a forward
    // convolution with complementary padding.
    let mut wt = vec![E::ZERO; w.numel()];
    let wd = w.data();
    for khi in 0..k {
        for kwi in 0..k {
            for cii in 0..ci {
                for coi in 0..co {
                    let src = ((khi * k + kwi) * ci + cii) * co + coi;
                    let dst = (((k - 1 - khi) * k + (k - 1 - kwi)) * co + coi) * ci + cii;
                    wt[dst] = wd[src];
                }
            }
        }
    }
    let wt = Tensor::new(vec![k, k, co, ci], wt)?;
    conv2d_fwd(g, &wt, k - 1 - pad)
}

/// Weight gradient of [`conv2d_fwd`]: contracts `x` patches against `g`
/// over batch and output positions.
pub fn conv2d_dw<E: Real>(
    x: &Tensor<E>,
    g: &Tensor<E>,
    kernel: usize,
    pad: usize,
) -> Result<Tensor<E>, TensorError> {
    require_rank4("conv2d_dw", x)?;
    require_rank4("conv2d_dw", g)?;
    let (b, _, _, ci) = dims4(x);
    let (gb, goh, gow, co) = dims4(g);
    if gb != b {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_dw",
            detail: format!("batch {b} vs {gb}"),
        });
    }
    let (cols, oh, ow) = im2col(x, kernel, pad);
    if (oh, ow) != (goh, gow) {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_dw",
            detail: format!("output extent {oh}x{ow} vs gradient {goh}x{gow}"),
        });
    }
    let m = b * oh * ow;
    let kdim = kernel * kernel * ci;
    let mut out = vec![E::ZERO; kdim * co];
    gemm_at_b(&cols, g.data(), m, kdim, co, &mut out);
    Tensor::new(vec![kernel, kernel, ci, co], out)
}

/// Replicates each pixel into a 2x2 block.
pub fn upsample_nearest_2x<E: Real>(x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    require_rank4("upsample_nearest_2x", x)?;
    let (b, h, w, c) = dims4(x);
    let mut out = vec![E::ZERO; b * 4 * h * w * c];
    let (oh, ow) = (2 * h, 2 * w);
    let xd = x.data();
    for bi in 0..b {
        for hi in 0..h {
            for wi in 0..w {
                let src = ((bi * h + hi) * w + wi) * c;
                let pixel = &xd[src..src + c];
                for dh in 0..2 {
                    for dw in 0..2 {
                        let dst = ((bi * oh + 2 * hi + dh) * ow + 2 * wi + dw) * c;
                        out[dst..dst + c].copy_from_slice(pixel);
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, oh, ow, c], out)
}

/// 2x2 average pooling with stride 2; spatial extents must be even.
pub fn downsample_avg_2x<E: Real>(x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    require_rank4("downsample_avg_2x", x)?;
    let (b, h, w, c) = dims4(x);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "downsample_avg_2x",
            detail: format!("odd spatial extent {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = E::from_f64(0.25);
    let mut out = vec![E::ZERO; b * oh * ow * c];
    let xd = x.data();
    for bi in 0..b {
        for hi in 0..oh {
            for wi in 0..ow {
                let dst = ((bi * oh + hi) * ow + wi) * c;
                for dh in 0..2 {
                    for dw in 0..2 {
                        let src = ((bi * h + 2 * hi + dh) * w + 2 * wi + dw) * c;
                        for ci in 0..c {
                            out[dst + ci] += xd[src + ci];
                        }
                    }
                }
                for v in &mut out[dst..dst + c] {
                    *v = *v * quarter;
                }
            }
        }
    }
    Tensor::new(vec![b, oh, ow, c], out)
}

/// Keep-dims sum over the given axes.
pub fn reduce_sum<E: Real>(x: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>, TensorError> {
    let rank = x.rank();
    if axes.is_empty() {
        return Err(TensorError::InvalidArg {
            op: "reduce_sum",
            detail: "empty reduction axis set".into(),
        });
    }
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(TensorError::InvalidArg {
                op: "reduce_sum",
                detail: format!("axis {a} out of range for rank {rank}"),
            });
        }
        reduced[a] = true;
    }
    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &d)| if reduced[i] { 1 } else { d })
        .collect();
    let mut out = Tensor::zeros(out_shape.clone());
    // out strides with 0 on reduced axes so contributions collapse there
    let mut ostrides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        if !reduced[i] {
            ostrides[i] = acc;
        }
        acc *= out_shape[i];
    }
    let shape = x.shape().to_vec();
    let mut idx = vec![0usize; rank];
    let mut oflat = 0usize;
    let od = out.data_mut();
    for &v in x.data() {
        od[oflat] += v;
        // odometer increment
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oflat += ostrides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            oflat -= ostrides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(out)
}

/// Expands size-1 axes of `x` to `target`; other axes must match.
pub fn broadcast_to<E: Real>(x: &Tensor<E>, target: &[usize]) -> Result<Tensor<E>, TensorError> {
    let rank = x.rank();
    if target.len() != rank {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast_to",
            detail: format!("rank {} vs target {:?}", rank, target),
        });
    }
    for (i, (&s, &t)) in x.shape().iter().zip(target).enumerate() {
        if s != t && s != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_to",
                detail: format!("axis {i}: {s} cannot broadcast to {t}"),
            });
        }
    }
    let mut sstrides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        if x.shape()[i] != 1 {
            sstrides[i] = acc;
        }
        acc *= x.shape()[i];
    }
    let numel: usize = target.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut sflat = 0usize;
    let xd = x.data();
    for _ in 0..numel {
        out.push(xd[sflat]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            sflat += sstrides[ax];
            if idx[ax] < target[ax] {
                break;
            }
            sflat -= sstrides[ax] * target[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(target.to_vec(), out)
}

/// Concatenates two rank-4 tensors along the channel axis.
pub fn concat_channels<E: Real>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    require_rank4("concat_channels", a)?;
    require_rank4("concat_channels", b)?;
    if a.shape()[..3] != b.shape()[..3] {
        return Err(TensorError::ShapeMismatch {
            op: "concat_channels",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let (bt, h, w, ca) = dims4(a);
    let cb = b.shape()[3];
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    let (ad, bd) = (a.data(), b.data());
    for p in 0..bt * h * w {
        out.extend_from_slice(&ad[p * ca..(p + 1) * ca]);
        out.extend_from_slice(&bd[p * cb..(p + 1) * cb]);
    }
    Tensor::new(vec![bt, h, w, ca + cb], out)
}

/// Copies channels `[start, start + len)` of a rank-4 tensor.
pub fn slice_channels<E: Real>(
    x: &Tensor<E>,
    start: usize,
    len: usize,
) -> Result<Tensor<E>, TensorError> {
    require_rank4("slice_channels", x)?;
    let (b, h, w, c) = dims4(x);
    if start + len > c || len == 0 {
        return Err(TensorError::InvalidArg {
            op: "slice_channels",
            detail: format!("range {start}..{} out of {c} channels", start + len),
        });
    }
    let mut out = Vec::with_capacity(b * h * w * len);
    let xd = x.data();
    for p in 0..b * h * w {
        out.extend_from_slice(&xd[p * c + start..p * c + start + len]);
    }
    Tensor::new(vec![b, h, w, len], out)
}

/// Embeds a rank-4 tensor into zero channels before/after (adjoint of
/// [`slice_channels`]).
pub fn pad_channels<E: Real>(
    x: &Tensor<E>,
    before: usize,
    after: usize,
) -> Result<Tensor<E>, TensorError> {
    require_rank4("pad_channels", x)?;
    let (b, h, w, c) = dims4(x);
    let oc = before + c + after;
    let mut out = vec![E::ZERO; b * h * w * oc];
    let xd = x.data();
    for p in 0..b * h * w {
        out[p * oc + before..p * oc + before + c].copy_from_slice(&xd[p * c..(p + 1) * c]);
    }
    Tensor::new(vec![b, h, w, oc], out)
}
