//! Primitive tensor operations for the 1-D CNN: valid convolution,
//! non-overlapping max pooling (fused with ReLU), softmax. All operations are
//! generic over the float type so the f64 instantiation can gradient-check
//! the exact code the f32 production path runs.

use num_traits::Float;

/// Valid 1-D convolution, channel-major layout.
///
/// `x`: `in_ch * in_len`, `w`: `out_ch * in_ch * kernel`, `out`: `out_ch * out_len`
/// with `out_len = (in_len - kernel) / stride + 1`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Float>(
    x: &[T],
    w: &[T],
    b: &[T],
    out: &mut [T],
    in_ch: usize,
    in_len: usize,
    kernel: usize,
    stride: usize,
) {
    let out_len = (in_len - kernel) / stride + 1;
    let out_ch = b.len();
    debug_assert_eq!(x.len(), in_ch * in_len);
    debug_assert_eq!(w.len(), out_ch * in_ch * kernel);
    debug_assert_eq!(out.len(), out_ch * out_len);

    for oc in 0..out_ch {
        let out_row = &mut out[oc * out_len..(oc + 1) * out_len];
        out_row.fill(b[oc]);
        for ic in 0..in_ch {
            let x_row = &x[ic * in_len..(ic + 1) * in_len];
            let w_row = &w[(oc * in_ch + ic) * kernel..(oc * in_ch + ic + 1) * kernel];
            if stride == 1 {
                // axpy over output positions per tap: contiguous and vector-friendly
                for (k, &wk) in w_row.iter().enumerate() {
                    let xs = &x_row[k..k + out_len];
                    for (o, &xv) in out_row.iter_mut().zip(xs) {
                        *o = *o + wk * xv;
                    }
                }
            } else {
                // dot product per output position over the contiguous window
                for (t, o) in out_row.iter_mut().enumerate() {
                    let base = t * stride;
                    let window = &x_row[base..base + kernel];
                    let mut acc = T::zero();
                    for (&wk, &xv) in w_row.iter().zip(window) {
                        acc = acc + wk * xv;
                    }
                    *o = *o + acc;
                }
            }
        }
    }
}

/// Backward pass of [`conv_forward`].
///
/// Accumulates into `dw`/`db`; writes `dx` when `Some` (skipped for the input
/// layer, whose upstream is the data).
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Float>(
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
    in_ch: usize,
    in_len: usize,
    kernel: usize,
    stride: usize,
) {
    let out_ch = db.len();
    let out_len = (in_len - kernel) / stride + 1;
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(T::zero());
    }

    for oc in 0..out_ch {
        let dout_row = &dout[oc * out_len..(oc + 1) * out_len];
        let mut acc = T::zero();
        for &g in dout_row {
            acc = acc + g;
        }
        db[oc] = db[oc] + acc;

        for ic in 0..in_ch {
            let x_row = &x[ic * in_len..(ic + 1) * in_len];
            let dw_row = &mut dw[(oc * in_ch + ic) * kernel..(oc * in_ch + ic + 1) * kernel];
            if stride == 1 {
                for (k, dwk) in dw_row.iter_mut().enumerate() {
                    let xs = &x_row[k..k + out_len];
                    let mut acc = T::zero();
                    for (&g, &xv) in dout_row.iter().zip(xs) {
                        acc = acc + g * xv;
                    }
                    *dwk = *dwk + acc;
                }
            } else {
                for (t, &g) in dout_row.iter().enumerate() {
                    let base = t * stride;
                    let window = &x_row[base..base + kernel];
                    for (dwk, &xv) in dw_row.iter_mut().zip(window) {
                        *dwk = *dwk + g * xv;
                    }
                }
            }

            if let Some(dx) = dx.as_deref_mut() {
                let w_row = &w[(oc * in_ch + ic) * kernel..(oc * in_ch + ic + 1) * kernel];
                let dx_row = &mut dx[ic * in_len..(ic + 1) * in_len];
                if stride == 1 {
                    for (k, &wk) in w_row.iter().enumerate() {
                        let d = &mut dx_row[k..k + out_len];
                        for (dv, &g) in d.iter_mut().zip(dout_row) {
                            *dv = *dv + wk * g;
                        }
                    }
                } else {
                    for (t, &g) in dout_row.iter().enumerate() {
                        let base = t * stride;
                        let d = &mut dx_row[base..base + kernel];
                        for (dv, &wk) in d.iter_mut().zip(w_row) {
                            *dv = *dv + wk * g;
                        }
                    }
                }
            }
        }
    }
}

/// Sentinel for pooled windows whose max pre-activation is <= 0 (ReLU kills
/// the gradient there).
pub const POOL_DEAD: usize = usize::MAX;

/// Fused ReLU + non-overlapping max pooling.
///
/// `pre` holds pre-activation conv outputs; the pooled value is
/// `max(0, max(window))`. `argmax` records the within-row index of the
/// winning element, or [`POOL_DEAD`] when the window is entirely non-positive.
pub fn relu_pool_forward<T: Float>(
    pre: &[T],
    channels: usize,
    in_len: usize,
    pool: usize,
    out: &mut [T],
    argmax: &mut [usize],
) {
    let out_len = in_len / pool;
    debug_assert_eq!(out.len(), channels * out_len);
    for c in 0..channels {
        let row = &pre[c * in_len..(c + 1) * in_len];
        for t in 0..out_len {
            let window = &row[t * pool..(t + 1) * pool];
            let mut best = window[0];
            let mut best_k = 0;
            for (k, &v) in window.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            let oi = c * out_len + t;
            if best > T::zero() {
                out[oi] = best;
                argmax[oi] = c * in_len + t * pool + best_k;
            } else {
                out[oi] = T::zero();
                argmax[oi] = POOL_DEAD;
            }
        }
    }
}

/// Backward pass of [`relu_pool_forward`]: routes gradients to the winning
/// pre-activation positions.
pub fn relu_pool_backward<T: Float>(dout: &[T], argmax: &[usize], dpre: &mut [T]) {
    dpre.fill(T::zero());
    for (&g, &idx) in dout.iter().zip(argmax) {
        if idx != POOL_DEAD {
            dpre[idx] = dpre[idx] + g;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.iter().map(|&e| e / sum).collect()
}
