//! Index-shuffling kernels behind the graph ops: im2col/col2im for
//! convolution, window pooling, and trailing-suffix broadcast folding.
//! All layouts are row-major; images are NHWC.

use super::Scalar;

/// Output spatial size for a conv/pool window.
pub fn window_out(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Gather conv patches of `x` `[n, h, w, c]` into `cols` `[n*oh*ow, kh*kw*c]`.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    cols: &mut Vec<T>,
) {
    let oh = window_out(h, kh, stride, pad).unwrap();
    let ow = window_out(w, kw, stride, pad).unwrap();
    cols.clear();
    cols.resize(n * oh * ow * kh * kw * c, T::zero());
    let row_len = kh * kw * c;
    for ni in 0..n {
        let x_img = &x[ni * h * w * c..(ni + 1) * h * w * c];
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((ni * oh + ohi) * ow + owi) * row_len;
                for khi in 0..kh {
                    let hi = (ohi * stride + khi) as isize - pad as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    for kwi in 0..kw {
                        let wi = (owi * stride + kwi) as isize - pad as isize;
                        if wi < 0 || wi >= w as isize {
                            continue;
                        }
                        let src = (hi as usize * w + wi as usize) * c;
                        let dst = row + (khi * kw + kwi) * c;
                        cols[dst..dst + c].copy_from_slice(&x_img[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` `[n*oh*ow, kh*kw*c]` back into `dx` `[n, h, w, c]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Scalar>(
    cols: &[T],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut [T],
) {
    let oh = window_out(h, kh, stride, pad).unwrap();
    let ow = window_out(w, kw, stride, pad).unwrap();
    let row_len = kh * kw * c;
    for ni in 0..n {
        let dx_img = &mut dx[ni * h * w * c..(ni + 1) * h * w * c];
        for ohi in 0..oh {
            for owi in 0..ow {
                let row = ((ni * oh + ohi) * ow + owi) * row_len;
                for khi in 0..kh {
                    let hi = (ohi * stride + khi) as isize - pad as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    for kwi in 0..kw {
                        let wi = (owi * stride + kwi) as isize - pad as isize;
                        if wi < 0 || wi >= w as isize {
                            continue;
                        }
                        let dst = (hi as usize * w + wi as usize) * c;
                        let src = row + (khi * kw + kwi) * c;
                        for ci in 0..c {
                            dx_img[dst + ci] += cols[src + ci];
                        }
                    }
                }
            }
        }
    }
}

/// Fold `grad` of a broadcast result back onto the smaller suffix operand:
/// `out[i] += sum over j with j % out_len == i of grad[j]`.
pub fn fold_suffix_add<T: Scalar>(grad: &[T], out: &mut [T]) {
    debug_assert_eq!(grad.len() % out.len(), 0);
    let block = out.len();
    for (j, &g) in grad.iter().enumerate() {
        out[j % block] += g;
    }
}

/// Map a flat row-major index through an axis permutation.
/// `strides_src` are the row-major strides of the source shape.
pub fn permuted_copy<T: Scalar>(src: &[T], src_shape: &[usize], perm: &[usize], dst: &mut [T]) {
    let rank = src_shape.len();
    let dst_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let src_strides = row_major_strides(src_shape);
    let mut idx = vec![0usize; rank];
    for slot in dst.iter_mut() {
        let mut src_off = 0;
        for d in 0..rank {
            src_off += idx[d] * src_strides[perm[d]];
        }
        *slot = src[src_off];
        // advance dst multi-index
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < dst_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Inverse of an axis permutation.
pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_out(64, 3, 2, 1), Some(32));
        assert_eq!(window_out(4, 1, 1, 0), Some(4));
        assert_eq!(window_out(2, 3, 1, 0), None);
    }

    #[test]
    fn im2col_identity_kernel() {
        // 1x1 kernel, stride 1: cols is the input reinterpreted as rows.
        let x: Vec<f64> = (0..2 * 3 * 2).map(|v| v as f64).collect();
        let mut cols = Vec::new();
        im2col(&x, 1, 2, 3, 2, 1, 1, 1, 0, &mut cols);
        assert_eq!(cols, x);
    }

    #[test]
    fn permute_roundtrip() {
        let shape = [2usize, 3, 4];
        let src: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let perm = [2usize, 0, 1];
        let mut dst = vec![0.0; 24];
        permuted_copy(&src, &shape, &perm, &mut dst);
        let back_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut back = vec![0.0; 24];
        permuted_copy(&dst, &back_shape, &invert_perm(&perm), &mut back);
        assert_eq!(src, back);
    }
}
