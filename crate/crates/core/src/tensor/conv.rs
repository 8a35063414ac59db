//! 3x3x3 volumetric convolution kernels (padding 1) lowered to GEMM via im2col.

use crate::error::{Error, Result};

use super::Tensor;

pub(crate) const KSIZE: usize = 3;
const KVOL: usize = KSIZE * KSIZE * KSIZE;
const PAD: isize = 1;

/// Spatial output size of a padded 3x3x3 convolution.
pub fn conv_output_size(r: usize, stride: usize) -> usize {
    (r + 2 * PAD as usize - KSIZE) / stride + 1
}

/// `C = alpha * A * B + beta * C` on row-major buffers; transposes are
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements of the asserted buffer lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `kk`.
fn valid_range(r_in: usize, r_out: usize, stride: usize, kk: usize) -> (usize, usize) {
    // input index = o*stride + kk - PAD must lie in [0, r_in)
    let off = kk as isize - PAD;
    let mut lo = 0usize;
    while lo < r_out && (lo as isize * stride as isize + off) < 0 {
        lo += 1;
    }
    let mut hi = r_out;
    while hi > lo && ((hi - 1) as isize * stride as isize + off) >= r_in as isize {
        hi -= 1;
    }
    (lo, hi)
}

/// Unfolds `x: [C,R,R,R]` into rows `(ch, kz, ky, kx)` of `ro^3` output
/// positions. Rows are built front to back, so padding zeros are written
/// in place instead of pre-filling the buffer.
fn im2col(x: &[f64], c: usize, r: usize, stride: usize, ro: usize) -> Vec<f64> {
    let p = ro * ro * ro;
    let mut col = Vec::with_capacity(c * KVOL * p);
    let r2 = r * r;
    let zeros = |col: &mut Vec<f64>, n: usize| col.resize(col.len() + n, 0.0);
    for ch in 0..c {
        let xc = &x[ch * r * r2..(ch + 1) * r * r2];
        for kz in 0..KSIZE {
            let (zlo, zhi) = valid_range(r, ro, stride, kz);
            for ky in 0..KSIZE {
                let (ylo, yhi) = valid_range(r, ro, stride, ky);
                for kx in 0..KSIZE {
                    let (xlo, xhi) = valid_range(r, ro, stride, kx);
                    zeros(&mut col, zlo * ro * ro);
                    for oz in zlo..zhi {
                        let iz = oz * stride + kz - PAD as usize;
                        zeros(&mut col, ylo * ro);
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - PAD as usize;
                            let base_in = iz * r2 + iy * r;
                            zeros(&mut col, xlo);
                            if xhi > xlo {
                                let first = base_in + xlo * stride + kx - PAD as usize;
                                if stride == 1 {
                                    col.extend_from_slice(&xc[first..first + (xhi - xlo)]);
                                } else {
                                    for t in 0..xhi - xlo {
                                        col.push(xc[first + t * stride]);
                                    }
                                }
                            }
                            zeros(&mut col, ro - xhi.max(xlo));
                        }
                        zeros(&mut col, (ro - yhi.max(ylo)) * ro);
                    }
                    zeros(&mut col, (ro - zhi.max(zlo)) * ro * ro);
                }
            }
        }
    }
    debug_assert_eq!(col.len(), c * KVOL * p);
    col
}

fn col2im(col: &[f64], c: usize, r: usize, stride: usize, ro: usize) -> Vec<f64> {
    let p = ro * ro * ro;
    let r2 = r * r;
    let mut x = vec![0.0; c * r * r2];
    for ch in 0..c {
        let xc = &mut x[ch * r * r2..(ch + 1) * r * r2];
        for kz in 0..KSIZE {
            let (zlo, zhi) = valid_range(r, ro, stride, kz);
            for ky in 0..KSIZE {
                let (ylo, yhi) = valid_range(r, ro, stride, ky);
                for kx in 0..KSIZE {
                    let (xlo, xhi) = valid_range(r, ro, stride, kx);
                    let row = (ch * KVOL + (kz * KSIZE + ky) * KSIZE + kx) * p;
                    let src = &col[row..row + p];
                    for oz in zlo..zhi {
                        let iz = oz * stride + kz - PAD as usize;
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - PAD as usize;
                            let base_in = iz * r2 + iy * r;
                            let base_out = (oz * ro + oy) * ro;
                            for ox in xlo..xhi {
                                let ix = ox * stride + kx - PAD as usize;
                                xc[base_in + ix] += src[base_out + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Checks a `[C, R, R, R]` volume and returns `(C, R)`.
pub(crate) fn volume_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 4 || s[1] != s[2] || s[2] != s[3] {
        return Err(Error::dim(op, format!("expected cubic [C,R,R,R], got {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// Checks a `[C_out, C_in, 3, 3, 3]` kernel and returns `(C_out, C_in)`.
pub(crate) fn kernel_dims(op: &'static str, k: &Tensor) -> Result<(usize, usize)> {
    let s = k.shape();
    if s.len() != 5 || s[2..] != [KSIZE, KSIZE, KSIZE] {
        return Err(Error::dim(op, format!("expected [Co,Ci,3,3,3] kernel, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

fn check_stride(op: &'static str, stride: usize) -> Result<()> {
    if stride == 1 || stride == 2 {
        Ok(())
    } else {
        Err(Error::dim(op, format!("stride must be 1 or 2, got {stride}")))
    }
}

/// Cross-correlation of `x: [Ci,R,R,R]` with `k: [Co,Ci,3,3,3]`.
pub fn conv3d_forward(x: &Tensor, k: &Tensor, stride: usize) -> Result<Tensor> {
    conv3d_forward_cols(x, k, stride).map(|(y, _)| y)
}

/// [`conv3d_forward`] that also returns the unfolded input, which the
/// kernel gradient reuses.
pub(crate) fn conv3d_forward_cols(x: &Tensor, k: &Tensor, stride: usize) -> Result<(Tensor, Vec<f64>)> {
    check_stride("conv3d", stride)?;
    let (ci, r) = volume_dims("conv3d", x)?;
    let (co, kci) = kernel_dims("conv3d", k)?;
    if kci != ci {
        return Err(Error::dim(
            "conv3d",
            format!("kernel expects {kci} channels, input has {ci}"),
        ));
    }
    if r == 0 {
        return Err(Error::dim("conv3d", "empty volume".to_string()));
    }
    if stride == 2 && r % 2 != 0 {
        return Err(Error::dim("conv3d", format!("stride 2 needs even resolution, got {r}")));
    }
    let ro = conv_output_size(r, stride);
    let p = ro * ro * ro;
    let col = im2col(x.data(), ci, r, stride, ro);
    let mut out = vec![0.0; co * p];
    gemm(co, ci * KVOL, p, k.data(), false, &col, false, &mut out, 0.0);
    Ok((Tensor::new(vec![co, ro, ro, ro], out)?, col))
}

/// Gradient of [`conv3d_forward`] with respect to its input; equivalently the
/// transposed convolution of `gy: [Co,R',R',R']` back to resolution `r_in`.
pub(crate) fn conv3d_input_grad(gy: &Tensor, k: &Tensor, stride: usize, r_in: usize) -> Tensor {
    let (co, ci) = (k.shape()[0], k.shape()[1]);
    let ro = gy.shape()[1];
    let p = ro * ro * ro;
    let mut gcol = vec![0.0; ci * KVOL * p];
    gemm(ci * KVOL, co, p, k.data(), true, gy.data(), false, &mut gcol, 0.0);
    let gx = col2im(&gcol, ci, r_in, stride, ro);
    Tensor::new(vec![ci, r_in, r_in, r_in], gx).expect("conv input grad shape")
}

/// Gradient of [`conv3d_forward`] with respect to the kernel.
pub(crate) fn conv3d_kernel_grad(x: &Tensor, gy: &Tensor, stride: usize, co: usize) -> Tensor {
    let (ci, r) = (x.shape()[0], x.shape()[1]);
    let ro = gy.shape()[1];
    let col = im2col(x.data(), ci, r, stride, ro);
    conv3d_kernel_grad_cols(&col, gy, co, ci)
}

/// Kernel gradient from an input already unfolded by [`im2col`].
pub(crate) fn conv3d_kernel_grad_cols(col: &[f64], gy: &Tensor, co: usize, ci: usize) -> Tensor {
    let ro = gy.shape()[1];
    let p = ro * ro * ro;
    let mut gk = vec![0.0; co * ci * KVOL];
    gemm(co, p, ci * KVOL, gy.data(), false, col, true, &mut gk, 0.0);
    Tensor::new(vec![co, ci, KSIZE, KSIZE, KSIZE], gk).expect("conv kernel grad shape")
}

/// Adjoint of [`conv3d_forward`]: maps `y: [Co,R',R',R']` to `[Ci,R,R,R]`
/// with `R = stride * R'`.
pub fn conv3d_transposed_forward(y: &Tensor, k: &Tensor, stride: usize) -> Result<Tensor> {
    check_stride("conv3d_transposed", stride)?;
    let (cy, ro) = volume_dims("conv3d_transposed", y)?;
    let (co, _) = kernel_dims("conv3d_transposed", k)?;
    if cy != co {
        return Err(Error::dim(
            "conv3d_transposed",
            format!("kernel maps {co} channels, input has {cy}"),
        ));
    }
    let r = ro * stride;
    if r == 0 {
        return Err(Error::dim("conv3d_transposed", "empty volume".to_string()));
    }
    Ok(conv3d_input_grad(y, k, stride, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, k: &Tensor, stride: usize) -> Vec<f64> {
        let (ci, r) = (x.shape()[0], x.shape()[1]);
        let co = k.shape()[0];
        let ro = conv_output_size(r, stride);
        let mut out = vec![0.0; co * ro * ro * ro];
        for o in 0..co {
            for oz in 0..ro {
                for oy in 0..ro {
                    for ox in 0..ro {
                        let mut s = 0.0;
                        for c in 0..ci {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iz = (oz * stride + kz) as isize - 1;
                                        let iy = (oy * stride + ky) as isize - 1;
                                        let ix = (ox * stride + kx) as isize - 1;
                                        let r = r as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= r || iy >= r || ix >= r {
                                            continue;
                                        }
                                        let xi = ((c as isize * r + iz) * r + iy) * r + ix;
                                        let ki = (((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx;
                                        s += x.data()[xi as usize] * k.data()[ki];
                                    }
                                }
                            }
                        }
                        out[((o * ro + oz) * ro + oy) * ro + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn gemm_lowering_matches_direct_loops() {
        for (stride, r) in [(1, 4), (2, 4), (1, 5), (2, 6), (1, 1), (1, 2), (2, 2)] {
            let x = pseudo(&[2, r, r, r], 3);
            let k = pseudo(&[3, 2, 3, 3, 3], 9);
            let fast = conv3d_forward(&x, &k, stride).unwrap();
            let slow = naive_conv(&x, &k, stride);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_sizes() {
        assert_eq!(conv_output_size(16, 1), 16);
        assert_eq!(conv_output_size(16, 2), 8);
        assert_eq!(conv_output_size(4, 2), 2);
    }

    #[test]
    fn odd_resolution_with_stride_two_is_rejected() {
        let x = Tensor::zeros(&[1, 5, 5, 5]);
        let k = Tensor::zeros(&[1, 1, 3, 3, 3]);
        assert!(conv3d_forward(&x, &k, 2).is_err());
    }
}
