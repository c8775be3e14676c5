//! Dense numeric kernels behind the recorded operations.

use rayon::prelude::*;

use crate::real::Real;

/// Geometry of a 1-D convolution with "same" zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_len: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_len(&self) -> usize {
        (self.in_len + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (l, lo, k, s, p) = (g.in_len, g.out_len(), g.kernel, g.stride, g.pad() as isize);
    for i in 0..g.in_ch {
        let xi = &x[i * l..(i + 1) * l];
        for kk in 0..k {
            let row = &mut col[(i * k + kk) * lo..(i * k + kk + 1) * lo];
            for (t, c) in row.iter_mut().enumerate() {
                let src = (t * s) as isize + kk as isize - p;
                *c = if src >= 0 && (src as usize) < l {
                    xi[src as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let (l, lo, k, s, p) = (g.in_len, g.out_len(), g.kernel, g.stride, g.pad() as isize);
    for i in 0..g.in_ch {
        let xi = &mut x[i * l..(i + 1) * l];
        for kk in 0..k {
            let row = &col[(i * k + kk) * lo..(i * k + kk + 1) * lo];
            for (t, &c) in row.iter().enumerate() {
                let dst = (t * s) as isize + kk as isize - p;
                if dst >= 0 && (dst as usize) < l {
                    xi[dst as usize] += c;
                }
            }
        }
    }
}

fn direct_input(g: &ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1
}

/// `y[b,o,t] = sum_{i,k} w[o,i,k] * x[b,i,t*stride + k - pad]`.
pub fn conv_forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let lo = g.out_len();
    let cik = g.col_rows();
    let mut y = vec![T::zero(); g.batch * g.out_ch * lo];
    if y.is_empty() {
        return y;
    }
    y.par_chunks_mut(g.out_ch * lo)
        .enumerate()
        .for_each(|(b, yb)| {
            let xb = &x[b * g.in_ch * g.in_len..(b + 1) * g.in_ch * g.in_len];
            let mut scratch;
            let col: &[T] = if direct_input(g) {
                xb
            } else {
                scratch = vec![T::zero(); cik * lo];
                im2col(xb, g, &mut scratch);
                &scratch
            };
            unsafe {
                T::gemm(
                    g.out_ch,
                    cik,
                    lo,
                    T::one(),
                    w.as_ptr(),
                    cik as isize,
                    1,
                    col.as_ptr(),
                    lo as isize,
                    1,
                    T::zero(),
                    yb.as_mut_ptr(),
                    lo as isize,
                    1,
                );
            }
        });
    y
}

/// Adjoint of [`conv_forward`] in its input: maps output-shaped `gy` to input shape.
pub fn conv_input_grad<T: Real>(gy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let lo = g.out_len();
    let cik = g.col_rows();
    let mut dx = vec![T::zero(); g.batch * g.in_ch * g.in_len];
    if dx.is_empty() {
        return dx;
    }
    dx.par_chunks_mut(g.in_ch * g.in_len)
        .enumerate()
        .for_each(|(b, dxb)| {
            let gb = &gy[b * g.out_ch * lo..(b + 1) * g.out_ch * lo];
            let direct = direct_input(g);
            let mut dcol = if direct {
                Vec::new()
            } else {
                vec![T::zero(); cik * lo]
            };
            let dst: *mut T = if direct {
                dxb.as_mut_ptr()
            } else {
                dcol.as_mut_ptr()
            };
            unsafe {
                T::gemm(
                    cik,
                    g.out_ch,
                    lo,
                    T::one(),
                    w.as_ptr(),
                    1,
                    cik as isize,
                    gb.as_ptr(),
                    lo as isize,
                    1,
                    T::zero(),
                    dst,
                    lo as isize,
                    1,
                );
            }
            if !direct {
                col2im_add(&dcol, g, dxb);
            }
        });
    dx
}

/// Adjoint of [`conv_forward`] in its weights: `dw[o,i,k] = sum_{b,t} gy[b,o,t] * x[b,i,t*s+k-p]`.
///
/// Batch contributions are accumulated sequentially in batch order.
pub fn conv_weight_grad<T: Real>(x: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let lo = g.out_len();
    let cik = g.col_rows();
    let mut dw = vec![T::zero(); g.out_ch * cik];
    let mut scratch = if direct_input(g) {
        Vec::new()
    } else {
        vec![T::zero(); cik * lo]
    };
    for b in 0..g.batch {
        let xb = &x[b * g.in_ch * g.in_len..(b + 1) * g.in_ch * g.in_len];
        let gb = &gy[b * g.out_ch * lo..(b + 1) * g.out_ch * lo];
        let col: &[T] = if direct_input(g) {
            xb
        } else {
            im2col(xb, g, &mut scratch);
            &scratch
        };
        unsafe {
            T::gemm(
                g.out_ch,
                lo,
                cik,
                T::one(),
                gb.as_ptr(),
                lo as isize,
                1,
                col.as_ptr(),
                1,
                lo as isize,
                T::one(),
                dw.as_mut_ptr(),
                cik as isize,
                1,
            );
        }
    }
    dw
}

/// `c = op(a) * op(b)` for row-major 2-D operands; `op` optionally transposes.
pub fn matmul<T: Real>(
    a: &[T],
    a_shape: [usize; 2],
    ta: bool,
    b: &[T],
    b_shape: [usize; 2],
    tb: bool,
) -> (Vec<T>, [usize; 2]) {
    let (m, ka) = if ta {
        (a_shape[1], a_shape[0])
    } else {
        (a_shape[0], a_shape[1])
    };
    let n = if tb { b_shape[0] } else { b_shape[1] };
    let (rsa, csa) = if ta {
        (1, a_shape[1] as isize)
    } else {
        (a_shape[1] as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b_shape[1] as isize)
    } else {
        (b_shape[1] as isize, 1)
    };
    let mut c = vec![T::zero(); m * n];
    if m > 0 && n > 0 {
        unsafe {
            T::gemm(
                m,
                ka,
                n,
                T::one(),
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                T::zero(),
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    (c, [m, n])
}

/// A fixed sparse linear map applied along the last axis
/// (`y[j] = sum_i weight(j,i) * x[i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub in_len: usize,
    pub out_len: usize,
    /// One list of `(input index, weight)` per output index.
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl LinearMap {
    pub fn transpose(&self) -> LinearMap {
        let mut taps = vec![Vec::new(); self.in_len];
        for (j, row) in self.taps.iter().enumerate() {
            for &(i, w) in row {
                taps[i].push((j, w));
            }
        }
        LinearMap {
            in_len: self.out_len,
            out_len: self.in_len,
            taps,
        }
    }

    pub fn apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        let rows = x.len() / self.in_len;
        let taps: Vec<Vec<(usize, T)>> = self
            .taps
            .iter()
            .map(|r| r.iter().map(|&(i, w)| (i, T::from_f64(w))).collect())
            .collect();
        let mut y = vec![T::zero(); rows * self.out_len];
        for r in 0..rows {
            let xr = &x[r * self.in_len..(r + 1) * self.in_len];
            let yr = &mut y[r * self.out_len..(r + 1) * self.out_len];
            for (yj, row) in yr.iter_mut().zip(&taps) {
                let mut acc = T::zero();
                for &(i, w) in row {
                    acc += w * xr[i];
                }
                *yj = acc;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let lo = g.out_len();
        let mut y = vec![0.0; g.batch * g.out_ch * lo];
        for b in 0..g.batch {
            for o in 0..g.out_ch {
                for t in 0..lo {
                    let mut acc = 0.0;
                    for i in 0..g.in_ch {
                        for k in 0..g.kernel {
                            let src = (t * g.stride + k) as isize - g.pad() as isize;
                            if src >= 0 && (src as usize) < g.in_len {
                                acc += w[(o * g.in_ch + i) * g.kernel + k]
                                    * x[(b * g.in_ch + i) * g.in_len + src as usize];
                            }
                        }
                    }
                    y[(b * g.out_ch + o) * lo + t] = acc;
                }
            }
        }
        y
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn gemm_conv_matches_direct_loops() {
        for &(kernel, stride) in &[(9, 1), (9, 2), (1, 1)] {
            let g = ConvGeom {
                batch: 3,
                in_ch: 4,
                out_ch: 5,
                kernel,
                stride,
                in_len: 12,
            };
            let x = pseudo(3 * 4 * 12, 1);
            let w = pseudo(5 * 4 * kernel, 2);
            let fast = conv_forward(&x, &w, &g);
            let slow = naive_conv(&x, &w, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_and_weight_grads_are_adjoints() {
        // <conv(x,w), gy> == <x, conv_input_grad(gy,w)> == <w, conv_weight_grad(x,gy)>
        let g = ConvGeom {
            batch: 2,
            in_ch: 3,
            out_ch: 4,
            kernel: 9,
            stride: 2,
            in_len: 10,
        };
        let x = pseudo(2 * 3 * 10, 3);
        let w = pseudo(4 * 3 * 9, 4);
        let gy = pseudo(2 * 4 * g.out_len(), 5);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&conv_forward(&x, &w, &g), &gy);
        let via_x = dot(&x, &conv_input_grad(&gy, &w, &g));
        let via_w = dot(&w, &conv_weight_grad(&x, &gy, &g));
        assert!((lhs - via_x).abs() < 1e-12);
        assert!((lhs - via_w).abs() < 1e-12);
    }

    #[test]
    fn matmul_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let (c, s) = matmul(&a, [2, 3], false, &a, [2, 3], true);
        assert_eq!(s, [2, 2]);
        assert_eq!(c, vec![14.0, 32.0, 32.0, 77.0]);
        let (c, s) = matmul(&a, [2, 3], true, &a, [2, 3], false);
        assert_eq!(s, [3, 3]);
        assert_eq!(c[0], 17.0);
    }
}
