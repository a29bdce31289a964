//! conv2d forward/backward kernels: im2col plus a couple of matmul loops.
//!
//! Zero padding, NCHW layout, weight layout `[cout, cin, kh, kw]`.

use super::Scalar;

/// Resolved convolution geometry. All preconditions are checked by the
/// graph op before this is built.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// C[m,n] += A[m,k] * B[k,n], all row-major.
fn matmul_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// C[m,k] += A[m,n] * B[k,n]^T, i.e. c[i][j] = sum_p a[i][p] * b[j][p].
fn matmul_abt_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n], i.e. c[j][p] = sum_i a[i][j] * b[i][p].
fn matmul_atb_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (j, &a_ij) in a_row.iter().enumerate() {
            if a_ij == T::zero() {
                continue;
            }
            let c_row = &mut c[j * n..(j + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ij * bv;
            }
        }
    }
}

/// Unfold one sample into `cols[cin*kh*kw, oh*ow]`; out-of-bounds taps are 0.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let op = d.out_positions();
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut cols[(ci * d.kh * d.kw + ky * d.kw + kx) * op
                    ..(ci * d.kh * d.kw + ky * d.kw + kx + 1) * op];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                    let dst = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        for v in dst.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold gradient columns back onto the input gradient (accumulating).
fn col2im_acc<T: Scalar>(cols: &[T], d: &ConvDims, gx: &mut [T]) {
    let op = d.out_positions();
    for ci in 0..d.cin {
        let plane = &mut gx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &cols[(ci * d.kh * d.kw + ky * d.kw + kx) * op
                    ..(ci * d.kh * d.kw + ky * d.kw + kx + 1) * op];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let src = &row[oy * d.ow..(oy + 1) * d.ow];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst_row[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass: `y[n,cout,oh,ow] = w * x + b`.
pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], d: &ConvDims) -> Vec<T> {
    let op = d.out_positions();
    let ck = d.col_rows();
    let mut y = vec![T::zero(); d.n * d.cout * op];
    let mut cols = vec![T::zero(); ck * op];
    for n in 0..d.n {
        im2col(&x[n * d.cin * d.h * d.w..], d, &mut cols);
        let y_n = &mut y[n * d.cout * op..(n + 1) * d.cout * op];
        matmul_acc(y_n, w, &cols, d.cout, ck, op);
        for (co, &bias) in b.iter().enumerate() {
            for v in &mut y_n[co * op..(co + 1) * op] {
                *v += bias;
            }
        }
    }
    y
}

/// Backward pass: gradients w.r.t. input, weight, and bias.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    d: &ConvDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let op = d.out_positions();
    let ck = d.col_rows();
    let mut gx = vec![T::zero(); d.n * d.cin * d.h * d.w];
    let mut gw = vec![T::zero(); d.cout * ck];
    let mut gb = vec![T::zero(); d.cout];
    let mut cols = vec![T::zero(); ck * op];
    let mut gcols = vec![T::zero(); ck * op];
    for n in 0..d.n {
        let gy_n = &gy[n * d.cout * op..(n + 1) * d.cout * op];
        // dW += dY * cols^T
        im2col(&x[n * d.cin * d.h * d.w..], d, &mut cols);
        matmul_abt_acc(&mut gw, gy_n, &cols, d.cout, ck, op);
        // dcols = W^T * dY, folded back onto dX
        for v in gcols.iter_mut() {
            *v = T::zero();
        }
        matmul_atb_acc(&mut gcols, w, gy_n, d.cout, ck, op);
        col2im_acc(&gcols, d, &mut gx[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w]);
        // db += sum over positions
        for co in 0..d.cout {
            let mut acc = T::zero();
            for &g in &gy_n[co * op..(co + 1) * op] {
                acc += g;
            }
            gb[co] += acc;
        }
    }
    (gx, gw, gb)
}
