//! Im2col convolution kernels over NCHW buffers.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    #[inline]
    fn src_index(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        if i < 0 || i as usize >= limit {
            None
        } else {
            Some(i as usize)
        }
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Array2<f64> {
    let (ho, wo, k) = (g.ho, g.wo, g.k);
    let mut cols = Array2::<f64>::zeros((g.rows(), g.cols()));
    let cs = cols.as_slice_mut().expect("standard layout");
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cs[row * ho * wo..(row + 1) * ho * wo];
                for oh in 0..ho {
                    let Some(ih) = g.src_index(oh, ki, g.h) else {
                        continue;
                    };
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    let drow = &mut dst[oh * wo..(oh + 1) * wo];
                    if g.stride == 1 {
                        // contiguous run of valid columns
                        let lo = g.pad.saturating_sub(kj);
                        let hi = (g.w + g.pad - kj).min(wo);
                        if lo < hi {
                            let start = lo + kj - g.pad;
                            drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ow, d) in drow.iter_mut().enumerate() {
                            if let Some(iw) = g.src_index(ow, kj, g.w) {
                                *d = src[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add(cols: &Array2<f64>, g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo, k) = (g.ho, g.wo, g.k);
    let cs = cols.as_slice().expect("standard layout");
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cs[row * ho * wo..(row + 1) * ho * wo];
                for oh in 0..ho {
                    let Some(ih) = g.src_index(oh, ki, g.h) else {
                        continue;
                    };
                    let drow = &mut plane[ih * g.w..(ih + 1) * g.w];
                    let srow = &src[oh * wo..(oh + 1) * wo];
                    for (ow, &v) in srow.iter().enumerate() {
                        if let Some(iw) = g.src_index(ow, kj, g.w) {
                            drow[iw] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass for one sample: `out (cout, ho*wo) = W (cout, cin*k*k) . cols + b`.
pub(crate) fn forward_sample(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    cout: usize,
    g: &ConvGeom,
    out: &mut [f64],
) -> Array2<f64> {
    let cols = im2col(x, g);
    let wmat = ArrayView2::from_shape((cout, g.rows()), weight).expect("weight shape");
    let mut o = ArrayViewMut2::from_shape((cout, g.cols()), out).expect("output shape");
    general_mat_mul(1.0, &wmat, &cols, 0.0, &mut o);
    if let Some(b) = bias {
        for (mut row, &bv) in o.rows_mut().into_iter().zip(b) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    cols
}

/// Backward pass for one sample; accumulates into `dw`, `db` and `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_sample(
    dout: &[f64],
    cols: &Array2<f64>,
    weight: &[f64],
    cout: usize,
    g: &ConvGeom,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let d = ArrayView2::from_shape((cout, g.cols()), dout).expect("grad shape");
    let mut dwm = ArrayViewMut2::from_shape((cout, g.rows()), dw).expect("weight grad shape");
    general_mat_mul(1.0, &d, &cols.t(), 1.0, &mut dwm);
    if let Some(db) = db {
        for (row, acc) in d.rows().into_iter().zip(db.iter_mut()) {
            *acc += row.sum();
        }
    }
    if let Some(dx) = dx {
        let wmat = ArrayView2::from_shape((cout, g.rows()), weight).expect("weight shape");
        let mut dcols = Array2::<f64>::zeros((g.rows(), g.cols()));
        general_mat_mul(1.0, &wmat.t(), &d, 0.0, &mut dcols);
        col2im_add(&dcols, g, dx);
    }
}
