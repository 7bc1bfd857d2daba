//! Dense row-major `f64` tensors and the numeric kernels shared by the
//! gradient tape and the tape-free inference paths.

use crate::{Error, Result};

/// Dense tensor: a shape and a contiguous row-major buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::BadShape {
                op: "from_vec",
                shape: shape.to_vec(),
                why: format!("shape wants {n} entries, buffer holds {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Scalar content of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::BadShape {
                op: "item",
                shape: self.shape.clone(),
                why: "expected exactly one element".into(),
            })
        }
    }

    /// Rows of a 2-d tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-d tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn first_nonfinite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::BadShape {
                op: "reshape",
                shape: shape.to_vec(),
                why: format!("target wants {n} entries, tensor holds {}", self.data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Elementwise accumulate: `self += other`, shapes must match.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }
}

fn check2d(op: &'static str, t: &Tensor) -> Result<()> {
    if t.ndim() != 2 {
        return Err(Error::BadShape {
            op,
            shape: t.shape.to_vec(),
            why: "expected a 2-d tensor".into(),
        });
    }
    Ok(())
}

/// Standard matrix product `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check2d("matmul", a)?;
    check2d("matmul", b)?;
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Product against a transposed right factor: `a[m×k] · b[n×k]ᵀ → [m×n]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check2d("matmul_nt", a)?;
    check2d("matmul_nt", b)?;
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow.iter()) {
                s += av * bv;
            }
            out[i * n + j] = s;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `aᵀ[k×m] · b[k×n] → [m×n]` (used by matmul backward rules).
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check2d("matmul_tn", a)?;
    check2d("matmul_tn", b)?;
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Valid-padding cross-correlation of one image: `x[c×h×w]` against
/// `kernels[f×c×kh×kw]`, no bias.
pub fn conv2d(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    if x.ndim() != 3 || kernels.ndim() != 4 || kernels.shape[1] != x.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape.clone(),
            rhs: kernels.shape.clone(),
        });
    }
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (f, kh, kw) = (kernels.shape[0], kernels.shape[2], kernels.shape[3]);
    if h < kh || w < kw {
        return Err(Error::BadShape {
            op: "conv2d",
            shape: x.shape.clone(),
            why: format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; f * oh * ow];
    for fi in 0..f {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let xv = x.data[(ci * h + oy + ky) * w + ox + kx];
                            let kv = kernels.data[((fi * c + ci) * kh + ky) * kw + kx];
                            s += xv * kv;
                        }
                    }
                }
                out[(fi * oh + oy) * ow + ox] = s;
            }
        }
    }
    Tensor::from_vec(&[f, oh, ow], out)
}

/// Average over non-overlapping 2×2 windows of the last two dimensions.
pub fn avgpool2(x: &Tensor) -> Result<Tensor> {
    if x.ndim() < 2 {
        return Err(Error::BadShape {
            op: "avgpool2",
            shape: x.shape.clone(),
            why: "need at least two dimensions".into(),
        });
    }
    let w = x.shape[x.ndim() - 1];
    let h = x.shape[x.ndim() - 2];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::BadShape {
            op: "avgpool2",
            shape: x.shape.clone(),
            why: "trailing extents must be even".into(),
        });
    }
    let lead: usize = x.shape[..x.ndim() - 2].iter().product();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; lead * oh * ow];
    for l in 0..lead {
        let src = &x.data[l * h * w..(l + 1) * h * w];
        let dst = &mut out[l * oh * ow..(l + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = 0.25
                    * (src[(2 * i) * w + 2 * j]
                        + src[(2 * i) * w + 2 * j + 1]
                        + src[(2 * i + 1) * w + 2 * j]
                        + src[(2 * i + 1) * w + 2 * j + 1]);
            }
        }
    }
    let mut shape = x.shape.clone();
    let nd = shape.len();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::from_vec(&shape, out)
}

/// Batched valid cross-correlation with matrix-form weights.
///
/// `x[b×c×h×w]`, `wmat[f×(c·kh·kw + 1)]` — each row is a flattened kernel
/// with the bias folded in as the last entry.
pub(crate) fn conv2d_mat(x: &Tensor, wmat: &Tensor, kh: usize, kw: usize) -> Result<Tensor> {
    if x.ndim() != 4 || wmat.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op: "conv2d_mat",
            lhs: x.shape.clone(),
            rhs: wmat.shape.clone(),
        });
    }
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let f = wmat.rows();
    if wmat.cols() != c * kh * kw + 1 {
        return Err(Error::ShapeMismatch {
            op: "conv2d_mat",
            lhs: x.shape.clone(),
            rhs: wmat.shape.clone(),
        });
    }
    if h < kh || w < kw {
        return Err(Error::BadShape {
            op: "conv2d_mat",
            shape: x.shape.clone(),
            why: format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let cols = wmat.cols();
    let mut out = vec![0.0; b * f * oh * ow];
    for bi in 0..b {
        for fi in 0..f {
            let wrow = &wmat.data[fi * cols..(fi + 1) * cols];
            let bias = wrow[cols - 1];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bias;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let xoff = ((bi * c + ci) * h + oy + ky) * w + ox;
                            let woff = (ci * kh + ky) * kw;
                            for kx in 0..kw {
                                s += x.data[xoff + kx] * wrow[woff + kx];
                            }
                        }
                    }
                    out[((bi * f + fi) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    Tensor::from_vec(&[b, f, oh, ow], out)
}

/// Gradients of [`conv2d_mat`] with respect to the input and the weights.
pub(crate) fn conv2d_mat_backward(
    x: &Tensor,
    wmat: &Tensor,
    kh: usize,
    kw: usize,
    go: &Tensor,
) -> (Tensor, Tensor) {
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let f = wmat.rows();
    let cols = wmat.cols();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(wmat.shape());
    for bi in 0..b {
        for fi in 0..f {
            let wrow = &wmat.data[fi * cols..(fi + 1) * cols];
            let dwrow_off = fi * cols;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = go.data[((bi * f + fi) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    dw.data[dwrow_off + cols - 1] += g;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let xoff = ((bi * c + ci) * h + oy + ky) * w + ox;
                            let woff = (ci * kh + ky) * kw;
                            for kx in 0..kw {
                                dw.data[dwrow_off + woff + kx] += g * x.data[xoff + kx];
                                dx.data[xoff + kx] += g * wrow[woff + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn matmul_zeros() {
        let z = Tensor::zeros(&[2, 3]);
        let any = Tensor::filled(&[3, 4], 1.7);
        assert_eq!(matmul(&z, &any).unwrap(), Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_hand_value() {
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 5.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap(), Tensor::scalar(13.0).reshaped(&[1, 1]).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 5]);
        match matmul(&a, &b) {
            Err(crate::Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 5]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn conv2d_all_ones_sums() {
        let x = Tensor::filled(&[1, 5, 5], 1.0);
        let k = Tensor::filled(&[1, 1, 5, 5], 1.0);
        let out = conv2d(&x, &k).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data()[0], 25.0);
    }

    #[test]
    fn conv2d_rejects_small_input() {
        let x = Tensor::filled(&[1, 4, 4], 1.0);
        let k = Tensor::filled(&[1, 1, 5, 5], 1.0);
        assert!(conv2d(&x, &k).is_err());
    }

    #[test]
    fn avgpool2_hand_value() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = avgpool2(&x).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data()[0], 2.5);
    }

    #[test]
    fn delta_impulse_reads_out_kernel_correlation_layout() {
        // a delta at (2,2) makes each output pixel the kernel entry it
        // overlaps under cross-correlation (no flip)
        let mut x = Tensor::zeros(&[1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0;
        let k = Tensor::from_vec(
            &[1, 1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let out = conv2d(&x, &k).unwrap();
        // out[oy, ox] = k[2−oy, 2−ox]
        for oy in 0..3 {
            for ox in 0..3 {
                let expect = k.data()[(2 - oy) * 3 + (2 - ox)];
                assert_eq!(out.data()[oy * 3 + ox], expect);
            }
        }
    }
}
