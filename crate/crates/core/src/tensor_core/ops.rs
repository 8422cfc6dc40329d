//! Forward kernels on plain tensors. The autodiff graph calls into these and
//! adds the matching backward rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    #[default]
    Relu,
}

/// `out[p×r] += a[p×q] · b[q×r]` on raw row-major buffers.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// Shapes of a matmul interpreted as `(p, q, r)`; rank-1 operands act as a
/// row vector on the left and a column vector on the right.
pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, Vec<usize>)> {
    let (p, q, lead) = match a {
        [n] => (1, *n, false),
        [p, q] => (*p, *q, true),
        _ => return Err(Error::dim("matmul", a, b)),
    };
    let (q2, r, trail) = match b {
        [n] => (*n, 1, false),
        [q, r] => (*q, *r, true),
        _ => return Err(Error::dim("matmul", a, b)),
    };
    if q != q2 {
        return Err(Error::dim("matmul", a, b));
    }
    let shape = match (lead, trail) {
        (true, true) => vec![p, r],
        (true, false) => vec![p],
        (false, true) => vec![r],
        (false, false) => vec![1],
    };
    Ok((p, q, r, shape))
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, q, r, shape) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); p * r];
    gemm_acc(a.data(), b.data(), &mut out, p, q, r);
    Tensor::new(shape, out)
}

pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 {
        return Err(Error::Shape(format!("softmax expects a vector, got {:?}", x.shape())));
    }
    if !x.all_finite() {
        return Err(Error::NumericDomain { op: "softmax" });
    }
    let max = x.data().iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(Tensor::vector(exps.into_iter().map(|e| e / total).collect()))
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: ActivationKind) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NumericDomain { op: "activation" });
    }
    Ok(match kind {
        ActivationKind::Tanh => x.map(|v| v.tanh()),
        ActivationKind::Relu => x.map(|v| v.max(T::zero())),
    })
}

/// Cosine similarity. With `eps == 0` a zero-norm operand is an error;
/// otherwise norms are floored at `eps`.
pub fn cosine_similarity_eps<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, eps: T) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_similarity", a.shape(), b.shape()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if eps == T::zero() && (na == T::zero() || nb == T::zero()) {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    Ok(a.dot(b)? / (na.max(eps) * nb.max(eps)))
}

pub fn cosine_similarity<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    cosine_similarity_eps(a, b, T::zero())
}

pub(crate) fn conv_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let (t, c_in) = match x {
        [t, c] => (*t, *c),
        _ => return Err(Error::Shape(format!("conv1d input must be T×C, got {x:?}"))),
    };
    let (k, wc, c_out) = match w {
        [k, c, o] => (*k, *c, *o),
        _ => return Err(Error::Shape(format!("conv1d filters must be k×C_in×C_out, got {w:?}"))),
    };
    if k % 2 == 0 {
        return Err(Error::Config(format!("conv1d kernel size must be odd, got {k}")));
    }
    if wc != c_in {
        return Err(Error::dim("conv1d", x, w));
    }
    if b != [c_out] {
        return Err(Error::dim("conv1d bias", w, b));
    }
    Ok((t, c_in, k, c_out))
}

/// Temporal cross-correlation with "same" zero padding.
pub fn conv1d<T: Scalar>(x: &Tensor<T>, filters: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (t_len, c_in, k, c_out) = conv_dims(x.shape(), filters.shape(), bias.shape())?;
    let half = k / 2;
    let (xd, wd) = (x.data(), filters.data());
    let mut out = Vec::with_capacity(t_len * c_out);
    for _ in 0..t_len {
        out.extend_from_slice(bias.data());
    }
    for t in 0..t_len {
        let out_row = &mut out[t * c_out..(t + 1) * c_out];
        for dk in 0..k {
            let Some(src) = (t + dk).checked_sub(half).filter(|&s| s < t_len) else {
                continue;
            };
            let x_row = &xd[src * c_in..(src + 1) * c_in];
            for (c, &xv) in x_row.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let w_row = &wd[(dk * c_in + c) * c_out..(dk * c_in + c + 1) * c_out];
                for (o, &wv) in out_row.iter_mut().zip(w_row) {
                    *o += xv * wv;
                }
            }
        }
    }
    Tensor::new(vec![t_len, c_out], out)
}

/// Non-overlapping window-2 max pooling along time. A trailing odd step is
/// dropped. Returns the pooled tensor and the flat source index of every
/// output element (first index wins ties).
pub fn maxpool1d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (t_len, c) = x.dims2()?;
    if t_len < 2 {
        return Err(Error::BatchSize {
            op: "maxpool1d",
            min: 2,
            got: t_len,
        });
    }
    let out_len = t_len / 2;
    let xd = x.data();
    let mut out = Vec::with_capacity(out_len * c);
    let mut idx = Vec::with_capacity(out_len * c);
    for t in 0..out_len {
        for ch in 0..c {
            let a = (2 * t) * c + ch;
            let b = (2 * t + 1) * c + ch;
            let pick = if xd[b] > xd[a] { b } else { a };
            out.push(xd[pick]);
            idx.push(pick);
        }
    }
    Ok((Tensor::new(vec![out_len, c], out)?, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-feature running statistics for batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[features]),
            var: Tensor::full(&[features], T::one()),
        }
    }
}

/// Intermediate values of a batch-norm forward pass, kept for backward.
pub(crate) struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: NormMode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (b, f) = x.dims2()?;
    if gamma.shape() != [f] || beta.shape() != [f] {
        return Err(Error::dim("batchnorm", x.shape(), gamma.shape()));
    }
    if stats.mean.shape() != [f] {
        return Err(Error::dim("batchnorm running stats", x.shape(), stats.mean.shape()));
    }
    let eps = T::of(BATCHNORM_EPS);
    let xd = x.data();
    let (mean, var) = match mode {
        NormMode::Train => {
            if b < 2 {
                return Err(Error::BatchSize {
                    op: "batchnorm",
                    min: 2,
                    got: b,
                });
            }
            let n = T::of(b as f64);
            let mut mean = vec![T::zero(); f];
            for row in xd.chunks(f) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); f];
            for row in xd.chunks(f) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            let mom = T::of(BATCHNORM_MOMENTUM);
            let keep = T::one() - mom;
            for j in 0..f {
                let rm = &mut stats.mean.data_mut()[j];
                *rm = mom * *rm + keep * mean[j];
                let rv = &mut stats.var.data_mut()[j];
                *rv = mom * *rv + keep * var[j];
            }
            (mean, var)
        }
        NormMode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(b * f);
    let mut out = Vec::with_capacity(b * f);
    for row in xd.chunks(f) {
        for j in 0..f {
            let h = (row[j] - mean[j]) * inv_std[j];
            xhat.push(h);
            out.push(gamma.data()[j] * h + beta.data()[j]);
        }
    }
    Ok((Tensor::new(vec![b, f], out)?, BatchNormCache { xhat, inv_std }))
}

/// Batch normalization over the leading (batch) axis with population
/// variance, epsilon 1e-5 and running-stat momentum 0.9.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: NormMode,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    batchnorm_forward(x, gamma, beta, stats, mode).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let v = t(&[2], &[3., 7.]);
        assert_eq!(matmul(&Tensor::identity(2), &v).unwrap().data(), &[3., 7.]);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&a, &t(&[2], &[1., 1.])).unwrap().data(), &[3., 7.]);
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let any = t(&[3, 2], &[1., -2., 3., 4., 5., 6.]);
        assert!(matmul(&z, &any).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&t(&[2], &[0., 0.])).unwrap().data(), &[0.5, 0.5]);
        let big = softmax(&t(&[2], &[1e9, 0.])).unwrap();
        assert!(big.all_finite());
        assert_abs_diff_eq!(big.data()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(big.data()[1], 0.0, epsilon = 1e-12);
        assert!(matches!(
            softmax(&t(&[2], &[f64::NAN, 0.])),
            Err(Error::NumericDomain { .. })
        ));
        assert!(softmax(&t(&[2], &[f64::INFINITY, 0.])).is_err());
    }

    #[test]
    fn activation_cases() {
        let x = t(&[3], &[0., -3., 3.]);
        assert_eq!(activation(&x, ActivationKind::Relu).unwrap().data(), &[0., 0., 3.]);
        assert_eq!(activation(&t(&[1], &[0.]), ActivationKind::Tanh).unwrap().data(), &[0.]);
        let sat = activation(&t(&[1], &[20.]), ActivationKind::Tanh).unwrap();
        assert_abs_diff_eq!(sat.data()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cosine_cases() {
        let v = t(&[3], &[1., -2., 0.5]);
        assert_abs_diff_eq!(cosine_similarity(&v, &v).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_similarity(&v, &v.scale(-1.)).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&t(&[2], &[1., 0.]), &t(&[2], &[0., 1.])).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&v, &Tensor::zeros(&[3])),
            Err(Error::Degenerate(_))
        ));
        assert_eq!(cosine_similarity_eps(&v, &Tensor::zeros(&[3]), 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn conv1d_cases() {
        let x = t(&[3, 1], &[1., 2., 3.]);
        let id = conv1d(&x, &t(&[1, 1, 1], &[1.]), &t(&[1], &[0.])).unwrap();
        assert_eq!(id.data(), x.data());
        let box3 = conv1d(&x, &t(&[3, 1, 1], &[1., 1., 1.]), &t(&[1], &[0.])).unwrap();
        assert_eq!(box3.data(), &[3., 6., 5.]);
        let zero = conv1d(&x, &Tensor::zeros(&[3, 1, 2]), &t(&[2], &[0.5, -1.])).unwrap();
        assert_eq!(zero.data(), &[0.5, -1., 0.5, -1., 0.5, -1.]);
        assert!(matches!(
            conv1d(&x, &Tensor::zeros(&[2, 1, 1]), &Tensor::zeros(&[1])),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            conv1d(&x, &Tensor::zeros(&[3, 2, 1]), &Tensor::zeros(&[1])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn maxpool_cases() {
        let (y, _) = maxpool1d(&t(&[4, 1], &[1., 3., 2., 5.])).unwrap();
        assert_eq!(y.data(), &[3., 5.]);
        let (c, _) = maxpool1d(&Tensor::full(&[6, 2], 1.5)).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert!(c.data().iter().all(|&v| v == 1.5));
        let (odd, _) = maxpool1d(&t(&[5, 1], &[1., 2., 3., 4., 99.])).unwrap();
        assert_eq!(odd.data(), &[2., 4.]);
        assert!(maxpool1d(&t(&[1, 1], &[1.])).is_err());
        let (h1, _) = maxpool1d(&Tensor::<f64>::zeros(&[16, 1])).unwrap();
        let (h2, _) = maxpool1d(&h1).unwrap();
        assert_eq!(h2.shape(), &[4, 1]);
    }

    #[test]
    fn batchnorm_cases() {
        let ones = Tensor::full(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let mut stats = RunningStats::new(2);
        let x = t(&[2, 2], &[4., 0., 4., 2.]);
        let y = batchnorm(&x, &mut stats, NormMode::Train, &ones, &zeros).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[2], 0.0);
        // column [0, 2]: mean 1, population variance 1
        let expect = 1.0 / (1.0 + BATCHNORM_EPS).sqrt();
        assert_abs_diff_eq!(y.data()[1], -expect, epsilon = 1e-15);
        assert_abs_diff_eq!(y.data()[3], expect, epsilon = 1e-15);
        // running stats moved by 10% toward the batch
        assert_abs_diff_eq!(stats.mean.data()[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.var.data()[1], 1.0, epsilon = 1e-12);

        let mut fresh = RunningStats::new(2);
        let gamma = t(&[2], &[2., 3.]);
        let beta = t(&[2], &[0.5, -1.]);
        let e = batchnorm(&x, &mut fresh, NormMode::Eval, &gamma, &beta).unwrap();
        let s = 1.0 / (1.0 + BATCHNORM_EPS).sqrt();
        assert_abs_diff_eq!(e.data()[0], 2. * 4. * s + 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(e.data()[3], 3. * 2. * s - 1., epsilon = 1e-12);

        let single = t(&[1, 2], &[1., 2.]);
        assert!(matches!(
            batchnorm(&single, &mut fresh, NormMode::Train, &ones, &zeros),
            Err(Error::BatchSize { .. })
        ));
    }
}
