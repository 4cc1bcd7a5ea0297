//! Dense f64 tensors and the small set of pure numeric helpers the rest of
//! the crate builds on.
//!
//! Tensors are rank 0..=2 in practice (scalars, vectors, batch matrices) but
//! the type itself is rank-agnostic: a shape plus a row-major value buffer.
//! Values are finite by construction; operations that could produce non-finite
//! results (none in normal use) would be caught by the finiteness check at
//! construction time in tests.
//!
//! The differentiable operation set lives in [`crate::graph`]; this module
//! only holds the value type, shape bookkeeping, stable softmax / log-sum-exp
//! helpers and the central-difference gradient oracle used to cross-check
//! reverse-mode gradients.

use crate::error::{invalid, Error, Result};

/// A dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly and is
    /// finite throughout.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(invalid!(
                "shape {:?} wants {} values, got {}",
                shape,
                expect,
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(invalid!("non-finite value {bad} in tensor data"));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for values produced by already-checked math.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Builds an `[rows, cols]` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when the tensor holds exactly one value (shape [], [1], [1,1]...).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(invalid!("item() on tensor of shape {:?}", self.shape))
        }
    }

    /// Number of rows when interpreted as a batch: rank-2 tensors report
    /// their leading extent, vectors report 1.
    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [r, _] => *r,
            _ => 1,
        }
    }

    /// Row `i` of a rank-2 tensor (or the whole buffer of a vector).
    pub fn row(&self, i: usize) -> &[f64] {
        match self.shape.as_slice() {
            [r, c] => {
                assert!(i < *r, "row {i} out of range for {r} rows");
                &self.data[i * c..(i + 1) * c]
            }
            _ => {
                assert_eq!(i, 0, "row index on non-matrix tensor");
                &self.data
            }
        }
    }

    /// Checks that both tensors have identical shapes.
    pub fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute difference to `other`, per-row.
    pub fn linf_rows(&self, other: &Tensor) -> Result<Vec<f64>> {
        self.same_shape(other, "linf_rows")?;
        let rows = self.rows();
        let cols = self.len() / rows.max(1);
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            for j in 0..cols {
                let d = (self.data[i * cols + j] - other.data[i * cols + j]).abs();
                if d > out[i] {
                    out[i] = d;
                }
            }
        }
        Ok(out)
    }
}

/// sign(v) with the subgradient convention sign(0) = 0.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Max-shifted log(sum(exp(row))).
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Max-shifted softmax of a logit row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax probabilities of a logit vector.
///
/// Rejects vectors with fewer than two classes. Numerically stable for
/// arbitrarily large logits thanks to the max shift.
pub fn softmax_probabilities(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(invalid!(
            "softmax_probabilities wants a vector, got shape {:?}",
            logits.shape()
        ));
    }
    if logits.len() < 2 {
        return Err(invalid!(
            "softmax over {} class(es); at least 2 required",
            logits.len()
        ));
    }
    Ok(Tensor::vector(softmax_row(logits.data())))
}

/// Row-wise softmax of a `[batch, classes]` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(invalid!(
            "softmax_rows wants a matrix, got shape {:?}",
            logits.shape()
        ));
    }
    let cols = logits.shape()[1];
    if cols < 2 {
        return Err(invalid!("softmax over {cols} class(es); at least 2 required"));
    }
    let mut data = Vec::with_capacity(logits.len());
    for i in 0..logits.rows() {
        data.extend(softmax_row(logits.row(i)));
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), data))
}

/// Negative log-likelihood of `label` under softmax of the logit row.
pub fn cross_entropy_value(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(invalid!(
            "cross-entropy over {} class(es); at least 2 required",
            logits.len()
        ));
    }
    if label >= logits.len() {
        return Err(invalid!(
            "label {label} out of range for {} classes",
            logits.len()
        ));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// The margin objective max over k != label of z_k - z_label on a logit row.
///
/// Ties in the max resolve to the smallest index.
pub fn cw_margin_value(logits: &[f64], label: usize) -> Result<(f64, usize)> {
    if logits.len() < 2 {
        return Err(invalid!(
            "margin objective over {} class(es); at least 2 required",
            logits.len()
        ));
    }
    if label >= logits.len() {
        return Err(invalid!(
            "label {label} out of range for {} classes",
            logits.len()
        ));
    }
    let mut best = None::<(usize, f64)>;
    for (k, &z) in logits.iter().enumerate() {
        if k == label {
            continue;
        }
        match best {
            Some((_, bz)) if bz >= z => {}
            _ => best = Some((k, z)),
        }
    }
    let (k, z) = best.expect("at least one non-label class");
    Ok((z - logits[label], k))
}

/// Central-difference gradient of `f` at `x`.
///
/// Completely independent of the reverse-mode tape: it only evaluates `f`.
/// Used as the oracle when validating analytic gradients. `h` is the probe
/// half-width; 1e-5 balances truncation against cancellation for values of
/// order one.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(invalid!("finite-difference step must be positive, got {h}"));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_rejects_wrong_length() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "got {err:?}");
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn scalar_has_single_item() {
        let t = Tensor::scalar(4.5);
        assert!(t.is_scalar());
        assert_eq!(t.item().unwrap(), 4.5);
        assert!(Tensor::vector(vec![1.0, 2.0]).item().is_err());
    }

    #[test]
    fn softmax_of_ln2_zero_is_two_thirds_one_third() {
        let logits = Tensor::vector(vec![std::f64::consts::LN_2, 0.0]);
        let p = softmax_probabilities(&logits).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-12, "p0 = {}", p.data()[0]);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-12, "p1 = {}", p.data()[1]);
    }

    #[test]
    fn softmax_handles_huge_logits_without_overflow() {
        let p = softmax_probabilities(&Tensor::vector(vec![1000.0, 0.0])).unwrap();
        assert!(p.data()[0] > 1.0 - 1e-12);
        assert!(p.data()[1] < 1e-12);
        assert!(p.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_single_class() {
        assert!(softmax_probabilities(&Tensor::vector(vec![0.3])).is_err());
    }

    #[test]
    fn cross_entropy_matches_hand_values() {
        // Two equal logits: -log(1/2) = ln 2.
        let ce = cross_entropy_value(&[0.0, 0.0], 0).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12, "ce = {ce}");

        // Strongly correct prediction: ln(1 + e^-10), tiny but positive.
        let ce = cross_entropy_value(&[10.0, 0.0], 0).unwrap();
        let direct = (1.0 + (-10.0f64).exp()).ln();
        assert!((ce - direct).abs() < 1e-12, "ce = {ce}, direct = {direct}");
        assert!((ce - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        for &t in &[0.0, -3.5, 7.25] {
            let ce = cross_entropy_value(&[t, t, t], 2).unwrap();
            assert!((ce - 3.0f64.ln()).abs() < 1e-12, "t={t} gave {ce}");
        }
        // At t = 0 the max-shift subtracts nothing and the value is exact.
        assert_eq!(cross_entropy_value(&[0.0, 0.0, 0.0], 0).unwrap(), 3.0f64.ln());
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(cross_entropy_value(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn cw_margin_picks_best_other_class() {
        let (m, k) = cw_margin_value(&[2.0, 0.5, 1.5], 0).unwrap();
        assert_eq!(k, 2);
        assert!((m - (1.5 - 2.0)).abs() < 1e-15);
        // Ties resolve to the smallest index.
        let (_, k) = cw_margin_value(&[0.0, 1.0, 1.0], 0).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(3.0), 1.0);
        assert_eq!(sign(-0.25), -1.0);
    }

    #[test]
    fn finite_difference_on_sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut f = |t: &Tensor| Ok(t.data().iter().map(|v| v * v).sum());
        let g = finite_difference_gradient(&mut f, &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8, "g0 = {}", g.data()[0]);
        assert!((g.data()[1] - 4.0).abs() < 1e-8, "g1 = {}", g.data()[1]);
    }

    #[test]
    fn finite_difference_rejects_bad_step() {
        let x = Tensor::scalar(1.0);
        let mut f = |t: &Tensor| t.item();
        assert!(finite_difference_gradient(&mut f, &x, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 2..8)) {
            let p = softmax_probabilities(&Tensor::vector(logits)).unwrap();
            let sum: f64 = p.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "sum = {sum}");
            prop_assert!(p.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn cross_entropy_is_nonnegative(
            logits in proptest::collection::vec(-30.0f64..30.0, 2..6),
            label_pick in 0usize..6,
        ) {
            let label = label_pick % logits.len();
            let ce = cross_entropy_value(&logits, label).unwrap();
            prop_assert!(ce >= -1e-12, "ce = {ce}");
        }

        #[test]
        fn log_sum_exp_dominates_max(row in proptest::collection::vec(-40.0f64..40.0, 1..6)) {
            let lse = log_sum_exp(&row);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max - 1e-12);
            prop_assert!(lse <= max + (row.len() as f64).ln() + 1e-12);
        }
    }
}
