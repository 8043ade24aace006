//! Parameter vectors, labeled datasets and the squared-error empirical loss.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::scalar::{dot, Scalar};

/// A flat parameter set. Dimension is fixed at construction and every entry
/// is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParameterVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MarketError::NonFinite("parameter vector"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> T) -> Result<Self> {
        Self::new((0..dim).map(f).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_dim(other, "dot product")?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm_sq(&self) -> T {
        dot(&self.values, &self.values)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other, "vector difference")?;
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
        )
    }

    /// `self + scale · direction`.
    pub fn add_scaled(&self, scale: T, direction: &Self) -> Result<Self> {
        self.check_dim(direction, "scaled addition")?;
        Self::new(
            self.values
                .iter()
                .zip(&direction.values)
                .map(|(&a, &d)| a + scale * d)
                .collect(),
        )
    }

    pub fn scale(&self, factor: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| v * factor).collect())
    }

    /// `‖self − other‖²`
    pub fn distance_sq(&self, other: &Self) -> Result<T> {
        self.check_dim(other, "distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum())
    }

    pub(crate) fn check_dim(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(MarketError::DimensionMismatch {
                context,
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// Row-major `n × d` inputs with one real label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    inputs: Vec<T>,
    labels: Vec<T>,
    dim: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(inputs: Vec<T>, labels: Vec<T>, dim: usize) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(MarketError::domain("dataset needs at least one row"));
        }
        if dim == 0 {
            return Err(MarketError::domain("dataset input dimension must be positive"));
        }
        if inputs.len() != n * dim {
            return Err(MarketError::DimensionMismatch {
                context: "dataset inputs",
                expected: n * dim,
                found: inputs.len(),
            });
        }
        if inputs.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(MarketError::NonFinite("dataset"));
        }
        Ok(Self {
            inputs,
            labels,
            dim,
        })
    }

    /// Builds a dataset from explicit rows; convenient for small fixtures.
    pub fn from_rows(rows: &[Vec<T>], labels: Vec<T>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(MarketError::domain("ragged input rows"));
        }
        Self::new(rows.concat(), labels, dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs(&self) -> &[T] {
        &self.inputs
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub(crate) fn check_params(&self, params: &ParameterVector<T>) -> Result<()> {
        if params.dim() != self.dim {
            return Err(MarketError::DimensionMismatch {
                context: "parameters vs dataset inputs",
                expected: self.dim,
                found: params.dim(),
            });
        }
        Ok(())
    }

    /// `Xv` without dimension checks.
    pub(crate) fn mul(&self, v: &[T]) -> Vec<T> {
        (0..self.len()).map(|i| dot(self.row(i), v)).collect()
    }

    /// `Xθ − Y`
    pub fn residual(&self, params: &ParameterVector<T>) -> Result<Vec<T>> {
        self.check_params(params)?;
        Ok((0..self.len())
            .map(|i| dot(self.row(i), params.as_slice()) - self.labels[i])
            .collect())
    }

    /// `Xᵀ w` for a length-n vector.
    pub(crate) fn transpose_mul(&self, w: &[T]) -> Vec<T> {
        debug_assert_eq!(w.len(), self.len());
        let mut out = vec![T::zero(); self.dim];
        for (i, &wi) in w.iter().enumerate() {
            if wi == T::zero() {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += wi * x;
            }
        }
        out
    }

    /// Keeps the rows whose index satisfies `keep`, in order.
    pub fn select_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if keep(i) {
                inputs.extend_from_slice(self.row(i));
                labels.push(self.labels[i]);
            }
        }
        Self::new(inputs, labels, self.dim)
    }
}

/// Reduction applied to per-sample squared errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `‖Xθ − Y‖²`
    #[default]
    SumOfSquares,
    /// `‖Xθ − Y‖² / n`
    MeanPerSample,
}

impl LossSpec {
    /// Factor applied to the summed per-sample losses of `n` samples.
    pub fn reduction<T: Scalar>(self, n: usize) -> T {
        match self {
            LossSpec::SumOfSquares => T::one(),
            LossSpec::MeanPerSample => T::one() / T::from_count(n),
        }
    }
}

pub fn empirical_loss<T: Scalar>(
    params: &ParameterVector<T>,
    data: &LabeledDataset<T>,
    spec: LossSpec,
) -> Result<T> {
    let r = data.residual(params)?;
    let loss = dot(&r, &r) * spec.reduction::<T>(data.len());
    if !loss.is_finite() {
        return Err(MarketError::Divergence { round: None });
    }
    Ok(loss)
}

/// `∇ℒ̂(θ) = 2Xᵀ(Xθ − Y)`, scaled by `1/n` for the mean reduction.
pub fn loss_gradient<T: Scalar>(
    params: &ParameterVector<T>,
    data: &LabeledDataset<T>,
    spec: LossSpec,
) -> Result<Vec<T>> {
    let r = data.residual(params)?;
    let factor = T::lit(2.0) * spec.reduction::<T>(data.len());
    let mut g = data.transpose_mul(&r);
    g.iter_mut().for_each(|v| *v *= factor);
    Ok(g)
}

/// One descent update `θ − η g`. Shared by every model in the crate.
pub fn descend<T: Scalar>(
    params: &ParameterVector<T>,
    gradient: &[T],
    step_size: T,
) -> Result<ParameterVector<T>> {
    if !(step_size > T::zero()) || !step_size.is_finite() {
        return Err(MarketError::domain(format!(
            "step size must be positive and finite, got {step_size}"
        )));
    }
    if gradient.len() != params.dim() {
        return Err(MarketError::DimensionMismatch {
            context: "gradient vs parameters",
            expected: params.dim(),
            found: gradient.len(),
        });
    }
    let next: Vec<T> = params
        .as_slice()
        .iter()
        .zip(gradient)
        .map(|(&p, &g)| p - step_size * g)
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(MarketError::Divergence { round: None });
    }
    Ok(ParameterVector { values: next })
}

pub fn gradient_step<T: Scalar>(
    params: &ParameterVector<T>,
    data: &LabeledDataset<T>,
    step_size: T,
    spec: LossSpec,
) -> Result<ParameterVector<T>> {
    let g = loss_gradient(params, data, spec)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(MarketError::Divergence { round: None });
    }
    descend(params, &g, step_size)
}

/// `(1 − weight)·buyer + weight·seller` for `weight ∈ (0, 1]`.
pub fn merge<T: Scalar>(
    buyer: &ParameterVector<T>,
    seller: &ParameterVector<T>,
    weight: T,
) -> Result<ParameterVector<T>> {
    if !(weight > T::zero() && weight <= T::one()) {
        return Err(MarketError::domain(format!(
            "merge weight must lie in (0, 1], got {weight}"
        )));
    }
    buyer.check_dim(seller, "merge")?;
    let keep = T::one() - weight;
    ParameterVector::new(
        buyer
            .as_slice()
            .iter()
            .zip(seller.as_slice())
            .map(|(&b, &s)| keep * b + weight * s)
            .collect(),
    )
}
