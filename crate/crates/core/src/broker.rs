//! The broker: try-before-purchase merge-weight optimization on held-out
//! data, the two gain-from-trade notions, and the fixed FedAvg weight.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::linalg::{cholesky, cholesky_solve, sym_matvec};
use crate::linear_task::{estimation_error, gram_matrix};
use crate::params::{empirical_loss, merge, LabeledDataset, LossSpec, ParameterVector};
use crate::scalar::{dot, Scalar};

/// Stand-in for the open endpoint of `(0, 1]`.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Weight tolerance of the golden-section search.
pub const GOLDEN_TOL: f64 = 1e-6;
/// Estimation errors at or below this count as an exact recovery.
pub const PERFECT_MERGE_TOL: f64 = 1e-15;

/// A loss the broker can evaluate on candidate parameters.
pub trait Objective<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn loss(&self, params: &ParameterVector<T>) -> Result<T>;

    /// Exact minimizer over ℝ of `ν ↦ loss((1 − ν)·from + ν·to)` when the
    /// loss is quadratic along lines; `None` otherwise or when flat.
    fn line_minimizer(
        &self,
        _from: &ParameterVector<T>,
        _to: &ParameterVector<T>,
    ) -> Result<Option<T>> {
        Ok(None)
    }
}

/// Squared-error loss evaluated directly on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetObjective<'a, T> {
    pub data: &'a LabeledDataset<T>,
    pub spec: LossSpec,
}

impl<'a, T: Scalar> DatasetObjective<'a, T> {
    pub fn new(data: &'a LabeledDataset<T>, spec: LossSpec) -> Self {
        Self { data, spec }
    }
}

impl<T: Scalar> Objective<T> for DatasetObjective<'_, T> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn loss(&self, params: &ParameterVector<T>) -> Result<T> {
        empirical_loss(params, self.data, self.spec)
    }

    fn line_minimizer(
        &self,
        from: &ParameterVector<T>,
        to: &ParameterVector<T>,
    ) -> Result<Option<T>> {
        let delta = to.sub(from)?;
        let r = self.data.residual(from)?;
        let s = self.data.mul(delta.as_slice());
        let curvature = dot(&s, &s);
        if !(curvature > T::zero()) {
            return Ok(None);
        }
        Ok(Some(-dot(&r, &s) / curvature))
    }
}

/// Squared-error loss through cached sufficient statistics:
/// `ℒ̂(θ) = (θ − θ̂)ᵀ XᵀX (θ − θ̂) + ℒ̂(θ̂)` with `θ̂` the least-squares fit.
///
/// Each evaluation costs `O(d²)` instead of `O(nd)`; construction needs
/// `XᵀX` positive definite.
#[derive(Debug, Clone)]
pub struct GramObjective<T> {
    gram: Vec<T>,
    minimizer: Vec<T>,
    min_loss: T,
    n: usize,
    spec: LossSpec,
}

impl<T: Scalar> GramObjective<T> {
    pub fn new(data: &LabeledDataset<T>, spec: LossSpec) -> Result<Self> {
        let (gram, chol) = Self::factorize(data)?;
        Self::from_factor(gram, &chol, data, spec)
    }

    /// `XᵀX` and its Cholesky factor.
    pub(crate) fn factorize(data: &LabeledDataset<T>) -> Result<(Vec<T>, Vec<T>)> {
        let gram = gram_matrix(data);
        let chol = cholesky(&gram, data.dim()).ok_or(MarketError::Singular {
            lambda_min: 0.0,
            lambda_max: f64::NAN,
        })?;
        Ok((gram, chol))
    }

    /// Builds the objective from a factorization of `data`'s own inputs.
    pub(crate) fn from_factor(
        gram: Vec<T>,
        chol: &[T],
        data: &LabeledDataset<T>,
        spec: LossSpec,
    ) -> Result<Self> {
        let d = data.dim();
        let xty = data.transpose_mul(data.labels());
        let minimizer = cholesky_solve(chol, d, &xty);
        let fit = ParameterVector::new(minimizer.clone())
            .map_err(|_| MarketError::NonFinite("least-squares fit"))?;
        let min_loss = empirical_loss(&fit, data, LossSpec::SumOfSquares)?;
        Ok(Self {
            gram,
            minimizer,
            min_loss,
            n: data.len(),
            spec,
        })
    }

    /// Smallest attainable loss.
    pub fn min_loss(&self) -> T {
        self.min_loss * self.spec.reduction::<T>(self.n)
    }

    fn quad(&self, e: &[T]) -> T {
        let ge = sym_matvec(&self.gram, self.minimizer.len(), e);
        dot(e, &ge).max(T::zero())
    }
}

impl<T: Scalar> Objective<T> for GramObjective<T> {
    fn dim(&self) -> usize {
        self.minimizer.len()
    }

    fn loss(&self, params: &ParameterVector<T>) -> Result<T> {
        if params.dim() != self.dim() {
            return Err(MarketError::DimensionMismatch {
                context: "parameters vs broker objective",
                expected: self.dim(),
                found: params.dim(),
            });
        }
        let e: Vec<T> = params
            .as_slice()
            .iter()
            .zip(&self.minimizer)
            .map(|(&p, &m)| p - m)
            .collect();
        let loss = (self.quad(&e) + self.min_loss) * self.spec.reduction::<T>(self.n);
        if !loss.is_finite() {
            return Err(MarketError::Divergence { round: None });
        }
        Ok(loss)
    }

    fn line_minimizer(
        &self,
        from: &ParameterVector<T>,
        to: &ParameterVector<T>,
    ) -> Result<Option<T>> {
        let delta = to.sub(from)?;
        let d = self.dim();
        let gd = sym_matvec(&self.gram, d, delta.as_slice());
        let curvature = dot(delta.as_slice(), &gd);
        if !(curvature > T::zero()) {
            return Ok(None);
        }
        let e: Vec<T> = from
            .as_slice()
            .iter()
            .zip(&self.minimizer)
            .map(|(&p, &m)| p - m)
            .collect();
        Ok(Some(-dot(&e, &gd) / curvature))
    }
}

/// Wraps an arbitrary loss closure (no closed-form line search).
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> Objective<T> for FnObjective<F>
where
    T: Scalar,
    F: Fn(&ParameterVector<T>) -> Result<T> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, params: &ParameterVector<T>) -> Result<T> {
        (self.f)(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeProposal<T> {
    /// Seller's share in the merged parameters (α or β).
    pub weight: T,
    pub merged: ParameterVector<T>,
    pub broker_loss_before: T,
    pub broker_loss_after: T,
}

/// Minimizes the broker loss along `(1 − ν)·buyer + ν·seller` over
/// `ν ∈ [WEIGHT_FLOOR, 1]`.
///
/// The search set is the clamped closed-form minimizer (or a golden-section
/// optimum when the objective offers none) together with the anchors
/// `{floor, 0.5, 1}` and any caller-supplied `extra_weights`. The returned
/// proposal has the lowest evaluated loss in that set; ties go to the
/// smaller weight.
pub fn propose_merge<T: Scalar>(
    buyer: &ParameterVector<T>,
    seller: &ParameterVector<T>,
    objective: &dyn Objective<T>,
    extra_weights: &[T],
) -> Result<MergeProposal<T>> {
    buyer.check_dim(seller, "merge proposal")?;
    if buyer.dim() != objective.dim() {
        return Err(MarketError::DimensionMismatch {
            context: "parameters vs broker objective",
            expected: objective.dim(),
            found: buyer.dim(),
        });
    }
    let floor = T::lit(WEIGHT_FLOOR);
    let before = objective.loss(buyer)?;
    if buyer == seller {
        return Ok(MergeProposal {
            weight: floor,
            merged: buyer.clone(),
            broker_loss_before: before,
            broker_loss_after: before,
        });
    }

    let loss_at = |w: T| -> Result<T> { objective.loss(&merge(buyer, seller, w)?) };
    let optimum = match objective.line_minimizer(buyer, seller)? {
        Some(nu) if nu.is_finite() => nu.max(floor).min(T::one()),
        _ => golden_section(floor, T::one(), T::lit(GOLDEN_TOL), &loss_at)?,
    };

    let mut weights: Vec<T> = vec![floor, T::lit(0.5), T::one(), optimum];
    weights.extend(
        extra_weights
            .iter()
            .copied()
            .filter(|w| *w >= floor && *w <= T::one()),
    );
    weights.sort_by(|a, b| a.partial_cmp(b).expect("weights are finite"));
    weights.dedup();

    let mut best: Option<(T, T)> = None;
    for w in weights {
        let l = loss_at(w)?;
        if best.map_or(true, |(_, bl)| l < bl) {
            best = Some((w, l));
        }
    }
    let (weight, after) = best.expect("search set is non-empty");
    Ok(MergeProposal {
        weight,
        merged: merge(buyer, seller, weight)?,
        broker_loss_before: before,
        broker_loss_after: after,
    })
}

pub fn optimize_merge_weight<T: Scalar>(
    buyer_dot: &ParameterVector<T>,
    seller_dot: &ParameterVector<T>,
    broker_data: &LabeledDataset<T>,
    spec: LossSpec,
) -> Result<MergeProposal<T>> {
    propose_merge(
        buyer_dot,
        seller_dot,
        &DatasetObjective::new(broker_data, spec),
        &[],
    )
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`;
/// returns the best point evaluated.
pub fn golden_section<T: Scalar>(
    lo: T,
    hi: T,
    tol: T,
    f: impl Fn(T) -> Result<T>,
) -> Result<T> {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { c } else { d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    /// `ℒ̂_z(θ̇) − ℒ̂_z(θ̄)`, beneficial when positive.
    LossDifference,
    /// `‖θ̇ − θ*‖² / ‖θ̄ − θ*‖²`, beneficial when above one.
    ErrorRatio,
}

impl GainKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GainKind::LossDifference => "loss_difference",
            GainKind::ErrorRatio => "error_ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainReport<T> {
    pub kind: GainKind,
    pub value: T,
    pub trade_beneficial: bool,
}

impl<T: Scalar> GainReport<T> {
    pub fn loss_difference(loss_before: T, loss_after: T) -> Self {
        let value = loss_before - loss_after;
        Self {
            kind: GainKind::LossDifference,
            value,
            trade_beneficial: value > T::zero(),
        }
    }

    pub fn error_ratio(error_before: T, error_after: T) -> Result<Self> {
        if error_after <= T::lit(PERFECT_MERGE_TOL) {
            return Err(MarketError::PerfectMerge);
        }
        let value = error_before / error_after;
        Ok(Self {
            kind: GainKind::ErrorRatio,
            value,
            trade_beneficial: value > T::one(),
        })
    }

    /// Gain of a merge that lands exactly on the true parameters.
    pub fn unbounded_ratio() -> Self {
        Self {
            kind: GainKind::ErrorRatio,
            value: T::infinity(),
            trade_beneficial: true,
        }
    }
}

pub fn gain_loss_difference<T: Scalar>(
    dot: &ParameterVector<T>,
    merged: &ParameterVector<T>,
    broker_data: &LabeledDataset<T>,
    spec: LossSpec,
) -> Result<GainReport<T>> {
    Ok(GainReport::loss_difference(
        empirical_loss(dot, broker_data, spec)?,
        empirical_loss(merged, broker_data, spec)?,
    ))
}

pub fn gain_error_ratio<T: Scalar>(
    dot: &ParameterVector<T>,
    merged: &ParameterVector<T>,
    theta_star: &ParameterVector<T>,
) -> Result<GainReport<T>> {
    GainReport::error_ratio(
        estimation_error(dot, theta_star)?,
        estimation_error(merged, theta_star)?,
    )
}

/// Seller's share of the pooled data, `n_seller / (n_buyer + n_seller)`.
pub fn fedavg_weight<T: Scalar>(n_buyer: usize, n_seller: usize) -> Result<T> {
    if n_buyer == 0 || n_seller == 0 {
        return Err(MarketError::domain("data counts must be positive"));
    }
    Ok(T::from_count(n_seller) / T::from_count(n_buyer + n_seller))
}
