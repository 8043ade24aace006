//! Synthetic linear-regression tasks and the linear-model analytics used by
//! the market: estimation error, spectral extremes of `XᵀX`, and the
//! loss-ratio interval implied by an error-ratio gain.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MarketError, Result};
use crate::linalg::{cholesky, cholesky_solve, power_iteration, sym_matvec};
use crate::params::{LabeledDataset, LossSpec, ParameterVector};
use crate::scalar::Scalar;

/// Convergence tolerance for the eigenvalue iterations.
pub const EIGEN_TOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 5_000;
/// `λ_min ≤ SINGULAR_TOL · λ_max` is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Labels generated as `Xθ* + ε`, `ε ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTask<T> {
    pub data: LabeledDataset<T>,
    pub true_params: ParameterVector<T>,
    pub noise_variance: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSummary<T> {
    pub lambda_max: T,
    pub lambda_min: T,
    /// `λ_max / λ_min`
    pub rho: T,
}

/// Draws a `dim`-vector of i.i.d. `N(0, scale²)` entries.
pub fn gaussian_params<T, R>(dim: usize, scale: T, rng: &mut R) -> ParameterVector<T>
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    let v = (0..dim)
        .map(|_| scale * StandardNormal.sample(&mut *rng))
        .collect();
    ParameterVector::new(v).expect("gaussian draws are finite")
}

/// Uniformly random unit vector.
pub fn random_direction<T, R>(dim: usize, rng: &mut R) -> ParameterVector<T>
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    loop {
        let g = gaussian_params(dim, T::one(), rng);
        let n = g.norm_sq().sqrt();
        if n > T::zero() {
            return g.scale(T::one() / n).expect("finite");
        }
    }
}

pub fn synthesize_task<T, R>(
    dim: usize,
    n: usize,
    noise_variance: T,
    theta_star: &ParameterVector<T>,
    rng: &mut R,
) -> Result<LinearTask<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    if dim == 0 || n == 0 {
        return Err(MarketError::domain("task needs dim ≥ 1 and n ≥ 1"));
    }
    if !(noise_variance >= T::zero()) || !noise_variance.is_finite() {
        return Err(MarketError::domain(format!(
            "noise variance must be finite and non-negative, got {noise_variance}"
        )));
    }
    if theta_star.dim() != dim {
        return Err(MarketError::DimensionMismatch {
            context: "true parameters vs task dimension",
            expected: dim,
            found: theta_star.dim(),
        });
    }
    let inputs: Vec<T> = (0..n * dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let sigma = noise_variance.sqrt();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let clean = crate::scalar::dot(&inputs[i * dim..(i + 1) * dim], theta_star.as_slice());
        let label = if noise_variance > T::zero() {
            let z: T = StandardNormal.sample(&mut *rng);
            clean + sigma * z
        } else {
            clean
        };
        labels.push(label);
    }
    Ok(LinearTask {
        data: LabeledDataset::new(inputs, labels, dim)?,
        true_params: theta_star.clone(),
        noise_variance,
    })
}

/// `‖θ − θ*‖²`
pub fn estimation_error<T: Scalar>(
    params: &ParameterVector<T>,
    theta_star: &ParameterVector<T>,
) -> Result<T> {
    params.distance_sq(theta_star)
}

/// Row-major `XᵀX`.
pub fn gram_matrix<T: Scalar>(data: &LabeledDataset<T>) -> Vec<T> {
    let d = data.dim();
    let mut g = vec![T::zero(); d * d];
    T::gram(data.inputs(), data.len(), d, &mut g);
    g
}

/// Largest eigenvalue of `XᵀX` by power iteration.
pub fn lambda_max<T: Scalar>(data: &LabeledDataset<T>) -> T {
    let (n, d) = (data.len(), data.dim());
    if n >= d {
        let g = gram_matrix(data);
        return power_iteration(d, |v| sym_matvec(&g, d, v), T::lit(EIGEN_TOL), EIGEN_MAX_ITER);
    }
    // XXᵀ shares the nonzero spectrum of XᵀX and is smaller here.
    let x = data.inputs();
    let mut xt = vec![T::zero(); n * d];
    for i in 0..n {
        for j in 0..d {
            xt[j * n + i] = x[i * d + j];
        }
    }
    let mut g = vec![T::zero(); n * n];
    T::gram(&xt, d, n, &mut g);
    power_iteration(n, |v| sym_matvec(&g, n, v), T::lit(EIGEN_TOL), EIGEN_MAX_ITER)
}

/// Lipschitz constant of the loss gradient: `2λ_max(XᵀX)`, divided by `n`
/// for the mean reduction.
pub fn smoothness<T: Scalar>(data: &LabeledDataset<T>, spec: LossSpec) -> T {
    T::lit(2.0) * lambda_max(data) * spec.reduction::<T>(data.len())
}

/// Eigen-extremes of `XᵀX`: power iteration for `λ_max`, inverse iteration
/// through a Cholesky factor for `λ_min`.
pub fn spectrum<T: Scalar>(data: &LabeledDataset<T>) -> Result<SpectrumSummary<T>> {
    let d = data.dim();
    let g = gram_matrix(data);
    let tol = T::lit(EIGEN_TOL);
    let lambda_max = power_iteration(d, |v| sym_matvec(&g, d, v), tol, EIGEN_MAX_ITER);
    let singular = |lambda_min: T| MarketError::Singular {
        lambda_min: lambda_min.to_f64_lossy(),
        lambda_max: lambda_max.to_f64_lossy(),
    };
    if !(lambda_max > T::zero()) {
        return Err(singular(T::zero()));
    }
    let l = cholesky(&g, d).ok_or_else(|| singular(T::zero()))?;
    let inv_max = power_iteration(d, |v| cholesky_solve(&l, d, v), tol, EIGEN_MAX_ITER);
    if !(inv_max > T::zero()) || !inv_max.is_finite() {
        return Err(singular(T::zero()));
    }
    // Both iterations converge from below/above at rounding level; keep ρ ≥ 1.
    let lambda_min = (T::one() / inv_max).min(lambda_max);
    if lambda_min <= T::lit(SINGULAR_TOL) * lambda_max {
        return Err(singular(lambda_min));
    }
    Ok(SpectrumSummary {
        lambda_max,
        lambda_min,
        rho: lambda_max / lambda_min,
    })
}

/// Interval `[L/(ρΔ), ρL/Δ]` containing the post-merge loss of a noiseless
/// linear task whose pre-merge loss is `L` and error-ratio gain is `Δ`.
pub fn loss_ratio_bounds<T: Scalar>(gain: T, rho: T, loss_before: T) -> Result<(T, T)> {
    if !(gain > T::zero()) || !gain.is_finite() {
        return Err(MarketError::domain(format!("gain must be positive, got {gain}")));
    }
    if !(rho >= T::one()) || !rho.is_finite() {
        return Err(MarketError::domain(format!("condition number must be ≥ 1, got {rho}")));
    }
    if !(loss_before >= T::zero()) {
        return Err(MarketError::domain("loss must be non-negative"));
    }
    Ok((loss_before / (rho * gain), rho * loss_before / gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{empirical_loss, merge};
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParameterVector<f64> {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn noiseless_task_has_zero_loss_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = gaussian_params(7, 1.0, &mut rng);
        let task = synthesize_task(7, 12, 0.0, &theta, &mut rng).unwrap();
        assert_eq!(
            empirical_loss(&theta, &task.data, LossSpec::SumOfSquares).unwrap(),
            0.0
        );
    }

    #[test]
    fn synthesis_is_deterministic() {
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let theta = gaussian_params(5, 1.0, &mut rng);
            synthesize_task(5, 9, 0.5, &theta, &mut rng).unwrap()
        };
        let (a, b) = (make(), make());
        let bits = |t: &LinearTask<f64>| {
            t.data
                .inputs()
                .iter()
                .chain(t.data.labels())
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn desk_shape_of_agent_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = gaussian_params(1000, 1.0, &mut rng);
        let task = synthesize_task(1000, 500, 0.5, &theta, &mut rng).unwrap();
        assert_eq!(task.data.len(), 500);
        assert_eq!(task.data.dim(), 1000);
        assert_eq!(task.noise_variance, 0.5);
    }

    #[test]
    fn synthesis_validates_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = pv(&[1.0, 2.0]);
        assert!(synthesize_task(2, 0, 0.0, &theta, &mut rng).is_err());
        assert!(synthesize_task(3, 4, 0.0, &theta, &mut rng).is_err());
        assert!(synthesize_task(2, 4, -1.0, &theta, &mut rng).is_err());
    }

    #[test]
    fn estimation_error_examples() {
        assert_eq!(estimation_error(&pv(&[3.0]), &pv(&[1.0])).unwrap(), 4.0);
        let t = pv(&[0.5, -1.0]);
        assert_eq!(estimation_error(&t, &t).unwrap(), 0.0);
        let theta = pv(&[2.0, 3.0]);
        let doubled = pv(&[2.0 * 2.0 - 0.5, 2.0 * 3.0 + 1.0]);
        let e1 = estimation_error(&theta, &t).unwrap();
        let e2 = estimation_error(&doubled, &t).unwrap();
        assert!((e2 - 4.0 * e1).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_columns_have_unit_condition() {
        let data = LabeledDataset::<f64>::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![0.0; 3],
        )
        .unwrap();
        let s = spectrum(&data).unwrap();
        assert!((s.rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_gram_condition() {
        // XᵀX = diag(4, 1)
        let data = LabeledDataset::<f64>::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2])
            .unwrap();
        let s = spectrum(&data).unwrap();
        assert!((s.lambda_max - 4.0).abs() < 1e-10);
        assert!((s.lambda_min - 1.0).abs() < 1e-10);
        assert!((s.rho - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let data = LabeledDataset::<f64>::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]], vec![0.0; 2])
            .unwrap();
        assert!(matches!(spectrum(&data), Err(MarketError::Singular { .. })));
        // fewer rows than columns
        let wide = LabeledDataset::<f64>::from_rows(&[vec![1.0, 0.5, 0.2]], vec![0.0]).unwrap();
        assert!(matches!(spectrum(&wide), Err(MarketError::Singular { .. })));
    }

    #[test]
    fn spectrum_matches_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..30 {
            let d = 2 + trial % 19;
            let n = d + 5 + 3 * trial;
            let theta = gaussian_params(d, 1.0, &mut rng);
            let task = synthesize_task(d, n, 0.0, &theta, &mut rng).unwrap();
            let s: SpectrumSummary<f64> = spectrum(&task.data).unwrap();

            let x = DMatrix::from_row_slice(n, d, task.data.inputs());
            let eig = SymmetricEigen::new(x.transpose() * &x);
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            assert!((s.lambda_max - max).abs() <= 1e-6 * max, "trial {trial}");
            assert!((s.lambda_min - min).abs() <= 1e-6 * min, "trial {trial}");
            assert!((s.rho - max / min).abs() <= 1e-6 * (max / min));
        }
    }

    #[test]
    fn loss_ratio_examples() {
        assert_eq!(loss_ratio_bounds(4.0, 1.0, 8.0).unwrap(), (2.0, 2.0));
        assert_eq!(loss_ratio_bounds(4.0, 2.0, 8.0).unwrap(), (1.0, 4.0));
        assert!(loss_ratio_bounds(0.0, 2.0, 8.0).is_err());
        assert!(loss_ratio_bounds(1.0, 0.5, 8.0).is_err());
    }

    #[test]
    fn post_merge_loss_inside_ratio_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut violations = 0;
        for trial in 0..2_000 {
            let d = 1 + trial % 6;
            let n = d + 1 + trial % 5;
            let theta = gaussian_params(d, 1.0, &mut rng);
            let task = synthesize_task(d, n, 0.0, &theta, &mut rng).unwrap();
            let rho = spectrum(&task.data).unwrap().rho;
            let a = gaussian_params(d, 2.0, &mut rng);
            let b = gaussian_params(d, 2.0, &mut rng);
            let w = rng.gen_range(1e-3..=1.0);
            let merged = merge(&a, &b, w).unwrap();
            let gain = estimation_error(&a, &theta).unwrap()
                / estimation_error(&merged, &theta).unwrap();
            let before = empirical_loss(&a, &task.data, LossSpec::SumOfSquares).unwrap();
            let after = empirical_loss(&merged, &task.data, LossSpec::SumOfSquares).unwrap();
            let (lo, hi) = loss_ratio_bounds(gain, rho, before).unwrap();
            if after < lo * (1.0 - 1e-9) || after > hi * (1.0 + 1e-9) {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }
}
