//! Interval bounds a seller can compute on the counterparty's error ratios
//! from the broker's disclosures `(Δ_a, α, β)` alone.
//!
//! With `e(θ) = ‖θ − θ*‖²`, the scenarios bound
//!
//! | scenario          | ratio                      |
//! |-------------------|----------------------------|
//! | `NoBuyNoSell`     | `e(θ̇_b) / e(θ̇_a)`          |
//! | `BuyNoSell`       | `e(θ̇_b) / e(θ̄_a)`          |
//! | `NoBuySell`       | `e(θ̄_b) / e(θ̇_a)`          |
//! | `BuySell`         | `e(θ̄_b) / e(θ̄_a)`          |
//! | `BuyerGain`       | `Δ_b = e(θ̇_b) / e(θ̄_b)`    |

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{MarketError, Result};
use crate::linear_task::estimation_error;
use crate::params::{merge, ParameterVector};
use crate::scalar::Scalar;

/// Upper-bound denominators at or below this are treated as vanishing.
pub const DENOMINATOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    BuyerGain,
    NoBuyNoSell,
    BuyNoSell,
    NoBuySell,
    BuySell,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::BuyerGain,
        Scenario::NoBuyNoSell,
        Scenario::BuyNoSell,
        Scenario::NoBuySell,
        Scenario::BuySell,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::BuyerGain => "buyer_gain",
            Scenario::NoBuyNoSell => "no_buy_no_sell",
            Scenario::BuyNoSell => "buy_no_sell",
            Scenario::NoBuySell => "no_buy_sell",
            Scenario::BuySell => "buy_sell",
        }
    }

    fn needs_beta(self) -> bool {
        !matches!(self, Scenario::NoBuyNoSell | Scenario::BuyNoSell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds<T> {
    pub lower: T,
    /// `+∞` when the bound degenerates.
    pub upper: T,
    pub scenario: Scenario,
    /// The expression under the square of the lower bound was negative and
    /// has been clamped to zero.
    pub lower_clamped: bool,
}

impl<T: Scalar> GainBounds<T> {
    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }

    /// Whether `value` lies in the interval up to a relative slack.
    pub fn contains(&self, value: T, rel_slack: T) -> bool {
        value >= self.lower * (T::one() - rel_slack)
            && (!self.upper.is_finite() || value <= self.upper * (T::one() + rel_slack))
    }

    fn scaled(self, factor: T, scenario: Scenario) -> Self {
        Self {
            lower: self.lower * factor,
            upper: self.upper * factor,
            scenario,
            ..self
        }
    }
}

fn check_inputs<T: Scalar>(gain_a: T, alpha: T, beta: Option<T>) -> Result<()> {
    if !(gain_a > T::zero()) || !gain_a.is_finite() {
        return Err(MarketError::domain(format!("gain must be positive, got {gain_a}")));
    }
    let unit = |w: T| w > T::zero() && w <= T::one();
    if !unit(alpha) {
        return Err(MarketError::domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if let Some(b) = beta {
        if !unit(b) {
            return Err(MarketError::domain(format!("beta must lie in (0, 1], got {b}")));
        }
    }
    Ok(())
}

/// `1/(α√Δ) ∓ (1 − α)/α`: the range of `‖θ̇_b − θ*‖ / ‖θ̇_a − θ*‖`.
fn norm_ratio_range<T: Scalar>(gain_a: T, alpha: T) -> (T, T) {
    let a = T::one() / (alpha * gain_a.sqrt());
    let b = (T::one() - alpha) / alpha;
    (a - b, a + b)
}

/// Bounds on `Δ_b` from `Δ_a`, `α` and `β`.
pub fn buyer_gain_bounds<T: Scalar>(gain_a: T, alpha: T, beta: T) -> Result<GainBounds<T>> {
    check_inputs(gain_a, alpha, Some(beta))?;
    let one = T::one();
    let s = gain_a.sqrt();
    let c = one - alpha - beta + T::lit(2.0) * alpha * beta;
    let num_lo = one - s * (one - alpha);
    let lower_clamped = num_lo < T::zero();
    let lower = (num_lo.max(T::zero()) / ((one - beta) + s * c)).powi(2);

    let num_hi = one + s * (one - alpha);
    let den_hi = (one - beta) - s * c;
    // With β = 1 the buyer's merge is the seller's parameters, the norm
    // lower bound holds with its sign reversed, and the square stays exact.
    let upper = if beta == one || den_hi > T::lit(DENOMINATOR_TOL) {
        (num_hi / den_hi).powi(2)
    } else {
        T::infinity()
    };
    Ok(GainBounds {
        lower,
        upper,
        scenario: Scenario::BuyerGain,
        lower_clamped,
    })
}

/// Bounds for one of the four scenario ratios, or `Δ_b` for
/// [`Scenario::BuyerGain`]. `beta` is required for the selling scenarios.
pub fn perf_ratio_bounds<T: Scalar>(
    scenario: Scenario,
    gain_a: T,
    alpha: T,
    beta: Option<T>,
) -> Result<GainBounds<T>> {
    if scenario.needs_beta() && beta.is_none() {
        return Err(MarketError::domain(format!(
            "scenario {} requires beta",
            scenario.as_str()
        )));
    }
    check_inputs(gain_a, alpha, beta)?;
    let (x_lo, x_hi) = norm_ratio_range(gain_a, alpha);
    match scenario {
        Scenario::BuyerGain => buyer_gain_bounds(gain_a, alpha, beta.expect("checked")),
        Scenario::NoBuyNoSell => Ok(GainBounds {
            lower: x_lo.max(T::zero()).powi(2),
            upper: x_hi.powi(2),
            scenario,
            lower_clamped: x_lo < T::zero(),
        }),
        Scenario::NoBuySell => {
            let b = beta.expect("checked");
            let lo = (T::one() - b) * x_lo - b;
            Ok(GainBounds {
                lower: lo.max(T::zero()).powi(2),
                upper: ((T::one() - b) * x_hi + b).powi(2),
                scenario,
                lower_clamped: lo < T::zero(),
            })
        }
        Scenario::BuyNoSell => Ok(perf_ratio_bounds(Scenario::NoBuyNoSell, gain_a, alpha, beta)?
            .scaled(gain_a, scenario)),
        Scenario::BuySell => Ok(perf_ratio_bounds(Scenario::NoBuySell, gain_a, alpha, beta)?
            .scaled(gain_a, scenario)),
    }
}

/// The realized ratios of one constructed instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizedRatios<T> {
    pub gain_a: T,
    pub values: [(Scenario, T); 5],
}

/// Computes `Δ_a` and every scenario ratio from actual parameter vectors.
/// Returns `None` when a denominator vanishes (a merge hits `θ*` exactly).
pub fn realized_ratios<T: Scalar>(
    theta_a: &ParameterVector<T>,
    theta_b: &ParameterVector<T>,
    theta_star: &ParameterVector<T>,
    alpha: T,
    beta: T,
) -> Result<Option<RealizedRatios<T>>> {
    let bar_a = merge(theta_a, theta_b, alpha)?;
    let bar_b = merge(theta_b, theta_a, beta)?;
    let e_a = estimation_error(theta_a, theta_star)?;
    let e_b = estimation_error(theta_b, theta_star)?;
    let e_bar_a = estimation_error(&bar_a, theta_star)?;
    let e_bar_b = estimation_error(&bar_b, theta_star)?;
    if [e_a, e_bar_a, e_bar_b].iter().any(|e| !(*e > T::zero())) {
        return Ok(None);
    }
    Ok(Some(RealizedRatios {
        gain_a: e_a / e_bar_a,
        values: [
            (Scenario::BuyerGain, e_b / e_bar_b),
            (Scenario::NoBuyNoSell, e_b / e_a),
            (Scenario::BuyNoSell, e_b / e_bar_a),
            (Scenario::NoBuySell, e_bar_b / e_a),
            (Scenario::BuySell, e_bar_b / e_bar_a),
        ],
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub trial: usize,
    pub scenario: Scenario,
    pub gain_a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub realized: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub clamped_lower: usize,
    pub unbounded_upper: usize,
    pub violations: Vec<Violation>,
}

/// Draws random `(θ̇_a, θ̇_b, θ*, α, β)` instances and checks every scenario
/// interval against the realized ratio.
pub fn soundness_sweep(trials: usize, seed: u64, rel_slack: f64) -> Result<SoundnessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SoundnessReport {
        trials,
        checked: 0,
        skipped: 0,
        clamped_lower: 0,
        unbounded_upper: 0,
        violations: Vec::new(),
    };
    for trial in 0..trials {
        let (theta_a, theta_b, theta_star, alpha, beta) = random_instance(&mut rng);
        let Some(real) = realized_ratios(&theta_a, &theta_b, &theta_star, alpha, beta)? else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        for (scenario, value) in real.values {
            let b = perf_ratio_bounds(scenario, real.gain_a, alpha, Some(beta))?;
            report.clamped_lower += usize::from(b.lower_clamped);
            report.unbounded_upper += usize::from(!b.is_bounded());
            if !b.contains(value, rel_slack) {
                report.violations.push(Violation {
                    trial,
                    scenario,
                    gain_a: real.gain_a,
                    alpha,
                    beta,
                    realized: value,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
    }
    Ok(report)
}

type Instance = (
    ParameterVector<f64>,
    ParameterVector<f64>,
    ParameterVector<f64>,
    f64,
    f64,
);

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.gen_range(1..=6);
    let gauss = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let star = gauss(1.0, rng);
    // Log-uniform error scales give both lopsided and balanced pairs.
    let sa = 10f64.powf(rng.gen_range(-2.0..2.0));
    let sb = 10f64.powf(rng.gen_range(-2.0..2.0));
    let off_a = gauss(sa, rng);
    let off_b = gauss(sb, rng);
    let to_params = |off: &[f64]| {
        ParameterVector::new(star.iter().zip(off).map(|(s, o)| s + o).collect())
            .expect("finite draw")
    };
    let weight = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.1) {
            1.0
        } else {
            1.0 - rng.gen::<f64>()
        }
    };
    let alpha = weight(rng);
    let beta = weight(rng);
    let theta_a = to_params(&off_a);
    let theta_b = to_params(&off_b);
    (
        theta_a,
        theta_b,
        ParameterVector::new(star).expect("finite draw"),
        alpha,
        beta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_swap_collapses_to_reciprocal() {
        let b = buyer_gain_bounds(4.0, 1.0, 1.0).unwrap();
        assert_eq!(b.lower, 0.25);
        assert_eq!(b.upper, 0.25);
    }

    #[test]
    fn vanishing_denominator_is_unbounded() {
        let b = buyer_gain_bounds(1.0f64, 0.5, 0.5).unwrap();
        assert_eq!(b.lower, 0.25);
        assert!(b.upper.is_infinite());
        assert!(!b.is_bounded());
    }

    #[test]
    fn negative_lower_numerator_is_clamped() {
        // 1 − √9·(1 − 0.1) < 0
        let b = buyer_gain_bounds(9.0, 0.1, 0.3).unwrap();
        assert_eq!(b.lower, 0.0);
        assert!(b.lower_clamped);
    }

    #[test]
    fn domain_errors() {
        assert!(buyer_gain_bounds(0.0, 0.5, 0.5).is_err());
        assert!(buyer_gain_bounds(2.0, 0.0, 0.5).is_err());
        assert!(buyer_gain_bounds(2.0, 0.5, 1.5).is_err());
        assert!(perf_ratio_bounds(Scenario::NoBuySell, 2.0, 0.5, None).is_err());
        assert!(perf_ratio_bounds(Scenario::NoBuyNoSell, 2.0, 0.5, None).is_ok());
    }

    #[test]
    fn lemma_examples() {
        let nn = perf_ratio_bounds(Scenario::NoBuyNoSell, 4.0, 1.0, None).unwrap();
        assert_eq!((nn.lower, nn.upper), (0.25, 0.25));
        let bn = perf_ratio_bounds(Scenario::BuyNoSell, 4.0, 1.0, None).unwrap();
        assert_eq!((bn.lower, bn.upper), (1.0, 1.0));
    }

    #[test]
    fn buy_scenarios_scale_by_gain() {
        for &(g, a, b) in &[(2.5, 0.3, 0.7), (0.4, 0.9, 0.2), (7.0, 0.5, 1.0)] {
            let nn = perf_ratio_bounds(Scenario::NoBuyNoSell, g, a, Some(b)).unwrap();
            let bn = perf_ratio_bounds(Scenario::BuyNoSell, g, a, Some(b)).unwrap();
            assert_eq!(bn.lower, nn.lower * g);
            assert_eq!(bn.upper, nn.upper * g);
            let ns = perf_ratio_bounds(Scenario::NoBuySell, g, a, Some(b)).unwrap();
            let bs = perf_ratio_bounds(Scenario::BuySell, g, a, Some(b)).unwrap();
            assert_eq!(bs.lower, ns.lower * g);
            assert_eq!(bs.upper, ns.upper * g);
        }
    }

    #[test]
    fn theorem_interval_contains_full_swap_point() {
        // At α = β = 1 the buyer's gain is exactly 1/Δ_a.
        for g in [0.3, 1.0, 2.0, 9.0] {
            let b = buyer_gain_bounds(g, 1.0, 1.0).unwrap();
            assert!(b.contains(1.0 / g, 1e-12));
        }
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = buyer_gain_bounds(3.0f32, 0.6, 0.4).unwrap();
        let b = buyer_gain_bounds(3.0f64, 0.6, 0.4).unwrap();
        assert!((a.lower as f64 - b.lower).abs() < 1e-5 * b.lower.max(1.0));
    }

    #[test]
    fn sweep_finds_no_violations() {
        let report = soundness_sweep(3_000, 17, 1e-9).unwrap();
        assert!(report.violations.is_empty(), "{:?}", &report.violations[..1]);
        assert!(report.checked > 2_900);
        assert!(report.unbounded_upper > 0 && report.clamped_lower > 0);
    }
}
