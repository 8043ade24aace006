//! Valuations, the bargaining price difference, revenue-optimal posted
//! prices, and the per-trade payment rule.

use serde::{Deserialize, Serialize};

use crate::bounds::buyer_gain_bounds;
use crate::broker::golden_section;
use crate::error::{MarketError, Result};
use crate::scalar::Scalar;

/// Four private valuations of a two-sided round between agents A and B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuationQuadruple<T> {
    /// A's ask for its own parameters.
    pub v_a_self: T,
    /// B's bid for A's parameters.
    pub v_b_of_a: T,
    /// B's ask for its own parameters.
    pub v_b_self: T,
    /// A's bid for B's parameters.
    pub v_a_of_b: T,
}

impl<T: Scalar> ValuationQuadruple<T> {
    pub fn new(v_a_self: T, v_b_of_a: T, v_b_self: T, v_a_of_b: T) -> Result<Self> {
        let q = Self {
            v_a_self,
            v_b_of_a,
            v_b_self,
            v_a_of_b,
        };
        if [v_a_self, v_b_of_a, v_b_self, v_a_of_b]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(MarketError::NonFinite("valuation"));
        }
        Ok(q)
    }

    /// Whether B bids at least A's ask for A's parameters.
    pub fn a_sale_feasible(&self) -> bool {
        self.v_b_of_a >= self.v_a_self
    }

    /// Range of price differences over which both surplus factors are
    /// non-negative.
    pub fn price_difference_range(&self) -> (T, T) {
        (
            self.v_a_self - self.v_a_of_b,
            self.v_b_of_a - self.v_b_self,
        )
    }
}

/// `P_a − P_b` maximizing the product of both agents' surpluses.
pub fn nash_price_difference<T: Scalar>(q: &ValuationQuadruple<T>) -> T {
    T::lit(0.5) * (q.v_b_of_a + q.v_a_self - q.v_a_of_b - q.v_b_self)
}

/// `U_a · U_b` at price difference `delta_p = P_a − P_b`.
pub fn cobb_douglas_revenue<T: Scalar>(q: &ValuationQuadruple<T>, delta_p: T) -> T {
    (delta_p - q.v_a_self + q.v_a_of_b) * (-delta_p - q.v_b_self + q.v_b_of_a)
}

/// Individual prices for logging: each parameter set priced at the midpoint
/// of its seller's ask and buyer's bid. Their difference is the bargaining
/// price difference.
pub fn midpoint_prices<T: Scalar>(q: &ValuationQuadruple<T>) -> (T, T) {
    let half = T::lit(0.5);
    (
        half * (q.v_a_self + q.v_b_of_a),
        half * (q.v_b_self + q.v_a_of_b),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorDistribution<T> {
    Uniform { lo: T, hi: T },
    Exponential { rate: T },
}

impl<T: Scalar> PriorDistribution<T> {
    pub fn uniform(lo: T, hi: T) -> Result<Self> {
        if !(lo >= T::zero()) || !(hi >= lo) || !hi.is_finite() {
            return Err(MarketError::domain(format!(
                "uniform prior needs 0 ≤ lo ≤ hi < ∞, got [{lo}, {hi}]"
            )));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn exponential(rate: T) -> Result<Self> {
        if !(rate > T::zero()) || !rate.is_finite() {
            return Err(MarketError::domain(format!(
                "exponential rate must be positive, got {rate}"
            )));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn cdf(&self, p: T) -> T {
        match *self {
            Self::Uniform { lo, hi } => {
                if p <= lo {
                    T::zero()
                } else if p >= hi {
                    T::one()
                } else {
                    (p - lo) / (hi - lo)
                }
            }
            Self::Exponential { rate } => {
                if p <= T::zero() {
                    T::zero()
                } else {
                    T::one() - (-rate * p).exp()
                }
            }
        }
    }

    pub fn density(&self, p: T) -> T {
        match *self {
            Self::Uniform { lo, hi } => {
                if p < lo || p > hi || hi == lo {
                    T::zero()
                } else {
                    T::one() / (hi - lo)
                }
            }
            Self::Exponential { rate } => {
                if p < T::zero() {
                    T::zero()
                } else {
                    rate * (-rate * p).exp()
                }
            }
        }
    }

    /// Seller's expected revenue `P · (1 − F(P))` from posting price `P`.
    pub fn expected_revenue(&self, p: T) -> T {
        p * (T::one() - self.cdf(p))
    }

    /// Interval that contains every revenue-optimal price.
    fn search_interval(&self) -> (T, T) {
        match *self {
            Self::Uniform { lo, hi } => (lo, hi),
            Self::Exponential { rate } => (T::zero(), T::lit(20.0) / rate),
        }
    }
}

/// Revenue-maximizing posted price, in closed form.
pub fn myerson_price<T: Scalar>(prior: &PriorDistribution<T>) -> T {
    match *prior {
        PriorDistribution::Uniform { lo, hi } => {
            let half = T::lit(0.5) * hi;
            if half >= lo {
                half
            } else {
                lo
            }
        }
        PriorDistribution::Exponential { rate } => T::one() / rate,
    }
}

/// Revenue-maximizing posted price by golden-section search over the
/// support; both supported priors have unimodal revenue.
pub fn myerson_price_numeric<T: Scalar>(prior: &PriorDistribution<T>, tol: T) -> Result<T> {
    let (lo, hi) = prior.search_interval();
    if hi <= lo {
        return Ok(lo);
    }
    let p = golden_section(lo, hi, tol, |p| Ok(-prior.expected_revenue(p)))?;
    // The search never evaluates the endpoints themselves.
    let best = [lo, p, hi]
        .into_iter()
        .fold((lo, prior.expected_revenue(lo)), |acc, c| {
            let r = prior.expected_revenue(c);
            if r > acc.1 {
                (c, r)
            } else {
                acc
            }
        });
    Ok(best.0)
}

/// `P − (1 − F(P)) / F'(P)`, zero at interior optima.
pub fn fixed_point_residual<T: Scalar>(prior: &PriorDistribution<T>, p: T) -> T {
    p - (T::one() - prior.cdf(p)) / prior.density(p)
}

/// How a seller turns the bounds on the buyer's gain into an ask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SellerPrior {
    /// Revenue-optimal price under a uniform prior on the bound interval.
    #[default]
    UniformOnBounds,
    /// The lower bound itself.
    LowerBound,
}

impl SellerPrior {
    pub fn as_str(self) -> &'static str {
        match self {
            SellerPrior::UniformOnBounds => "uniform_on_bounds",
            SellerPrior::LowerBound => "lower_bound",
        }
    }
}

/// Seller's estimate of what the buyer will pay, from `(Δ_a, α, β)` only.
/// Falls back to the lower bound when the interval is unbounded.
pub fn seller_virtual_valuation<T: Scalar>(
    gain_a: T,
    alpha: T,
    beta: T,
    prior: SellerPrior,
) -> Result<T> {
    let b = buyer_gain_bounds(gain_a, alpha, beta)?;
    if !b.is_bounded() || prior == SellerPrior::LowerBound {
        return Ok(b.lower);
    }
    let p = myerson_price(&PriorDistribution::uniform(b.lower, b.upper)?);
    Ok(p.max(b.lower).min(b.upper))
}

/// Payment for one directed sale: the midpoint of bid and ask, or `None`
/// when the bid falls short.
pub fn settle<T: Scalar>(buyer_valuation: T, seller_valuation: T) -> Option<T> {
    (buyer_valuation >= seller_valuation)
        .then(|| T::lit(0.5) * (buyer_valuation + seller_valuation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad(a: f64, ba: f64, b: f64, ab: f64) -> ValuationQuadruple<f64> {
        ValuationQuadruple::new(a, ba, b, ab).unwrap()
    }

    #[test]
    fn nash_examples() {
        assert_eq!(nash_price_difference(&quad(3.0, 2.0, 3.0, 2.0)), 0.0);
        assert_eq!(nash_price_difference(&quad(2.0, 4.0, 1.0, 3.0)), 1.0);
        // Truthful sellers: transfer equals the difference in gains.
        assert_eq!(nash_price_difference(&quad(5.0, 5.0, 3.0, 3.0)), 2.0);
    }

    #[test]
    fn revenue_example_and_concavity() {
        let q = quad(2.0, 4.0, 1.0, 3.0);
        assert_eq!(cobb_douglas_revenue(&q, 1.0), 4.0);
        // Second difference of a concave quadratic is negative.
        let h = 0.5;
        let second = cobb_douglas_revenue(&q, 1.0 + h) - 2.0 * cobb_douglas_revenue(&q, 1.0)
            + cobb_douglas_revenue(&q, 1.0 - h);
        assert!((second - (-2.0 * h * h)).abs() < 1e-12);
    }

    #[test]
    fn midpoint_prices_reproduce_difference() {
        let q = quad(2.0, 4.0, 1.0, 3.0);
        let (pa, pb) = midpoint_prices(&q);
        assert_eq!((pa, pb), (3.0, 2.0));
        assert_eq!(pa - pb, nash_price_difference(&q));
    }

    #[test]
    fn myerson_examples() {
        let u = PriorDistribution::uniform(0.0, 3.0).unwrap();
        assert_eq!(myerson_price(&u), 1.5);
        let e = PriorDistribution::exponential(4.0).unwrap();
        assert_eq!(myerson_price(&e), 0.25);
        let high = PriorDistribution::uniform(2.0, 3.0).unwrap();
        assert_eq!(myerson_price(&high), 2.0);
        let point = PriorDistribution::uniform(1.25, 1.25).unwrap();
        assert_eq!(myerson_price(&point), 1.25);
        assert_eq!(myerson_price_numeric(&point, 1e-12).unwrap(), 1.25);
        assert!(PriorDistribution::uniform(3.0, 2.0).is_err());
        assert!(PriorDistribution::exponential(0.0).is_err());
    }

    #[test]
    fn endpoint_optimum_matches_dense_grid() {
        let prior = PriorDistribution::uniform(2.0, 3.0).unwrap();
        let best = (0..=10_000)
            .map(|k| 2.0 + k as f64 * 1e-4)
            .max_by(|a, b| {
                prior
                    .expected_revenue(*a)
                    .partial_cmp(&prior.expected_revenue(*b))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(best, myerson_price(&prior));
    }

    #[test]
    fn fixed_point_holds_at_interior_optima() {
        let u = PriorDistribution::uniform(0.5f64, 7.0).unwrap();
        assert!(fixed_point_residual(&u, myerson_price(&u)).abs() <= 1e-9);
        let e = PriorDistribution::exponential(0.3f64).unwrap();
        assert!(fixed_point_residual(&e, myerson_price(&e)).abs() <= 1e-9);
    }

    #[test]
    fn virtual_valuation_examples() {
        assert_eq!(
            seller_virtual_valuation(4.0, 1.0, 1.0, SellerPrior::UniformOnBounds).unwrap(),
            0.25
        );
        // Unbounded upper side falls back to the lower bound.
        let v = seller_virtual_valuation(1.0, 0.5, 0.5, SellerPrior::UniformOnBounds).unwrap();
        assert_eq!(v, 0.25);
        let b = buyer_gain_bounds(2.0f64, 0.7, 0.2).unwrap();
        assert!(b.is_bounded());
        let v = seller_virtual_valuation(2.0, 0.7, 0.2, SellerPrior::UniformOnBounds).unwrap();
        assert_eq!(v, (0.5 * b.upper).max(b.lower));
        let lb = seller_virtual_valuation(2.0, 0.7, 0.2, SellerPrior::LowerBound).unwrap();
        assert_eq!(lb, b.lower);
    }

    #[test]
    fn uniform_interval_clamp() {
        // Interval [1, 3]: h/2 = 1.5 lies inside.
        let p = myerson_price(&PriorDistribution::uniform(1.0f64, 3.0).unwrap());
        assert_eq!(p.max(1.0).min(3.0), 1.5);
    }

    #[test]
    fn settle_examples() {
        assert_eq!(settle(4.0, 2.0), Some(3.0));
        assert_eq!(settle(2.0, 4.0), None);
        assert_eq!(settle(5.0, 5.0), Some(5.0));
    }

    proptest! {
        #[test]
        fn settle_is_individually_rational(b in -10.0f64..10.0, s in -10.0f64..10.0) {
            match settle(b, s) {
                Some(p) => prop_assert!(s <= p && p <= b),
                None => prop_assert!(b < s),
            }
        }

        #[test]
        fn nash_difference_maximizes_revenue(
            a in 0.0f64..5.0, ba in 0.0f64..5.0, b in 0.0f64..5.0, ab in 0.0f64..5.0,
            offset in -3.0f64..3.0,
        ) {
            let q = quad(a, ba, b, ab);
            let star = nash_price_difference(&q);
            let best = cobb_douglas_revenue(&q, star);
            prop_assert!(cobb_douglas_revenue(&q, star + offset) <= best + 1e-12);
        }

        #[test]
        fn numeric_solver_agrees(lo in 0.0f64..5.0, width in 0.01f64..10.0, rate in 0.05f64..20.0) {
            let u = PriorDistribution::uniform(lo, lo + width).unwrap();
            let nu = myerson_price_numeric(&u, 1e-10).unwrap();
            prop_assert!((nu - myerson_price(&u)).abs() <= 1e-7 * (1.0 + lo + width));
            let e = PriorDistribution::exponential(rate).unwrap();
            let ne = myerson_price_numeric(&e, 1e-12).unwrap();
            prop_assert!((ne - 1.0 / rate).abs() <= 1e-5 / rate);
        }
    }
}
