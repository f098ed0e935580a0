//! Limit laws of the rank statistics: plain chi-squared and weighted
//! chi-squared `Σ νₖ Wₖ²` with i.i.d. standard normal `Wₖ`.
//!
//! Weighted chi-squared quantiles are available by simulation and through
//! three moment-matching approximations (Wood's three-parameter F, the
//! adjusted chi-squared and the rescaled chi-squared).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Weights at or below this fraction of the largest weight are dropped.
pub const WEIGHT_REL_TOL: f64 = 1e-9;
pub const DEFAULT_MC_DRAWS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightedMethod {
    MonteCarlo { draws: usize, seed: u64 },
    Wood,
    Adjusted,
    Rescaled,
}

impl WeightedMethod {
    pub fn monte_carlo(seed: u64) -> Self {
        WeightedMethod::MonteCarlo {
            draws: DEFAULT_MC_DRAWS,
            seed,
        }
    }
}

/// Which branch actually produced a weighted quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRoute {
    PointMass,
    SingleWeight,
    MonteCarlo,
    Adjusted,
    Rescaled,
    WoodF,
    WoodGamma,
    WoodInverseGamma,
    /// Wood's moment system was infeasible; simulated instead.
    WoodFallbackMonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedChiSq {
    weights: Vec<f64>,
    pub method: WeightedMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedQuantile {
    pub value: f64,
    pub route: QuantileRoute,
}

impl WeightedChiSq {
    /// Builds the law, dropping zero (and numerically zero) weights.
    pub fn new(weights: &[f64], method: WeightedMethod) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite".into()));
        }
        let largest = weights.iter().fold(0.0_f64, |a, &w| a.max(w));
        if weights.iter().any(|&w| w < -WEIGHT_REL_TOL * largest.max(f64::MIN_POSITIVE)) {
            return Err(Error::InvalidInput("weights must be nonnegative".into()));
        }
        let cutoff = WEIGHT_REL_TOL * largest;
        let weights = weights.iter().copied().filter(|&w| w > cutoff).collect();
        Ok(WeightedChiSq { weights, method })
    }

    /// The retained (strictly positive) weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn quantile(&self, level: f64) -> Result<f64> {
        Ok(self.quantile_with_route(level)?.value)
    }

    pub fn quantile_with_route(&self, level: f64) -> Result<WeightedQuantile> {
        check_level(level)?;
        let w = &self.weights;
        if w.is_empty() {
            return Ok(WeightedQuantile {
                value: 0.0,
                route: QuantileRoute::PointMass,
            });
        }
        let route_value = match self.method {
            WeightedMethod::MonteCarlo { draws, seed } => (
                monte_carlo_quantile(w, level, draws, seed)?,
                QuantileRoute::MonteCarlo,
            ),
            WeightedMethod::Adjusted => {
                let s1: f64 = w.iter().sum();
                let s2: f64 = w.iter().map(|x| x * x).sum();
                let a = s2 / s1;
                let b = s1 * s1 / s2;
                (a * gamma_quantile(b / 2.0, level)? * 2.0, QuantileRoute::Adjusted)
            }
            WeightedMethod::Rescaled => {
                let s = w.len();
                let c = w.iter().sum::<f64>() / s as f64;
                (c * chi2_quantile(s, level)?, QuantileRoute::Rescaled)
            }
            WeightedMethod::Wood => return wood_quantile(w, level),
        };
        Ok(WeightedQuantile {
            value: route_value.0,
            route: route_value.1,
        })
    }

    /// Simulated draws from the law; the building block of the Monte Carlo
    /// method, exposed for distribution comparisons.
    pub fn sample(&self, draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..draws)
            .map(|_| {
                self.weights
                    .iter()
                    .map(|w| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        w * z * z
                    })
                    .sum()
            })
            .collect()
    }
}

fn monte_carlo_quantile(weights: &[f64], level: f64, draws: usize, seed: u64) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InvalidInput("Monte Carlo needs at least one draw".into()));
    }
    let law = WeightedChiSq {
        weights: weights.to_vec(),
        method: WeightedMethod::MonteCarlo { draws, seed },
    };
    let mut sample = law.sample(draws, seed);
    Ok(order_statistic(&mut sample, level))
}

/// `x_(⌈k·level⌉)` of a sample of size `k` (1-based order statistic).
pub fn order_statistic(sample: &mut [f64], level: f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let k = sample.len();
    // Products like 1000 × 0.95 land a hair above the integer in binary.
    let idx = ((k as f64) * level - 1e-9).ceil().max(1.0) as usize;
    sample[idx.min(k) - 1]
}

/// Wood (1989) three-moment approximation, inverted for quantiles. The
/// branch structure follows the usual implementation: three-parameter F when
/// both discriminants are positive, a gamma (Satterthwaite) law when the
/// second vanishes, an inverse gamma when the first vanishes.
fn wood_quantile(weights: &[f64], level: f64) -> Result<WeightedQuantile> {
    if weights.len() == 1 {
        return Ok(WeightedQuantile {
            value: weights[0] * chi2_quantile(1, level)?,
            route: QuantileRoute::SingleWeight,
        });
    }
    let k1: f64 = weights.iter().sum();
    let k2: f64 = 2.0 * weights.iter().map(|w| w * w).sum::<f64>();
    let k3: f64 = 8.0 * weights.iter().map(|w| w * w * w).sum::<f64>();
    let t1 = 4.0 * k1 * k2 * k2 + k3 * (k2 - k1 * k1);
    let t2 = k1 * k3 - 2.0 * k2 * k2;
    // Both discriminants are differences of terms of order k1²k2²; treat
    // anything below rounding noise at that scale as zero.
    let tol = 1e-10 * k1 * k1 * k2;

    if t2 <= tol && t1 > tol {
        // Gamma(shape k1²/k2, rate k1/k2): exact for equal weights.
        let shape = k1 * k1 / k2;
        let rate = k1 / k2;
        return Ok(WeightedQuantile {
            value: gamma_quantile(shape, level)? / rate,
            route: QuantileRoute::WoodGamma,
        });
    }
    if t1 <= tol && t2 > tol {
        let shape = 2.0 + (k1 / k2).powi(2);
        let scale = k1 * (k1 * k1 + k2) / k2;
        // X = scale / G with G ~ Gamma(shape, 1).
        return Ok(WeightedQuantile {
            value: scale / gamma_quantile(shape, 1.0 - level)?,
            route: QuantileRoute::WoodInverseGamma,
        });
    }
    if t1 > tol && t2 > tol {
        let a1 = 2.0 * k1 * (k1 * k3 + k2 * k1 * k1 - k2 * k2) / t1;
        let b = t1 / t2;
        let a2 = 3.0 + 2.0 * k2 * (k2 + k1 * k1) / t2;
        if a1 > 0.0 && a2 > 0.0 && b > 0.0 {
            let f = f_quantile(2.0 * a1, 2.0 * a2, level)?;
            return Ok(WeightedQuantile {
                value: f * a1 * b / a2,
                route: QuantileRoute::WoodF,
            });
        }
    }
    Ok(WeightedQuantile {
        value: monte_carlo_quantile(weights, level, DEFAULT_MC_DRAWS, 0x900d)?,
        route: QuantileRoute::WoodFallbackMonteCarlo,
    })
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(df / 2.0, x / 2.0)
    }
}

/// Inverse chi-squared CDF via inversion of the regularized incomplete gamma
/// function.
pub fn chi2_quantile(df: usize, level: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidInput("chi-squared needs df >= 1".into()));
    }
    Ok(2.0 * gamma_quantile(df as f64 / 2.0, level)?)
}

/// Quantile of Gamma(shape, 1).
pub fn gamma_quantile(shape: f64, level: f64) -> Result<f64> {
    check_level(level)?;
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::InvalidInput(format!("gamma shape {shape} must be positive")));
    }
    let ln_norm = ln_gamma(shape);
    let cdf = |x: f64| gamma_lr(shape, x);
    let pdf = |x: f64| ((shape - 1.0) * x.ln() - x - ln_norm).exp();
    // Bracket: the upper end doubles until it covers the level.
    let mut hi = shape.max(1.0);
    while cdf(hi) < level {
        hi *= 2.0;
    }
    Ok(invert_monotone(cdf, pdf, level, 0.0, hi))
}

/// Quantile of the F(d1, d2) law through the incomplete beta function.
pub fn f_quantile(d1: f64, d2: f64, level: f64) -> Result<f64> {
    check_level(level)?;
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::InvalidInput("F degrees of freedom must be positive".into()));
    }
    let (a, b) = (d1 / 2.0, d2 / 2.0);
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let cdf = |x: f64| beta_reg(a, b, x);
    let pdf = |x: f64| ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta).exp();
    let x = invert_monotone(cdf, pdf, level, 0.0, 1.0);
    Ok(d2 * x / (d1 * (1.0 - x)))
}

/// Safeguarded Newton iteration for `cdf(x) = level` on `[lo, hi]`.
fn invert_monotone(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    level: f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let err = cdf(x) - level;
        if err == 0.0 {
            break;
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let d = pdf(x);
        let newton = x - err / d;
        x = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: Simpson integration of the chi-squared density
    /// after the substitution x = t² (removes the origin singularity), then
    /// bisection.
    fn chi2_cdf_by_quadrature(x: f64, df: usize) -> f64 {
        let k = df as f64 / 2.0;
        let ln_norm = k * 2f64.ln() + ln_gamma(k);
        // ∫₀^x f(u) du = ∫₀^√x 2t f(t²) dt
        let g = |t: f64| {
            if t == 0.0 {
                if df == 1 {
                    2.0 * (-ln_norm).exp()
                } else {
                    0.0
                }
            } else {
                2.0 * t * ((k - 1.0) * (t * t).ln() - t * t / 2.0 - ln_norm).exp()
            }
        };
        let upper = x.sqrt();
        let steps = 20_000;
        let h = upper / steps as f64;
        let mut acc = g(0.0) + g(upper);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(i as f64 * h);
        }
        acc * h / 3.0
    }

    fn chi2_quantile_by_bisection(df: usize, level: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 200.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if chi2_cdf_by_quadrature(mid, df) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn chi2_quantiles_match_quadrature_oracle() {
        for (df, level) in [(1, 0.95), (3, 0.95), (6, 0.99), (15, 0.95), (20, 0.5)] {
            let oracle = chi2_quantile_by_bisection(df, level);
            let got = chi2_quantile(df, level).unwrap();
            assert!((got - oracle).abs() < 1e-8, "df {df}: {got} vs {oracle}");
        }
        assert!((chi2_quantile(1, 0.95).unwrap() - 3.841_458_820_694_124).abs() < 1e-8);
    }

    #[test]
    fn chi2_two_df_is_exponential() {
        let level = 1.0 - (-1.0f64).exp();
        assert!((chi2_quantile(2, level).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chi2_twenty_df_median_matches_simulation() {
        let law = WeightedChiSq::new(&[1.0; 20], WeightedMethod::monte_carlo(9)).unwrap();
        let mc = law.quantile(0.5).unwrap();
        assert!((mc - chi2_quantile(20, 0.5).unwrap()).abs() < 0.05);
    }

    #[test]
    fn chi2_rejects_bad_arguments() {
        assert!(chi2_quantile(0, 0.5).is_err());
        assert!(chi2_quantile(3, 1.0).is_err());
        assert!(chi2_quantile(3, 0.0).is_err());
    }

    #[test]
    fn equal_weights_reduce_to_chi2_for_every_method() {
        let exact = chi2_quantile(3, 0.95).unwrap();
        assert!((exact - 7.814_727_903_251_178).abs() < 1e-8);
        for method in [
            WeightedMethod::Wood,
            WeightedMethod::Adjusted,
            WeightedMethod::Rescaled,
        ] {
            let law = WeightedChiSq::new(&[1.0, 1.0, 1.0], method).unwrap();
            assert!((law.quantile(0.95).unwrap() - exact).abs() < 1e-8, "{method:?}");
        }
        let law = WeightedChiSq::new(&[1.0, 1.0, 1.0], WeightedMethod::monte_carlo(1)).unwrap();
        assert!((law.quantile(0.95).unwrap() - exact).abs() < 0.05);
    }

    #[test]
    fn adjusted_with_equal_weights_is_scaled_chi2() {
        for (c, s) in [(0.3, 4usize), (2.5, 7)] {
            let law = WeightedChiSq::new(&vec![c; s], WeightedMethod::Adjusted).unwrap();
            let want = c * chi2_quantile(s, 0.9).unwrap();
            assert!((law.quantile(0.9).unwrap() - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn zero_weights_are_dropped() {
        let median = chi2_quantile(1, 0.5).unwrap();
        for method in [
            WeightedMethod::Wood,
            WeightedMethod::Adjusted,
            WeightedMethod::Rescaled,
        ] {
            let law = WeightedChiSq::new(&[2.0, 0.0, 0.0], method).unwrap();
            assert_eq!(law.weights(), &[2.0]);
            assert!((law.quantile(0.5).unwrap() - 2.0 * median).abs() < 1e-9);
        }
        let law = WeightedChiSq::new(&[2.0, 0.0, 0.0], WeightedMethod::monte_carlo(3)).unwrap();
        assert!((law.quantile(0.5).unwrap() - 2.0 * median).abs() < 0.02);
    }

    #[test]
    fn all_zero_weights_give_point_mass() {
        let law = WeightedChiSq::new(&[0.0, 0.0], WeightedMethod::Wood).unwrap();
        let q = law.quantile_with_route(0.95).unwrap();
        assert_eq!(q.value, 0.0);
        assert_eq!(q.route, QuantileRoute::PointMass);
    }

    #[test]
    fn wood_tracks_simulation_on_unequal_weights() {
        let weights = [3.0, 1.0, 0.5, 0.2, 0.1];
        let mc = WeightedChiSq::new(&weights, WeightedMethod::monte_carlo(11))
            .unwrap()
            .quantile(0.95)
            .unwrap();
        let wood = WeightedChiSq::new(&weights, WeightedMethod::Wood).unwrap();
        let q = wood.quantile_with_route(0.95).unwrap();
        assert_eq!(q.route, QuantileRoute::WoodF);
        assert!((q.value - mc).abs() < 0.02 * mc, "{} vs {mc}", q.value);
    }

    #[test]
    fn f_quantile_special_case() {
        // F(2, 2) has CDF x / (1 + x): median 1, 0.75-quantile 3.
        assert!((f_quantile(2.0, 2.0, 0.5).unwrap() - 1.0).abs() < 1e-10);
        assert!((f_quantile(2.0, 2.0, 0.75).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn quantiles_are_monotone_and_scale_equivariant() {
        let base = [2.0, 1.0, 0.4];
        for method in [
            WeightedMethod::Wood,
            WeightedMethod::Adjusted,
            WeightedMethod::Rescaled,
            WeightedMethod::MonteCarlo { draws: 50_000, seed: 4 },
        ] {
            let law = WeightedChiSq::new(&base, method).unwrap();
            let mut last = 0.0;
            for level in [0.1, 0.3, 0.5, 0.8, 0.95, 0.99] {
                let q = law.quantile(level).unwrap();
                assert!(q >= last);
                last = q;
            }
            let mut bumped = base;
            bumped[1] = 1.5;
            let up = WeightedChiSq::new(&bumped, method).unwrap().quantile(0.9).unwrap();
            assert!(up >= law.quantile(0.9).unwrap());

            let scaled: Vec<f64> = base.iter().map(|w| w * 3.0).collect();
            let q1 = law.quantile(0.9).unwrap();
            let q3 = WeightedChiSq::new(&scaled, method).unwrap().quantile(0.9).unwrap();
            assert!((q3 - 3.0 * q1).abs() <= 1e-9 * q3, "{method:?}");
        }
    }

    #[test]
    fn order_statistic_index() {
        let mut v: Vec<f64> = (1..=1000).rev().map(f64::from).collect();
        assert_eq!(order_statistic(&mut v, 0.95), 950.0);
        let mut v = vec![5.0];
        assert_eq!(order_statistic(&mut v, 0.5), 5.0);
    }
}
