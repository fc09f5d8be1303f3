//! The insider's equilibrium trading rate `A_t(y, ztilde, s)` in closed form,
//! plus the generic filter representation `sigma^2 (d_y + d_ztilde) ln rho_t`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filtering::{linear_posterior_var, GaussianFilterLaw};
use crate::model::{validate, MarketParams, SurplusFamily};
use crate::transport::LinQuadConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyCoefficients {
    /// Linear family: `A = sigma^2 lambda (s - lambda y) / v_t`.
    Bridge {
        lambda: f64,
    },
    /// Activist: `A = -(ztilde + m_beta + lambda y) / ((lambda - 1)(T - t))`.
    Activist {
        lambda: f64,
    },
    /// `A = A_0(t) y + A_1(t)(ztilde + m_beta) + A_2(t) s`; `psi = 0` is the
    /// Markovian static-Kyle rule.
    LinearQuadratic(LinQuadConstants),
    NoTrade,
}

#[derive(Debug, Clone)]
pub struct Strategy {
    params: MarketParams,
    coeffs: StrategyCoefficients,
}

impl Strategy {
    /// The equilibrium strategy for `family`; every hypothesis of the
    /// construction must hold.
    pub fn equilibrium(params: &MarketParams, family: &SurplusFamily) -> Result<Self> {
        validate(params, family).into_result()?;
        let s2t = params.noise_var();
        let coeffs = match family {
            SurplusFamily::Linear { .. } => StrategyCoefficients::Bridge {
                lambda: (params.terminal_signal_var() / s2t).sqrt(),
            },
            SurplusFamily::Activist { .. } => StrategyCoefficients::Activist {
                lambda: (1.0 + params.sigma_beta * params.sigma_beta / s2t).sqrt(),
            },
            SurplusFamily::LinearQuadratic { psi } => {
                StrategyCoefficients::LinearQuadratic(LinQuadConstants::new(params, *psi))
            }
        };
        Ok(Self {
            params: params.clone(),
            coeffs,
        })
    }

    /// For `V = x s`: the rule that also conditions on `ztilde`, obtained as
    /// the `psi -> 0` limit of the linear-quadratic family. Hits the same
    /// terminal target as the bridge.
    pub fn markovian(params: &MarketParams) -> Result<Self> {
        if params.terminal_signal_var() <= 0.0 {
            return Err(Error::DegenerateSignal);
        }
        let c = LinQuadConstants::new(params, 0.0);
        let s = Self {
            params: params.clone(),
            coeffs: StrategyCoefficients::LinearQuadratic(c),
        };
        for i in 1..1000 {
            let t = params.horizon * i as f64 / 1000.0;
            if c.filter_cov(params, t).0 <= 0.0 {
                return Err(Error::Precondition(format!("K_t <= 0 at t = {t}")));
            }
        }
        Ok(s)
    }

    pub fn no_trade(params: &MarketParams) -> Self {
        Self {
            params: params.clone(),
            coeffs: StrategyCoefficients::NoTrade,
        }
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn coefficients(&self) -> &StrategyCoefficients {
        &self.coeffs
    }

    pub fn name(&self) -> &'static str {
        match self.coeffs {
            StrategyCoefficients::Bridge { .. } => "bridge",
            StrategyCoefficients::Activist { .. } => "activist",
            StrategyCoefficients::LinearQuadratic(c) if c.psi == 0.0 => "markovian",
            StrategyCoefficients::LinearQuadratic(_) => "linear_quadratic",
            StrategyCoefficients::NoTrade => "no_trade",
        }
    }

    /// `(A_0, A_1, A_2)` at time `t` for linear-quadratic rules.
    ///
    /// With a degenerate prior (`K_0 = 0`) the coefficients at `t = 0` are
    /// replaced by a two-point extrapolation from `t = h, 2h`: `A_2` has a
    /// finite limit, while `A_0`, `A_1` blow up like `1/t` but multiply
    /// arguments (`y`, `ztilde + m_beta`) that are exactly zero at `t = 0`.
    pub fn linquad_coefficients(&self, t: f64) -> Option<[f64; 3]> {
        let StrategyCoefficients::LinearQuadratic(c) = self.coeffs else {
            return None;
        };
        let raw = self.raw_linquad(&c, t);
        if raw.iter().all(|a| a.is_finite()) {
            return Some(raw);
        }
        let h = 1e-7 * self.params.horizon;
        let (a, b) = (self.raw_linquad(&c, h), self.raw_linquad(&c, 2.0 * h));
        Some([0, 1, 2].map(|i| 2.0 * a[i] - b[i]))
    }

    fn raw_linquad(&self, c: &LinQuadConstants, t: f64) -> [f64; 3] {
        let p = &self.params;
        let s2 = p.sigma * p.sigma;
        let (e, psi) = (c.epsilon, c.psi);
        let (l2, lt2) = (c.lambda * c.lambda, c.lambda_tilde * c.lambda_tilde);
        let (k, _, _, _) = c.filter_cov(p, t);
        let t_end = p.horizon;
        // sigma^2 lambda^2 T - Sigma_T^2 + Sigma_t^2, i.e. the prior part of s22.
        let s22_prior = p.signal_var(t);
        let g = 1.0 + e * psi * lt2;
        let a0 = -s2 / k * (e * psi * lt2 * s22_prior * g + s2 * e * e * l2 * l2 * ((lt2 - 1.0) * t_end + t));
        let a1 = -s2 / k * (g * (s22_prior - s2 * l2 * e * e * l2 * t) + e * e * e * psi * lt2 * l2 * l2 * s2 * t);
        let a2 = s2 / k
            * (g * (e * e * psi * l2 * lt2 * s2 * t)
                + e * l2 * (p.sigma_beta * p.sigma_beta + s2 * t - s2 * e * e * psi * psi * lt2 * lt2 * t));
        [a0, a1, a2]
    }

    /// Terminal target `I(ztilde, s)` the rule steers the order flow to.
    pub fn target(&self, z: f64, s: f64) -> Option<f64> {
        let m = self.params.m_beta;
        match self.coeffs {
            StrategyCoefficients::Bridge { lambda } => Some(s / lambda),
            StrategyCoefficients::Activist { lambda } => Some(-(z + m) / lambda),
            StrategyCoefficients::LinearQuadratic(c) => Some(c.epsilon * (s - c.psi * (z + m))),
            StrategyCoefficients::NoTrade => None,
        }
    }

    /// The rate is affine in the state: returns `[c, c_y, c_z, c_s]` with
    /// `A = c + c_y y + c_z ztilde + c_s s`.
    pub fn affine_rate(&self, t: f64) -> [f64; 4] {
        let p = &self.params;
        let m = p.m_beta;
        match self.coeffs {
            StrategyCoefficients::Bridge { lambda } => {
                let k = p.sigma * p.sigma * lambda / linear_posterior_var(p, t);
                [0.0, -k * lambda, 0.0, k]
            }
            StrategyCoefficients::Activist { lambda } => {
                let k = -1.0 / ((lambda - 1.0) * (p.horizon - t));
                [k * m, k * lambda, k, 0.0]
            }
            StrategyCoefficients::LinearQuadratic(_) => {
                let [a0, a1, a2] = self.linquad_coefficients(t).expect("linquad");
                [a1 * m, a0, a1, a2]
            }
            StrategyCoefficients::NoTrade => [0.0; 4],
        }
    }

    /// `A_t(y, ztilde, s)` on `[0, T)`.
    pub fn rate(&self, t: f64, y: f64, z: f64, s: f64) -> Result<f64> {
        self.params.check_time(t)?;
        let a = self.rate_unchecked(t, y, z, s);
        if a.is_finite() {
            Ok(a)
        } else {
            Err(Error::Domain(format!("trading rate at t = {t}")))
        }
    }

    /// Hot-loop variant of [`Strategy::rate`] without the horizon check.
    pub fn rate_unchecked(&self, t: f64, y: f64, z: f64, s: f64) -> f64 {
        let p = &self.params;
        let m = p.m_beta;
        match self.coeffs {
            StrategyCoefficients::Bridge { lambda } => {
                p.sigma * p.sigma * lambda * (s - lambda * y) / linear_posterior_var(p, t)
            }
            StrategyCoefficients::Activist { lambda } => -(z + m + lambda * y) / ((lambda - 1.0) * (p.horizon - t)),
            StrategyCoefficients::LinearQuadratic(_) => {
                let [a0, a1, a2] = self.linquad_coefficients(t).expect("linquad");
                let term = |a: f64, x: f64| if x == 0.0 { 0.0 } else { a * x };
                term(a0, y) + term(a1, z + m) + term(a2, s)
            }
            StrategyCoefficients::NoTrade => 0.0,
        }
    }
}

/// Rate read off a Gaussian filter law, with the Mahalanobis distance of the
/// evaluation point so callers can flag far-tail extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterRate {
    pub rate: f64,
    pub mahalanobis: f64,
}

impl FilterRate {
    /// Beyond 12 standard deviations the density underflows and the rate is
    /// an analytic extrapolation.
    pub fn is_extrapolated(&self) -> bool {
        self.mahalanobis > 12.0
    }
}

/// `sigma^2 (d_y + d_ztilde) ln rho_t(y, ztilde, s)` for a closed-form law.
pub fn rate_from_filter(law: &GaussianFilterLaw, sigma: f64, z: f64, s: f64) -> Result<FilterRate> {
    let (dy, dz) = law.grad_log_density(z, s)?;
    Ok(FilterRate {
        rate: sigma * sigma * (dy + dz),
        mahalanobis: law.mahalanobis(z, s)?,
    })
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::model::{ScalarFn, SignalSchedule};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn static_kyle_bridge() {
        let p = MarketParams::unit_static();
        let s = Strategy::equilibrium(
            &p,
            &SurplusFamily::Linear {
                f: ScalarFn::identity(),
            },
        )
        .unwrap();
        assert_relative_eq!(s.rate(0.5, 0.2, 0.0, 1.0).unwrap(), 1.6, epsilon = 1e-14);
        assert!(s.rate(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn activist_rate_at_origin() {
        let mut p = MarketParams::unit_static();
        p.sigma_beta = 3f64.sqrt();
        let s = Strategy::equilibrium(
            &p,
            &SurplusFamily::Activist {
                v: ScalarFn::poly(vec![0.0, 0.0, 0.5]),
            },
        )
        .unwrap();
        assert_relative_eq!(s.rate(0.0, 0.0, 1.0, 0.0).unwrap(), -1.0, epsilon = 1e-14);
        // Vanishes on the filter mean ztilde = -m - lambda y.
        assert!(s.rate(0.3, 0.5, -1.0, 0.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn linquad_coefficients_unit_case() {
        let p = MarketParams::unit_static();
        let s = Strategy::equilibrium(&p, &SurplusFamily::LinearQuadratic { psi: 1.0 }).unwrap();
        // K_t = t(1 - t)/2 vanishes at t = 0; the rate there stays finite.
        let [a0, a1, a2] = s.linquad_coefficients(0.5).unwrap();
        assert!(a0.is_finite() && a1.is_finite() && a2.is_finite());
        let a = s.rate(0.0, 0.0, 0.0, 1.3).unwrap();
        let near = s.rate(1e-5, 0.0, 0.0, 1.3).unwrap();
        assert_relative_eq!(a, near, max_relative = 1e-3);
    }

    #[test]
    fn markovian_reduces_to_textbook_rule() {
        let p = MarketParams::unit_static();
        let s = Strategy::markovian(&p).unwrap();
        let [a0, a1, a2] = s.linquad_coefficients(0.25).unwrap();
        assert_relative_eq!(a0, -1.0 / 0.75, epsilon = 1e-13);
        assert_relative_eq!(a1, -1.0 / 0.25, epsilon = 1e-12);
        assert_relative_eq!(a2, 1.0 / 0.75, epsilon = 1e-13);
    }

    proptest! {
        #[test]
        fn linquad_rate_vanishes_on_filter_mean(
            psi in 0.1f64..3.0, sb in 0.2f64..2.0, m in -1.0f64..1.0,
            s0 in 0.3f64..2.0, ss in 0.0f64..1.0, frac in 0.01f64..0.99, y in -3.0f64..3.0,
        ) {
            let mut p = MarketParams::unit_static();
            p.sigma_beta = sb;
            p.m_beta = m;
            p.sigma0 = s0;
            p.sigma_s = SignalSchedule::constant(ss);
            let fam = SurplusFamily::LinearQuadratic { psi };
            prop_assume!(validate(&p, &fam).is_valid());
            let s = Strategy::equilibrium(&p, &fam).unwrap();
            let c = LinQuadConstants::new(&p, psi);
            let ms = c.mean_slope();
            let a = s.rate(frac, y, -m + ms[0] * y, ms[1] * y).unwrap();
            let [a0, a1, a2] = s.linquad_coefficients(frac).unwrap();
            let scale = 1.0 + (a0 * y).abs() + (a1 * ms[0] * y).abs() + (a2 * ms[1] * y).abs();
            prop_assert!(a.abs() <= 1e-9 * scale, "{}", a);
        }
    }
}
