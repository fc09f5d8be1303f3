//! The market maker's filter: the conditional law `rho_t(y; ztilde, s)` of
//! the insider's information given the order flow, in closed form for every
//! family, with a characteristic-function cross-check and a particle oracle.

pub mod particle;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FamilyKind, MarketParams};
use crate::quadrature::normal_rule;
use crate::transport::{AffineGaussian, TransportSolution};

/// Coordinates on which a filter law has a density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Law of `S_t` only (linear family: the rate ignores `ztilde`).
    Signal,
    /// Law of `Ztilde_t` only (activist family).
    Position,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianFilterLaw {
    pub t: f64,
    pub y: f64,
    pub support: Support,
    /// Mean affine in `y`, covariance depending on `t` only.
    pub law: AffineGaussian,
}

/// `((T - t)/T) Sigma_T^2 - int_t^T sigma_s^2`: posterior variance of `S_t`
/// in the linear family. Exact at `t = 0`.
pub fn linear_posterior_var(p: &MarketParams, t: f64) -> f64 {
    let w = (p.horizon - t) / p.horizon;
    let total = p.signal_integral(0.0, p.horizon);
    w * p.sigma0 * p.sigma0 + (w * total - p.signal_integral(t, p.horizon))
}

/// Closed-form filter law at time `t < T` given `Y_t = y`.
pub fn closed_form_law(transport: &TransportSolution, t: f64, y: f64) -> Result<GaussianFilterLaw> {
    let p = transport.params();
    p.check_time(t)?;
    let lam = transport.lambda();
    let m = p.m_beta;
    let (support, law) = match transport.kind() {
        FamilyKind::Linear => (
            Support::Signal,
            AffineGaussian {
                intercept: [-m, 0.0],
                slope: [0.0, lam],
                cov: [[0.0, 0.0], [0.0, linear_posterior_var(p, t)]],
            },
        ),
        FamilyKind::Activist => {
            // sigma^2 (T - t)(lambda^2 - 1) = sigma_beta^2 (T - t)/T
            let v = p.sigma_beta * p.sigma_beta * (p.horizon - t) / p.horizon;
            (
                Support::Position,
                AffineGaussian {
                    intercept: [-m, 0.0],
                    slope: [-lam, 0.0],
                    cov: [[v, 0.0], [0.0, 0.0]],
                },
            )
        }
        FamilyKind::LinearQuadratic => {
            let c = transport.linquad().expect("linquad constants");
            let (_, s11, s12, s22) = c.filter_cov(p, t);
            (
                Support::Joint,
                AffineGaussian {
                    intercept: [-m, 0.0],
                    slope: c.mean_slope(),
                    cov: [[s11, s12], [s12, s22]],
                },
            )
        }
    };
    Ok(GaussianFilterLaw { t, y, support, law })
}

impl GaussianFilterLaw {
    pub fn mean(&self) -> [f64; 2] {
        self.law.mean(self.y)
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        self.law.cov
    }

    /// `Sigma^{-1} (x - mean)` restricted to the support, and the slope of the
    /// mean in `y`, as 2-vectors.
    fn whitened(&self, z: f64, s: f64) -> Result<[f64; 2]> {
        let m = self.mean();
        let d = [z - m[0], s - m[1]];
        let c = self.law.cov;
        let singular = || Error::SingularMap(format!("filter covariance at t = {}", self.t));
        match self.support {
            Support::Signal => {
                if c[1][1] <= 0.0 {
                    return Err(singular());
                }
                Ok([0.0, d[1] / c[1][1]])
            }
            Support::Position => {
                if c[0][0] <= 0.0 {
                    return Err(singular());
                }
                Ok([d[0] / c[0][0], 0.0])
            }
            Support::Joint => {
                let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
                if det <= 0.0 {
                    return Err(singular());
                }
                Ok([
                    (c[1][1] * d[0] - c[0][1] * d[1]) / det,
                    (c[0][0] * d[1] - c[1][0] * d[0]) / det,
                ])
            }
        }
    }

    /// `(d_y ln rho, d_ztilde ln rho)` at `(ztilde, s)`.
    pub fn grad_log_density(&self, z: f64, s: f64) -> Result<(f64, f64)> {
        let w = self.whitened(z, s)?;
        let dy = self.law.slope[0] * w[0] + self.law.slope[1] * w[1];
        Ok((dy, -w[0]))
    }

    pub fn log_density(&self, z: f64, s: f64) -> Result<f64> {
        let w = self.whitened(z, s)?;
        let m = self.mean();
        let q = w[0] * (z - m[0]) + w[1] * (s - m[1]);
        let c = self.law.cov;
        let (dim, det) = match self.support {
            Support::Signal => (1.0, c[1][1]),
            Support::Position => (1.0, c[0][0]),
            Support::Joint => (2.0, c[0][0] * c[1][1] - c[0][1] * c[1][0]),
        };
        Ok(-0.5 * q - 0.5 * det.ln() - 0.5 * dim * (2.0 * std::f64::consts::PI).ln())
    }

    pub fn mahalanobis(&self, z: f64, s: f64) -> Result<f64> {
        let w = self.whitened(z, s)?;
        let m = self.mean();
        Ok((w[0] * (z - m[0]) + w[1] * (s - m[1])).max(0.0).sqrt())
    }

    /// `E[exp(-i (u Ztilde + v S))]` on the support (the off-support
    /// frequency is ignored).
    pub fn char_fn(&self, u: f64, v: f64) -> Complex64 {
        let (u, v) = self.mask(u, v);
        let m = self.mean();
        let c = self.law.cov;
        let quad = u * u * c[0][0] + 2.0 * u * v * c[0][1] + v * v * c[1][1];
        Complex64::new(-0.5 * quad, -(u * m[0] + v * m[1])).exp()
    }

    fn mask(&self, u: f64, v: f64) -> (f64, f64) {
        match self.support {
            Support::Signal => (0.0, v),
            Support::Position => (u, 0.0),
            Support::Joint => (u, v),
        }
    }
}

/// Either representation of the filter.
#[derive(Debug, Clone)]
pub enum FilterLaw {
    Gaussian(GaussianFilterLaw),
    Particles(particle::ParticleCloud),
}

impl FilterLaw {
    pub fn mean(&self) -> [f64; 2] {
        match self {
            FilterLaw::Gaussian(g) => g.mean(),
            FilterLaw::Particles(p) => p.mean(),
        }
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        match self {
            FilterLaw::Gaussian(g) => g.cov(),
            FilterLaw::Particles(p) => p.cov(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FourierCheck {
    pub t: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub from_coupling: [f64; 2],
    pub closed_form: [f64; 2],
    pub abs_err: f64,
}

/// Builds the characteristic function of `rho_t(y)` from the coupling's
/// disintegration,
/// `exp((sigma^2 u^2 (T - t) + v^2 int_t^T sigma_s^2)/2) E[phi*_{y + dZ}(u, v)]`,
/// and compares it with the closed-form law.
pub fn fourier_transform_check(transport: &TransportSolution, t: f64, y: f64, u: f64, v: f64) -> Result<FourierCheck> {
    let p = transport.params();
    let law = closed_form_law(transport, t, y)?;
    let (u, v) = law.mask(u, v);
    let pi = transport.disintegration();
    let c = pi.cov;
    let quad = u * u * c[0][0] + 2.0 * u * v * c[0][1] + v * v * c[1][1];
    let phi_star = |yy: f64| {
        let m = pi.mean(yy);
        Complex64::new(-0.5 * quad, -(u * m[0] + v * m[1])).exp()
    };
    let sd = (p.sigma * p.sigma * (p.horizon - t)).sqrt();
    let rule = normal_rule(128);
    let mut acc = Complex64::new(0.0, 0.0);
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * phi_star(y + sd * x);
    }
    let flow = if law.support == Support::Signal {
        0.0
    } else {
        p.sigma * p.sigma * u * u * (p.horizon - t)
    };
    let signal = v * v * p.signal_integral(t, p.horizon);
    let direct = acc * (0.5 * (flow + signal)).exp();
    let closed = law.char_fn(u, v);
    Ok(FourierCheck {
        t,
        y,
        u,
        v,
        from_coupling: [direct.re, direct.im],
        closed_form: [closed.re, closed.im],
        abs_err: (direct - closed).norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScalarFn, SignalSchedule, SurplusFamily};
    use crate::transport::solve;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dynamic_params() -> MarketParams {
        let mut p = MarketParams::unit_static();
        p.sigma0 = 0.8;
        p.sigma_s = SignalSchedule::new(vec![(0.0, 0.6), (0.5, 0.3)]).unwrap();
        p.sigma_beta = 0.7;
        p.m_beta = 0.25;
        p
    }

    fn families() -> Vec<SurplusFamily> {
        vec![
            SurplusFamily::Linear {
                f: ScalarFn::identity(),
            },
            SurplusFamily::Activist {
                v: ScalarFn::poly(vec![0.0, 0.0, 0.5]),
            },
            SurplusFamily::LinearQuadratic { psi: 1.2 },
        ]
    }

    #[test]
    fn initial_law_is_prior() {
        let p = dynamic_params();
        for fam in families() {
            let tr = solve(&p, &fam).unwrap();
            let law = closed_form_law(&tr, 0.0, 0.0).unwrap();
            let m = law.mean();
            let c = law.cov();
            match law.support {
                Support::Signal => {
                    assert_eq!(m[1], 0.0);
                    assert_eq!(c[1][1], p.sigma0 * p.sigma0);
                }
                Support::Position => {
                    assert_eq!(m[0], -p.m_beta);
                    assert_eq!(c[0][0], p.sigma_beta * p.sigma_beta);
                }
                Support::Joint => {
                    assert_eq!(m, [-p.m_beta, 0.0]);
                    assert_eq!(c, [[p.sigma_beta * p.sigma_beta, 0.0], [0.0, p.sigma0 * p.sigma0]]);
                }
            }
        }
    }

    #[test]
    fn terminal_limit_is_disintegration() {
        let p = dynamic_params();
        for fam in families() {
            let tr = solve(&p, &fam).unwrap();
            let y = 0.37;
            let law = closed_form_law(&tr, p.horizon * (1.0 - 1e-9), y).unwrap();
            let pi = tr.disintegration();
            let (lm, pm) = (law.mean(), pi.mean(y));
            let idx: &[usize] = match law.support {
                Support::Signal => &[1],
                Support::Position => &[0],
                Support::Joint => &[0, 1],
            };
            for &i in idx {
                assert_relative_eq!(lm[i], pm[i], epsilon = 1e-6);
                for &j in idx {
                    assert_relative_eq!(law.cov()[i][j], pi.cov[i][j], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn unit_linquad_determinant() {
        let tr = solve(
            &MarketParams::unit_static(),
            &SurplusFamily::LinearQuadratic { psi: 1.0 },
        )
        .unwrap();
        let c = tr.linquad().unwrap();
        for &t in &[0.0, 0.3, 0.9] {
            let (k, ..) = c.filter_cov(tr.params(), t);
            assert_relative_eq!(k, t * (1.0 - t) / 2.0, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn characteristic_functions_agree(
            t in 0.0f64..0.95, y in -2.0f64..2.0, u in -2.0f64..2.0, v in -2.0f64..2.0,
        ) {
            let p = dynamic_params();
            for fam in families() {
                let tr = solve(&p, &fam).unwrap();
                let chk = fourier_transform_check(&tr, t, y, u, v).unwrap();
                prop_assert!(chk.abs_err < 1e-10, "{:?}: {:?}", fam.kind(), chk);
            }
        }
    }
}
