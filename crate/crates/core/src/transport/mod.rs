//! Closed-form optimal transport between the insider's terminal information
//! law `mu_T` of `(Ztilde_T, S_T)` and the order-flow law `nu_T = N(0, sigma^2 T)`.
//!
//! Each family yields a Brenier-type map `I`, a Kantorovich potential `Gamma`
//! on the order-flow side (normalized to `nu_T`-mean zero), its c-transform
//! `Gamma^c` on the information side, and the Gaussian disintegration
//! `pi*_y` of the optimal coupling along `y`.

pub mod oracle;

use serde::Serialize;

use crate::error::{finite, Error, Result};
use crate::model::{validate, FamilyKind, MarketParams, ScalarFn, SurplusFamily};
use crate::poly::Polynomial;
use crate::quadrature::{normal_rule, simpson};

/// Gaussian law on `(ztilde, s)` whose mean is affine in a scalar `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineGaussian {
    pub intercept: [f64; 2],
    pub slope: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl AffineGaussian {
    pub fn mean(&self, y: f64) -> [f64; 2] {
        [
            self.intercept[0] + self.slope[0] * y,
            self.intercept[1] + self.slope[1] * y,
        ]
    }
}

/// Derived scalars of the linear-quadratic family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinQuadConstants {
    pub psi: f64,
    /// `Sigma_T / (sigma sqrt T)`.
    pub lambda: f64,
    /// `sqrt(sigma^2 T + sigma_beta^2) / (sigma sqrt T)`.
    pub lambda_tilde: f64,
    /// `(psi^2 lambda_tilde^2 + lambda^2)^(-1/2)`.
    pub epsilon: f64,
}

impl LinQuadConstants {
    /// `psi = 0` is accepted: it gives the Markovian static-Kyle strategy.
    pub fn new(params: &MarketParams, psi: f64) -> Self {
        let s2t = params.noise_var();
        let lam2 = params.terminal_signal_var() / s2t;
        let lamt2 = (s2t + params.sigma_beta * params.sigma_beta) / s2t;
        Self {
            psi,
            lambda: lam2.sqrt(),
            lambda_tilde: lamt2.sqrt(),
            epsilon: (psi * psi * lamt2 + lam2).sqrt().recip(),
        }
    }

    /// `d E[(Ztilde_T, S_T) | Y_T = y] / dy`.
    pub fn mean_slope(&self) -> [f64; 2] {
        let lt2 = self.lambda_tilde * self.lambda_tilde;
        let l2 = self.lambda * self.lambda;
        [-self.epsilon * self.psi * lt2, self.epsilon * l2]
    }

    /// Conditional covariance of `(Ztilde_t, S_t)` given the order flow up to
    /// `t`: returns `(K_t, s11, s12, s22)` with `K_t` the determinant.
    ///
    /// Written so that `t = 0` reproduces the prior `diag(sigma_beta^2,
    /// Sigma_0^2)` exactly.
    pub fn filter_cov(&self, params: &MarketParams, t: f64) -> (f64, f64, f64, f64) {
        let s2 = params.sigma * params.sigma;
        let e2 = self.epsilon * self.epsilon;
        let lt2 = self.lambda_tilde * self.lambda_tilde;
        let l2 = self.lambda * self.lambda;
        let psi = self.psi;
        let s11 = params.sigma_beta * params.sigma_beta + s2 * t - e2 * psi * psi * lt2 * lt2 * s2 * t;
        let s12 = e2 * psi * lt2 * l2 * s2 * t;
        let s22 = params.signal_var(t) - e2 * l2 * l2 * s2 * t;
        (s11 * s22 - s12 * s12, s11, s12, s22)
    }
}

/// Representation of the order-flow potential `Gamma` (already normalized).
#[derive(Debug, Clone)]
enum Potential {
    Poly {
        value: Polynomial,
        slope: Polynomial,
    },
    /// `Gamma(y) = int_0^y f(lambda u) du - c`.
    LinearCustom {
        f: ScalarFn,
        lambda: f64,
        offset: f64,
    },
    /// `Gamma(y) = V((1 + lambda) y + m) / (1 + lambda) - c`.
    ActivistCustom {
        v: ScalarFn,
        lambda: f64,
        m_beta: f64,
        offset: f64,
    },
}

impl Potential {
    fn value(&self, y: f64) -> f64 {
        match self {
            Potential::Poly { value, .. } => value.eval(y),
            Potential::LinearCustom { f, lambda, offset } => {
                let lam = *lambda;
                let g = |u: f64| f.eval(lam * u);
                simpson(&g, 0.0, y, 1e-13 * (1.0 + y.abs())) - offset
            }
            Potential::ActivistCustom {
                v,
                lambda,
                m_beta,
                offset,
            } => v.eval((1.0 + lambda) * y + m_beta) / (1.0 + lambda) - offset,
        }
    }

    fn slope(&self, y: f64) -> f64 {
        match self {
            Potential::Poly { slope, .. } => slope.eval(y),
            Potential::LinearCustom { f, lambda, .. } => f.eval(lambda * y),
            Potential::ActivistCustom { v, lambda, m_beta, .. } => v.deriv((1.0 + lambda) * y + m_beta),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    params: MarketParams,
    family: SurplusFamily,
    lambda: f64,
    linquad: Option<LinQuadConstants>,
    potential: Potential,
    normalization: f64,
    disintegration: AffineGaussian,
    ot_value: f64,
}

const TRANSPORT_BLOCKERS: [&str; 5] = [
    "invalid_parameter",
    "degenerate_signal",
    "nonmonotone_f",
    "nonconvex_v",
    "growth",
];

/// Builds the closed-form transport for the given family.
pub fn solve(params: &MarketParams, family: &SurplusFamily) -> Result<TransportSolution> {
    let report = validate(params, family);
    if let Some(issue) = report.issues.iter().find(|i| TRANSPORT_BLOCKERS.contains(&i.code)) {
        return Err(match issue.code {
            "degenerate_signal" => Error::DegenerateSignal,
            _ => Error::Precondition(format!("{}: {}", issue.code, issue.message)),
        });
    }
    match family {
        SurplusFamily::Linear { f } => solve_linear(params, f),
        SurplusFamily::Activist { v } => solve_activist(params, v),
        SurplusFamily::LinearQuadratic { psi } => solve_linquad(params, *psi),
    }
}

fn nu_mean(params: &MarketParams, g: impl Fn(f64) -> f64) -> f64 {
    normal_rule(64).expect(0.0, params.noise_var().sqrt(), g)
}

fn solve_linear(params: &MarketParams, f: &ScalarFn) -> Result<TransportSolution> {
    let st2 = params.terminal_signal_var();
    if st2 <= 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let lambda = (st2 / params.noise_var()).sqrt();
    let (potential, normalization) = match f.as_poly() {
        Some(p) => {
            let slope = p.compose_affine(lambda, 0.0);
            let raw = slope.antiderivative();
            let c = raw.gaussian_mean(0.0, params.noise_var());
            let value = raw.add_constant(-c);
            (Potential::Poly { value, slope }, c)
        }
        None => {
            let unnormalized = Potential::LinearCustom {
                f: f.clone(),
                lambda,
                offset: 0.0,
            };
            let c = finite(
                nu_mean(params, |y| unnormalized.value(y)),
                "linear potential normalization",
            )?;
            let potential = Potential::LinearCustom {
                f: f.clone(),
                lambda,
                offset: c,
            };
            (potential, c)
        }
    };
    let (zm, zv) = params.terminal_position_law();
    let sol = TransportSolution {
        params: params.clone(),
        family: SurplusFamily::Linear { f: f.clone() },
        lambda,
        linquad: None,
        normalization,
        potential,
        disintegration: AffineGaussian {
            intercept: [zm, 0.0],
            slope: [0.0, lambda],
            cov: [[zv, 0.0], [0.0, 0.0]],
        },
        ot_value: 0.0,
    };
    sol.finish()
}

fn solve_activist(params: &MarketParams, v: &ScalarFn) -> Result<TransportSolution> {
    let s2t = params.noise_var();
    let lambda = (1.0 + params.sigma_beta * params.sigma_beta / s2t).sqrt();
    let a = 1.0 + lambda;
    let m = params.m_beta;
    let (potential, normalization) = match v.as_poly() {
        Some(p) => {
            let raw = p.compose_affine(a, m).scale(1.0 / a);
            let c = raw.gaussian_mean(0.0, s2t);
            let potential = Potential::Poly {
                value: raw.add_constant(-c),
                slope: p.derivative().compose_affine(a, m),
            };
            (potential, c)
        }
        None => {
            let c = finite(
                nu_mean(params, |y| v.eval(a * y + m) / a),
                "activist potential normalization",
            )?;
            let potential = Potential::ActivistCustom {
                v: v.clone(),
                lambda,
                m_beta: m,
                offset: c,
            };
            (potential, c)
        }
    };
    let sol = TransportSolution {
        params: params.clone(),
        family: SurplusFamily::Activist { v: v.clone() },
        lambda,
        linquad: None,
        normalization,
        potential,
        disintegration: AffineGaussian {
            intercept: [-m, 0.0],
            slope: [-lambda, 0.0],
            cov: [[0.0, 0.0], [0.0, params.terminal_signal_var()]],
        },
        ot_value: 0.0,
    };
    sol.finish()
}

fn solve_linquad(params: &MarketParams, psi: f64) -> Result<TransportSolution> {
    if params.terminal_signal_var() <= 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let c = LinQuadConstants::new(params, psi);
    let eps = c.epsilon;
    let m = params.m_beta;
    // Gamma(y) = (psi y^2 + (y + eps psi m)^2 / eps) / 2
    let raw = Polynomial::new(vec![0.5 * eps * psi * psi * m * m, psi * m, 0.5 * (psi + 1.0 / eps)]);
    let norm = raw.gaussian_mean(0.0, params.noise_var());
    let scale = eps * eps * c.lambda * c.lambda * c.lambda_tilde * c.lambda_tilde * params.noise_var();
    let sol = TransportSolution {
        params: params.clone(),
        family: SurplusFamily::LinearQuadratic { psi },
        lambda: c.lambda,
        linquad: Some(c),
        normalization: norm,
        potential: Potential::Poly {
            slope: raw.derivative(),
            value: raw.add_constant(-norm),
        },
        disintegration: AffineGaussian {
            intercept: [-m, 0.0],
            slope: c.mean_slope(),
            cov: [[scale, scale * psi], [scale * psi, scale * psi * psi]],
        },
        ot_value: 0.0,
    };
    sol.finish()
}

impl TransportSolution {
    fn finish(mut self) -> Result<Self> {
        self.ot_value = finite(self.compute_ot_value(), "optimal transport value")?;
        Ok(self)
    }

    fn compute_ot_value(&self) -> f64 {
        let (zm, zv) = self.params.terminal_position_law();
        let zsd = zv.sqrt();
        let ssd = self.params.terminal_signal_var().sqrt();
        let rule = normal_rule(64);
        match self.family.kind() {
            // Gamma^c is affine in ztilde.
            FamilyKind::Linear => rule.expect(0.0, ssd, |s| self.gamma_c(zm, s)),
            FamilyKind::Activist => rule.expect(zm, zsd, |z| self.gamma_c(z, 0.0)),
            FamilyKind::LinearQuadratic => rule.expect(zm, zsd, |z| rule.expect(0.0, ssd, |s| self.gamma_c(z, s))),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.family.kind()
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn family(&self) -> &SurplusFamily {
        &self.family
    }

    /// The family's slope parameter (`lambda` in every family).
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn linquad(&self) -> Option<&LinQuadConstants> {
        self.linquad.as_ref()
    }

    /// Constant subtracted from the raw potential so that `E_nu[Gamma] = 0`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `sup E[S]` over couplings of `mu_T` and `nu_T`, equal to `E_mu[Gamma^c]`.
    pub fn ot_value(&self) -> f64 {
        self.ot_value
    }

    /// The optimal map `I(ztilde, s)`.
    pub fn map(&self, z: f64, s: f64) -> f64 {
        match &self.family {
            SurplusFamily::Linear { .. } => s / self.lambda,
            SurplusFamily::Activist { .. } => -(z + self.params.m_beta) / self.lambda,
            SurplusFamily::LinearQuadratic { psi } => {
                let eps = self.linquad.expect("linquad constants").epsilon;
                eps * (s - psi * (z + self.params.m_beta))
            }
        }
    }

    pub fn gamma(&self, y: f64) -> f64 {
        self.potential.value(y)
    }

    pub fn gamma_slope(&self, y: f64) -> f64 {
        self.potential.slope(y)
    }

    /// `Gamma'` as a polynomial when one exists.
    pub fn slope_polynomial(&self) -> Option<&Polynomial> {
        match &self.potential {
            Potential::Poly { slope, .. } => Some(slope),
            _ => None,
        }
    }

    pub fn value_polynomial(&self) -> Option<&Polynomial> {
        match &self.potential {
            Potential::Poly { value, .. } => Some(value),
            _ => None,
        }
    }

    /// `Gamma^c(ztilde, s) = sup_y S(ztilde, s, y) - Gamma(y)`.
    pub fn gamma_c(&self, z: f64, s: f64) -> f64 {
        let m = self.params.m_beta;
        match &self.family {
            SurplusFamily::Linear { .. } => {
                let y = self.map(z, s);
                self.family.surplus(z, s, y) - self.gamma(y)
            }
            SurplusFamily::Activist { v } => {
                let k = 1.0 + 1.0 / self.lambda;
                v.eval(-k * z - m / self.lambda) / k + self.normalization
            }
            SurplusFamily::LinearQuadratic { psi } => {
                let eps = self.linquad.expect("linquad constants").epsilon;
                let u = s - psi * z;
                0.5 * psi * z * z - z * s - eps * psi * m * u + 0.5 * eps * u * u + self.normalization
            }
        }
    }

    /// `Gamma(y) + Gamma^c(ztilde, s) - S(ztilde, s, y)`; nonnegative, zero on
    /// the graph of the map.
    pub fn duality_gap(&self, z: f64, s: f64, y: f64) -> f64 {
        self.gamma(y) + self.gamma_c(z, s) - self.family.surplus(z, s, y)
    }

    /// `pi*_y`: law of `(Ztilde_T, S_T)` given `Y_T = y` under the optimal
    /// coupling.
    pub fn disintegration(&self) -> &AffineGaussian {
        &self.disintegration
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SignalSchedule;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn activist_params() -> MarketParams {
        let mut p = MarketParams::unit_static();
        p.sigma_beta = 3f64.sqrt();
        p.m_beta = 0.4;
        p
    }

    fn linquad_params() -> MarketParams {
        let mut p = MarketParams::unit_static();
        p.sigma_beta = 0.7;
        p.m_beta = -0.3;
        p.sigma0 = 0.8;
        p.sigma_s = SignalSchedule::constant(0.5);
        p
    }

    #[test]
    fn static_kyle_constants() {
        let t = solve(
            &MarketParams::unit_static(),
            &SurplusFamily::Linear {
                f: ScalarFn::identity(),
            },
        )
        .unwrap();
        assert_eq!(t.lambda(), 1.0);
        assert_eq!(t.map(0.3, 1.0), 1.0);
        assert_relative_eq!(t.gamma(1.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(t.gamma_c(0.0, 1.0), 1.0, epsilon = 1e-15);
        // E[Gamma^c] = E[S^2]/2 + sigma^2 T / 2
        assert_relative_eq!(t.ot_value(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn activist_lambda_two() {
        let mut p = MarketParams::unit_static();
        p.sigma_beta = 3f64.sqrt();
        let t = solve(
            &p,
            &SurplusFamily::Activist {
                v: ScalarFn::poly(vec![0.0, 0.0, 0.5]),
            },
        )
        .unwrap();
        assert_relative_eq!(t.lambda(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(t.map(1.0, 0.0), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn linquad_unit_map() {
        let t = solve(
            &MarketParams::unit_static(),
            &SurplusFamily::LinearQuadratic { psi: 1.0 },
        )
        .unwrap();
        assert_relative_eq!(t.linquad().unwrap().epsilon, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(t.map(0.5, 1.0), 0.5f64.sqrt() * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_ctransforms_match_sup_definition() {
        let cases = [
            (
                activist_params(),
                SurplusFamily::Activist {
                    v: ScalarFn::poly(vec![0.1, -0.2, 0.5, 0.0, 0.05]),
                },
            ),
            (linquad_params(), SurplusFamily::LinearQuadratic { psi: 1.3 }),
        ];
        for (p, fam) in cases {
            let t = solve(&p, &fam).unwrap();
            for &(z, s) in &[(0.2, -0.4), (-1.3, 0.9), (2.0, 2.0)] {
                let y = t.map(z, s);
                let via_sup = fam.surplus(z, s, y) - t.gamma(y);
                assert_relative_eq!(t.gamma_c(z, s), via_sup, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn linquad_gap_is_quadratic_in_distance_to_map() {
        let p = linquad_params();
        let t = solve(&p, &SurplusFamily::LinearQuadratic { psi: 1.3 }).unwrap();
        let eps = t.linquad().unwrap().epsilon;
        for &(z, s, y) in &[(0.1, 0.2, 0.3), (-1.0, 2.0, -0.5)] {
            let d = y - t.map(z, s);
            assert_relative_eq!(t.duality_gap(z, s, y), d * d / (2.0 * eps), epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_is_nu_mean_zero() {
        let cases = [
            (
                MarketParams::unit_static(),
                SurplusFamily::Linear {
                    f: ScalarFn::poly(vec![0.5, 1.0, 0.0, 0.2]),
                },
            ),
            (
                activist_params(),
                SurplusFamily::Activist {
                    v: ScalarFn::poly(vec![0.0, 0.0, 0.5]),
                },
            ),
            (linquad_params(), SurplusFamily::LinearQuadratic { psi: 0.7 }),
            (
                MarketParams::unit_static(),
                SurplusFamily::Linear {
                    f: ScalarFn::custom("exp", f64::exp, None),
                },
            ),
        ];
        for (p, fam) in cases {
            let t = solve(&p, &fam).unwrap();
            let m = normal_rule(64).expect(0.0, p.noise_var().sqrt(), |y| t.gamma(y));
            assert!(m.abs() < 1e-10, "{:?}: {m}", fam.kind());
        }
    }

    #[test]
    fn custom_and_polynomial_routes_agree() {
        let p = MarketParams::unit_static();
        let poly = solve(
            &p,
            &SurplusFamily::Linear {
                f: ScalarFn::poly(vec![0.0, 1.0, 0.0, 0.1]),
            },
        )
        .unwrap();
        let custom = solve(
            &p,
            &SurplusFamily::Linear {
                f: ScalarFn::custom("cubic", |s| s + 0.1 * s * s * s, None),
            },
        )
        .unwrap();
        for &y in &[-2.0, -0.3, 0.0, 1.1] {
            assert_relative_eq!(poly.gamma(y), custom.gamma(y), epsilon = 1e-9);
            assert_relative_eq!(poly.gamma_c(0.2, y), custom.gamma_c(0.2, y), epsilon = 1e-9);
        }
        assert_relative_eq!(poly.ot_value(), custom.ot_value(), epsilon = 1e-9);
    }

    #[test]
    fn disintegration_mean_lies_on_map_graph() {
        let cases = [
            (linquad_params(), SurplusFamily::LinearQuadratic { psi: 1.3 }),
            (
                activist_params(),
                SurplusFamily::Activist {
                    v: ScalarFn::poly(vec![0.0, 0.0, 0.5]),
                },
            ),
            (
                MarketParams::unit_static(),
                SurplusFamily::Linear {
                    f: ScalarFn::identity(),
                },
            ),
        ];
        for (p, fam) in cases {
            let t = solve(&p, &fam).unwrap();
            for &y in &[-1.0, 0.0, 0.7] {
                let m = t.disintegration().mean(y);
                assert_relative_eq!(t.map(m[0], m[1]), y, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn duality_gap_nonnegative_and_tight(
            z in -4.0f64..4.0, s in -4.0f64..4.0, y in -4.0f64..4.0,
            psi in 0.1f64..3.0, sb in 0.1f64..2.0, m in -1.0f64..1.0,
        ) {
            let mut p = MarketParams::unit_static();
            p.sigma_beta = sb;
            p.m_beta = m;
            let fams = [
                SurplusFamily::Linear { f: ScalarFn::poly(vec![0.0, 1.0, 0.0, 0.2]) },
                SurplusFamily::Activist { v: ScalarFn::poly(vec![0.0, 0.3, 0.5, 0.0, 0.02]) },
                SurplusFamily::LinearQuadratic { psi },
            ];
            for fam in &fams {
                let t = solve(&p, fam).unwrap();
                let scale = 1.0 + t.gamma_c(z, s).abs() + t.gamma(y).abs();
                prop_assert!(t.duality_gap(z, s, y) >= -1e-9 * scale);
                let g = t.duality_gap(z, s, t.map(z, s));
                prop_assert!(g.abs() <= 1e-9 * scale, "graph gap {}", g);
            }
        }

        #[test]
        fn map_monotone_along_signal(s1 in -3.0f64..3.0, ds in 0.01f64..2.0, z in -2.0f64..2.0) {
            let p = linquad_params();
            let t = solve(&p, &SurplusFamily::LinearQuadratic { psi: 0.9 }).unwrap();
            prop_assert!(t.map(z, s1 + ds) > t.map(z, s1));
            let t = solve(&MarketParams::unit_static(), &SurplusFamily::Linear { f: ScalarFn::identity() }).unwrap();
            prop_assert!(t.map(z, s1 + ds) > t.map(z, s1));
        }
    }
}
