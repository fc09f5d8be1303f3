//! Market primitives: horizon, noise and signal volatilities, the manipulator's
//! prior, and the insider's surplus family.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::poly::Polynomial;

/// Piecewise-constant signal volatility `sigma_s(t)`, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSchedule {
    /// `(t_break, value)` pairs, sorted, first break at 0.
    pieces: Vec<(f64, f64)>,
}

impl SignalSchedule {
    pub fn constant(value: f64) -> Self {
        Self {
            pieces: vec![(0.0, value)],
        }
    }

    pub fn new(pieces: Vec<(f64, f64)>) -> Result<Self> {
        if pieces.is_empty() {
            return Ok(Self::constant(0.0));
        }
        if pieces[0].0 != 0.0 {
            return Err(invalid("sigma_s", "first breakpoint must be at t = 0"));
        }
        for w in pieces.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(invalid("sigma_s", "breakpoints must be strictly increasing"));
            }
        }
        for &(t, v) in &pieces {
            if !t.is_finite() || !v.is_finite() || v < 0.0 {
                return Err(invalid("sigma_s", format!("bad piece ({t}, {v})")));
            }
        }
        Ok(Self { pieces })
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.0 <= t);
        self.pieces[idx.saturating_sub(1)].1
    }

    /// `int_a^b sigma_s(r)^2 dr` for `a <= b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for (k, &(start, v)) in self.pieces.iter().enumerate() {
            let end = self.pieces.get(k + 1).map_or(f64::INFINITY, |p| p.0);
            let lo = start.max(a);
            let hi = end.min(b);
            if hi > lo {
                total += v * v * (hi - lo);
            }
        }
        total
    }

    pub fn is_static(&self) -> bool {
        self.pieces.iter().all(|p| p.1 == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub horizon: f64,
    pub sigma: f64,
    pub sigma_s: SignalSchedule,
    pub sigma0: f64,
    pub m_beta: f64,
    pub sigma_beta: f64,
}

impl MarketParams {
    pub fn new(
        horizon: f64,
        sigma: f64,
        sigma_s: SignalSchedule,
        sigma0: f64,
        m_beta: f64,
        sigma_beta: f64,
    ) -> Result<Self> {
        let p = Self {
            horizon,
            sigma,
            sigma_s,
            sigma0,
            m_beta,
            sigma_beta,
        };
        p.check_basic()?;
        Ok(p)
    }

    /// The textbook static Kyle market with unit everything.
    pub fn unit_static() -> Self {
        Self {
            horizon: 1.0,
            sigma: 1.0,
            sigma_s: SignalSchedule::constant(0.0),
            sigma0: 1.0,
            m_beta: 0.0,
            sigma_beta: 0.0,
        }
    }

    fn check_basic(&self) -> Result<()> {
        let pos = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        let nonneg = |name, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be non-negative and finite, got {v}")))
            }
        };
        pos("T", self.horizon)?;
        pos("sigma", self.sigma)?;
        nonneg("Sigma0", self.sigma0)?;
        nonneg("sigma_beta", self.sigma_beta)?;
        if !self.m_beta.is_finite() {
            return Err(invalid("m_beta", "must be finite"));
        }
        if let Some(&(t, _)) = self.sigma_s.pieces().last() {
            if t >= self.horizon && self.sigma_s.pieces().len() > 1 {
                return Err(invalid("sigma_s", "breakpoints must lie in [0, T)"));
            }
        }
        Ok(())
    }

    /// `int_a^b sigma_s^2`.
    pub fn signal_integral(&self, a: f64, b: f64) -> f64 {
        self.sigma_s.integral(a, b)
    }

    /// `Sigma_t^2 = Sigma_0^2 + int_0^t sigma_s^2`.
    pub fn signal_var(&self, t: f64) -> f64 {
        self.sigma0 * self.sigma0 + self.signal_integral(0.0, t)
    }

    pub fn terminal_signal_var(&self) -> f64 {
        self.signal_var(self.horizon)
    }

    pub fn noise_var(&self) -> f64 {
        self.sigma * self.sigma * self.horizon
    }

    /// Law of `Ztilde_T = Z_T - beta`: mean and variance.
    pub fn terminal_position_law(&self) -> (f64, f64) {
        (-self.m_beta, self.sigma_beta * self.sigma_beta + self.noise_var())
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..self.horizon).contains(&t) {
            return Err(Error::Horizon {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A real function of one variable: either a polynomial (closed forms apply)
/// or an arbitrary closure with an optional analytic derivative.
#[derive(Clone)]
pub enum ScalarFn {
    Poly(Polynomial),
    Custom {
        name: String,
        value: RealFn,
        derivative: Option<RealFn>,
    },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Poly(p) => write!(f, "Poly({:?})", p.coeffs()),
            ScalarFn::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

pub(crate) fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

impl ScalarFn {
    pub fn poly(coeffs: Vec<f64>) -> Self {
        ScalarFn::Poly(Polynomial::new(coeffs))
    }

    pub fn identity() -> Self {
        Self::poly(vec![0.0, 1.0])
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: Option<RealFn>,
    ) -> Self {
        ScalarFn::Custom {
            name: name.into(),
            value: Arc::new(value),
            derivative,
        }
    }

    pub fn as_poly(&self) -> Option<&Polynomial> {
        match self {
            ScalarFn::Poly(p) => Some(p),
            ScalarFn::Custom { .. } => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Poly(p) => p.eval(x),
            ScalarFn::Custom { value, .. } => value(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Poly(p) => p.derivative().eval(x),
            ScalarFn::Custom { value, derivative, .. } => match derivative {
                Some(d) => d(x),
                None => {
                    let h = fd_step(x);
                    (value(x + h) - value(x - h)) / (2.0 * h)
                }
            },
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        match self {
            ScalarFn::Poly(_) => true,
            ScalarFn::Custom { derivative, .. } => derivative.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Linear,
    Activist,
    LinearQuadratic,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Linear => "linear",
            FamilyKind::Activist => "activist",
            FamilyKind::LinearQuadratic => "linear_quadratic",
        }
    }
}

/// The insider's terminal valuation `V(x, s)`; the surplus is
/// `S(ztilde, s, y) = V(y - ztilde, s)`.
#[derive(Debug, Clone)]
pub enum SurplusFamily {
    /// `V = x f(s)` with `f` increasing.
    Linear { f: ScalarFn },
    /// `V = V(x)` convex, no signal dependence.
    Activist { v: ScalarFn },
    /// `V = psi x^2 / 2 + x s`.
    LinearQuadratic { psi: f64 },
}

impl SurplusFamily {
    pub fn kind(&self) -> FamilyKind {
        match self {
            SurplusFamily::Linear { .. } => FamilyKind::Linear,
            SurplusFamily::Activist { .. } => FamilyKind::Activist,
            SurplusFamily::LinearQuadratic { .. } => FamilyKind::LinearQuadratic,
        }
    }

    pub fn value(&self, x: f64, s: f64) -> f64 {
        match self {
            SurplusFamily::Linear { f } => x * f.eval(s),
            SurplusFamily::Activist { v } => v.eval(x),
            SurplusFamily::LinearQuadratic { psi } => 0.5 * psi * x * x + x * s,
        }
    }

    /// `d/dx V(x, s)`.
    pub fn marginal_value(&self, x: f64, s: f64) -> f64 {
        match self {
            SurplusFamily::Linear { f } => f.eval(s),
            SurplusFamily::Activist { v } => v.deriv(x),
            SurplusFamily::LinearQuadratic { psi } => psi * x + s,
        }
    }

    pub fn surplus(&self, z: f64, s: f64, y: f64) -> f64 {
        self.value(y - z, s)
    }

    pub fn surplus_dy(&self, z: f64, s: f64, y: f64) -> f64 {
        self.marginal_value(y - z, s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationIssue {
    pub code: &'static str,
    pub message: String,
    /// The result that cannot be invoked while this issue stands.
    pub blocks: &'static str,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    /// LinearQuadratic only: first grid time in (0, T) where `K_t <= 0`.
    pub first_nonpositive_k: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, code: &'static str, message: String, blocks: &'static str) {
        self.issues.push(ValidationIssue { code, message, blocks });
    }

    pub fn into_result(self) -> Result<Self> {
        match self.issues.first() {
            None => Ok(self),
            Some(i) if i.code == "degenerate_signal" => Err(Error::DegenerateSignal),
            Some(i) => Err(Error::Precondition(format!("{}: {}", i.code, i.message))),
        }
    }
}

const GRID: usize = 1000;

/// Checks every hypothesis the equilibrium construction relies on.
pub fn validate(params: &MarketParams, family: &SurplusFamily) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = params.check_basic() {
        report.push("invalid_parameter", e.to_string(), "all");
        return report;
    }
    let t_end = params.horizon;
    let sig2_t = params.noise_var();
    match family {
        SurplusFamily::Linear { f } => {
            let st2 = params.terminal_signal_var();
            if st2 <= 0.0 {
                report.push(
                    "degenerate_signal",
                    "Sigma_T = 0: the signal carries no information".into(),
                    "linear transport map",
                );
                return report;
            }
            // v_t = (T - t)/T Sigma_T^2 - int_t^T sigma_s^2 is piecewise linear
            // and vanishes at T, so positivity at the breakpoints suffices.
            for &(tb, _) in params.sigma_s.pieces() {
                let v = (t_end - tb) / t_end * st2 - params.signal_integral(tb, t_end);
                if v <= 0.0 {
                    report.push(
                        "negativity_condition",
                        format!("posterior variance {v:.3e} <= 0 at t = {tb}"),
                        "dynamic linear equilibrium",
                    );
                    break;
                }
            }
            let sd = st2.sqrt();
            if !monotone_on_grid(|s| f.eval(s), -6.0 * sd, 6.0 * sd) {
                report.push(
                    "nonmonotone_f",
                    "f must be nondecreasing".into(),
                    "Lemma on monotone transport",
                );
            }
            let lam = st2.sqrt() / sig2_t.sqrt();
            if !finite_on_grid(|y| f.eval(lam * y), 8.0 * sig2_t.sqrt()) {
                report.push("growth", "f is not finite on the quadrature range".into(), "pricing");
            }
        }
        SurplusFamily::Activist { v } => {
            if params.sigma_beta <= 0.0 {
                report.push(
                    "degenerate_manipulation",
                    "sigma_beta = 0 makes lambda = 1 and the strategy denominator vanish".into(),
                    "activist equilibrium",
                );
            }
            let (_, var) = params.terminal_position_law();
            let sd = var.sqrt();
            let lo = -params.m_beta - 8.0 * sd;
            let hi = -params.m_beta + 8.0 * sd;
            if !monotone_on_grid(|x| v.deriv(x), lo * 3.0 - 1.0, hi * 3.0 + 1.0) {
                report.push("nonconvex_v", "V must be convex".into(), "activist equilibrium");
            }
            if !finite_on_grid(|x| v.eval(x), 3.0 * (hi.abs().max(lo.abs())) + 1.0) {
                report.push("growth", "V is not finite on the quadrature range".into(), "pricing");
            }
        }
        SurplusFamily::LinearQuadratic { psi } => {
            if !(*psi > 0.0 && psi.is_finite()) {
                report.push(
                    "invalid_parameter",
                    format!("psi must be positive, got {psi}"),
                    "linear-quadratic equilibrium",
                );
                return report;
            }
            if params.terminal_signal_var() <= 0.0 {
                report.push(
                    "degenerate_signal",
                    "Sigma_T = 0: the signal carries no information".into(),
                    "linear-quadratic equilibrium",
                );
                return report;
            }
            let c = crate::transport::LinQuadConstants::new(params, *psi);
            // At t = 0 the filter covariance is the prior, which may be
            // degenerate; it must only be positive semidefinite there.
            let (k0, a0, _, _) = c.filter_cov(params, 0.0);
            if k0 < -1e-12 || a0 < 0.0 {
                report.push(
                    "k_t_nonpositive",
                    format!("prior covariance not PSD (K_0 = {k0:.3e})"),
                    "Lemma on linear-quadratic filtering",
                );
            }
            for i in 1..GRID {
                let t = t_end * i as f64 / GRID as f64;
                let (k, a11, _, _) = c.filter_cov(params, t);
                if k <= 0.0 || a11 <= 0.0 {
                    report.first_nonpositive_k = Some(t);
                    report.push(
                        "k_t_nonpositive",
                        format!("K_t = {k:.3e} <= 0 at t = {t}"),
                        "Lemma on linear-quadratic filtering",
                    );
                    break;
                }
            }
        }
    }
    report
}

fn monotone_on_grid(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> bool {
    let n = 400;
    let mut prev = g(lo);
    for i in 1..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let v = g(x);
        if v < prev - 1e-9 * (1.0 + prev.abs()) {
            return false;
        }
        prev = v;
    }
    true
}

fn finite_on_grid(g: impl Fn(f64) -> f64, half_width: f64) -> bool {
    (0..=200).all(|i| {
        let x = -half_width + 2.0 * half_width * i as f64 / 200.0;
        g(x).is_finite()
    })
}
