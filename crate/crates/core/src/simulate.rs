//! Monte Carlo of the equilibrium: Euler–Maruyama for the order flow, exact
//! Gaussian increments for the signal, left-point stochastic integrals for
//! the insider's wealth.
//!
//! Path `i` draws from its own ChaCha8 stream (`master seed`, stream `i`), so
//! results do not depend on thread count or scheduling, and perturbed runs
//! with the same seed see the same noise.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SurplusFamily;
use crate::pricing::{PriceGrid, PricingRule};
use crate::strategy::Strategy;

/// Trading rates are clipped to `[-RATE_CAP, RATE_CAP]`.
pub const RATE_CAP: f64 = 1e6;
/// Maximal lag for the increment autocorrelation summary.
pub const MAX_LAG: usize = 10;
/// Prices are recorded at `t = j T / CHECKPOINTS`, `j = 0..=CHECKPOINTS`.
pub const CHECKPOINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Perturbation {
    None,
    /// `kappa A`.
    Scale(f64),
    /// `A + c`.
    Drift(f64),
    /// `A` evaluated at `min(t + tau, T - dt)`.
    TimeShift(f64),
    /// `A` until `t0`, zero afterwards; no terminal projection.
    StopAfter(f64),
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Perturbation::None => "equilibrium".into(),
            Perturbation::Scale(k) => format!("scale {k}"),
            Perturbation::Drift(c) => format!("drift {c}"),
            Perturbation::TimeShift(tau) => format!("time shift {tau}"),
            Perturbation::StopAfter(t0) => format!("stop after {t0}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Replace the last Euler step by the exact terminal target.
    pub projected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct WealthBreakdown {
    /// `V(beta + X_T, S_T)`.
    pub terminal_value: f64,
    /// `sum P_k dX_k`.
    pub trading_cost: f64,
    /// `sum dX_k dP_k`.
    pub covariation: f64,
    pub total: f64,
}

impl WealthBreakdown {
    fn finish(terminal_value: f64, trading_cost: f64, covariation: f64) -> Self {
        Self {
            terminal_value,
            trading_cost,
            covariation,
            total: terminal_value - trading_cost - covariation,
        }
    }
}

/// Full record of one path.
#[derive(Debug, Clone, Serialize)]
pub struct PathBundle {
    pub path_index: usize,
    pub seed: u64,
    pub beta: f64,
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `H(t_k, Y_k)`; empty without a pricing rule.
    pub price: Vec<f64>,
}

/// Per-path statistics, accumulated without storing the path.
#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub beta: f64,
    pub s0: f64,
    pub s_t: f64,
    pub z_t: f64,
    pub z_tilde_t: f64,
    pub x_t: f64,
    pub y_t: f64,
    /// `I(Ztilde_T, S_T)`, NaN when the strategy has no target.
    pub target: f64,
    /// `sum dY_k^2`.
    pub qv: f64,
    /// Normalized increments `e_k = dY_k / (sigma sqrt(dt))`: `sum e_k^2`.
    pub incr_sq: f64,
    /// `sum_k e_k e_{k+l}` for `l = 1..=MAX_LAG`.
    pub lag_sums: [f64; MAX_LAG],
    pub n_incr: usize,
    /// `H(t_j, Y_{t_j})` at the checkpoints; NaN without a pricing rule.
    pub checkpoint_prices: [f64; CHECKPOINTS + 1],
    /// `d_x V(beta + X_T, S_T)`.
    pub marginal_value: f64,
    /// `Gamma^c(Ztilde_T, S_T)`.
    pub gamma_c: f64,
    pub wealth: WealthBreakdown,
}

pub struct Simulator<'a> {
    strategy: &'a Strategy,
    pricing: Option<&'a PricingRule>,
    perturbation: Perturbation,
    config: SimConfig,
}

impl<'a> Simulator<'a> {
    pub fn new(strategy: &'a Strategy, pricing: Option<&'a PricingRule>, config: SimConfig) -> Self {
        Self {
            strategy,
            pricing,
            perturbation: Perturbation::None,
            config,
        }
    }

    pub fn with_perturbation(mut self, perturbation: Perturbation) -> Self {
        self.perturbation = perturbation;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn times(&self) -> Vec<f64> {
        let n = self.config.n_steps;
        let t_end = self.strategy.params().horizon;
        (0..=n).map(|k| t_end * k as f64 / n as f64).collect()
    }

    fn projects(&self) -> bool {
        self.config.projected && !matches!(self.perturbation, Perturbation::StopAfter(_))
    }

    /// Perturbed affine rate coefficients for every step.
    fn rate_table(&self, times: &[f64]) -> Vec<[f64; 4]> {
        let n = self.config.n_steps;
        let t_end = self.strategy.params().horizon;
        let dt = t_end / n as f64;
        times[..n]
            .iter()
            .map(|&t| match self.perturbation {
                Perturbation::None => self.strategy.affine_rate(t),
                Perturbation::Scale(k) => self.strategy.affine_rate(t).map(|c| k * c),
                Perturbation::Drift(c) => {
                    let mut a = self.strategy.affine_rate(t);
                    a[0] += c;
                    a
                }
                Perturbation::TimeShift(tau) => self.strategy.affine_rate((t + tau).min(t_end - dt)),
                Perturbation::StopAfter(t0) => {
                    if t >= t0 {
                        [0.0; 4]
                    } else {
                        self.strategy.affine_rate(t)
                    }
                }
            })
            .collect()
    }

    fn validate_config(&self) -> Result<()> {
        if self.config.n_steps < 2 {
            return Err(Error::Precondition("n_steps must be at least 2".into()));
        }
        if self.config.n_paths == 0 {
            return Err(Error::Precondition("n_paths must be positive".into()));
        }
        if !self.config.n_steps.is_multiple_of(CHECKPOINTS) {
            return Err(Error::Precondition(format!(
                "n_steps must be a multiple of {CHECKPOINTS}"
            )));
        }
        Ok(())
    }

    /// Summaries of all paths, in path order.
    pub fn run(&self) -> Result<Vec<PathSummary>> {
        self.validate_config()?;
        let ctx = self.context()?;
        (0..self.config.n_paths)
            .into_par_iter()
            .map(|i| self.path(&ctx, i, None))
            .collect()
    }

    /// Full records of the first `count` paths (same draws as [`Simulator::run`]).
    pub fn bundles(&self, count: usize) -> Result<Vec<PathBundle>> {
        self.validate_config()?;
        let ctx = self.context()?;
        (0..count.min(self.config.n_paths))
            .map(|i| {
                let mut b = self.empty_bundle(i, &ctx.times);
                self.path(&ctx, i, Some(&mut b))?;
                Ok(b)
            })
            .collect()
    }

    fn empty_bundle(&self, i: usize, times: &[f64]) -> PathBundle {
        let cap = times.len();
        PathBundle {
            path_index: i,
            seed: self.config.seed,
            beta: 0.0,
            times: times.to_vec(),
            s: Vec::with_capacity(cap),
            z: Vec::with_capacity(cap),
            z_tilde: Vec::with_capacity(cap),
            x: Vec::with_capacity(cap),
            y: Vec::with_capacity(cap),
            price: Vec::with_capacity(if self.pricing.is_some() { cap } else { 0 }),
        }
    }

    fn context(&self) -> Result<Context<'_>> {
        let times = self.times();
        let p = self.strategy.params();
        let signal_sd = times.windows(2).map(|w| p.signal_integral(w[0], w[1]).sqrt()).collect();
        let prices = self.pricing.map(|r| r.grid(&times)).transpose()?;
        Ok(Context {
            rates: self.rate_table(&times),
            signal_sd,
            prices,
            times,
        })
    }

    fn path(&self, ctx: &Context<'_>, index: usize, mut rec: Option<&mut PathBundle>) -> Result<PathSummary> {
        let p = self.strategy.params();
        let n = self.config.n_steps;
        let dt = p.horizon / n as f64;
        let sq_dt = dt.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

        let beta = p.m_beta + p.sigma_beta * normal(&mut rng);
        let s0 = p.sigma0 * normal(&mut rng);
        let (mut s, mut z, mut x, mut y) = (s0, 0.0f64, 0.0f64, 0.0f64);
        let price_at = |k: usize, y: f64| ctx.prices.as_ref().map_or(f64::NAN, |g| g.price(k, y));
        let mut price = price_at(0, 0.0);

        let mut summary = PathSummary {
            beta,
            s0,
            s_t: 0.0,
            z_t: 0.0,
            z_tilde_t: 0.0,
            x_t: 0.0,
            y_t: 0.0,
            target: f64::NAN,
            qv: 0.0,
            incr_sq: 0.0,
            lag_sums: [0.0; MAX_LAG],
            n_incr: n,
            checkpoint_prices: [f64::NAN; CHECKPOINTS + 1],
            marginal_value: 0.0,
            gamma_c: f64::NAN,
            wealth: WealthBreakdown::default(),
        };
        summary.checkpoint_prices[0] = price;
        let stride = n / CHECKPOINTS;
        let mut ring = [0.0f64; MAX_LAG];
        let (mut cost, mut covar) = (0.0, 0.0);
        let project = self.projects() && self.strategy.target(0.0, 0.0).is_some();
        let norm = 1.0 / (p.sigma * sq_dt);

        if let Some(b) = rec.as_deref_mut() {
            b.beta = beta;
            push_state(b, s, z, beta, x, y, price);
        }

        for k in 0..n {
            let dw = p.sigma * sq_dt * normal(&mut rng);
            let ds = if ctx.signal_sd[k] > 0.0 {
                ctx.signal_sd[k] * normal(&mut rng)
            } else {
                0.0
            };
            let c = &ctx.rates[k];
            let rate = (c[0] + c[1] * y + c[2] * (z - beta) + c[3] * s).clamp(-RATE_CAP, RATE_CAP);
            let z_next = z + dw;
            let s_next = s + ds;
            let x_next = if project && k == n - 1 {
                self.strategy.target(z_next - beta, s_next).expect("target") - z_next
            } else {
                x + rate * dt
            };
            let y_next = x_next + z_next;
            if !(x_next.is_finite() && y_next.is_finite()) {
                return Err(Error::SimulationBlowup { path: index, step: k });
            }
            let dy = y_next - y;
            let dx = x_next - x;
            let e = dy * norm;
            summary.qv += dy * dy;
            summary.incr_sq += e * e;
            for (l, sum) in summary.lag_sums.iter_mut().enumerate() {
                if k > l {
                    *sum += e * ring[(k - l - 1) % MAX_LAG];
                }
            }
            ring[k % MAX_LAG] = e;

            let price_next = price_at(k + 1, y_next);
            cost += price * dx;
            covar += dx * (price_next - price);
            (s, z, x, y, price) = (s_next, z_next, x_next, y_next, price_next);
            if (k + 1) % stride == 0 {
                summary.checkpoint_prices[(k + 1) / stride] = price;
            }
            if let Some(b) = rec.as_deref_mut() {
                push_state(b, s, z, beta, x, y, price);
            }
        }

        let family: Option<&SurplusFamily> = self.pricing.map(|r| r.transport().family());
        summary.s_t = s;
        summary.z_t = z;
        summary.z_tilde_t = z - beta;
        summary.x_t = x;
        summary.y_t = y;
        summary.target = self.strategy.target(z - beta, s).unwrap_or(f64::NAN);
        if let (Some(fam), Some(rule)) = (family, self.pricing) {
            summary.marginal_value = fam.marginal_value(beta + x, s);
            summary.gamma_c = rule.transport().gamma_c(z - beta, s);
            summary.wealth = WealthBreakdown::finish(fam.value(beta + x, s), cost, covar);
        }
        Ok(summary)
    }
}

struct Context<'a> {
    times: Vec<f64>,
    rates: Vec<[f64; 4]>,
    signal_sd: Vec<f64>,
    prices: Option<PriceGrid<'a>>,
}

fn push_state(b: &mut PathBundle, s: f64, z: f64, beta: f64, x: f64, y: f64, price: f64) {
    b.s.push(s);
    b.z.push(z);
    b.z_tilde.push(z - beta);
    b.x.push(x);
    b.y.push(y);
    if price.is_finite() {
        b.price.push(price);
    }
}

/// Insider wealth along a recorded path:
/// `V(beta + X_T, S_T) - sum P_k dX_k - sum dX_k dP_k`.
pub fn wealth(path: &PathBundle, family: &SurplusFamily) -> Result<WealthBreakdown> {
    if path.price.len() != path.x.len() {
        return Err(Error::Precondition("path has no prices".into()));
    }
    let n = path.x.len() - 1;
    let (mut cost, mut covar) = (0.0, 0.0);
    for k in 0..n {
        let dx = path.x[k + 1] - path.x[k];
        cost += path.price[k] * dx;
        covar += dx * (path.price[k + 1] - path.price[k]);
    }
    let tv = family.value(path.beta + path.x[n], path.s[n]);
    Ok(WealthBreakdown::finish(tv, cost, covar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarketParams, ScalarFn};
    use crate::transport::solve;
    use std::sync::Arc;

    fn kyle() -> (Strategy, PricingRule) {
        let p = MarketParams::unit_static();
        let fam = SurplusFamily::Linear {
            f: ScalarFn::identity(),
        };
        let s = Strategy::equilibrium(&p, &fam).unwrap();
        let r = PricingRule::new(Arc::new(solve(&p, &fam).unwrap())).unwrap();
        (s, r)
    }

    fn cfg(projected: bool) -> SimConfig {
        SimConfig {
            n_paths: 16,
            n_steps: 64,
            seed: 11,
            projected,
        }
    }

    #[test]
    fn conservation_and_projection() {
        let (s, r) = kyle();
        let sim = Simulator::new(&s, Some(&r), cfg(true));
        for b in sim.bundles(4).unwrap() {
            for k in 0..b.y.len() {
                assert_eq!(b.y[k], b.x[k] + b.z[k]);
            }
            let n = b.y.len() - 1;
            assert!((b.y[n] - s.target(b.z_tilde[n], b.s[n]).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn summaries_match_bundles() {
        let (s, r) = kyle();
        let sim = Simulator::new(&s, Some(&r), cfg(false));
        let sums = sim.run().unwrap();
        let bundles = sim.bundles(3).unwrap();
        let fam = r.transport().family();
        for (sm, b) in sums.iter().zip(&bundles) {
            assert_eq!(sm.y_t, *b.y.last().unwrap());
            let w = wealth(b, fam).unwrap();
            assert!((w.total - sm.wealth.total).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_are_independent_of_run_size() {
        let (s, r) = kyle();
        let a = Simulator::new(&s, Some(&r), cfg(true)).run().unwrap();
        let mut big = cfg(true);
        big.n_paths = 40;
        let b = Simulator::new(&s, Some(&r), big).run().unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.y_t, v.y_t);
            assert_eq!(u.wealth.total, v.wealth.total);
        }
    }

    #[test]
    fn no_trading_means_flow_is_noise() {
        let (_, r) = kyle();
        let s = Strategy::no_trade(&MarketParams::unit_static());
        for b in Simulator::new(&s, Some(&r), cfg(true)).bundles(3).unwrap() {
            assert_eq!(b.y, b.z);
            assert!(b.x.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn stop_after_freezes_position() {
        let (s, r) = kyle();
        let sim = Simulator::new(&s, Some(&r), cfg(true)).with_perturbation(Perturbation::StopAfter(0.5));
        for b in sim.bundles(2).unwrap() {
            assert_eq!(b.x[32], *b.x.last().unwrap());
        }
    }
}
