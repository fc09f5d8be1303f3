//! The market maker's pricing rule: the heat-semigroup extension of the
//! transport potential,
//! `Gamma(t, y) = E[Gamma(y + sigma (W_T - W_t))]`, `H(t, y) = d/dy Gamma(t, y)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::poly::Polynomial;
use crate::quadrature::{normal_rule, select_order};
use crate::transport::TransportSolution;

#[derive(Debug, Clone)]
enum Method {
    /// `Gamma'` polynomial of degree <= 3: Gaussian moments in closed form.
    Closed { value: Polynomial, slope: Polynomial },
    /// Gauss–Hermite of fixed order, chosen once at construction.
    Quadrature { order: usize },
}

#[derive(Debug, Clone)]
pub struct PricingRule {
    transport: Arc<TransportSolution>,
    method: Method,
}

const FD_DT: f64 = 1e-4;
const FD_DY: f64 = 1e-3;

impl PricingRule {
    pub fn new(transport: Arc<TransportSolution>) -> Result<Self> {
        let method = match (transport.value_polynomial(), transport.slope_polynomial()) {
            (Some(value), Some(slope)) if slope.degree() <= 3 => Method::Closed {
                value: value.clone(),
                slope: slope.clone(),
            },
            _ => {
                let sd = transport.params().noise_var().sqrt();
                let probes = [-3.0, -1.0, 0.0, 1.0, 3.0].map(|k| k * sd);
                let tr = &transport;
                let order = select_order(1e-9, |rule| {
                    probes
                        .iter()
                        .flat_map(|&y| {
                            [
                                rule.expect(y, sd, |u| tr.gamma_slope(u)),
                                rule.expect(y, sd, |u| tr.gamma(u)),
                            ]
                        })
                        .collect()
                })
                .ok_or_else(|| Error::GrowthViolation {
                    context: "pricing rule".into(),
                    order: crate::quadrature::MAX_ORDER,
                })?;
                Method::Quadrature { order }
            }
        };
        Ok(Self { transport, method })
    }

    pub fn transport(&self) -> &TransportSolution {
        &self.transport
    }

    pub fn transport_arc(&self) -> &Arc<TransportSolution> {
        &self.transport
    }

    /// Quadrature order in use, `None` for closed-form pricing.
    pub fn quadrature_order(&self) -> Option<usize> {
        match self.method {
            Method::Closed { .. } => None,
            Method::Quadrature { order } => Some(order),
        }
    }

    fn residual_var(&self, t: f64) -> Result<f64> {
        let p = self.transport.params();
        if !(0.0..=p.horizon).contains(&t) {
            return Err(Error::Horizon { t, horizon: p.horizon });
        }
        Ok(p.sigma * p.sigma * (p.horizon - t))
    }

    /// `H(t, y)`, defined on `[0, T]`.
    pub fn price(&self, t: f64, y: f64) -> Result<f64> {
        let v = self.residual_var(t)?;
        Ok(self.smooth(v, y, true))
    }

    /// `Gamma(t, y)`, defined on `[0, T]`.
    pub fn value(&self, t: f64, y: f64) -> Result<f64> {
        let v = self.residual_var(t)?;
        Ok(self.smooth(v, y, false))
    }

    fn smooth(&self, v: f64, y: f64, slope: bool) -> f64 {
        if v == 0.0 {
            return if slope {
                self.transport.gamma_slope(y)
            } else {
                self.transport.gamma(y)
            };
        }
        match &self.method {
            Method::Closed { value, slope: s } => {
                let p = if slope { s } else { value };
                p.gaussian_mean(y, v)
            }
            Method::Quadrature { order } => {
                let rule = normal_rule(*order);
                let sd = v.sqrt();
                if slope {
                    rule.expect(y, sd, |u| self.transport.gamma_slope(u))
                } else {
                    rule.expect(y, sd, |u| self.transport.gamma(u))
                }
            }
        }
    }

    /// Prices on a fixed time grid, with per-time closed forms precomputed.
    pub fn grid(&self, times: &[f64]) -> Result<PriceGrid<'_>> {
        let vars = times
            .iter()
            .map(|&t| self.residual_var(t))
            .collect::<Result<Vec<f64>>>()?;
        let polys = match &self.method {
            Method::Closed { slope, .. } => Some(vars.iter().map(|&v| slope.gaussian_smooth(v)).collect()),
            Method::Quadrature { .. } => None,
        };
        Ok(PriceGrid {
            rule: self,
            vars,
            polys,
        })
    }

    /// `d_t Gamma + sigma^2/2 d_yy Gamma` by central differences; requires
    /// `t` at least one time step inside `(0, T)`.
    pub fn heat_residual(&self, t: f64, y: f64) -> Result<f64> {
        let p = self.transport.params();
        let ht = FD_DT * p.horizon;
        let hy = FD_DY * p.noise_var().sqrt();
        if t - ht < 0.0 || t + ht > p.horizon {
            return Err(Error::Horizon { t, horizon: p.horizon });
        }
        let dt = (self.value(t + ht, y)? - self.value(t - ht, y)?) / (2.0 * ht);
        let dyy = (self.value(t, y + hy)? - 2.0 * self.value(t, y)? + self.value(t, y - hy)?) / (hy * hy);
        Ok(dt + 0.5 * p.sigma * p.sigma * dyy)
    }

    /// `|d_y Gamma(t, y) - H(t, y)|` with a central difference in `y`.
    pub fn derivative_consistency(&self, t: f64, y: f64) -> Result<f64> {
        let hy = FD_DY * self.transport.params().noise_var().sqrt();
        let fd = (self.value(t, y + hy)? - self.value(t, y - hy)?) / (2.0 * hy);
        Ok((fd - self.price(t, y)?).abs())
    }
}

#[derive(Debug)]
pub struct PriceGrid<'a> {
    rule: &'a PricingRule,
    vars: Vec<f64>,
    polys: Option<Vec<Polynomial>>,
}

impl PriceGrid<'_> {
    /// `H(t_k, y)`.
    pub fn price(&self, k: usize, y: f64) -> f64 {
        match &self.polys {
            Some(p) => p[k].eval(y),
            None => self.rule.smooth(self.vars[k], y, true),
        }
    }
}
