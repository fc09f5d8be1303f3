//! Gaussian expectations by Gauss–Hermite quadrature and a small adaptive
//! Simpson integrator for antiderivatives of user-supplied functions.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussHermite;

pub const DEFAULT_ORDER: usize = 64;
pub const MAX_ORDER: usize = 512;

/// Nodes and weights for `E[g(X)]`, `X ~ N(0, 1)`.
#[derive(Debug)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    fn build(order: usize) -> Self {
        let rule = GaussHermite::new(NonZeroUsize::new(order).expect("order > 0"));
        let scale = std::f64::consts::PI.sqrt().recip();
        let mut pairs: Vec<(f64, f64)> = rule
            .iter()
            .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w * scale))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Symmetrize: removes the eigen-solver's odd-moment noise.
        let n = pairs.len();
        for i in 0..n / 2 {
            let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
            let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[n - 1 - i] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// `E[g(mean + sd Z)]`.
    pub fn expect(&self, mean: f64, sd: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(mean + sd * x))
            .sum()
    }
}

/// Cached rules for orders 64, 128, 256, 512 (and any other order on demand
/// through [`NormalRule`] construction).
pub fn normal_rule(order: usize) -> &'static NormalRule {
    static CACHE: [OnceLock<NormalRule>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match order {
        64 => 0,
        128 => 1,
        256 => 2,
        512 => 3,
        _ => panic!("unsupported quadrature order {order}"),
    };
    CACHE[slot].get_or_init(|| NormalRule::build(order))
}

/// Doubles the order from 64 until successive estimates of every probe agree
/// to `rtol`. Returns the chosen order or `None` if 512 is not enough.
pub fn select_order(rtol: f64, probe: impl Fn(&NormalRule) -> Vec<f64>) -> Option<usize> {
    let mut order = DEFAULT_ORDER;
    let mut prev = probe(normal_rule(order));
    while order < MAX_ORDER {
        let next_order = order * 2;
        let next = probe(normal_rule(next_order));
        let agree = prev
            .iter()
            .zip(&next)
            .all(|(a, b)| (a - b).abs() <= rtol * (1.0 + b.abs()) && b.is_finite());
        if agree {
            return Some(order);
        }
        order = next_order;
        prev = next;
    }
    None
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 30)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // below roundoff of the panel itself nothing further can be gained
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn even_moments_are_exact() {
        for &order in &[64, 128, 256, 512] {
            let r = normal_rule(order);
            assert_relative_eq!(r.expect(0.0, 1.0, |x| x * x), 1.0, epsilon = 1e-12);
            assert_relative_eq!(r.expect(0.0, 1.0, |x| x.powi(4)), 3.0, epsilon = 1e-11);
            assert_relative_eq!(r.expect(0.0, 1.0, |x| x.powi(6)), 15.0, epsilon = 1e-10);
            assert!(r.expect(0.0, 1.0, |x| x.powi(3)).abs() < 1e-14);
        }
    }

    #[test]
    fn shifted_exponential_moment() {
        // E[exp(a X)] = exp(a^2 v / 2)
        let r = normal_rule(64);
        assert_relative_eq!(
            r.expect(0.3, 0.8, f64::exp),
            (0.3f64 + 0.32).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = simpson(&|x: f64| x.cos(), 0.0, 2.0, 1e-12);
        assert_relative_eq!(v, 2.0f64.sin(), epsilon = 1e-10);
    }
}
