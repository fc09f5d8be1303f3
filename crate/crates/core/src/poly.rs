//! Dense univariate polynomials with the few operations the solver needs:
//! composition with an affine map, antiderivatives, and Gaussian smoothing.

use serde::{Deserialize, Serialize};

/// Coefficients in ascending order: `c[0] + c[1] x + c[2] x^2 + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self::new(vec![0.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero();
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Self {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(0.0);
        out.extend(self.coeffs.iter().enumerate().map(|(k, &c)| c / (k as f64 + 1.0)));
        Self::new(out)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * a).collect())
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let mut out = self.coeffs.clone();
        out[0] += c;
        Self::new(out)
    }

    /// `x -> p(a x + b)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> Self {
        // Horner in polynomial arithmetic.
        let mut acc = vec![0.0; 1];
        for &c in self.coeffs.iter().rev() {
            let mut next = vec![0.0; acc.len() + 1];
            for (k, &v) in acc.iter().enumerate() {
                next[k] += v * b;
                next[k + 1] += v * a;
            }
            next[0] += c;
            acc = next;
        }
        Self::new(acc)
    }

    /// `y -> E[p(y + X)]` for `X ~ N(0, v)`, i.e. `exp(v/2 D^2) p`.
    pub fn gaussian_smooth(&self, v: f64) -> Self {
        let mut out = self.coeffs.clone();
        let mut term = self.clone();
        let mut factor = 1.0;
        let mut j = 0usize;
        loop {
            term = term.derivative().derivative();
            if term.coeffs.iter().all(|&c| c == 0.0) {
                break;
            }
            j += 1;
            factor *= 0.5 * v / j as f64;
            for (k, &c) in term.coeffs.iter().enumerate() {
                out[k] += factor * c;
            }
        }
        Self::new(out)
    }

    /// `E[p(X)]` for `X ~ N(mean, var)`.
    pub fn gaussian_mean(&self, mean: f64, var: f64) -> f64 {
        self.gaussian_smooth(var).eval(mean)
    }
}
