//! Bootstrap particle filter for `(Ztilde_t, S_t)` given a discretely observed
//! order flow. The observation noise is the same Brownian motion that drives
//! `Ztilde`, so particles move along the observed increments
//! (`dZtilde = dY - A dt`) and carry the Girsanov likelihood
//! `exp(int A dY / sigma^2 - int A^2 dt / (2 sigma^2))`.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulate::RATE_CAP;
use crate::strategy::Strategy;

#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub t: f64,
    pub particles: Vec<[f64; 2]>,
    /// Normalized weights.
    pub weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            m[0] += w * p[0];
            m[1] += w * p[1];
        }
        m
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        let m = self.mean();
        let mut c = [[0.0; 2]; 2];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            let d = [p[0] - m[0], p[1] - m[1]];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += w * d[i] * d[j];
                }
            }
        }
        c
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParticleConfig {
    pub n_particles: usize,
    pub seed: u64,
    /// Resample when `ESS < resample_fraction * N`.
    pub resample_fraction: f64,
    /// Abort when `ESS` drops below this.
    pub min_ess: f64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            seed: 0,
            resample_fraction: 0.5,
            min_ess: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ParticleSnapshot {
    pub step: usize,
    pub t: f64,
    pub y: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// ESS of the weights at the snapshot, before any resampling at that step.
    pub ess: f64,
    /// Standard error of `mean` from the time-0 ancestry of the particles:
    /// `sqrt(sum_e (sum_{i: eve(i) = e} w_i (x_i - mean))^2)`. Unlike
    /// `sqrt(var / ess)` it accounts for the duplication left by resampling.
    pub genealogy_se: [f64; 2],
}

/// Runs the filter along `times[0..=n]`, `y[0..=n]` and records snapshots
/// after the requested numbers of processed increments.
pub fn run_particle_filter(
    strategy: &Strategy,
    times: &[f64],
    y: &[f64],
    config: &ParticleConfig,
    snapshot_steps: &[usize],
) -> Result<(Vec<ParticleSnapshot>, ParticleCloud)> {
    if times.len() != y.len() || times.is_empty() {
        return Err(Error::Precondition(
            "times and flow must have equal, positive length".into(),
        ));
    }
    let n = config.n_particles;
    if n < 2 {
        return Err(Error::Precondition("need at least two particles".into()));
    }
    let p = strategy.params();
    let s2 = p.sigma * p.sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut particles: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let b: f64 = rng.sample(StandardNormal);
            let s: f64 = rng.sample(StandardNormal);
            [-(p.m_beta + p.sigma_beta * b), p.sigma0 * s]
        })
        .collect();
    let mut logw = vec![0.0; n];
    let mut weights = vec![1.0 / n as f64; n];
    let mut eve: Vec<usize> = (0..n).collect();
    let mut lineage = vec![[0.0f64; 2]; n];
    let mut snapshots = Vec::with_capacity(snapshot_steps.len());
    let steps = times.len() - 1;

    let mut record =
        |k: usize, particles: &[[f64; 2]], weights: &[f64], eve: &[usize], snaps: &mut Vec<ParticleSnapshot>| {
            if snapshot_steps.contains(&k) {
                let cloud = ParticleCloud {
                    t: times[k],
                    particles: particles.to_vec(),
                    weights: weights.to_vec(),
                };
                let mean = cloud.mean();
                lineage.iter_mut().for_each(|l| *l = [0.0; 2]);
                for ((x, &w), &e) in particles.iter().zip(weights).zip(eve) {
                    lineage[e][0] += w * (x[0] - mean[0]);
                    lineage[e][1] += w * (x[1] - mean[1]);
                }
                let var = lineage
                    .iter()
                    .fold([0.0; 2], |acc, l| [acc[0] + l[0] * l[0], acc[1] + l[1] * l[1]]);
                snaps.push(ParticleSnapshot {
                    step: k,
                    t: times[k],
                    y: y[k],
                    mean,
                    cov: cloud.cov(),
                    ess: cloud.ess(),
                    genealogy_se: [var[0].sqrt(), var[1].sqrt()],
                });
            }
        };
    record(0, &particles, &weights, &eve, &mut snapshots);

    for k in 0..steps {
        let (t0, t1) = (times[k], times[k + 1]);
        let dt = t1 - t0;
        let dy = y[k + 1] - y[k];
        let sd_s = p.signal_integral(t0, t1).sqrt();
        for (i, part) in particles.iter_mut().enumerate() {
            let a = strategy
                .rate_unchecked(t0, y[k], part[0], part[1])
                .clamp(-RATE_CAP, RATE_CAP);
            logw[i] += (a * dy - 0.5 * a * a * dt) / s2;
            part[0] += dy - a * dt;
            if sd_s > 0.0 {
                let xi: f64 = rng.sample(StandardNormal);
                part[1] += sd_s * xi;
            }
        }
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::FilterDegeneracy { step: k + 1, ess: 0.0 });
        }
        let mut total = 0.0;
        for (w, &l) in weights.iter_mut().zip(&logw) {
            *w = (l - max).exp();
            total += *w;
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        if ess < config.min_ess {
            return Err(Error::FilterDegeneracy { step: k + 1, ess });
        }
        record(k + 1, &particles, &weights, &eve, &mut snapshots);
        if ess < config.resample_fraction * n as f64 {
            let idx = systematic_resample(&weights, &mut rng);
            particles = idx.iter().map(|&j| particles[j]).collect();
            eve = idx.iter().map(|&j| eve[j]).collect();
            logw.iter_mut().for_each(|l| *l = 0.0);
            weights.iter_mut().for_each(|w| *w = 1.0 / n as f64);
        }
    }
    let cloud = ParticleCloud {
        t: times[steps],
        particles,
        weights,
    };
    Ok((snapshots, cloud))
}

/// Ancestor indices.
fn systematic_resample(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for _ in 0..n {
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
        u += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketParams;

    #[test]
    fn no_trading_leaves_signal_prior_and_shifts_position() {
        let mut p = MarketParams::unit_static();
        p.sigma_beta = 0.5;
        p.m_beta = 0.2;
        let strat = Strategy::no_trade(&p);
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let y: Vec<f64> = times.iter().map(|t| (3.0 * t).sin()).collect();
        let cfg = ParticleConfig {
            n_particles: 2000,
            seed: 7,
            ..Default::default()
        };
        let (snaps, cloud) = run_particle_filter(&strat, &times, &y, &cfg, &[0, 10]).unwrap();
        assert_eq!(snaps.len(), 2);
        assert!(cloud.weights.iter().all(|&w| (w - 1.0 / 2000.0).abs() < 1e-15));
        let shift = snaps[1].mean[0] - snaps[0].mean[0];
        assert!((shift - y[10]).abs() < 1e-12);
        assert_eq!(snaps[1].mean[1], snaps[0].mean[1]);
    }
}
