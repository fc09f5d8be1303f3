//! Exact discrete optimal transport on small instances, used as an independent
//! check of the closed-form potentials.
//!
//! Two routes: a transportation simplex (MODI potentials, northwest-corner
//! start, lexicographic pivoting) for arbitrary marginals, and brute-force
//! permutation enumeration for uniform marginals of equal size.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::FamilyKind;
use crate::transport::TransportSolution;

pub const MAX_ATOMS: usize = 12;
const PERMUTATION_CAP: usize = 9;
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCoupling {
    /// Row-major `rows x cols` plan.
    pub plan: Vec<Vec<f64>>,
    pub value: f64,
}

/// A discrete instance: surplus matrix and marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleInstance {
    pub surplus: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl OracleInstance {
    pub fn solve(&self) -> Result<DiscreteCoupling> {
        transport_simplex(&self.surplus, &self.mu, &self.nu)
    }

    /// Long-format CSV: `i,j,mu_i,nu_j,surplus_ij`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,mu_i,nu_j,surplus\n");
        for (i, row) in self.surplus.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let _ = writeln!(out, "{i},{j},{:.16e},{:.16e},{:.16e}", self.mu[i], self.nu[j], c);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("oracle csv: {msg}"));
        let mut cells = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let i: usize = f[0].trim().parse().map_err(|_| bad("row index"))?;
            let j: usize = f[1].trim().parse().map_err(|_| bad("column index"))?;
            let nums: Vec<f64> = f[2..]
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("number"))?;
            cells.push((i, j, nums[0], nums[1], nums[2]));
        }
        let rows = cells.iter().map(|c| c.0 + 1).max().ok_or_else(|| bad("empty"))?;
        let cols = cells.iter().map(|c| c.1 + 1).max().ok_or_else(|| bad("empty"))?;
        if cells.len() != rows * cols {
            return Err(bad("incomplete matrix"));
        }
        let mut inst = OracleInstance {
            surplus: vec![vec![0.0; cols]; rows],
            mu: vec![0.0; rows],
            nu: vec![0.0; cols],
        };
        for (i, j, mu, nu, c) in cells {
            inst.surplus[i][j] = c;
            inst.mu[i] = mu;
            inst.nu[j] = nu;
        }
        Ok(inst)
    }
}

fn check_instance(surplus: &[Vec<f64>], mu: &[f64], nu: &[f64]) -> Result<()> {
    let (m, n) = (mu.len(), nu.len());
    if m == 0 || n == 0 {
        return Err(Error::Precondition("empty marginal".into()));
    }
    if m > MAX_ATOMS || n > MAX_ATOMS {
        return Err(Error::OracleSize {
            rows: m,
            cols: n,
            cap: MAX_ATOMS,
        });
    }
    if surplus.len() != m || surplus.iter().any(|r| r.len() != n) {
        return Err(Error::Precondition("surplus matrix shape mismatch".into()));
    }
    if mu.iter().chain(nu).any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Precondition("weights must be non-negative".into()));
    }
    let (sm, sn): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (sm - sn).abs() > 1e-9 * sm.max(1.0) {
        return Err(Error::Precondition(format!("marginal masses differ: {sm} vs {sn}")));
    }
    if surplus.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Domain("oracle surplus".into()));
    }
    Ok(())
}

/// Maximizes `sum_ij c_ij x_ij` over couplings of `mu` and `nu`.
pub fn transport_simplex(surplus: &[Vec<f64>], mu: &[f64], nu: &[f64]) -> Result<DiscreteCoupling> {
    check_instance(surplus, mu, nu)?;
    let (m, n) = (mu.len(), nu.len());
    let cost = |i: usize, j: usize| -surplus[i][j];

    // Northwest corner start with exactly m + n - 1 basic cells.
    let mut x = vec![vec![0.0; n]; m];
    let mut basic = vec![vec![false; n]; m];
    let mut supply = mu.to_vec();
    let mut demand = nu.to_vec();
    // Rescale column mass to rows so rounding cannot starve the last cell.
    let ratio = supply.iter().sum::<f64>() / demand.iter().sum::<f64>();
    demand.iter_mut().for_each(|d| *d *= ratio);
    let (mut i, mut j) = (0, 0);
    loop {
        let q = supply[i].min(demand[j]);
        x[i][j] = q;
        basic[i][j] = true;
        supply[i] -= q;
        demand[j] -= q;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i < m - 1 && (j == n - 1 || supply[i] <= demand[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let max_iter = 50 * (m + n) * (m + n) + 1000;
    for _ in 0..max_iter {
        let (u, v) = potentials(&basic, &cost, m, n);
        // Bland: first cell in lexicographic order with negative reduced cost.
        let mut entering = None;
        'scan: for (i, row) in basic.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                if !b && cost(i, j) - u[i] - v[j] < -TOL * (1.0 + cost(i, j).abs()) {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let value = (0..m)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| x[i][j] * surplus[i][j])
                .sum();
            return Ok(DiscreteCoupling { plan: x, value });
        };
        let cycle = find_cycle(&basic, ei, ej, m, n);
        // Cells at odd positions lose mass.
        let mut theta = f64::INFINITY;
        let mut leaving = (usize::MAX, usize::MAX);
        for &(ci, cj) in cycle.iter().skip(1).step_by(2) {
            let q = x[ci][cj];
            if q < theta - TOL || ((q - theta).abs() <= TOL && (ci, cj) < leaving) {
                theta = q;
                leaving = (ci, cj);
            }
        }
        for (k, &(ci, cj)) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                x[ci][cj] += theta;
            } else {
                x[ci][cj] -= theta;
            }
        }
        basic[ei][ej] = true;
        basic[leaving.0][leaving.1] = false;
        x[leaving.0][leaving.1] = 0.0;
    }
    Err(Error::Precondition("transportation simplex did not terminate".into()))
}

fn potentials(basic: &[Vec<bool>], cost: &dyn Fn(usize, usize) -> f64, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..m {
            for j in 0..n {
                if !basic[i][j] {
                    continue;
                }
                if !u[i].is_nan() && v[j].is_nan() {
                    v[j] = cost(i, j) - u[i];
                    changed = true;
                } else if u[i].is_nan() && !v[j].is_nan() {
                    u[i] = cost(i, j) - v[j];
                    changed = true;
                }
            }
        }
    }
    (u, v)
}

/// Cycle through the basis tree starting with the entering cell, alternating
/// row and column moves.
fn find_cycle(basic: &[Vec<bool>], ei: usize, ej: usize, m: usize, n: usize) -> Vec<(usize, usize)> {
    // Nodes 0..m are rows, m..m+n columns. Path from column ej to row ei in
    // the basis tree, then close with the entering cell.
    let total = m + n;
    let mut prev = vec![usize::MAX; total];
    let start = m + ej;
    let goal = ei;
    let mut queue = std::collections::VecDeque::from([start]);
    prev[start] = start;
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        let neighbours: Vec<usize> = if node < m {
            (0..n).filter(|&j| basic[node][j]).map(|j| m + j).collect()
        } else {
            (0..m).filter(|&i| basic[i][node - m]).collect()
        };
        for nb in neighbours {
            if prev[nb] == usize::MAX {
                prev[nb] = node;
                queue.push_back(nb);
            }
        }
    }
    // Walk back from the row to the column, emitting cells.
    let mut cells = vec![(ei, ej)];
    let mut node = goal;
    while node != start {
        let p = prev[node];
        let cell = if node < m { (node, p - m) } else { (p, node - m) };
        cells.push(cell);
        node = p;
    }
    cells
}

/// Uniform marginals of equal size: the optimum is a permutation.
pub fn enumerate_permutations(surplus: &[Vec<f64>]) -> Result<DiscreteCoupling> {
    let n = surplus.len();
    if n == 0 || surplus.iter().any(|r| r.len() != n) {
        return Err(Error::Precondition("square surplus matrix required".into()));
    }
    if n > PERMUTATION_CAP {
        return Err(Error::OracleSize {
            rows: n,
            cols: n,
            cap: PERMUTATION_CAP,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let score = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| surplus[i][j]).sum::<f64>();
    let mut best = perm.clone();
    let mut best_val = score(&perm);
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let mut k = 1;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            let v = score(&perm);
            if v > best_val + TOL {
                best_val = v;
                best.clone_from(&perm);
            }
            c[k] += 1;
            k = 1;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    let w = 1.0 / n as f64;
    let mut plan = vec![vec![0.0; n]; n];
    for (i, &j) in best.iter().enumerate() {
        plan[i][j] = w;
    }
    Ok(DiscreteCoupling {
        plan,
        value: best_val * w,
    })
}

/// Quantized marginals of a transport problem together with the discrete
/// dual objective of the closed-form potentials.
#[derive(Debug, Clone)]
pub struct QuantizedProblem {
    pub instance: OracleInstance,
    /// Atoms `(ztilde, s)` of the information side.
    pub sources: Vec<[f64; 2]>,
    /// Atoms `y` of the order-flow side.
    pub targets: Vec<f64>,
    /// `E_mu_q[Gamma^c] + E_nu_q[Gamma]`, an upper bound on the LP value that
    /// is attained when the map sends atoms to atoms.
    pub dual_value: f64,
}

/// Conditional means of `N(0, 1)` on `k` equal-probability bins.
pub fn normal_bin_means(k: usize) -> Vec<f64> {
    let std = Normal::standard();
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (0..k)
        .map(|i| {
            let a = std.inverse_cdf(i as f64 / k as f64);
            let b = std.inverse_cdf((i + 1) as f64 / k as f64);
            let pa = if a.is_finite() { pdf(a) } else { 0.0 };
            let pb = if b.is_finite() { pdf(b) } else { 0.0 };
            (pa - pb) * k as f64
        })
        .collect()
}

/// Quantizes `mu_T` and `nu_T` into `k` equal-mass atoms each. The source is
/// binned along the direction the map depends on, so that the map sends the
/// `i`-th source atom exactly to the `i`-th target atom.
pub fn quantize(sol: &TransportSolution, k: usize) -> Result<QuantizedProblem> {
    if k == 0 || k > MAX_ATOMS {
        return Err(Error::OracleSize {
            rows: k,
            cols: k,
            cap: MAX_ATOMS,
        });
    }
    let p = sol.params();
    let q = normal_bin_means(k);
    let (zm, zv) = p.terminal_position_law();
    let sv = p.terminal_signal_var();
    let ysd = p.noise_var().sqrt();
    let sources: Vec<[f64; 2]> = match sol.kind() {
        FamilyKind::Linear => q.iter().map(|&u| [zm, sv.sqrt() * u]).collect(),
        FamilyKind::Activist => q.iter().map(|&u| [zm + zv.sqrt() * u, 0.0]).collect(),
        FamilyKind::LinearQuadratic => {
            // Bin on U = S - psi Ztilde; atoms are E[(Ztilde, S) | U bin].
            let psi = sol.linquad().expect("linquad constants").psi;
            let var_u = sv + psi * psi * zv;
            let cov_zu = -psi * zv;
            let cov_su = sv;
            q.iter()
                .map(|&w| {
                    let du = var_u.sqrt() * w;
                    [zm + cov_zu / var_u * du, cov_su / var_u * du]
                })
                .collect()
        }
    };
    let mut targets: Vec<f64> = q.iter().map(|&u| ysd * u).collect();
    // Order targets like the images of the sources.
    let images: Vec<f64> = sources.iter().map(|a| sol.map(a[0], a[1])).collect();
    let increasing = images.windows(2).all(|w| w[1] >= w[0]);
    if !increasing {
        targets.reverse();
    }
    let fam = sol.family();
    let surplus: Vec<Vec<f64>> = sources
        .iter()
        .map(|a| targets.iter().map(|&y| fam.surplus(a[0], a[1], y)).collect())
        .collect();
    let w = 1.0 / k as f64;
    let dual_value = w * sources.iter().map(|a| sol.gamma_c(a[0], a[1])).sum::<f64>()
        + w * targets.iter().map(|&y| sol.gamma(y)).sum::<f64>();
    Ok(QuantizedProblem {
        instance: OracleInstance {
            surplus,
            mu: vec![w; k],
            nu: vec![w; k],
        },
        sources,
        targets,
        dual_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_diagonal() {
        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = transport_simplex(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.plan[0][0], 0.5);
        assert_relative_eq!(r.plan[1][1], 0.5);
    }

    #[test]
    fn anti_diagonal_needs_pivots() {
        let c = vec![vec![0.0, 0.0, 3.0], vec![0.0, 2.0, 0.0], vec![1.0, 0.0, 0.0]];
        let r = transport_simplex(&c, &[0.2, 0.3, 0.5], &[0.5, 0.3, 0.2]).unwrap();
        assert_relative_eq!(r.value, 0.2 * 3.0 + 0.3 * 2.0 + 0.5, epsilon = 1e-13);
    }

    #[test]
    fn size_cap_enforced() {
        let c = vec![vec![0.0; 13]; 13];
        let w = vec![1.0 / 13.0; 13];
        assert!(matches!(transport_simplex(&c, &w, &w), Err(Error::OracleSize { .. })));
    }

    #[test]
    fn bin_means_are_symmetric_and_centered() {
        let q = normal_bin_means(8);
        assert!(q.iter().sum::<f64>().abs() < 1e-12);
        assert_relative_eq!(q[0], -q[7], epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let inst = OracleInstance {
            surplus: vec![vec![0.1, -2.5], vec![1.0 / 3.0, 4.0], vec![0.0, 1e-300]],
            mu: vec![0.25, 0.25, 0.5],
            nu: vec![0.4, 0.6],
        };
        assert_eq!(OracleInstance::from_csv(&inst.to_csv()).unwrap(), inst);
    }

    fn lcg_matrix(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut s = seed;
        (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
                    })
                    .collect()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn simplex_matches_enumeration(seed in any::<u64>(), n in 1usize..7) {
            let c = lcg_matrix(seed, n, n);
            let w = vec![1.0 / n as f64; n];
            let lp = transport_simplex(&c, &w, &w).unwrap();
            let brute = enumerate_permutations(&c).unwrap();
            prop_assert!((lp.value - brute.value).abs() < 1e-12);
        }

        #[test]
        fn simplex_plan_is_feasible(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
            let c = lcg_matrix(seed, m, n);
            let raw_mu = lcg_matrix(seed ^ 1, 1, m)[0].iter().map(|x| x.abs() + 0.05).collect::<Vec<_>>();
            let raw_nu = lcg_matrix(seed ^ 2, 1, n)[0].iter().map(|x| x.abs() + 0.05).collect::<Vec<_>>();
            let (sm, sn): (f64, f64) = (raw_mu.iter().sum(), raw_nu.iter().sum());
            let mu: Vec<f64> = raw_mu.iter().map(|x| x / sm).collect();
            let nu: Vec<f64> = raw_nu.iter().map(|x| x / sn).collect();
            let r = transport_simplex(&c, &mu, &nu).unwrap();
            for i in 0..m {
                prop_assert!((r.plan[i].iter().sum::<f64>() - mu[i]).abs() < 1e-12);
            }
            for j in 0..n {
                prop_assert!((r.plan.iter().map(|row| row[j]).sum::<f64>() - nu[j]).abs() < 1e-12);
            }
            prop_assert!(r.plan.iter().flatten().all(|&x| x >= -1e-14));
        }
    }
}
