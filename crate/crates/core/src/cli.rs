//! Command-line front end. Every output file is a pure function of the
//! scenario and flags, so repeated runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{Equilibrium, ScenarioConfig};
use crate::error::Result;
use crate::filtering::closed_form_law;
use crate::model::{validate, ValidationReport};
use crate::simulate::{PathBundle, PathSummary, Simulator};
use crate::strategy::StrategyCoefficients;
use crate::transport::oracle::quantize;
use crate::transport::{AffineGaussian, LinQuadConstants};
use crate::verify::{run_deviations, run_suite, CheckResult, EquilibriumReport, FilterCheckConfig, SuiteConfig};

#[derive(Debug, Parser)]
#[command(
    name = "kyle-ot",
    version,
    about = "Kyle-type insider equilibria via optimal transport"
)]
pub struct Cli {
    /// Scenario TOML file; the unit static Kyle market when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub projected: Option<OnOff>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the transport problem: map, potentials, constants.
    Solve,
    /// Simulate equilibrium paths and (optionally) the canned deviations.
    Simulate,
    /// Run the verification suite; exits nonzero if any check fails.
    Verify,
    /// Prices, values and filter moments on a (t, y) grid, plus the
    /// quantized oracle instance.
    DumpGrid {
        #[arg(long, default_value_t = 21)]
        n_t: usize,
        #[arg(long, default_value_t = 41)]
        n_y: usize,
        #[arg(long, default_value_t = 8)]
        atoms: usize,
    },
}

impl Cli {
    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::static_kyle(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.paths {
            cfg.n_paths = n;
        }
        if let Some(n) = self.steps {
            cfg.n_steps = n;
        }
        if let Some(p) = self.projected {
            cfg.projected = p == OnOff::On;
        }
        Ok(cfg)
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs one command; `Ok(false)` means a verification check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = cli.scenario()?;
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Solve => solve(&cfg, &cli.out).map(|_| true),
        Command::Simulate => simulate(&cfg, &cli.out).map(|_| true),
        Command::Verify => verify(&cfg, &cli.out),
        Command::DumpGrid { n_t, n_y, atoms } => dump_grid(&cfg, &cli.out, *n_t, *n_y, *atoms).map(|_| true),
    }
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_line(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveReport {
    family: &'static str,
    strategy: &'static str,
    strategy_coefficients: StrategyCoefficients,
    lambda: f64,
    ot_value: f64,
    normalization: f64,
    linquad: Option<LinQuadConstants>,
    disintegration: AffineGaussian,
    pricing_quadrature_order: Option<usize>,
    validation: ValidationReport,
}

fn solve(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let eq = Equilibrium::from_config(cfg)?;
    let sol = &eq.transport;
    let report = SolveReport {
        family: sol.kind().name(),
        strategy: eq.strategy.name(),
        strategy_coefficients: *eq.strategy.coefficients(),
        lambda: sol.lambda(),
        ot_value: sol.ot_value(),
        normalization: sol.normalization(),
        linquad: sol.linquad().copied(),
        disintegration: *sol.disintegration(),
        pricing_quadrature_order: eq.pricing.quadrature_order(),
        validation: validate(&eq.params, &eq.family),
    };
    write_json(&out.join("solution.json"), &report)?;

    // potentials along y and the map along the source coordinates
    let sd = eq.params.noise_var().sqrt();
    let mut csv = String::from("y,gamma,gamma_slope\n");
    for k in 0..=80 {
        let y = sd * (-4.0 + 0.1 * k as f64);
        csv_line(&mut csv, &[fmt(y), fmt(sol.gamma(y)), fmt(sol.gamma_slope(y))]);
    }
    fs::write(out.join("potential.csv"), csv)?;
    let (zm, zv) = eq.params.terminal_position_law();
    let ssd = eq.params.terminal_signal_var().sqrt();
    let mut csv = String::from("ztilde,s,map,gamma_c\n");
    for i in 0..=20 {
        for j in 0..=20 {
            let z = zm + zv.sqrt() * (-3.0 + 0.3 * i as f64);
            let s = ssd * (-3.0 + 0.3 * j as f64);
            csv_line(&mut csv, &[fmt(z), fmt(s), fmt(sol.map(z, s)), fmt(sol.gamma_c(z, s))]);
        }
    }
    fs::write(out.join("map.csv"), csv)?;

    println!("family        {}", report.family);
    println!("strategy      {}", report.strategy);
    println!("lambda        {}", fmt(report.lambda));
    println!("ot_value      {}", fmt(report.ot_value));
    println!("valid         {}", report.validation.is_valid());
    Ok(())
}

fn simulate(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let eq = Equilibrium::from_config(cfg)?;
    let sim = cfg.sim_config();
    let simulator = Simulator::new(&eq.strategy, Some(&eq.pricing), sim).with_perturbation(cfg.perturbation());
    let paths = simulator.run()?;
    let deviations = if cfg.deviations {
        run_deviations(&eq, sim, &paths)?
    } else {
        Vec::new()
    };
    let report = EquilibriumReport::new(&eq, sim, &paths, deviations);
    write_json(&out.join("summary.json"), &report)?;
    fs::write(out.join("terminal.csv"), terminal_csv(&paths))?;
    let bundles = simulator.bundles(cfg.dump_paths)?;
    fs::write(out.join("paths.csv"), paths_csv(&bundles))?;

    println!("family               {}", report.family);
    println!("strategy             {}", report.strategy);
    println!("paths x steps        {} x {}", sim.n_paths, sim.n_steps);
    println!(
        "mean wealth          {} +- {}",
        fmt(report.mean_wealth.mean),
        fmt(report.mean_wealth.se)
    );
    println!(
        "E[Gamma^c] (MC)      {} +- {}",
        fmt(report.mc_expected_gamma_c.mean),
        fmt(report.mc_expected_gamma_c.se)
    );
    println!("OT value             {}", fmt(report.ot_value));
    println!("terminal KS p-value  {}", fmt(report.terminal_ks_pvalue));
    for d in &report.deviations {
        println!("delta {:<14} {} +- {}", d.label, fmt(d.delta.mean), fmt(d.delta.se));
    }
    Ok(())
}

fn terminal_csv(paths: &[PathSummary]) -> String {
    let mut csv = String::from(
        "path,beta,s0,s_t,z_tilde_t,x_t,y_t,target,qv,terminal_value,trading_cost,covariation,wealth,gamma_c\n",
    );
    for (i, p) in paths.iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(
            [
                p.beta,
                p.s0,
                p.s_t,
                p.z_tilde_t,
                p.x_t,
                p.y_t,
                p.target,
                p.qv,
                p.wealth.terminal_value,
                p.wealth.trading_cost,
                p.wealth.covariation,
                p.wealth.total,
                p.gamma_c,
            ]
            .map(fmt),
        );
        csv_line(&mut csv, &fields);
    }
    csv
}

fn paths_csv(bundles: &[PathBundle]) -> String {
    let mut csv = String::from("path,step,t,s,z,z_tilde,x,y,price\n");
    for b in bundles {
        for k in 0..b.times.len() {
            let mut fields = vec![b.path_index.to_string(), k.to_string()];
            let price = b.price.get(k).copied().unwrap_or(f64::NAN);
            fields.extend([b.times[k], b.s[k], b.z[k], b.z_tilde[k], b.x[k], b.y[k], price].map(fmt));
            csv_line(&mut csv, &fields);
        }
    }
    csv
}

pub fn suite_config(cfg: &ScenarioConfig) -> SuiteConfig {
    SuiteConfig {
        sim: cfg.sim_config(),
        duality_samples: 10_000,
        sweep_paths: cfg.n_paths.min(10_000),
        oracle: cfg.oracle,
        deviations: cfg.deviations,
        filter: cfg.oracle.then_some(FilterCheckConfig {
            n_paths: cfg.filter_paths,
            n_particles: cfg.n_particles,
            n_steps: cfg.filter_steps,
            seed: cfg.seed,
        }),
        perturbation: cfg.perturbation(),
    }
}

pub fn render_table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "{} {}", if r.passed { "PASS" } else { "FAIL" }, r.name);
        for c in &r.criteria {
            let _ = writeln!(
                s,
                "    {} {:<36} {} {} {}",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                fmt(c.value),
                c.comparison.symbol(),
                fmt(c.threshold)
            );
        }
    }
    s
}

fn verify(cfg: &ScenarioConfig, out: &Path) -> Result<bool> {
    let eq = Equilibrium::from_config(cfg)?;
    let results = run_suite(&eq, &suite_config(cfg))?;
    write_json(&out.join("report.json"), &results)?;
    print!("{}", render_table(&results));
    Ok(results.iter().all(|r| r.passed))
}

fn dump_grid(cfg: &ScenarioConfig, out: &Path, n_t: usize, n_y: usize, atoms: usize) -> Result<()> {
    let eq = Equilibrium::from_config(cfg)?;
    let p = &eq.params;
    let sd = p.noise_var().sqrt();
    let mut csv = String::from("t,y,price,value,filter_mean_ztilde,filter_mean_s,filter_var_ztilde,filter_var_s\n");
    for i in 0..n_t {
        // stay off t = T where the filter degenerates
        let t = p.horizon * i as f64 / n_t as f64;
        for j in 0..n_y {
            let y = sd * (-3.0 + 6.0 * j as f64 / (n_y.max(2) - 1) as f64);
            let law = closed_form_law(&eq.transport, t, y)?;
            let (m, c) = (law.mean(), law.cov());
            csv_line(
                &mut csv,
                &[
                    t,
                    y,
                    eq.pricing.price(t, y)?,
                    eq.pricing.value(t, y)?,
                    m[0],
                    m[1],
                    c[0][0],
                    c[1][1],
                ]
                .map(fmt),
            );
        }
    }
    fs::write(out.join("grid.csv"), csv)?;
    if let Some(c) = eq.transport.linquad() {
        let mut csv = String::from("t,k,s11,s12,s22\n");
        for i in 0..n_t {
            let t = p.horizon * i as f64 / n_t as f64;
            let (k, s11, s12, s22) = c.filter_cov(p, t);
            csv_line(&mut csv, &[t, k, s11, s12, s22].map(fmt));
        }
        fs::write(out.join("filter_cov.csv"), csv)?;
    }
    let q = quantize(&eq.transport, atoms)?;
    fs::write(out.join("oracle.csv"), q.instance.to_csv())?;
    println!("grid.csv      {} rows", n_t * n_y);
    println!(
        "oracle.csv    {atoms} x {atoms} atoms, dual value {}",
        fmt(q.dual_value)
    );
    Ok(())
}
