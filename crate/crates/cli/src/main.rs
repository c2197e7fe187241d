use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ohmstat_core::environment::{sample, ConductanceLaw};
use ohmstat_core::green::{g_limit_estimate, massive_green_column, reflected_green, triple_gradient_decay};
use ohmstat_core::harness::{
    clt_test, run_ceff, selftest, variance_scaling, with_threads, write_records_csv, ExperimentConfig,
    OutputFormat,
};
use ohmstat_core::lattice::BoxDomain;
use ohmstat_core::martingale::{
    estimate_sigma_sq, increment_representation_check, increments_exact, rank_one_check, SigmaConfig,
    MAX_ENUMERATED_EDGES,
};
use ohmstat_core::meyers::{norm_sweep, write_norm_sweep_csv};
use ohmstat_core::{OhmError, Result};

#[derive(Parser)]
#[command(name = "ohmstat", version, about = "Effective conductance of random resistor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample C^eff replicas; CSV records or JSON records plus summaries.
    Ceff(Common),
    /// Normality test of C^eff at each side (at least 500 replicas).
    Clt(Common),
    /// Fit of log Var(C^eff) against log L over at least three sides.
    VarScaling(Common),
    /// Monte Carlo estimate of the limiting variance from martingale increments.
    Sigma {
        #[command(flatten)]
        common: Common,
        /// Inner resamples per outer replica.
        #[arg(long, default_value_t = 200)]
        inner: usize,
    },
    /// ℓ^p norm sweep of the gradient-projection operator.
    Meyers(Common),
    /// Reflection, decay and monotonicity checks of the Green functions.
    GreenChecks(Common),
    /// Rank-one identities and exhaustive increment checks.
    MartingaleChecks(Common),
    /// Built-in suite of exact small-instance checks.
    Selftest,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    dim: Option<usize>,
    /// Box side; repeat or comma-separate for several.
    #[arg(long = "side", value_delimiter = ',')]
    sides: Vec<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// constant, uniform or two-point.
    #[arg(long)]
    law: Option<String>,
    /// Two-point weight of 1/λ; the norm exponent for `meyers`.
    #[arg(long)]
    p: Option<f64>,
    /// Direction t, comma-separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    t: Vec<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, env = "OHMSTAT_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json(&fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = self.dim {
            c.dim = d;
            if self.t.is_empty() && c.t.len() != d {
                c.t.clear();
            }
        }
        if !self.sides.is_empty() {
            c.sides = self.sides.clone();
        }
        if let Some(l) = self.lambda {
            c.lambda = l;
        }
        if let Some(law) = &self.law {
            c.law = law.parse()?;
        }
        if let Some(p) = self.p {
            c.p = p;
        }
        if !self.t.is_empty() {
            c.t = self.t.clone();
        }
        if let Some(m) = self.replicas {
            c.replicas = m;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(tol) = self.tol {
            c.tol = tol;
        }
        if let Some(n) = self.threads {
            c.threads = n;
        }
        if let Some(out) = &self.out {
            c.out = Some(out.clone());
        }
        if let Some(f) = &self.format {
            c.format = f.parse()?;
        }
        Ok(c)
    }

    fn json_only(&self, c: &ExperimentConfig, what: &str) -> Result<()> {
        if self.format.is_some() && c.format != OutputFormat::Json {
            return Err(OhmError::Invalid(format!("{what} writes JSON only")));
        }
        Ok(())
    }
}

fn emit(out: &Option<PathBuf>, body: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, body)?,
        None => io::stdout().lock().write_all(body)?,
    }
    Ok(())
}

fn emit_json(out: &Option<PathBuf>, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit(out, s.as_bytes())
}

fn ceff(common: &Common) -> Result<()> {
    let c = common.experiment()?;
    let run = run_ceff(&c)?;
    for f in &run.failures {
        eprintln!("replica {} (L = {}) failed: {}", f.replica, f.side, f.message);
    }
    match c.format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            write_records_csv(&run.records, &mut buf)?;
            emit(&c.out, &buf)
        }
        OutputFormat::Json => emit_json(&c.out, &run),
    }
}

fn clt(common: &Common) -> Result<()> {
    let mut c = common.experiment()?;
    if common.format.is_none() {
        c.format = OutputFormat::Json;
    }
    common.json_only(&c, "clt")?;
    c.validate()?;
    let run = run_ceff(&c)?;
    let mut reports = Vec::new();
    for (l, values) in run.groups() {
        let rep = clt_test(&values, c.dim, l, c.seed)?;
        let mut v = serde_json::to_value(&rep)?;
        v["L"] = json!(l);
        reports.push(v);
    }
    if reports.len() == 1 {
        emit_json(&c.out, &reports[0])
    } else {
        emit_json(&c.out, &reports)
    }
}

fn var_scaling(common: &Common) -> Result<()> {
    let mut c = common.experiment()?;
    if common.format.is_none() {
        c.format = OutputFormat::Json;
    }
    common.json_only(&c, "var-scaling")?;
    c.validate()?;
    let run = run_ceff(&c)?;
    let fit = with_threads(c.threads, || variance_scaling(&run.groups(), c.dim, c.seed))??;
    emit_json(&c.out, &json!({ "fit": fit, "summaries": run.summaries }))
}

fn sigma(common: &Common, inner: usize) -> Result<()> {
    let mut c = common.experiment()?;
    if common.format.is_none() {
        c.format = OutputFormat::Json;
    }
    common.json_only(&c, "sigma")?;
    c.validate()?;
    let cfg = SigmaConfig {
        law: c.conductance_law()?,
        dim: c.dim,
        proxy_side: c.sides[0],
        outer: c.replicas,
        inner,
        seed: c.seed,
    };
    let t = c.direction();
    let est = with_threads(c.threads, || estimate_sigma_sq(&cfg, &t))??;
    emit_json(&c.out, &est)
}

fn meyers(common: &Common) -> Result<()> {
    let c = common.experiment()?;
    let p = common.p.unwrap_or(4.0);
    let trials = common.replicas.unwrap_or(4);
    let rows = with_threads(c.threads, || norm_sweep(c.dim, &c.sides, p, trials, c.seed))??;
    match c.format {
        OutputFormat::Csv => {
            let mut buf = Vec::new();
            write_norm_sweep_csv(&rows, &mut buf)?;
            emit(&c.out, &buf)
        }
        OutputFormat::Json => emit_json(&c.out, &rows),
    }
}

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: serde_json::Value,
}

fn finish_checks(out: &Option<PathBuf>, checks: Vec<Check>) -> Result<()> {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    emit_json(out, &checks)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(OhmError::CheckFailed(format!("failed: {}", failed.join(", "))))
    }
}

fn green_checks(common: &Common) -> Result<()> {
    let c = common.experiment()?;
    common.json_only(&c, "green-checks")?;
    let l = c.sides[0];
    let dom = Arc::new(BoxDomain::new(c.dim, l)?);
    let mut checks = Vec::new();
    with_threads(c.threads, || -> Result<()> {
        let eps = 0.1;
        let y = dom.center();
        let col = massive_green_column(dom.clone(), eps, &y, 1e-14)?;
        let mut worst = 0.0f64;
        for v in 0..dom.volume() {
            let r = reflected_green(eps, &dom, dom.point(v), &y, 8)?;
            worst = worst.max((r - col[v]).abs());
        }
        checks.push(Check {
            name: "reflection".into(),
            passed: worst <= 1e-8,
            detail: json!({ "epsilon": eps, "max_error": worst }),
        });
        if c.dim == 2 && l >= 32 {
            let fit = triple_gradient_decay(dom.clone(), 0.0, [0, 0, 0])?;
            checks.push(Check {
                name: "triple-gradient decay".into(),
                passed: (fit.exponent + 3.0).abs() <= 0.3,
                detail: json!({ "exponent": fit.exponent, "prefactor": fit.prefactor }),
            });
        }
        let sides: Vec<usize> = [4usize, 8, 16, 32, 64].into_iter().filter(|&s| s <= l).collect();
        if sides.len() >= 2 {
            let env = sample(&c.conductance_law()?, dom.clone(), c.seed)?;
            let rep = g_limit_estimate(&env, 0, &sides, 1e-12)?;
            checks.push(Check {
                name: "g monotone in the box".into(),
                passed: rep.monotone,
                detail: serde_json::to_value(&rep)?,
            });
        }
        Ok(())
    })??;
    finish_checks(&c.out, checks)
}

fn martingale_checks(common: &Common) -> Result<()> {
    let c = common.experiment()?;
    common.json_only(&c, "martingale-checks")?;
    let law = c.conductance_law()?;
    let t = c.direction();
    let dom = Arc::new(BoxDomain::new(c.dim, c.sides[0])?);
    let mut checks = Vec::new();
    with_threads(c.threads, || -> Result<()> {
        let interior: Vec<usize> = (0..dom.n_edges()).filter(|&k| dom.edge_is_interior(k)).collect();
        let (lo, hi) = law.support();
        let mut worst = 0.0f64;
        for r in 0..20u64 {
            let env = sample(&law, dom.clone(), c.seed.wrapping_add(r))?;
            let k = interior[(r as usize * 7919) % interior.len()];
            let value = lo + (hi - lo) * ((r as f64 + 0.5) / 20.0);
            let rep = rank_one_check(&env, &dom.edge(k).clone(), value, 1e-8)?;
            worst = worst.max(rep.max_residual());
        }
        checks.push(Check {
            name: "rank-one identities".into(),
            passed: worst <= 1e-8,
            detail: json!({ "perturbations": 20, "max_residual": worst }),
        });
        let small = (2..=4usize)
            .rev()
            .map(|l| BoxDomain::new(c.dim, l))
            .filter_map(|d| d.ok())
            .find(|d| d.n_edges() <= MAX_ENUMERATED_EDGES && d.dim() > 0);
        let two_point = ConductanceLaw::two_point(c.lambda.min(0.5), c.p);
        match small {
            Some(d) => {
                let d = Arc::new(d);
                let table = increments_exact(d.clone(), &two_point, &t, 1e-9)?;
                let rep = increment_representation_check(d.clone(), &two_point, &t, 1e-9)?;
                checks.push(Check {
                    name: "exhaustive increments".into(),
                    passed: true,
                    detail: json!({
                        "L": d.side(),
                        "edges": table.len(),
                        "telescoping_residual": table.telescoping_residual,
                        "martingale_residual": table.martingale_residual,
                        "integral_route_residual": table.integral_route_residual,
                        "representation_residual": rep.max_residual,
                    }),
                });
            }
            None => eprintln!("no box in dimension {} is small enough to enumerate", c.dim),
        }
        Ok(())
    })??;
    finish_checks(&c.out, checks)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ceff(c) => ceff(c),
        Command::Clt(c) => clt(c),
        Command::VarScaling(c) => var_scaling(c),
        Command::Sigma { common, inner } => sigma(common, *inner),
        Command::Meyers(c) => meyers(c),
        Command::GreenChecks(c) => green_checks(c),
        Command::MartingaleChecks(c) => martingale_checks(c),
        Command::Selftest => {
            let rep = selftest();
            for case in &rep.cases {
                println!("{} {}: {}", if case.passed { "ok  " } else { "FAIL" }, case.name, case.detail);
            }
            println!("{} passed, {} failed", rep.passed, rep.failed);
            if rep.failed == 0 {
                Ok(())
            } else {
                Err(OhmError::CheckFailed(format!("{} self-test cases failed", rep.failed)))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ohmstat: {e}");
            ExitCode::from(match e {
                e if e.is_numerical() => 3,
                OhmError::Io(_) => 1,
                _ => 2,
            })
        }
    }
}
