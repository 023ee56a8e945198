//! Batch driver: loads an experiment config, runs one stage and writes
//! CSV artifacts plus a JSON manifest.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use qlcond::density::{decay_sweep, edge_bump, remainder_sweep, runge_approximate, ProbeOptions, RemainderSweep, RungeProblem};
use qlcond::dtn::{first_linearization_field, multilinear_form, MultilinearRequest};
use qlcond::forward::{ForwardSolver, SolveOptions, DEFAULT_DELTA_CFG};
use qlcond::grid::{BoundaryData, Grid2D};
use qlcond::harmonic::split_frequency;
use qlcond::io::{decay_csv, field_csv, linearization_csv, remainder_csv, runge_csv, samples_csv, write_json, write_text};
use qlcond::model::{ConductivityModel, ModelKind};
use qlcond::recon::{calibrate_sign_for, pipeline_solver, recover_coefficient, FrequencyPlan, RecoverOptions};

pub use config::{Command, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CliError::Config(m) => json!({"error": {"kind": "config", "stage": "config", "message": m}}),
            CliError::Stage { stage, message } => {
                json!({"error": {"kind": "stage", "stage": stage, "message": message}})
            }
        }
    }
}

fn stage<T>(name: &str, r: qlcond::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Stage {
        stage: name.to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Parser)]
#[command(name = "qlcond", version, about = "Quasilinear conductivity inverse-problem laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Cells per side, overrides the config.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Seed, overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CliCommand {
    /// Solve the forward problem for the first boundary datum.
    Forward,
    /// Pair the first boundary datum's DtN output with the others.
    Dtn,
    /// m-th linearization of the DtN pairing by finite differences.
    Linearize,
    /// Staged coefficient recovery for orders 2..=m.
    Reconstruct,
    /// Runge approximation by exterior Green potentials.
    Runge,
    /// Corrected-CGO remainder and local identity decay sweeps.
    CgoProbe,
    /// Check a config without running solves.
    Validate,
}

impl CliCommand {
    pub fn kind(self) -> Command {
        match self {
            CliCommand::Forward => Command::Forward,
            CliCommand::Dtn => Command::Dtn,
            CliCommand::Linearize => Command::Linearize,
            CliCommand::Reconstruct => Command::Reconstruct,
            CliCommand::Runge => Command::Runge,
            CliCommand::CgoProbe => Command::CgoProbe,
            CliCommand::Validate => Command::Validate,
        }
    }
}

pub const DEFAULT_OUT: &str = "qlcond-out";

/// Config merged with command-line overrides.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: Command,
    pub config: ExperimentConfig,
    pub base: PathBuf,
    pub out: PathBuf,
    pub grid: Grid2D,
    pub seed: u64,
}

pub fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let mut command = cli.command.kind();
    let (mut config, base) = match &cli.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(c) = config.command {
        // validate checks a config against the command it names
        if command == Command::Validate {
            command = c;
        } else if c != command {
            return Err(CliError::Config(format!(
                "config is for `{}`, invoked as `{}`",
                c.name(),
                command.name()
            )));
        }
    }
    if cli.grid.is_some() {
        config.grid = cli.grid;
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let grid = Grid2D::square(config.grid_size()).map_err(|e| CliError::Config(e.to_string()))?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let seed = config.seed();
    Ok(Resolved {
        command,
        config,
        base,
        out,
        grid,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

fn diag(code: &str, message: String) -> Diagnostic {
    Diagnostic {
        code: code.into(),
        message,
    }
}

/// Single-threaded seconds per Newton solve on a 64 x 64 grid.
pub const SOLVE_SECONDS_64: f64 = 0.05;
/// Runtime above which `validate` warns.
pub const RUNTIME_THRESHOLD_SECONDS: f64 = 120.0;

/// `entries * 2^m * levels` Newton solves, scaled from the 64 x 64 cost by
/// `(nodes / 65^2)^1.5`.
pub fn estimated_runtime(entries: usize, m: usize, levels: usize, n: usize) -> f64 {
    let solves = entries as f64 * 2f64.powi(m as i32) * levels as f64;
    let scale = (((n + 1) * (n + 1)) as f64 / (65.0 * 65.0)).powf(1.5);
    solves * SOLVE_SECONDS_64 * scale
}

fn default_order(cmd: Command) -> usize {
    if cmd == Command::Linearize {
        1
    } else {
        2
    }
}

/// Schema and range checks without solves.
pub fn validate(cli: &Cli) -> Vec<Diagnostic> {
    let r = match resolve(cli) {
        Ok(r) => r,
        Err(e) => return vec![diag("schema", e.to_string())],
    };
    let cfg = &r.config;
    let mut out = Vec::new();
    let model = match config::build_model(&cfg.model, r.grid, &r.base) {
        Ok(m) => Some(m),
        Err(e) => {
            out.push(diag("model", e.to_string()));
            None
        }
    };
    let delta = cfg.delta_cfg.unwrap_or(DEFAULT_DELTA_CFG);
    if let Some(m) = &model {
        if !m.is_linear() {
            for (k, b) in cfg.boundary.iter().enumerate() {
                let f = config::build_boundary(b, r.grid, r.seed, k);
                if f.max_abs() > delta {
                    out.push(diag(
                        "delta_cfg",
                        format!("boundary datum {k} has max |f| = {:.3e} above delta_cfg = {delta:.3e}", f.max_abs()),
                    ));
                }
            }
        }
    }
    if let Some(f) = cfg.stencil.factor {
        if !(f > 0.0 && f.is_finite()) {
            out.push(diag("stencil", format!("stencil factor must be positive, got {f}")));
        }
    }
    if cfg.stencil.levels == Some(0) {
        out.push(diag("stencil", "stencil needs at least one level".into()));
    }
    let m = cfg.m.unwrap_or(default_order(r.command));
    let plan = cfg.plan.build(r.seed);
    if matches!(r.command, Command::Reconstruct | Command::Validate) {
        if plan.is_empty() {
            out.push(diag("plan", "frequency plan is empty".into()));
        }
        let skipped: usize = (2..=m.max(2)).map(|k| plan.overflow_entries(k).len()).sum();
        if skipped > 0 {
            out.push(diag("overflow", format!("overflow guard will skip {skipped} entries")));
        }
        let levels = cfg.stencil.levels.unwrap_or(2);
        let est: f64 = (2..=m.max(2)).map(|k| estimated_runtime(plan.len(), k, levels, r.grid.nx())).sum();
        if est > RUNTIME_THRESHOLD_SECONDS {
            out.push(diag(
                "cost",
                format!("estimated runtime above threshold: {est:.0} s > {RUNTIME_THRESHOLD_SECONDS:.0} s"),
            ));
        }
    }
    if matches!(r.command, Command::Dtn) && cfg.boundary.len() < 2 {
        out.push(diag("boundary", "dtn needs a datum and at least one test datum".into()));
    }
    if matches!(r.command, Command::Linearize) && cfg.boundary.len() < m + 1 {
        out.push(diag("boundary", format!("order {m} needs {} boundary data", m + 1)));
    }
    out
}

struct Run {
    manifest: BTreeMap<String, Value>,
    timings: BTreeMap<String, f64>,
    artifacts: Vec<String>,
    out: PathBuf,
}

impl Run {
    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        stage("write", write_text(&self.out.join(name), text))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let t = Instant::now();
        let r = f();
        self.timings.insert(name.to_string(), t.elapsed().as_secs_f64());
        r
    }

    fn set(&mut self, key: &str, v: Value) {
        self.manifest.insert(key.to_string(), v);
    }
}

/// Everything needed by a stage, checked before any artifact is written.
struct Prepared {
    model: ConductivityModel,
    boundary: Vec<BoundaryData>,
    m: usize,
    plan: FrequencyPlan,
}

fn prepare(r: &Resolved) -> Result<Prepared, CliError> {
    let cfg = &r.config;
    let model = config::build_model(&cfg.model, r.grid, &r.base)?;
    let boundary: Vec<BoundaryData> = cfg
        .boundary
        .iter()
        .enumerate()
        .map(|(k, b)| config::build_boundary(b, r.grid, r.seed, k))
        .collect();
    let m = cfg.m.unwrap_or(default_order(r.command));
    let plan = cfg.plan.build(r.seed);
    let need = match r.command {
        Command::Forward => 1,
        Command::Dtn => 2,
        Command::Linearize => m + 1,
        _ => 0,
    };
    if boundary.len() < need {
        return Err(CliError::Config(format!(
            "`{}` needs {need} boundary data, config has {}",
            r.command.name(),
            boundary.len()
        )));
    }
    match r.command {
        Command::Linearize if m == 0 => return Err(CliError::Config("linearization order must be >= 1".into())),
        Command::Reconstruct => {
            if m < 2 {
                return Err(CliError::Config("reconstruction order m must be >= 2".into()));
            }
            if plan.is_empty() {
                return Err(CliError::Config("frequency plan is empty".into()));
            }
            if model.kind() == ModelKind::Semilinear && cfg.lambda() != Complex64::new(0.0, 0.0) {
                return Err(CliError::Config("semilinear reconstruction is defined at lambda = 0".into()));
            }
        }
        Command::Runge => {
            if r.grid.nx() % 4 != 0 {
                return Err(CliError::Config("runge needs a grid size divisible by 4".into()));
            }
            if cfg.runge.p.iter().any(|&p| !(p >= 2.0)) {
                return Err(CliError::Config("runge exponents must be >= 2".into()));
            }
        }
        _ => {}
    }
    if let Some(s) = cfg.sign {
        if s != 1.0 && s != -1.0 {
            return Err(CliError::Config(format!("sign must be +1 or -1, got {s}")));
        }
    }
    Ok(Prepared { model, boundary, m, plan })
}

fn solve_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        tol: cfg.tol,
        delta_cfg: cfg.delta_cfg.unwrap_or(DEFAULT_DELTA_CFG),
        ..SolveOptions::default()
    }
}

fn cjson(z: Complex64) -> Value {
    json!([z.re, z.im])
}

/// Runs the stage and returns the artifact directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let r = resolve(cli)?;
    if r.command == Command::Validate {
        return Ok(r.out);
    }
    let p = prepare(&r)?;
    std::fs::create_dir_all(&r.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", r.out.display())))?;
    let mut run = Run {
        manifest: BTreeMap::new(),
        timings: BTreeMap::new(),
        artifacts: Vec::new(),
        out: r.out.clone(),
    };
    let cfg = &r.config;
    let lambda = cfg.lambda();
    match r.command {
        Command::Forward | Command::Dtn => {
            let solver = stage("forward", ForwardSolver::new(p.model.clone()))?.with_options(solve_options(cfg));
            let sol = run.time("forward", || stage("forward", solver.solve(lambda, &p.boundary[0])))?;
            run.write("solution.csv", &field_csv(&sol.u))?;
            run.set("solve_report", serde_json::to_value(&sol.report).unwrap_or(Value::Null));
            if r.command == Command::Dtn {
                let mut text = String::from("index,value_re,value_im\n");
                let values = run.time("dtn", || {
                    p.boundary[1..]
                        .iter()
                        .map(|phi| {
                            let ext = stage("dtn", solver.laplace().solve_dirichlet(phi))?;
                            stage("dtn", qlcond::dtn::DtnOracle::pairing(&solver, lambda, &p.boundary[0], &ext))
                        })
                        .collect::<Result<Vec<_>, _>>()
                })?;
                for (k, v) in values.iter().enumerate() {
                    text.push_str(&format!("{},{},{}\n", k + 1, qlcond::io::fmt_f64(v.re), qlcond::io::fmt_f64(v.im)));
                }
                run.write("pairings.csv", &text)?;
            }
        }
        Command::Linearize => {
            let solver = stage("linearize", ForwardSolver::new(p.model.clone()))?.with_options(solve_options(cfg));
            let fs = p.boundary[..p.m].to_vec();
            let stencil = cfg.stencil_for(&fs, 1e-3);
            let req = MultilinearRequest::new(lambda, fs.clone(), p.boundary[p.m].clone()).with_stencil(stencil);
            let out = run.time("linearize", || stage("linearize", multilinear_form(&solver, &req)))?;
            run.write("linearization.csv", &linearization_csv(&out.log))?;
            if p.m == 1 {
                let field = run.time("linearization_field", || {
                    stage("linearize", first_linearization_field(&solver, lambda, &fs[0], stencil))
                })?;
                run.write("linearization_field.csv", &field_csv(&field))?;
            }
            run.set(
                "value",
                json!({"value": cjson(out.value.value), "estimated_error": out.value.estimated_error, "stencil": stencil}),
            );
        }
        Command::Reconstruct => reconstruct(&mut run, cfg, &p, lambda)?,
        Command::Runge => {
            let mut fits = Vec::new();
            for &pp in &cfg.runge.p {
                let fit = run.time(&format!("runge_p{pp}"), || {
                    let prob = stage("runge", RungeProblem::standard(r.grid.nx(), cfg.runge.n_sources, pp))?;
                    stage("runge", runge_approximate(&prob))
                })?;
                fits.push(fit);
            }
            run.write("runge.csv", &runge_csv(&fits))?;
            let finals: Vec<Value> = fits
                .iter()
                .map(|f| json!({"p": f.p, "final_residual": f.history.last().map(|h| h.1)}))
                .collect();
            run.set("runge", Value::Array(finals));
        }
        Command::CgoProbe => cgo_probe(&mut run, &r)?,
        Command::Validate => unreachable!(),
    }
    let manifest = json!({
        "schema_version": config::SCHEMA_VERSION,
        "tool": "qlcond",
        "version": env!("CARGO_PKG_VERSION"),
        "command": r.command.name(),
        "grid": r.grid.nx(),
        "seed": r.seed,
        "config": cfg,
        "results": run.manifest,
        "timings": run.timings,
        "artifacts": run.artifacts,
    });
    stage("write", write_json(&r.out.join("manifest.json"), &manifest))?;
    Ok(r.out)
}

fn reconstruct(run: &mut Run, cfg: &ExperimentConfig, p: &Prepared, lambda: Complex64) -> Result<(), CliError> {
    let kind = p.model.kind();
    let oracle = stage("reconstruct", pipeline_solver(p.model.clone(), None))?;
    let mut surrogate = stage("reconstruct", ConductivityModel::linear(*p.model.grid(), kind, p.model.omega()))?;
    let mut samples = Vec::new();
    let mut orders = Vec::new();
    let mut signs = BTreeMap::new();
    for m in 2..=p.m {
        let sign = match cfg.sign {
            Some(s) => s,
            None => run.time(&format!("calibrate_m{m}"), || {
                stage("calibrate", calibrate_sign_for(m, kind, 32))
            })?,
        };
        signs.insert(m.to_string(), sign);
        let mut opts = RecoverOptions::for_order(m);
        opts.sign = Some(sign);
        opts.reg_weight = cfg.reg_weight;
        if let Some(f) = cfg.stencil.factor {
            opts.sampling.stencil_factor = f;
        }
        if let Some(l) = cfg.stencil.levels {
            opts.sampling.levels = l;
        }
        let res = run.time(&format!("recover_m{m}"), || {
            stage("reconstruct", recover_coefficient(&oracle, &mut surrogate, m, lambda, &p.plan, &opts))
        })?;
        run.write(&format!("estimate_m{m}.csv"), &field_csv(res.field()))?;
        let truth = p.model.taylor_coefficient(m - 1, lambda);
        run.write(&format!("truth_m{m}.csv"), &field_csv(&truth))?;
        orders.push(json!({
            "m": m,
            "residual": res.residual,
            "reg_weight": res.reg_weight,
            "sign": res.sign,
            "n_samples": res.samples.len(),
            "overflow_skips": res.skipped,
            "relative_error_vs_truth": qlcond::recon::relative_l2(res.field(), &truth),
        }));
        samples.extend(res.samples.iter().copied());
    }
    run.write("samples.csv", &samples_csv(&samples))?;
    run.set("plan", serde_json::to_value(&p.plan).unwrap_or(Value::Null));
    run.set("sign", serde_json::to_value(&signs).unwrap_or(Value::Null));
    run.set("orders", Value::Array(orders));
    Ok(())
}

fn cgo_probe(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let pc = &r.config.probe;
    let sweep = RemainderSweep {
        c: pc.c,
        hs: pc.hs.clone(),
        ..RemainderSweep::default()
    };
    let fit = run.time("remainder", || stage("cgo-probe", remainder_sweep(&r.grid, &sweep)))?;
    run.write("remainder.csv", &remainder_csv(&fit))?;
    run.set(
        "remainder",
        json!({"kappa": fit.kappa, "constant": fit.constant, "spread": fit.spread, "within_band": fit.within_band()}),
    );
    let a = pc.a;
    let z = [Complex64::new(0.0, 2.0 * a), Complex64::new(0.0, 0.0)];
    let opts = ProbeOptions::default();
    let mut rates = Vec::new();
    for &d in &pc.distances {
        let f = edge_bump(&r.grid, d, pc.radius);
        let dfit = run.time(&format!("decay_d{d}"), || stage("cgo-probe", decay_sweep(&f, z, a, &pc.hs, &opts)))?;
        run.write(&format!("decay_d{d}.csv"), &decay_csv(&dfit))?;
        rates.push(json!({"d": d, "rate": dfit.rate(), "rate_over_d": dfit.rate() / d}));
    }
    run.set("decay", Value::Array(rates));
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
    let eps = opts.epsilon;
    let splits = (0..pc.splits)
        .map(|_| {
            let rad = 2.0 * eps * a * 0.9 * rng.gen::<f64>().sqrt();
            let mut dir: [f64; 4] = [0.0; 4];
            for v in dir.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let zz = [
                Complex64::new(dir[0] / n * rad, 2.0 * a + dir[1] / n * rad),
                Complex64::new(dir[2] / n * rad, dir[3] / n * rad),
            ];
            stage("cgo-probe", split_frequency(zz, a, eps))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let text = serde_json::to_string_pretty(&splits).map_err(|e| CliError::Stage {
        stage: "write".into(),
        message: e.to_string(),
    })?;
    run.write("splits.json", &format!("{text}\n"))?;
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    if let CliCommand::Validate = cli.command {
        let d = validate(&cli);
        println!("{}", serde_json::to_string_pretty(&d).unwrap_or_else(|_| "[]".into()));
        return 0;
    }
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
