//! Command dispatch, atomic output writing and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fwspde_core::action::{minimize_action, quasipotential, ActionProblem, QpOptions, QpTarget, Target};
use fwspde_core::exit::{
    exit_place_histogram, exit_scaling_from_samples, sample_exits, verify_attraction, Domain, ExitProblem,
};
use fwspde_core::ldp::{ldp_lower_bound_check, ldp_upper_bound_check, uniform_sweep, SweepTemplate, TubeExperiment};
use fwspde_core::models::Model;
use fwspde_core::simulator::{
    par_map_indexed, simulate_path, stochastic_mild_residual, BatchStats, SimConfig, Stepper,
};
use fwspde_core::skeleton::{mild_residual, solve_skeleton, ControlPath, SolverOptions, TimeGrid, Trajectory};
use fwspde_core::spectral::SpectralField;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{emit_config, field_or_zero, CommandKind, ExperimentConfig, Record};
use crate::error::CliError;
use crate::export::{export_plotdata, num, write_csv};

pub const DEFAULT_OUTPUT_DIR: &str = "fwspde-out";
pub const SEED_SCHEME: &str = "path i of a run with master seed m draws from ChaCha8 seeded with splitmix64(m ^ splitmix64(i)); streams do not depend on eps or on the thread count";

/// Largest `paths.csv` (values) written in path mode.
const MAX_PATH_VALUES: usize = 50_000_000;
/// Paths held in memory at once in moments mode.
const MOMENT_CHUNK: usize = 2048;
/// Paths whose mild residual is certified in moments mode.
const MOMENT_CERTIFIED: usize = 64;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub master_seed: u64,
    pub seed_scheme: String,
    pub threads: usize,
    /// `ok`, or `not_converged` when outputs were written but an optimizer
    /// did not meet its tolerance.
    pub status: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// Set when outputs were written but the run should exit nonzero.
    pub not_converged: Option<String>,
}

struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    not_converged: Option<String>,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            files: Vec::new(),
            not_converged: None,
        }
    }

    fn json(&mut self, name: &str, v: &Value) {
        let mut text = serde_json::to_string_pretty(v).expect("reports serialize");
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn report(&mut self, stem: &str, kind: &str, report: Value) -> Result<(), CliError> {
        let csv = export_plotdata(kind, &report)?;
        self.json(&format!("{stem}.json"), &report);
        self.raw(&format!("{stem}.csv"), csv);
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &target)
    })();
    res.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(&target, e)
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn with_kind(mut v: Value, kind: &str) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("kind".into(), json!(kind));
    }
    v
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs a validated config and writes its outputs; the manifest is written last.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let started_at = now();
    let mut cfg = config.clone();
    if let Some(s) = opts.seed {
        cfg.master_seed = s;
    }
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    // the output location is not part of the experiment
    cfg.output_dir = None;
    cfg.validate()?;
    let config_text = emit_config(&cfg);

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        if t == 0 {
            return Err(CliError::range("--threads", "must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::range("--threads", e.to_string()))?;
    let threads = pool.current_num_threads();

    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let result = pool.install(|| dispatch(&cfg));
    let mut outputs = match result {
        Ok(o) => o,
        Err(e) => {
            // best effort: the error report is not part of the manifest
            let mut text = serde_json::to_string_pretty(&e.to_json()).expect("serializes");
            text.push('\n');
            let _ = write_atomic(&out_dir, "error.json", text.as_bytes());
            return Err(e);
        }
    };
    outputs.files.insert(0, ("config.json".into(), config_text.clone().into_bytes()));

    let mut files = Vec::with_capacity(outputs.files.len());
    for (name, bytes) in &outputs.files {
        write_atomic(&out_dir, name, bytes)?;
        files.push(FileEntry {
            name: name.clone(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = RunManifest {
        command: cfg.command.name().to_string(),
        config_hash: sha256_hex(config_text.as_bytes()),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: now(),
        master_seed: cfg.master_seed,
        seed_scheme: SEED_SCHEME.to_string(),
        threads,
        status: if outputs.not_converged.is_some() { "not_converged" } else { "ok" }.to_string(),
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&out_dir, "manifest.json", text.as_bytes())?;
    Ok(RunOutcome {
        out_dir,
        manifest,
        not_converged: outputs.not_converged,
    })
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let model = cfg.build_model()?;
    let seed = cfg.master_seed;
    match cfg.command {
        CommandKind::Simulate => simulate(cfg, &model),
        CommandKind::Skeleton => skeleton(cfg, &model),
        CommandKind::Action => action(cfg, &model),
        CommandKind::Quasipotential => quasi(cfg, &model),
        CommandKind::LdpLower => {
            let b = cfg.ldp_lower.as_ref().expect("validated");
            let x0 = field_or_zero(&model, &b.x0)?;
            let u = b.control.build(&model, "ldp_lower.control")?;
            let exp = TubeExperiment::from_control(&model, &x0, &u, b.delta, b.eps_list.clone(), b.n_paths, seed)?;
            let report = ldp_lower_bound_check(&model, &exp, b.tolerance_margin)?;
            let mut out = Outputs::new();
            out.report("ldp_lower", "ldp", with_kind(to_value(&report), "ldp"))?;
            out.raw("reference_path.csv", trajectory_csv(&exp.reference));
            Ok(out)
        }
        CommandKind::LdpUpper => {
            let b = cfg.ldp_upper.as_ref().expect("validated");
            let x0 = field_or_zero(&model, &b.x0)?;
            let report = ldp_upper_bound_check(
                &model,
                &x0,
                b.s0,
                b.delta,
                &b.eps_list,
                b.n_paths,
                seed,
                b.tolerance_margin,
            )?;
            let mut out = Outputs::new();
            out.report("ldp_upper", "ldp", with_kind(to_value(&report), "ldp"))?;
            Ok(out)
        }
        CommandKind::Sweep => {
            let b = cfg.sweep.as_ref().expect("validated");
            let center = field_or_zero(&model, &b.center)?;
            let template = SweepTemplate {
                control: b.control.build(&model, "sweep.control")?,
                delta: b.delta,
                eps_list: b.eps_list.clone(),
                n_paths: b.n_paths,
                seed,
                tolerance_margin: b.tolerance_margin,
            };
            let report = uniform_sweep(&model, &center, b.radius, b.n_directions, &template)?;
            let mut out = Outputs::new();
            out.report("sweep", "sweep", with_kind(to_value(&report), "sweep"))?;
            Ok(out)
        }
        CommandKind::ExitScaling => exit_scaling(cfg, &model),
        CommandKind::ExitPlace => exit_place(cfg, &model),
        CommandKind::Verify => {
            let b = cfg.verify.as_ref().expect("validated");
            let center = field_or_zero(&model, &b.center)?;
            let domain = Domain {
                center: center.clone(),
                radius: b.radius,
                norm: b.norm,
            };
            let probes = b
                .probes
                .iter()
                .map(|p| SpectralField::new(model.basis().clone(), p.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let report = verify_attraction(&model, &domain, &center, &probes, b.t0, b.rho)?;
            let mut out = Outputs::new();
            let mut v = with_kind(to_value(&report), "verify");
            v["pass"] = json!(report.violations.is_empty());
            out.report("verify", "verify", v)?;
            Ok(out)
        }
    }
}

fn sim_config(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig {
        eps: cfg.model.sim.eps,
        seed: cfg.master_seed,
        noise_truncation: cfg.model.sim.noise_truncation,
    }
}

fn coeff_header(prefix: &str, n: usize, lead: &[&str]) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|k| format!("{prefix}{k}")))
        .collect()
}

fn csv_owned(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&h, rows)
}

fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    let grid = traj.grid();
    let n = traj.initial().len();
    let rows: Vec<Vec<String>> = traj
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = vec![i.to_string(), num(grid.node(i))];
            r.extend(s.coeffs().iter().map(|c| num(*c)));
            r
        })
        .collect();
    csv_owned(&coeff_header("x", n, &["node", "t"]), &rows)
}

fn control_csv(u: &ControlPath) -> Vec<u8> {
    let grid = u.grid();
    let rows: Vec<Vec<String>> = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut r = vec![i.to_string(), num(grid.node(i))];
            r.extend(v.iter().map(|c| num(*c)));
            r
        })
        .collect();
    csv_owned(&coeff_header("u", u.n_noise_modes(), &["node", "t"]), &rows)
}

fn simulate(cfg: &ExperimentConfig, model: &Model) -> Result<Outputs, CliError> {
    let b = cfg.simulate.as_ref().expect("validated");
    let x0 = field_or_zero(model, &b.x0)?;
    let u = b.control.build(model, "simulate.control")?;
    let controlled = !matches!(b.control, crate::config::ControlSpec::Zero);
    let uref = controlled.then_some(&u);
    let sim = sim_config(cfg);
    let grid = TimeGrid::of_model(model);
    let n = model.n_modes();
    let tol = model.tolerances().picard_tol;
    let mut out = Outputs::new();
    let (residual, certified_paths, endpoint) = match b.record {
        Record::Paths => {
            let values = b.n_paths * grid.n_nodes() * n;
            if values > MAX_PATH_VALUES {
                return Err(CliError::range(
                    "simulate.n_paths",
                    format!("{values} path values exceed the limit of {MAX_PATH_VALUES}; use \"record\": \"moments\""),
                ));
            }
            let paths = par_map_indexed(b.n_paths, |i| -> Result<(Trajectory, f64), CliError> {
                let p = simulate_path(model, &x0, uref, &sim, i as u64, None)?;
                let r = stochastic_mild_residual(&p.trajectory, model, uref, &sim, i as u64)?;
                Ok((p.trajectory, r))
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let mut rows = Vec::with_capacity(b.n_paths * grid.n_nodes());
            for (i, (traj, _)) in paths.iter().enumerate() {
                for (j, s) in traj.states().iter().enumerate() {
                    let mut r = vec![i.to_string(), j.to_string(), num(grid.node(j))];
                    r.extend(s.coeffs().iter().map(|c| num(*c)));
                    rows.push(r);
                }
            }
            out.raw("paths.csv", csv_owned(&coeff_header("x", n, &["path", "node", "t"]), &rows));
            let residual = paths.iter().map(|p| p.1).fold(0.0, f64::max);
            let norms: Vec<f64> = paths.iter().map(|p| p.0.endpoint().l2_norm()).collect();
            (residual, b.n_paths, BatchStats::from_values(&norms)?)
        }
        Record::Moments => {
            let uu: Option<Vec<Vec<f64>>> = uref.map(|u| u.resample(&grid).values().to_vec());
            let mut acc = vec![Moments::default(); grid.n_nodes() * n];
            let mut norms = Vec::with_capacity(b.n_paths);
            let mut start = 0;
            while start < b.n_paths {
                let len = MOMENT_CHUNK.min(b.n_paths - start);
                let chunk = par_map_indexed(len, |j| -> Result<Vec<f64>, CliError> {
                    let mut st = Stepper::new(model, x0.coeffs(), &sim, (start + j) as u64)?;
                    let mut flat = Vec::with_capacity(grid.n_nodes() * n);
                    flat.extend_from_slice(x0.coeffs());
                    for k in 0..grid.n_steps() {
                        flat.extend_from_slice(st.step(uu.as_ref().map(|u| u[k].as_slice()))?);
                    }
                    Ok(flat)
                });
                for path in chunk {
                    let path = path?;
                    for (a, v) in acc.iter_mut().zip(&path) {
                        a.push(*v);
                    }
                    norms.push(path[path.len() - n..].iter().map(|c| c * c).sum::<f64>().sqrt());
                }
                start += len;
            }
            let rows: Vec<Vec<String>> = acc
                .iter()
                .enumerate()
                .map(|(idx, m)| {
                    let (node, mode) = (idx / n, idx % n);
                    vec![
                        node.to_string(),
                        num(grid.node(node)),
                        mode.to_string(),
                        m.n.to_string(),
                        num(m.mean),
                        num(m.variance()),
                        num(m.variance_se()),
                    ]
                })
                .collect();
            out.raw(
                "moments.csv",
                write_csv(&["node", "t", "mode", "n", "mean", "variance", "variance_se"], &rows),
            );
            let k = MOMENT_CERTIFIED.min(b.n_paths);
            let residual = par_map_indexed(k, |i| -> Result<f64, CliError> {
                let p = simulate_path(model, &x0, uref, &sim, i as u64, None)?;
                Ok(stochastic_mild_residual(&p.trajectory, model, uref, &sim, i as u64)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0, f64::max);
            (residual, k, BatchStats::from_values(&norms)?)
        }
    };
    out.json(
        "simulate.json",
        &json!({
            "kind": "simulate",
            "eps": sim.eps,
            "master_seed": sim.seed,
            "n_paths": b.n_paths,
            "n_steps": grid.n_steps(),
            "dt": grid.dt(),
            "record": b.record,
            "control_energy": u.energy(),
            "mild_residual_max": residual,
            "mild_residual_tol": tol,
            "certified_paths": certified_paths,
            "certified": residual <= tol,
            "endpoint_norm": endpoint,
        }),
    );
    Ok(out)
}

/// Running central moments up to order four, updated in path order.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let t1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += t1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += t1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += t1;
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the sample variance.
    fn variance_se(&self) -> f64 {
        if self.n < 4 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let s2 = self.variance();
        let mu4 = self.m4 / n;
        ((mu4 - (n - 3.0) / (n - 1.0) * s2 * s2) / n).max(0.0).sqrt()
    }
}

fn skeleton(cfg: &ExperimentConfig, model: &Model) -> Result<Outputs, CliError> {
    let b = cfg.skeleton.as_ref().expect("validated");
    let x0 = field_or_zero(model, &b.x0)?;
    let u = b.control.build(model, "skeleton.control")?;
    let traj = solve_skeleton(model, &x0, &u, &SolverOptions::from_model(model))?;
    let residual = mild_residual(&traj, model, &u)?;
    let tol = model.tolerances().picard_tol;
    let mut out = Outputs::new();
    out.json(
        "skeleton.json",
        &json!({
            "kind": "skeleton",
            "control_energy": u.energy(),
            "sup_l2": traj.sup_l2(),
            "endpoint": traj.endpoint().coeffs(),
            "mild_residual": residual,
            "mild_residual_tol": tol,
            "certified": residual <= tol,
        }),
    );
    out.raw("skeleton.csv", trajectory_csv(&traj));
    Ok(out)
}

fn action(cfg: &ExperimentConfig, model: &Model) -> Result<Outputs, CliError> {
    let b = cfg.action.as_ref().expect("validated");
    let x0 = field_or_zero(model, &b.x0)?;
    let y = SpectralField::new(model.basis().clone(), b.target.clone())?;
    let problem = ActionProblem {
        x0,
        target: Target::Point { y, tol: b.target_tol },
        control_grid: b
            .control_steps
            .map(|s| TimeGrid::new(model.horizon(), s))
            .transpose()?,
        penalty_weight: b.penalty_weight,
        optimizer: b.optimizer.clone(),
        tracking: None,
        warm_start: None,
    };
    let res = minimize_action(model, &problem)?;
    let residual = mild_residual(&res.trajectory, model, &res.control).ok();
    let mut out = Outputs::new();
    out.json(
        "action.json",
        &json!({
            "kind": "action",
            "action": res.action,
            "terminal_state": res.terminal_state.coeffs(),
            "terminal_gap": res.terminal_gap,
            "penalized_objective": res.penalized_objective,
            "penalty_weight": res.penalty_weight,
            "grad_norm": res.grad_norm,
            "iterations": res.iterations,
            "converged": res.converged,
            "unreachable": res.unreachable,
            "mild_residual": residual,
        }),
    );
    out.raw("action_control.csv", control_csv(&res.control));
    out.raw("action_path.csv", trajectory_csv(&res.trajectory));
    if !res.converged {
        out.not_converged = Some(format!(
            "action minimization stopped after {} iterations with terminal gap {:e}",
            res.iterations, res.terminal_gap
        ));
    }
    Ok(out)
}

fn quasi(cfg: &ExperimentConfig, model: &Model) -> Result<Outputs, CliError> {
    let b = cfg.quasipotential.as_ref().expect("validated");
    let origin = field_or_zero(model, &b.origin)?;
    let field = |c: &Vec<f64>| SpectralField::new(model.basis().clone(), c.clone());
    let target = match &b.target {
        crate::config::QpTargetConfig::Point { y } => QpTarget::Point(field(y)?),
        crate::config::QpTargetConfig::Points { ys } => {
            QpTarget::Points(ys.iter().map(field).collect::<Result<Vec<_>, _>>()?)
        }
        crate::config::QpTargetConfig::BallBoundary { radius } => QpTarget::BallBoundary { radius: *radius },
    };
    let opts = QpOptions {
        tol: b.tol,
        penalty_weight: b.penalty_weight,
        optimizer: b.optimizer.clone(),
    };
    let res = quasipotential(model, &origin, &target, &b.horizons, &opts)?;
    let mut out = Outputs::new();
    out.report("quasipotential", "quasipotential", with_kind(to_value(&res), "quasipotential"))?;
    if let Some(i) = b.horizons.iter().position(|h| *h == res.best_horizon) {
        if !res.converged[i] {
            out.not_converged = Some(format!("minimizing horizon T = {} did not converge", res.best_horizon));
        }
    }
    Ok(out)
}

/// `V(O, boundary)` from the config or from the quasipotential solver.
fn exit_v_ref(
    model: &Model,
    center: &SpectralField,
    radius: f64,
    given: Option<f64>,
    horizons: &[f64],
) -> Result<(f64, Option<Value>, Option<String>), CliError> {
    if let Some(v) = given {
        return Ok((v, None, None));
    }
    let res = quasipotential(
        model,
        center,
        &QpTarget::BallBoundary { radius },
        horizons,
        &QpOptions::default(),
    )?;
    let warn = (!res.converged.iter().any(|c| *c)).then(|| "quasipotential for V_ref did not converge".to_string());
    Ok((res.value, Some(to_value(&res)), warn))
}

#[allow(clippy::too_many_arguments)]
fn exit_problem(
    model: &Model,
    center: &Option<Vec<f64>>,
    x0: &Option<Vec<f64>>,
    radius: f64,
    norm: fwspde_core::exit::BallNorm,
    eps_list: Vec<f64>,
    n_paths: usize,
    max_steps: u64,
    v_ref: f64,
    seed: u64,
) -> Result<ExitProblem, CliError> {
    let center = field_or_zero(model, center)?;
    let x0 = match x0 {
        Some(_) => field_or_zero(model, x0)?,
        None => center.clone(),
    };
    Ok(ExitProblem {
        domain: Domain {
            center: center.clone(),
            radius,
            norm,
        },
        equilibrium: center,
        x0,
        eps_list,
        n_paths,
        max_steps,
        v_ref,
        seed,
    })
}

fn exit_scaling(cfg: &ExperimentConfig, model: &Model) -> Result<Outputs, CliError> {
    let b = cfg.exit_scaling.as_ref().expect("validated");
    let center = field_or_zero(model, &b.center)?;
    let (v_ref, qp, warn) = exit_v_ref(model, &center, b.radius, b.v_ref, &b.qp_horizons)?;
    let problem = exit_problem(
        model,
        &b.center,
        &b.x0,
        b.radius,
        b.norm,
        b.eps_list.clone(),
        b.n_paths,
        b.max_steps,
        v_ref,
        cfg.master_seed,
    )?;
    problem.validate(model)?;
    problem.check_budget(model)?;
    let samples = b
        .eps_list
        .iter()
        .map(|e| sample_exits(model, &problem, *e))
        .collect::<Result<Vec<_>, _>>()?;
    let report = exit_scaling_from_samples(&problem, b.eta, &samples)?;
    let mut v = with_kind(to_value(&report), "exit-scaling");
    v["v_ref_source"] = json!(if qp.is_some() { "quasipotential" } else { "config" });
    if let Some(q) = qp {
        v["quasipotential"] = q;
    }
    let mut out = Outputs::new();
    out.report("exit_scaling", "exit-scaling", v)?;
    let n = model.n_modes();
    let rows: Vec<Vec<String>> = samples
        .iter()
        .flatten()
        .map(|s| {
            let mut r = vec![
                num(s.eps),
                s.path_index.to_string(),
                s.seed.to_string(),
                num(s.tau),
                s.steps.to_string(),
                s.censored.to_string(),
                num(s.overshoot),
            ];
            r.extend(s.exit_point.iter().map(|c| num(*c)));
            r
        })
        .collect();
    out.raw(
        "exit_samples.csv",
        csv_owned(
            &coeff_header("exit_x", n, &["eps", "path", "seed", "tau", "steps", "censored", "overshoot"]),
            &rows,
        ),
    );
    out.not_converged = warn;
    Ok(out)
}

fn exit_place(cfg: &ExperimentConfig, model: &Model) -> Result<Outputs, CliError> {
    let b = cfg.exit_place.as_ref().expect("validated");
    let center = field_or_zero(model, &b.center)?;
    let (v_ref, _, warn) = exit_v_ref(model, &center, b.radius, b.v_ref, &b.qp_horizons)?;
    let problem = exit_problem(
        model,
        &b.center,
        &b.x0,
        b.radius,
        b.norm,
        vec![b.eps],
        b.n_paths,
        b.max_steps,
        v_ref,
        cfg.master_seed,
    )?;
    problem.check_budget(model)?;
    let report = exit_place_histogram(model, &problem, b.eps, &b.cells)?;
    let mut v = with_kind(to_value(&report), "exit-place");
    v["v_ref"] = json!(v_ref);
    let mut out = Outputs::new();
    out.report("exit_place", "exit-place", v)?;
    out.not_converged = warn;
    Ok(out)
}
