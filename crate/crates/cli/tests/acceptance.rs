//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 3, 4, 5, 8 and 9 drive the `fwspde` binary on the configs in
//! `configs/acceptance/`; the others call the library directly.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fwspde_cli::run::RunManifest;
use fwspde_core::action::{minimize_action, quasipotential, ActionProblem, QpOptions, QpTarget};
use fwspde_core::exit::{exit_scaling, Domain, ExitProblem};
use fwspde_core::models::{leray_project_vector, ns_trilinear, DiffusionCoefficient, DriftSpec, Model, ModelSpec, NoiseSpec};
use fwspde_core::simulator::{simulate_path, stochastic_mild_residual, SimConfig};
use fwspde_core::skeleton::{mild_residual, solve_skeleton, ControlPath, SolverOptions, TimeGrid};
use fwspde_core::spectral::{BasisSpec, SpectralBasis, SpectralField};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

/// Runs the binary and returns the output directory.
fn run_cli(sub: &str, config: &str, out: &Path, threads: Option<usize>) -> Result<PathBuf, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fwspde"));
    cmd.env_remove("FWSPDE_THREADS")
        .arg(sub)
        .arg("--config")
        .arg(configs().join(config))
        .arg("--out")
        .arg(out);
    if let Some(t) = threads {
        cmd.args(["--threads", &t.to_string()]);
    }
    let o = cmd.output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{sub} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(out.to_path_buf())
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn c1_lq_action() -> Check {
    let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 1e-3)).unwrap();
    let x0 = SpectralField::zeros(m.basis());
    let y = SpectralField::single_mode(m.basis(), 0, 1.0).unwrap();
    let r = minimize_action(&m, &ActionProblem::to_point(x0, y, 1e-4)).map_err(|e| e.to_string())?;
    let w = (1.0 - (-2.0f64).exp()) / 2.0;
    let oracle = 0.5 / w;
    let rel = (r.action - oracle).abs() / oracle;
    let msg = format!("action {:.5} vs 1/2 y^2/W(T) = {oracle:.5}, rel err {:.3}% (tol 1%)", r.action, 100.0 * rel);
    if rel <= 0.01 && r.converged {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c2_quasipotential() -> Check {
    let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 0.01)).unwrap();
    let origin = SpectralField::zeros(m.basis());
    let q = quasipotential(
        &m,
        &origin,
        &QpTarget::BallBoundary { radius: 1.0 },
        &[2.0, 4.0, 8.0, 16.0],
        &QpOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let sweep: Vec<String> = q.per_horizon.iter().map(|(t, a)| format!("T={t}:{a:.4}")).collect();
    let msg = format!("V(0, +-1) = {:.4} vs 1.0 (tol 2%); {}", q.value, sweep.join(" "));
    if (q.value - 1.0).abs() <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c3_exit_scaling(work: &Path) -> Check {
    let out = run_cli("exit-scaling", "c3_exit_scaling.json", &work.join("c3"), None)?;
    let r = read_json(&out.join("exit_scaling.json"));
    let vals: Vec<f64> = r["rows"].as_array().unwrap().iter().map(|row| f(&row["eps_log_mean"])).collect();
    let limit = f(&r["extrapolated_limit"]);
    let inc = r["strictly_increasing"].as_bool().unwrap_or(false);
    let ok = inc && (limit - 1.0).abs() <= 0.2;

    // diagnostic only: how often other master seeds pass the same test
    let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 1e-3)).unwrap();
    let zero = SpectralField::zeros(m.basis());
    let mut passes = 0;
    let seeds = 1..=20u64;
    let n_seeds = seeds.clone().count();
    for seed in seeds {
        let p = ExitProblem {
            domain: Domain::l2_ball(zero.clone(), 1.0),
            equilibrium: zero.clone(),
            x0: zero.clone(),
            eps_list: vec![0.4, 0.3, 0.22],
            n_paths: 200,
            max_steps: 10_000_000,
            v_ref: 1.0,
            seed,
        };
        let rep = exit_scaling(&m, &p, 0.2).map_err(|e| e.to_string())?;
        if rep.strictly_increasing && rep.extrapolated_limit.is_some_and(|l| (l - 1.0).abs() <= 0.2) {
            passes += 1;
        }
    }
    let msg = format!(
        "eps log E[tau] = {vals:.4?} (strictly increasing: {inc}), extrapolation {limit:.4} vs V = 1.0 (tol 0.2); \
         seed 0 pre-registered, diagnostic pass rate over seeds 1..=20: {passes}/{n_seeds}"
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_ldp_lower(work: &Path) -> Check {
    let out = run_cli("ldp-lower", "c4_ldp_lower.json", &work.join("c4"), None)?;
    let r = read_json(&out.join("ldp_lower.json"));
    let margins: Vec<f64> = r["rows"].as_array().unwrap().iter().map(|row| f(&row["margin"])).collect();
    let last = *margins.last().unwrap();
    let shrinking = margins.windows(2).all(|w| w[1].abs() <= w[0].abs());
    let msg = format!(
        "margins {margins:.4?} at eps [0.5, 0.33, 0.25]; smallest-eps margin {last:.4} >= -0.35, |margin| nonincreasing: {shrinking}"
    );
    if last >= -0.35 && shrinking {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_ou_variance(work: &Path) -> Check {
    let out = run_cli("simulate", "c5_ou_moments.json", &work.join("c5"), None)?;
    let eps = 0.1;
    let mut rdr = csv::Reader::from_path(out.join("moments.csv")).map_err(|e| e.to_string())?;
    let mut found = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let t: f64 = rec[1].parse().unwrap();
        for target in [0.25, 0.5, 1.0] {
            if (t - target).abs() < 1e-9 {
                let var: f64 = rec[5].parse().unwrap();
                let se: f64 = rec[6].parse().unwrap();
                let exact = (1.0 - (-2.0 * target).exp()) / 2.0 * eps;
                found.push((target, var, exact, (var - exact).abs() / se));
            }
        }
    }
    let detail: Vec<String> = found
        .iter()
        .map(|(t, v, e, z)| format!("t={t}: {v:.6} vs {e:.6} ({z:.2} se)"))
        .collect();
    let msg = format!("{} with 1e5 paths (tol 3 se)", detail.join(", "));
    if found.len() == 3 && found.iter().all(|x| x.3 <= 3.0) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_navier_stokes() -> Check {
    let basis = SpectralBasis::new(BasisSpec::torus(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let field = |rng: &mut ChaCha8Rng| {
        let c: Vec<f64> = (0..basis.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        SpectralField::new(basis.clone(), c).unwrap()
    };
    let mut worst_b = 0.0f64;
    for _ in 0..200 {
        let (u, v) = (field(&mut rng), field(&mut rng));
        worst_b = worst_b.max(ns_trilinear(&u, &v, &v).unwrap().abs());
    }
    let (mut worst_idem, mut worst_div) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = loop {
            let k = [rng.random_range(-8..=8), rng.random_range(-8..=8)];
            if k != [0, 0] {
                break k;
            }
        };
        let c = [
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        ];
        let p = leray_project_vector(k, c);
        let pp = leray_project_vector(k, p);
        worst_idem = worst_idem.max((p[0] - pp[0]).norm().max((p[1] - pp[1]).norm()));
        worst_div = worst_div.max((p[0] * k[0] as f64 + p[1] * k[1] as f64).norm());
    }
    let m = Model::new(ModelSpec {
        basis: BasisSpec::torus(2),
        drift: DriftSpec::NavierStokes,
        noise: NoiseSpec::additive(vec![1.0; 4]),
        horizon: 0.5,
        dt: 1e-3,
        tolerances: Default::default(),
    })
    .unwrap();
    let mut monotone = 0;
    for _ in 0..50 {
        let c: Vec<f64> = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0 = SpectralField::new(m.basis().clone(), c).unwrap();
        let u = ControlPath::zeros(TimeGrid::of_model(&m), m.n_noise_modes());
        let phi = solve_skeleton(&m, &x0, &u, &SolverOptions::from_model(&m)).map_err(|e| e.to_string())?;
        let e: Vec<f64> = phi.states().iter().map(|s| s.l2_norm()).collect();
        if e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)) {
            monotone += 1;
        }
    }
    let msg = format!(
        "max |b(u,v,v)| = {worst_b:.2e} (tol 1e-9); Leray idempotence {worst_idem:.2e}, divergence {worst_div:.2e} (tol 1e-12); \
         energy nonincreasing on {monotone}/50 fields"
    );
    if worst_b <= 1e-9 && worst_idem <= 1e-12 && worst_div <= 1e-12 && monotone == 50 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reaction16(dt: f64) -> Model {
    Model::new(ModelSpec {
        basis: BasisSpec::interval(16, std::f64::consts::PI),
        drift: DriftSpec::ReactionPolynomial {
            coeffs: vec![0.0, 1.0, 0.0, -1.0],
        },
        noise: NoiseSpec::power_law(1.0, 1.0, 16, DiffusionCoefficient::BoundedRational { c: 1.0 }),
        horizon: 1.0,
        dt,
        tolerances: Default::default(),
    })
    .unwrap()
}

fn smooth_control(m: &Model) -> ControlPath {
    let k = m.n_noise_modes();
    ControlPath::from_fn(TimeGrid::of_model(m), |t| {
        (1..=k).map(|j| 0.8 * (std::f64::consts::PI * t).sin() / j as f64).collect()
    })
    .unwrap()
}

fn reaction_x0(m: &Model) -> SpectralField {
    let c: Vec<f64> = (1..=m.n_modes()).map(|k| 0.6 / (k * k) as f64).collect();
    SpectralField::new(m.basis().clone(), c).unwrap()
}

fn c7_certification() -> Check {
    let dts = [0.01, 0.005, 0.0025, 0.00125];
    let mut worst_skel = 0.0f64;
    let mut ends = Vec::new();
    for dt in dts {
        let m = reaction16(dt);
        let u = smooth_control(&m);
        let phi = solve_skeleton(&m, &reaction_x0(&m), &u, &SolverOptions::from_model(&m)).map_err(|e| e.to_string())?;
        worst_skel = worst_skel.max(mild_residual(&phi, &m, &u).map_err(|e| e.to_string())?);
        ends.push(phi.endpoint().coeffs().to_vec());
    }
    let m = reaction16(0.01);
    let tol = m.tolerances().picard_tol;
    let u = smooth_control(&m);
    let cfg = SimConfig::new(0.1, 3);
    let mut worst_sim = 0.0f64;
    for i in 0..16 {
        let p = simulate_path(&m, &reaction_x0(&m), Some(&u), &cfg, i, None).map_err(|e| e.to_string())?;
        worst_sim = worst_sim.max(stochastic_mild_residual(&p.trajectory, &m, Some(&u), &cfg, i).map_err(|e| e.to_string())?);
    }
    let diffs: Vec<f64> = ends
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    let ratios: Vec<f64> = diffs.windows(2).map(|w| w[0] / w[1]).collect();
    let msg = format!(
        "max residual skeleton {worst_skel:.1e}, simulator {worst_sim:.1e} (tol {tol:.0e}); halving ratios {ratios:.3?} (>= 1.8)"
    );
    if worst_skel <= tol && worst_sim <= tol && ratios.iter().all(|r| *r >= 1.8) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_sweep(work: &Path) -> Check {
    let out = run_cli("sweep", "c8_sweep.json", &work.join("c8"), None)?;
    let r = read_json(&out.join("sweep.json"));
    let margins: Vec<f64> = r["margins"].as_array().unwrap().iter().map(f).collect();
    let all_pass = r["reports"].as_array().unwrap().iter().all(|x| x["pass"] == Value::Bool(true));
    let (c, w) = (f(&r["centered_margin"]), f(&r["worst_margin"]));
    let within = w.abs() <= 2.0 * c.abs();
    let msg = format!(
        "5 initial conditions, margins {margins:.4?}; worst {w:.4} vs centered {c:.4} (within 2x: {within}); all PASS: {all_pass}"
    );
    if all_pass && within && margins.len() == 5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_determinism(work: &Path) -> Check {
    let cases = [
        ("exit-scaling", "c3_exit_scaling.json"),
        ("ldp-lower", "c4_ldp_lower.json"),
        ("simulate", "c5_ou_moments.json"),
    ];
    let mut compared = 0;
    for (sub, cfg) in cases {
        let mut manifests: Vec<RunManifest> = Vec::new();
        for (tag, threads) in [("t1", 1), ("t4", 4), ("t4b", 4)] {
            let out = run_cli(sub, cfg, &work.join(format!("c9-{sub}-{tag}")), Some(threads))?;
            manifests.push(serde_json::from_value(read_json(&out.join("manifest.json"))).unwrap());
        }
        for m in &manifests[1..] {
            if m.files != manifests[0].files {
                return Err(format!("{sub}: data-file digests differ between runs"));
            }
        }
        // the default-thread run of the criterion itself must match too
        let base: RunManifest = serde_json::from_value(read_json(&work.join(match sub {
            "exit-scaling" => "c3",
            "ldp-lower" => "c4",
            _ => "c5",
        })
        .join("manifest.json")))
        .unwrap();
        if base.files != manifests[0].files {
            return Err(format!("{sub}: default-thread run differs from --threads 1"));
        }
        compared += manifests[0].files.len();
    }
    Ok(format!(
        "criteria 3-5 rerun with --threads 1, 4, 4: all {compared} data files byte-identical (sha256)"
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    type Crit<'a> = (u32, &'a str, f64, Box<dyn Fn() -> Check + 'a>);
    let criteria: Vec<Crit> = vec![
        (1, "LQ action oracle", 10.0, Box::new(c1_lq_action)),
        (2, "quasipotential of the OU ball", 60.0, Box::new(c2_quasipotential)),
        (3, "exit-time scaling", 900.0, Box::new(|| c3_exit_scaling(w))),
        (4, "LDP lower-bound margin", 600.0, Box::new(|| c4_ldp_lower(w))),
        (5, "stochastic convolution variance", 60.0, Box::new(|| c5_ou_variance(w))),
        (6, "Navier-Stokes structure", 60.0, Box::new(c6_navier_stokes)),
        (7, "mild-solution certification", 120.0, Box::new(c7_certification)),
        (8, "uniformity sweep", 1800.0, Box::new(|| c8_sweep(w))),
        (9, "determinism across runs and threads", f64::INFINITY, Box::new(|| c9_determinism(w))),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in &criteria {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs <= *limit;
        let (pass, detail) = match res {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let limit_text = if limit.is_finite() { format!(" (limit {limit:.0} s)") } else { String::new() };
        println!(
            "criterion {id} {}: {name}: {detail}; {secs:.1} s{limit_text}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed += 1;
        }
    }
    println!("acceptance: {}/{} criteria PASS", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
