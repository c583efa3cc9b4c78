//! Rate functional, minimum-action controls, quasipotential sweeps and
//! level-set membership.
//!
//! The endpoint constraint `X^{0,u}(T) = y` is enforced by a quadratic
//! penalty `rho/2 |X(T) - y|^2` whose weight doubles until the terminal gap
//! drops below the requested tolerance. Controls are optimized in the scaled
//! variable `z_i = c_i sqrt(w_i dt)` (trapezoid weights `w_i`), in which the
//! control energy is `|z|^2 / 2`. Gradients come from the discrete adjoint of
//! the exponential-Euler recursion.
//!
//! The penalized optimum `J_rho` never exceeds the constrained minimum, so it
//! is a lower bound on the discrete action whenever the penalized problem is
//! solved globally (always the case for linear models, where it is convex).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::Model;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::simulator::par_map_indexed;
use crate::skeleton::{exp_euler, forcing_into, ControlPath, Interpolation, TimeGrid, Trajectory};
use crate::spectral::{l2, SpectralField};

/// Per-node coefficient vectors.
type NodeValues = Vec<Vec<f64>>;

/// `1/2 int |u|^2 dt` (trapezoid rule).
pub fn action_of_control(u: &ControlPath) -> f64 {
    u.energy()
}

#[derive(Clone, Debug)]
pub enum Target {
    /// `|X(T) - y| <= tol`.
    Point { y: SpectralField, tol: f64 },
    /// `|X(T) - center| <= radius + tol`.
    Ball {
        center: SpectralField,
        radius: f64,
        tol: f64,
    },
}

impl Target {
    fn tol(&self) -> f64 {
        match self {
            Target::Point { tol, .. } | Target::Ball { tol, .. } => *tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    Adjoint,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// L-BFGS iterations per penalty stage.
    pub max_iters: usize,
    pub grad_tol: f64,
    pub memory: usize,
    /// Maximum number of penalty doublings.
    pub max_doublings: usize,
    /// Actions above this flag the target as unreachable.
    pub action_ceiling: f64,
    pub gradient: GradientMethod,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iters: 400,
            grad_tol: 1e-7,
            memory: 20,
            max_doublings: 30,
            action_ceiling: 1e6,
            gradient: GradientMethod::Adjoint,
        }
    }
}

/// Path-tracking term `weight/2 sum_{n>=1} dt |X_n - phi_n|^2`.
#[derive(Clone, Debug)]
pub struct Tracking {
    pub reference: Trajectory,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct ActionProblem {
    pub x0: SpectralField,
    pub target: Target,
    /// Defaults to the model grid.
    pub control_grid: Option<TimeGrid>,
    /// Initial penalty weight.
    pub penalty_weight: f64,
    pub optimizer: OptimizerOptions,
    pub tracking: Option<Tracking>,
    pub warm_start: Option<ControlPath>,
}

impl ActionProblem {
    pub fn to_point(x0: SpectralField, y: SpectralField, tol: f64) -> Self {
        ActionProblem {
            x0,
            target: Target::Point { y, tol },
            control_grid: None,
            penalty_weight: 10.0,
            optimizer: OptimizerOptions::default(),
            tracking: None,
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActionResult {
    /// `1/2 int |u*|^2`, equal to `control.energy()`.
    pub action: f64,
    pub control: ControlPath,
    pub trajectory: Trajectory,
    pub terminal_state: SpectralField,
    pub terminal_gap: f64,
    /// Penalized optimum; a lower bound on the constrained minimum.
    pub penalized_objective: f64,
    pub penalty_weight: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Terminal gap stagnated under penalty growth, or the action exceeded
    /// the ceiling: the target is treated as outside the reachable set.
    pub unreachable: bool,
    pub iterations: usize,
    /// `sup_n |X_n - phi_n|` when a tracking reference was given.
    pub tracking_error: Option<f64>,
}

struct Objective<'a> {
    model: &'a Model,
    x0: Vec<f64>,
    target: &'a Target,
    target_raw: Vec<f64>,
    interp: Interpolation,
    sqw: Vec<f64>,
    m: usize,
    tracking: Option<(Vec<Vec<f64>>, f64)>,
    guard: f64,
}

impl<'a> Objective<'a> {
    fn controls(&self, z: &[f64]) -> Vec<Vec<f64>> {
        z.chunks(self.m)
            .zip(&self.sqw)
            .map(|(c, s)| c.iter().map(|v| v / s).collect())
            .collect()
    }

    /// State-grid controls and states; `None` on blow-up.
    fn forward(&self, z: &[f64]) -> Option<(NodeValues, NodeValues)> {
        let model = self.model;
        let u = self.interp.apply(&self.controls(z));
        let n = model.n_modes();
        let mut ws = model.workspace();
        let mut states = Vec::with_capacity(model.n_steps() + 1);
        states.push(self.x0.clone());
        let mut f = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for k in 0..model.n_steps() {
            forcing_into(model, &states[k], Some(&u[k]), &mut f, &mut scratch, &mut ws);
            let mut next = vec![0.0; n];
            exp_euler(model, &states[k], &f, &mut next);
            let norm = l2(&next);
            if !(norm <= self.guard) {
                return None;
            }
            states.push(next);
        }
        Some((u, states))
    }

    /// Penalty gap and its gradient direction with respect to `X(T)`.
    fn gap(&self, xt: &[f64]) -> (f64, Vec<f64>) {
        let d: Vec<f64> = xt.iter().zip(&self.target_raw).map(|(a, b)| a - b).collect();
        match self.target {
            Target::Point { .. } => (l2(&d), d),
            Target::Ball { radius, .. } => {
                let r = l2(&d);
                if r <= *radius {
                    (0.0, vec![0.0; d.len()])
                } else {
                    let s = (r - radius) / r;
                    (r - radius, d.iter().map(|v| v * s).collect())
                }
            }
        }
    }

    fn tracking_terms(&self, states: &[Vec<f64>]) -> (f64, f64) {
        let Some((reference, weight)) = &self.tracking else {
            return (0.0, 0.0);
        };
        let dt = self.model.dt();
        let mut cost = 0.0;
        let mut sup = 0.0f64;
        for (x, r) in states.iter().zip(reference).skip(1) {
            let d2: f64 = x.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
            cost += 0.5 * weight * dt * d2;
            sup = sup.max(d2.sqrt());
        }
        (cost, sup)
    }

    fn value(&self, z: &[f64], rho: f64) -> f64 {
        let Some((_, states)) = self.forward(z) else {
            return f64::INFINITY;
        };
        let (gap, _) = self.gap(states.last().expect("nonempty"));
        0.5 * z.iter().map(|v| v * v).sum::<f64>()
            + 0.5 * rho * gap * gap
            + self.tracking_terms(&states).0
    }

    fn eval_adjoint(&self, z: &[f64], grad: &mut [f64], rho: f64) -> f64 {
        let Some((u, states)) = self.forward(z) else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        };
        let model = self.model;
        let n = model.n_modes();
        let m = self.m;
        let dt = model.dt();
        let steps = model.n_steps();
        let mut ws = model.workspace();
        let (gap, dir) = self.gap(&states[steps]);
        let mut p: Vec<f64> = dir.iter().map(|v| rho * v).collect();
        let track = self.tracking.as_ref();
        if let Some((r, w)) = track {
            for k in 0..n {
                p[k] += w * dt * (states[steps][k] - r[steps][k]);
            }
        }
        let mut grad_u = vec![vec![0.0; m]; steps + 1];
        let mut q = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut gt = vec![0.0; m];
        for k in (0..steps).rev() {
            for i in 0..n {
                q[i] = model.decay()[i] * p[i];
            }
            let x = &states[k];
            model.diffusion_t_into(x, &q, &mut gt, &mut ws);
            for j in 0..m {
                grad_u[k][j] = dt * gt[j];
            }
            p.copy_from_slice(&q);
            model.drift_vjp_into(x, &q, &mut tmp, &mut ws);
            p.iter_mut().zip(&tmp).for_each(|(a, b)| *a += dt * b);
            model.diffusion_state_vjp_into(x, &u[k], &q, &mut tmp, &mut ws);
            p.iter_mut().zip(&tmp).for_each(|(a, b)| *a += dt * b);
            if let Some((r, w)) = track {
                if k >= 1 {
                    for i in 0..n {
                        p[i] += w * dt * (x[i] - r[k][i]);
                    }
                }
            }
        }
        let grad_c = self.interp.transpose(&grad_u, self.sqw.len());
        for (i, gc) in grad_c.iter().enumerate() {
            for j in 0..m {
                grad[i * m + j] = z[i * m + j] + gc[j] / self.sqw[i];
            }
        }
        0.5 * z.iter().map(|v| v * v).sum::<f64>()
            + 0.5 * rho * gap * gap
            + self.tracking_terms(&states).0
    }

    fn eval_fd(&self, z: &[f64], grad: &mut [f64], rho: f64) -> f64 {
        let f0 = self.value(z, rho);
        let mut zz = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * z[i].abs().max(1.0);
            zz[i] = z[i] + h;
            let fp = self.value(&zz, rho);
            zz[i] = z[i] - h;
            let fm = self.value(&zz, rho);
            zz[i] = z[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        f0
    }

    fn eval(&self, z: &[f64], grad: &mut [f64], rho: f64, method: GradientMethod) -> f64 {
        match method {
            GradientMethod::Adjoint => self.eval_adjoint(z, grad, rho),
            GradientMethod::FiniteDifference => self.eval_fd(z, grad, rho),
        }
    }
}

fn build_objective<'a>(
    model: &'a Model,
    problem: &'a ActionProblem,
) -> Result<(Objective<'a>, TimeGrid)> {
    model.check_field(&problem.x0)?;
    let (target_raw, tol) = match &problem.target {
        Target::Point { y, tol } => {
            model.check_field(y)?;
            (y.coeffs().to_vec(), *tol)
        }
        Target::Ball {
            center, radius, tol, ..
        } => {
            model.check_field(center)?;
            if !(*radius >= 0.0) {
                return Err(invalid("target radius must be nonnegative"));
            }
            (center.coeffs().to_vec(), *tol)
        }
    };
    if !(tol > 0.0) {
        return Err(invalid("target tolerance must be positive"));
    }
    if !(problem.penalty_weight > 0.0) {
        return Err(invalid("penalty_weight must be positive"));
    }
    let state_grid = TimeGrid::of_model(model);
    let cgrid = problem.control_grid.unwrap_or(state_grid);
    if (cgrid.t_end() - state_grid.t_end()).abs() > 1e-12 * state_grid.t_end() {
        return Err(invalid("control grid horizon differs from the model horizon"));
    }
    let tracking = match &problem.tracking {
        Some(t) => {
            if *t.reference.grid() != state_grid {
                return Err(invalid("tracking reference must live on the model grid"));
            }
            if !(t.weight >= 0.0) {
                return Err(invalid("tracking weight must be nonnegative"));
            }
            Some((t.reference.raw(), t.weight))
        }
        None => None,
    };
    let sqw = (0..cgrid.n_nodes())
        .map(|i| (cgrid.trapezoid_weight(i) * cgrid.dt()).sqrt())
        .collect();
    let guard = model.tolerances().blowup_factor
        * (problem.x0.l2_norm() + l2(&target_raw) + 1.0);
    Ok((
        Objective {
            model,
            x0: problem.x0.coeffs().to_vec(),
            target: &problem.target,
            target_raw,
            interp: Interpolation::new(&cgrid, &state_grid),
            sqw,
            m: model.n_noise_modes(),
            tracking,
            guard,
        },
        cgrid,
    ))
}

/// Value and gradient of the penalized objective at a control, for
/// verification of the adjoint.
pub fn penalized_objective(
    model: &Model,
    problem: &ActionProblem,
    u: &ControlPath,
    method: GradientMethod,
) -> Result<(f64, ControlPath)> {
    let (obj, cgrid) = build_objective(model, problem)?;
    let c = u.resample(&cgrid);
    let z: Vec<f64> = c
        .values()
        .iter()
        .zip(&obj.sqw)
        .flat_map(|(v, s)| v.iter().map(move |x| x * s))
        .collect();
    let mut g = vec![0.0; z.len()];
    let f = obj.eval(&z, &mut g, problem.penalty_weight, method);
    let values = g.chunks(obj.m).map(|c| c.to_vec()).collect();
    Ok((f, ControlPath::new(cgrid, values)?))
}

/// Minimizes `1/2 int |u|^2` subject to the terminal target.
pub fn minimize_action(model: &Model, problem: &ActionProblem) -> Result<ActionResult> {
    let (obj, cgrid) = build_objective(model, problem)?;
    let opts = &problem.optimizer;
    let m = obj.m;
    let mut z = match &problem.warm_start {
        Some(w) => {
            if w.n_noise_modes() != m {
                return Err(Error::DimensionMismatch {
                    what: "warm start noise modes",
                    expected: m,
                    got: w.n_noise_modes(),
                });
            }
            let c = w.resample(&cgrid);
            c.values()
                .iter()
                .zip(&obj.sqw)
                .flat_map(|(v, s)| v.iter().map(move |x| x * s))
                .collect()
        }
        None => vec![0.0; cgrid.n_nodes() * m],
    };
    if obj.forward(&z).is_none() {
        z.iter_mut().for_each(|v| *v = 0.0);
    }
    let lopts = LbfgsOptions {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        memory: opts.memory,
    };
    let tol = problem.target.tol();
    let mut rho = problem.penalty_weight;
    let mut gaps: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut unreachable = false;
    let mut last;
    loop {
        last = lbfgs(|x, g| obj.eval(x, g, rho, opts.gradient), z, &lopts);
        iterations += last.iterations;
        z = last.x.clone();
        let Some((_, states)) = obj.forward(&z) else {
            return Err(Error::BlowUp {
                node: model.n_steps(),
                norm: f64::INFINITY,
                guard: obj.guard,
            });
        };
        let gap = obj.gap(states.last().expect("nonempty")).0;
        gaps.push(gap);
        let action = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        if gap <= tol {
            break;
        }
        if action > opts.action_ceiling {
            unreachable = true;
            break;
        }
        if gaps.len() > 3 && gap > 0.9 * gaps[gaps.len() - 4] {
            unreachable = true;
            break;
        }
        if gaps.len() > opts.max_doublings {
            break;
        }
        rho *= 2.0;
    }
    let (_, states) = obj.forward(&z).expect("checked above");
    let controls = obj.controls(&z);
    let control = ControlPath::new(cgrid, controls)?;
    let (gap, _) = obj.gap(states.last().expect("nonempty"));
    let tracking_error = obj.tracking.as_ref().map(|_| obj.tracking_terms(&states).1);
    let grid = TimeGrid::of_model(model);
    let trajectory = Trajectory::from_raw(model, grid, states);
    Ok(ActionResult {
        action: control.energy(),
        terminal_state: trajectory.endpoint().clone(),
        trajectory,
        control,
        terminal_gap: gap,
        penalized_objective: last.value,
        penalty_weight: rho,
        grad_norm: last.grad_norm,
        converged: last.converged && gap <= tol && !unreachable,
        unreachable,
        iterations,
        tracking_error,
    })
}

/// Targets of a quasipotential computation.
#[derive(Clone, Debug)]
pub enum QpTarget {
    Point(SpectralField),
    Points(Vec<SpectralField>),
    /// The `2 n_modes` points `O +- r e_k`.
    BallBoundary { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    pub tol: f64,
    pub penalty_weight: f64,
    pub optimizer: OptimizerOptions,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-3,
            penalty_weight: 10.0,
            optimizer: OptimizerOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasipotentialResult {
    pub value: f64,
    pub best_horizon: f64,
    /// Index of the minimizing target point.
    pub best_point: usize,
    /// `(T, min over points of the action)`.
    pub per_horizon: Vec<(f64, f64)>,
    /// `per_point[p][h]` = action for point `p`, horizon `h`.
    pub per_point: Vec<Vec<f64>>,
    /// Per-horizon actions are nonincreasing in `T` (relative slack 1e-3).
    pub monotone_flag: bool,
    /// Per-horizon convergence of every point.
    pub converged: Vec<bool>,
}

/// End-aligned shift of a control to a new horizon: `u(t - (T' - T))`,
/// zero before the shifted start.
fn shift_control(u: &ControlPath, grid: TimeGrid) -> Result<ControlPath> {
    let shift = grid.t_end() - u.grid().t_end();
    let m = u.n_noise_modes();
    ControlPath::from_fn(grid, |t| {
        let s = t - shift;
        if s < 0.0 {
            vec![0.0; m]
        } else {
            u.value_at(s)
        }
    })
}

/// `V(O, target)` approximated by the minimum over horizons and target points.
pub fn quasipotential(
    model: &Model,
    origin: &SpectralField,
    target: &QpTarget,
    horizons: &[f64],
    opts: &QpOptions,
) -> Result<QuasipotentialResult> {
    if horizons.is_empty() {
        return Err(invalid("quasipotential needs at least one horizon"));
    }
    model.check_field(origin)?;
    let points: Vec<SpectralField> = match target {
        QpTarget::Point(y) => vec![y.clone()],
        QpTarget::Points(p) => {
            if p.is_empty() {
                return Err(invalid("target point list is empty"));
            }
            p.clone()
        }
        QpTarget::BallBoundary { radius } => {
            if !(*radius > 0.0) {
                return Err(invalid("ball radius must be positive"));
            }
            let mut v = Vec::new();
            for k in 0..model.n_modes() {
                for s in [1.0, -1.0] {
                    let mut c = origin.coeffs().to_vec();
                    c[k] += s * radius;
                    v.push(model.field(c));
                }
            }
            v
        }
    };
    let models: Vec<Model> = horizons
        .iter()
        .map(|t| model.with_horizon(*t))
        .collect::<Result<_>>()?;
    let runs = par_map_indexed(points.len(), |p| -> Result<Vec<(f64, bool)>> {
        let mut out = Vec::with_capacity(models.len());
        let mut prev: Option<ControlPath> = None;
        for m in &models {
            let grid = TimeGrid::of_model(m);
            let warm = prev.as_ref().map(|u| shift_control(u, grid)).transpose()?;
            let problem = ActionProblem {
                x0: origin.clone(),
                target: Target::Point {
                    y: points[p].clone(),
                    tol: opts.tol,
                },
                control_grid: None,
                penalty_weight: opts.penalty_weight,
                optimizer: opts.optimizer.clone(),
                tracking: None,
                warm_start: warm,
            };
            let r = minimize_action(m, &problem)?;
            out.push((r.action, r.converged));
            prev = Some(r.control);
        }
        Ok(out)
    });
    let runs: Vec<Vec<(f64, bool)>> = runs.into_iter().collect::<Result<_>>()?;
    let per_point: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.iter().map(|(a, _)| *a).collect())
        .collect();
    let converged: Vec<bool> = (0..horizons.len())
        .map(|h| runs.iter().all(|r| r[h].1))
        .collect();
    let per_horizon: Vec<(f64, f64)> = horizons
        .iter()
        .enumerate()
        .map(|(h, t)| {
            let a = per_point.iter().map(|r| r[h]).fold(f64::INFINITY, f64::min);
            (*t, a)
        })
        .collect();
    let value = per_horizon.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let best_horizon = per_horizon
        .iter()
        .filter(|p| p.1 <= value + 1e-9)
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min);
    let h_best = horizons
        .iter()
        .position(|t| *t == best_horizon)
        .expect("best horizon is one of the horizons");
    let best_point = (0..points.len())
        .min_by(|a, b| per_point[*a][h_best].total_cmp(&per_point[*b][h_best]))
        .expect("nonempty");
    let mut sorted = per_horizon.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone_flag = sorted
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-3) + 1e-9);
    Ok(QuasipotentialResult {
        value,
        best_horizon,
        best_point,
        per_horizon,
        per_point,
        monotone_flag,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    NonMember,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub tracking_weight: f64,
    pub target_tol: f64,
    /// Membership test is `action <= s + slack_abs + slack_rel s`.
    pub slack_abs: f64,
    pub slack_rel: f64,
    pub penalty_weight: f64,
    pub optimizer: OptimizerOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            tracking_weight: 10.0,
            target_tol: 1e-3,
            slack_abs: 1e-6,
            slack_rel: 0.02,
            penalty_weight: 10.0,
            optimizer: OptimizerOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub membership: Membership,
    /// Action of the returned control.
    pub action_upper: f64,
    /// Penalized optimum, a lower bound when the problem is convex.
    pub action_lower: f64,
    pub tracking_error: f64,
    pub slack: f64,
}

/// Decides `phi in Phi_x(s)` for each candidate.
pub fn level_set_probe(
    model: &Model,
    x0: &SpectralField,
    s: f64,
    candidates: &[Trajectory],
    opts: &ProbeOptions,
) -> Result<Vec<ProbeOutcome>> {
    if !(s >= 0.0) {
        return Err(invalid("level s must be nonnegative"));
    }
    let grid = TimeGrid::of_model(model);
    for c in candidates {
        if *c.grid() != grid {
            return Err(invalid("candidates must live on the model time grid"));
        }
    }
    let slack = opts.slack_abs + opts.slack_rel * s;
    let results = par_map_indexed(candidates.len(), |i| -> Result<ProbeOutcome> {
        let phi = &candidates[i];
        let start_gap = phi.initial().distance(x0)?;
        let problem = ActionProblem {
            x0: x0.clone(),
            target: Target::Point {
                y: phi.endpoint().clone(),
                tol: opts.target_tol,
            },
            control_grid: None,
            penalty_weight: opts.penalty_weight,
            optimizer: opts.optimizer.clone(),
            tracking: Some(Tracking {
                reference: phi.clone(),
                weight: opts.tracking_weight,
            }),
            warm_start: None,
        };
        let r = minimize_action(model, &problem)?;
        let membership = if start_gap > opts.target_tol || r.unreachable {
            Membership::NonMember
        } else if r.converged && r.action <= s + slack {
            Membership::Member
        } else if r.penalized_objective > s + slack {
            Membership::NonMember
        } else {
            Membership::Unknown
        };
        Ok(ProbeOutcome {
            membership,
            action_upper: r.action,
            action_lower: r.penalized_objective,
            tracking_error: r.tracking_error.unwrap_or(0.0),
            slack,
        })
    });
    results.into_iter().collect()
}
