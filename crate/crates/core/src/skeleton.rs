//! Controlled skeleton equations solved in mild form.
//!
//! Time integrals `int_0^t S(t-s) F(s) ds` are discretized with left-point
//! exponential-Euler quadrature, so the discrete mild identity reads
//! `X_n = S(t_n) x0 + sum_{m<n} S(t_n - t_m) dt F(X_m)`, which is the same as
//! the recursion `X_{m+1} = S(dt) (X_m + dt F(X_m))`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{Model, Workspace};
use crate::spectral::{l2, l2_dist, SpectralField};

/// Uniform grid `t_i = i * t_end / n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(invalid("t_end must be positive"));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps must be positive"));
        }
        Ok(TimeGrid { t_end, n_steps })
    }

    /// The state grid of a model.
    pub fn of_model(model: &Model) -> Self {
        TimeGrid {
            t_end: model.horizon(),
            n_steps: model.n_steps(),
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights (`1/2` at both ends, `1` inside), in units of `dt`.
    pub fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_steps {
            0.5
        } else {
            1.0
        }
    }

    /// Interpolation stencil `(i0, i1, w)` of time `t`: value
    /// `(1-w) v[i0] + w v[i1]`.
    fn stencil(&self, t: f64) -> (usize, usize, f64) {
        let s = (t / self.dt()).clamp(0.0, self.n_steps as f64);
        let i0 = (s.floor() as usize).min(self.n_steps - 1);
        let w = (s - i0 as f64).clamp(0.0, 1.0);
        (i0, i0 + 1, w)
    }
}

/// Piecewise-linear control `u(t)` in noise-mode coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
    energy: f64,
}

impl ControlPath {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "control nodes",
                expected: grid.n_nodes(),
                got: values.len(),
            });
        }
        let m = values[0].len();
        if m == 0 {
            return Err(invalid("controls need at least one noise mode"));
        }
        for v in &values {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "control modes",
                    expected: m,
                    got: v.len(),
                });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(invalid("control values must be finite"));
            }
        }
        let energy = Self::trapezoid_energy(&grid, &values);
        Ok(ControlPath {
            grid,
            values,
            energy,
        })
    }

    pub fn zeros(grid: TimeGrid, n_noise_modes: usize) -> Self {
        ControlPath {
            grid,
            values: vec![vec![0.0; n_noise_modes]; grid.n_nodes()],
            energy: 0.0,
        }
    }

    pub fn constant(grid: TimeGrid, value: Vec<f64>) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_nodes()])
    }

    /// Samples `f(t)` at every node.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    fn trapezoid_energy(grid: &TimeGrid, values: &[Vec<f64>]) -> f64 {
        let dt = grid.dt();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| grid.trapezoid_weight(i) * v.iter().map(|c| c * c).sum::<f64>())
            .sum::<f64>()
            * 0.5
            * dt
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n_noise_modes(&self) -> usize {
        self.values[0].len()
    }

    /// `1/2 int |u|^2 dt` by the trapezoid rule.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let (i0, i1, w) = self.grid.stencil(t);
        self.values[i0]
            .iter()
            .zip(&self.values[i1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect()
    }

    /// Linear interpolation onto another grid.
    pub fn resample(&self, grid: &TimeGrid) -> ControlPath {
        if *grid == self.grid {
            return self.clone();
        }
        let values: Vec<Vec<f64>> = grid.nodes().into_iter().map(|t| self.value_at(t)).collect();
        let energy = Self::trapezoid_energy(grid, &values);
        ControlPath {
            grid: *grid,
            values,
            energy,
        }
    }

    /// Scaled copy `c u`.
    pub fn scaled(&self, c: f64) -> ControlPath {
        ControlPath {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| c * x).collect())
                .collect(),
            energy: self.energy * c * c,
        }
    }
}

/// Transpose-able linear interpolation from a control grid to a state grid.
#[derive(Clone, Debug)]
pub(crate) struct Interpolation {
    stencils: Vec<(usize, usize, f64)>,
    identity: bool,
}

impl Interpolation {
    pub(crate) fn new(from: &TimeGrid, to: &TimeGrid) -> Self {
        Interpolation {
            stencils: to.nodes().into_iter().map(|t| from.stencil(t)).collect(),
            identity: from == to,
        }
    }

    pub(crate) fn apply(&self, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if self.identity {
            return values.to_vec();
        }
        self.stencils
            .iter()
            .map(|&(i0, i1, w)| {
                values[i0]
                    .iter()
                    .zip(&values[i1])
                    .map(|(a, b)| (1.0 - w) * a + w * b)
                    .collect()
            })
            .collect()
    }

    /// Adjoint: accumulates state-grid gradients onto control nodes.
    pub(crate) fn transpose(&self, grads: &[Vec<f64>], n_from: usize) -> Vec<Vec<f64>> {
        if self.identity {
            return grads.to_vec();
        }
        let m = grads[0].len();
        let mut out = vec![vec![0.0; m]; n_from];
        for (g, &(i0, i1, w)) in grads.iter().zip(&self.stencils) {
            for j in 0..m {
                out[i0][j] += (1.0 - w) * g[j];
                out[i1][j] += w * g[j];
            }
        }
        out
    }
}

/// States at every node of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<SpectralField>,
    sup_l2: f64,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<SpectralField>) -> Result<Self> {
        if states.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "trajectory nodes",
                expected: grid.n_nodes(),
                got: states.len(),
            });
        }
        for s in &states[1..] {
            states[0].check_same(s)?;
        }
        let sup_l2 = states.iter().map(|s| s.l2_norm()).fold(0.0, f64::max);
        Ok(Trajectory {
            grid,
            states,
            sup_l2,
        })
    }

    pub(crate) fn from_raw(model: &Model, grid: TimeGrid, raw: Vec<Vec<f64>>) -> Self {
        let sup_l2 = raw.iter().map(|s| l2(s)).fold(0.0, f64::max);
        Trajectory {
            grid,
            states: raw.into_iter().map(|c| model.field(c)).collect(),
            sup_l2,
        }
    }

    /// Constant-in-time trajectory.
    pub fn constant(grid: TimeGrid, state: SpectralField) -> Self {
        let sup_l2 = state.l2_norm();
        Trajectory {
            grid,
            states: vec![state; grid.n_nodes()],
            sup_l2,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[SpectralField] {
        &self.states
    }

    pub fn initial(&self) -> &SpectralField {
        &self.states[0]
    }

    pub fn endpoint(&self) -> &SpectralField {
        self.states.last().expect("trajectories have at least two nodes")
    }

    /// `sup_n |X(t_n)|_{L2}`.
    pub fn sup_l2(&self) -> f64 {
        self.sup_l2
    }

    /// `sup_n |X(t_n) - Y(t_n)|_{L2}`.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.grid != other.grid {
            return Err(invalid("trajectories live on different time grids"));
        }
        let mut d = 0.0f64;
        for (a, b) in self.states.iter().zip(&other.states) {
            d = d.max(a.distance(b)?);
        }
        Ok(d)
    }

    pub(crate) fn raw(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.coeffs().to_vec()).collect()
    }
}

/// Picard solver settings. `None` entries are derived from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub cutoff_radius: Option<f64>,
    pub picard_tol: f64,
    pub max_picard_iters: usize,
    pub subinterval_len: Option<f64>,
}

impl SolverOptions {
    pub fn from_model(model: &Model) -> Self {
        let t = model.tolerances();
        SolverOptions {
            cutoff_radius: t.cutoff_radius,
            picard_tol: t.picard_tol,
            max_picard_iters: t.max_picard_iters,
            subinterval_len: t.subinterval_len,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.picard_tol > 0.0) || self.max_picard_iters == 0 {
            return Err(invalid("picard_tol and max_picard_iters must be positive"));
        }
        if self.cutoff_radius.is_some_and(|r| !(r > 0.0))
            || self.subinterval_len.is_some_and(|s| !(s > 0.0))
        {
            return Err(invalid("cutoff_radius and subinterval_len must be positive"));
        }
        Ok(())
    }
}

/// Radial retraction onto the closed L2 ball of radius `r`.
pub fn cutoff(x: &SpectralField, r: f64) -> Result<SpectralField> {
    if !(r >= 0.0) {
        return Err(invalid("cutoff radius must be nonnegative"));
    }
    let n = x.l2_norm();
    Ok(if n <= r { x.clone() } else { x.scaled(r / n) })
}

fn cutoff_in_place(x: &mut [f64], r: f64) {
    let n = l2(x);
    if n > r {
        let s = r / n;
        x.iter_mut().for_each(|c| *c *= s);
    }
}

/// `F(x) = B(x) + G(x) u` into `out` (`u = None` drops the control term).
pub(crate) fn forcing_into(
    model: &Model,
    x: &[f64],
    u: Option<&[f64]>,
    out: &mut [f64],
    scratch: &mut [f64],
    ws: &mut Workspace,
) {
    model.drift_into(x, out, ws);
    if let Some(u) = u {
        if u.iter().any(|c| *c != 0.0) {
            model.diffusion_into(x, u, scratch, ws);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o += s;
            }
        }
    }
}

/// `out = S(dt) (x + dt f)`.
pub(crate) fn exp_euler(model: &Model, x: &[f64], f: &[f64], out: &mut [f64]) {
    let dt = model.dt();
    for (k, o) in out.iter_mut().enumerate() {
        *o = model.decay()[k] * (x[k] + dt * f[k]);
    }
}

/// Picard iteration for `phi_n = psi_n + v_n`,
/// `v_n = sum_{m<n} S(t_n - t_m) dt F(T_R phi_m)` on consecutive blocks.
fn picard(
    model: &Model,
    psi: &[Vec<f64>],
    u: Option<&[Vec<f64>]>,
    r: f64,
    opts: &SolverOptions,
    block_nodes: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = model.n_modes();
    let steps = model.n_steps();
    let mut ws = model.workspace();
    let mut phi: Vec<Vec<f64>> = psi.to_vec();
    let mut v_start = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut xc = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut a = 0;
    while a < steps {
        let b = (a + block_nodes).min(steps);
        let mut converged = false;
        let mut last_update = f64::INFINITY;
        for _ in 0..opts.max_picard_iters {
            // v on the block from the current iterate
            w.copy_from_slice(&v_start);
            let mut update = 0.0f64;
            for m in a..b {
                xc.copy_from_slice(&phi[m]);
                cutoff_in_place(&mut xc, r);
                forcing_into(model, &xc, u.map(|u| u[m].as_slice()), &mut f, &mut scratch, &mut ws);
                exp_euler(model, &w, &f, &mut next);
                std::mem::swap(&mut w, &mut next);
                let new: Vec<f64> = psi[m + 1].iter().zip(&w).map(|(p, v)| p + v).collect();
                update = update.max(l2_dist(&new, &phi[m + 1]));
                phi[m + 1] = new;
            }
            if !update.is_finite() {
                break;
            }
            last_update = update;
            if update <= 0.1 * opts.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PicardDiverged {
                node: a,
                iters: opts.max_picard_iters,
                last_update,
            });
        }
        for (vs, (p, q)) in v_start.iter_mut().zip(phi[b].iter().zip(&psi[b])) {
            *vs = p - q;
        }
        a = b;
    }
    Ok(phi)
}

fn block_nodes(model: &Model, r: f64, u_sup: f64, opts: &SolverOptions) -> usize {
    let dt = model.dt();
    let len = opts.subinterval_len.unwrap_or_else(|| {
        let (lip_b, lip_g) = model.lipschitz_estimates(r);
        let lip = lip_b + lip_g * u_sup;
        if lip > 0.0 {
            (0.5 / lip).max(dt)
        } else {
            model.horizon()
        }
    });
    ((len / dt).round() as usize).clamp(1, model.n_steps())
}

/// Solves with cutoff radius `r`, doubling it once if the path reaches it.
fn with_cutoff_retry(
    r0: f64,
    mut solve: impl FnMut(f64) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<Vec<f64>>> {
    let mut r = r0;
    for attempt in 0..2 {
        let phi = solve(r)?;
        let touches = phi.iter().any(|x| l2(x) >= r * (1.0 - 1e-12));
        if !touches {
            return Ok(phi);
        }
        if attempt == 0 {
            r *= 2.0;
        }
    }
    Err(Error::CutoffActive { radius: r })
}

/// The map `M`: returns `phi = psi + v` with `v` the mild solution of
/// `v' = A v + B(v + psi)`, `v(0) = 0`.
pub fn apply_m(model: &Model, psi: &Trajectory, opts: &SolverOptions) -> Result<Trajectory> {
    opts.validate()?;
    let grid = TimeGrid::of_model(model);
    if *psi.grid() != grid {
        return Err(invalid("psi must live on the model time grid"));
    }
    model.check_field(psi.initial())?;
    let raw = psi.raw();
    let r0 = opts
        .cutoff_radius
        .unwrap_or_else(|| 4.0 * (psi.sup_l2() + 1.0));
    let phi = with_cutoff_retry(r0, |r| {
        let blocks = block_nodes(model, r, 0.0, opts);
        picard(model, &raw, None, r, opts, blocks)
    })?;
    Ok(Trajectory::from_raw(model, grid, phi))
}

fn control_on_state_grid(model: &Model, u: &ControlPath) -> Result<Vec<Vec<f64>>> {
    if u.n_noise_modes() != model.n_noise_modes() {
        return Err(Error::DimensionMismatch {
            what: "control noise modes",
            expected: model.n_noise_modes(),
            got: u.n_noise_modes(),
        });
    }
    let grid = TimeGrid::of_model(model);
    if (u.grid().t_end() - grid.t_end()).abs() > 1e-12 * grid.t_end() {
        return Err(invalid("control horizon differs from the model horizon"));
    }
    Ok(Interpolation::new(u.grid(), &grid).apply(u.values()))
}

/// `X^{0,u}_{x0}` on the model grid.
pub fn solve_skeleton(
    model: &Model,
    x0: &SpectralField,
    u: &ControlPath,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    model.check_field(x0)?;
    let uu = control_on_state_grid(model, u)?;
    let grid = TimeGrid::of_model(model);
    // psi_n = S(t_n) x0
    let mut psi = Vec::with_capacity(grid.n_nodes());
    psi.push(x0.coeffs().to_vec());
    for m in 0..grid.n_steps() {
        let next: Vec<f64> = psi[m].iter().zip(model.decay()).map(|(x, d)| x * d).collect();
        psi.push(next);
    }
    let u_sup = uu.iter().map(|v| l2(v)).fold(0.0, f64::max);
    let g_sup = model.noise().g.sup();
    let lam1 = model.lambdas().first().copied().unwrap_or(0.0);
    let linear_response: f64 = uu[..grid.n_steps()].iter().map(|v| l2(v)).sum::<f64>()
        * grid.dt()
        * g_sup
        * lam1;
    let r0 = opts
        .cutoff_radius
        .unwrap_or_else(|| 4.0 * (x0.l2_norm() + linear_response + 1.0));
    let phi = with_cutoff_retry(r0, |r| {
        let blocks = block_nodes(model, r, u_sup, opts);
        picard(model, &psi, Some(&uu), r, opts, blocks)
    })?;
    Ok(Trajectory::from_raw(model, grid, phi))
}

/// `sup_n |X_n - [S(t_n) X_0 + sum_{m<n} S(t_n - t_m) dt (B(X_m) + G(X_m) u_m)]|`.
#[allow(clippy::needless_range_loop)]
pub fn mild_residual(traj: &Trajectory, model: &Model, u: &ControlPath) -> Result<f64> {
    let grid = TimeGrid::of_model(model);
    if *traj.grid() != grid {
        return Err(invalid("trajectory must live on the model time grid"));
    }
    model.check_field(traj.initial())?;
    let uu = control_on_state_grid(model, u)?;
    let n = model.n_modes();
    let mut ws = model.workspace();
    let mut w = traj.initial().coeffs().to_vec();
    let mut f = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut worst = 0.0f64;
    for m in 0..grid.n_steps() {
        forcing_into(model, traj.states()[m].coeffs(), Some(&uu[m]), &mut f, &mut scratch, &mut ws);
        // convolution sum propagated one step: w <- S(dt)(w + dt F(X_m))
        exp_euler(model, &w, &f, &mut next);
        std::mem::swap(&mut w, &mut next);
        worst = worst.max(l2_dist(&w, traj.states()[m + 1].coeffs()));
    }
    Ok(worst)
}

/// Residual of `phi = M(psi)`: `sup_n |phi_n - psi_n - v_n|`.
pub fn apply_m_residual(phi: &Trajectory, psi: &Trajectory, model: &Model) -> Result<f64> {
    if phi.grid() != psi.grid() || *phi.grid() != TimeGrid::of_model(model) {
        return Err(invalid("trajectories must live on the model time grid"));
    }
    let n = model.n_modes();
    let mut ws = model.workspace();
    let mut v = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut worst = l2_dist(phi.initial().coeffs(), psi.initial().coeffs());
    for m in 0..model.n_steps() {
        model.drift_into(phi.states()[m].coeffs(), &mut f, &mut ws);
        exp_euler(model, &v, &f, &mut next);
        std::mem::swap(&mut v, &mut next);
        let expect: Vec<f64> = psi.states()[m + 1].coeffs().iter().zip(&v).map(|(p, q)| p + q).collect();
        worst = worst.max(l2_dist(&expect, phi.states()[m + 1].coeffs()));
    }
    Ok(worst)
}
