//! Drift and diffusion operators of the two worked model families.
//!
//! * Reaction-diffusion on the Dirichlet interval: `B(x)(xi) = b(x(xi))` with
//!   a dissipative polynomial `b`, and `(G(x)h)(xi) = g(x(xi)) (Qh)(xi)`.
//! * Navier-Stokes on the divergence-free torus basis:
//!   `B(u) = -P[(u . grad) u]` and `G(u)h = P[g(u) Qh]`.
//!
//! `Q` is diagonal in the state basis: `Q e_j = lambda_j e_j`. All nonlinear
//! terms are evaluated pseudospectrally on the dealiased grid.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{BasisKind, BasisSpec, Collocation, Mode, Parity, SpectralBasis, SpectralField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    None,
    /// `b(sigma) = sum_i coeffs[i] sigma^i`.
    ReactionPolynomial {
        coeffs: Vec<f64>,
    },
    NavierStokes,
}

impl DriftSpec {
    fn leading(coeffs: &[f64]) -> Option<(usize, f64)> {
        coeffs
            .iter()
            .enumerate()
            .rev()
            .find(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i, *c))
    }

    pub fn validate(&self) -> Result<()> {
        if let DriftSpec::ReactionPolynomial { coeffs } = self {
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(invalid("reaction polynomial coefficients must be finite"));
            }
            match Self::leading(coeffs) {
                None => return Err(invalid("reaction polynomial is identically zero")),
                Some((deg, lead)) => {
                    if deg > 5 {
                        return Err(invalid("reaction polynomial degree must be <= 5"));
                    }
                    if deg % 2 == 0 || lead >= 0.0 {
                        return Err(invalid(
                            "reaction polynomial needs an odd leading degree with negative coefficient",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Pointwise value `b(sigma)` of the reaction term (0 for other kinds).
    pub fn pointwise(&self, sigma: f64) -> f64 {
        match self {
            DriftSpec::ReactionPolynomial { coeffs } => poly(coeffs, sigma),
            _ => 0.0,
        }
    }

    pub fn pointwise_derivative(&self, sigma: f64) -> f64 {
        match self {
            DriftSpec::ReactionPolynomial { coeffs } => poly_derivative(coeffs, sigma),
            _ => 0.0,
        }
    }

    /// `sup_sigma sigma b(sigma)`, so that `<B(x), x> <= L * this` for every
    /// `x`. Finite because the leading term is odd with negative coefficient.
    pub fn dissipativity_bound(&self) -> f64 {
        let DriftSpec::ReactionPolynomial { coeffs } = self else {
            return 0.0;
        };
        let Some((deg, lead)) = Self::leading(coeffs) else {
            return 0.0;
        };
        // Beyond the Cauchy root bound of b, sigma b(sigma) < 0.
        let radius = 1.0
            + coeffs[..deg]
                .iter()
                .map(|c| (c / lead).abs())
                .fold(0.0, f64::max);
        let n = 200_000;
        let h = 2.0 * radius / n as f64;
        let mut best = 0.0f64;
        let mut slope = 0.0f64;
        for i in 0..=n {
            let s = -radius + i as f64 * h;
            let p = s * poly(coeffs, s);
            best = best.max(p);
            slope = slope.max((poly(coeffs, s) + s * poly_derivative(coeffs, s)).abs());
        }
        best + slope * h
    }
}

fn poly(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

fn poly_derivative(coeffs: &[f64], s: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, c)| acc * s + i as f64 * c)
}

/// The scalar factor `g` of the multiplicative noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionCoefficient {
    Constant { c: f64 },
    /// `g(sigma) = c / (1 + sigma^2)` (with `|u|^2` for vector fields).
    BoundedRational { c: f64 },
}

impl DiffusionCoefficient {
    /// `g` as a function of the squared pointwise magnitude.
    pub fn eval_sq(&self, sq: f64) -> f64 {
        match *self {
            DiffusionCoefficient::Constant { c } => c,
            DiffusionCoefficient::BoundedRational { c } => c / (1.0 + sq),
        }
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        self.eval_sq(sigma * sigma)
    }

    pub fn derivative(&self, sigma: f64) -> f64 {
        match *self {
            DiffusionCoefficient::Constant { .. } => 0.0,
            DiffusionCoefficient::BoundedRational { c } => {
                let d = 1.0 + sigma * sigma;
                -2.0 * c * sigma / (d * d)
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            DiffusionCoefficient::Constant { c } | DiffusionCoefficient::BoundedRational { c } => {
                c.abs()
            }
        }
    }

    /// Lipschitz constant; for `c/(1+s^2)` the maximal slope sits at
    /// `s = 1/sqrt(3)` and equals `3 sqrt(3) |c| / 8`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            DiffusionCoefficient::Constant { .. } => 0.0,
            DiffusionCoefficient::BoundedRational { c } => 3.0 * 3f64.sqrt() * c.abs() / 8.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DiffusionCoefficient::Constant { .. })
    }
}

/// Covariance `Q` (diagonal, eigenvalues `lambda_j`) and the factor `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub q_eigenvalues: Vec<f64>,
    /// Recorded decay exponent; when present `lambda_j <= lambda_1 j^-decay`
    /// is enforced.
    #[serde(default)]
    pub decay: Option<f64>,
    pub g: DiffusionCoefficient,
}

impl NoiseSpec {
    pub fn additive(q_eigenvalues: Vec<f64>) -> Self {
        NoiseSpec {
            q_eigenvalues,
            decay: None,
            g: DiffusionCoefficient::Constant { c: 1.0 },
        }
    }

    /// `lambda_j = lambda_1 j^-decay`, `j = 1..=n`.
    pub fn power_law(lambda1: f64, decay: f64, n: usize, g: DiffusionCoefficient) -> Self {
        NoiseSpec {
            q_eigenvalues: (1..=n).map(|j| lambda1 * (j as f64).powf(-decay)).collect(),
            decay: Some(decay),
            g,
        }
    }

    pub fn n_noise_modes(&self) -> usize {
        self.q_eigenvalues.len()
    }

    /// `Tr(Q^2) = sum lambda_j^2`.
    pub fn trace_q2(&self) -> f64 {
        self.q_eigenvalues.iter().map(|l| l * l).sum()
    }

    /// Relative `Tr(Q^2)` mass dropped when only the first `truncation`
    /// noise modes are driven.
    pub fn truncation_error(&self, truncation: usize) -> f64 {
        let total = self.trace_q2();
        if total == 0.0 {
            return 0.0;
        }
        self.q_eigenvalues
            .iter()
            .skip(truncation)
            .map(|l| l * l)
            .sum::<f64>()
            / total
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        let q = &self.q_eigenvalues;
        if q.is_empty() {
            return Err(invalid("noise needs at least one mode"));
        }
        if q.len() > n_modes {
            return Err(invalid(format!(
                "n_noise_modes {} exceeds the {n_modes} state modes",
                q.len()
            )));
        }
        if q.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("q eigenvalues must be finite and nonnegative"));
        }
        if q.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("q eigenvalues must be nonincreasing"));
        }
        if let Some(decay) = self.decay {
            for (j, l) in q.iter().enumerate() {
                let cap = q[0] * ((j + 1) as f64).powf(-decay);
                if *l > cap * (1.0 + 1e-12) {
                    return Err(invalid(format!(
                        "q eigenvalue {} = {l} exceeds lambda_1 j^-{decay} = {cap}",
                        j + 1
                    )));
                }
            }
        }
        let c = match self.g {
            DiffusionCoefficient::Constant { c } | DiffusionCoefficient::BoundedRational { c } => c,
        };
        if !c.is_finite() {
            return Err(invalid("g parameter must be finite"));
        }
        if matches!(self.g, DiffusionCoefficient::BoundedRational { .. }) && c <= 0.0 {
            return Err(invalid("bounded_rational g needs c > 0"));
        }
        Ok(())
    }
}

fn default_picard_tol() -> f64 {
    1e-10
}

fn default_max_picard_iters() -> usize {
    200
}

fn default_blowup_factor() -> f64 {
    1e3
}

/// Solver tolerances carried with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_max_picard_iters")]
    pub max_picard_iters: usize,
    /// Picard subinterval length; estimated from the contraction factor when
    /// absent.
    #[serde(default)]
    pub subinterval_len: Option<f64>,
    /// Cutoff radius `R`; derived from the data when absent.
    #[serde(default)]
    pub cutoff_radius: Option<f64>,
    /// Blow-up guard multiplier on `|x0| + 1`.
    #[serde(default = "default_blowup_factor")]
    pub blowup_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            picard_tol: default_picard_tol(),
            max_picard_iters: default_max_picard_iters(),
            subinterval_len: None,
            cutoff_radius: None,
            blowup_factor: default_blowup_factor(),
        }
    }
}

/// Complete problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub basis: BasisSpec,
    pub drift: DriftSpec,
    pub noise: NoiseSpec,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ModelSpec {
    /// Single-mode Ornstein-Uhlenbeck model `dX = -gamma X dt + sqrt(eps) lambda dW`
    /// (`gamma = 1` for the default domain length pi).
    pub fn ornstein_uhlenbeck(horizon: f64, dt: f64) -> Self {
        ModelSpec {
            basis: BasisSpec::interval(1, std::f64::consts::PI),
            drift: DriftSpec::None,
            noise: NoiseSpec::additive(vec![1.0]),
            horizon,
            dt,
            tolerances: Tolerances::default(),
        }
    }

    /// Diagonal linear model with `n` modes, eigenvalues `k^2` and additive
    /// noise of unit intensity on every mode.
    pub fn linear_diagonal(n: usize, horizon: f64, dt: f64) -> Self {
        ModelSpec {
            basis: BasisSpec::interval(n, std::f64::consts::PI),
            drift: DriftSpec::None,
            noise: NoiseSpec::additive(vec![1.0; n]),
            horizon,
            dt,
            tolerances: Tolerances::default(),
        }
    }
}

/// A validated model with its basis and dealiased collocation grid.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    basis: Arc<SpectralBasis>,
    colloc: Arc<Collocation>,
    n_steps: usize,
    decay: Vec<f64>,
    noise_sd: Vec<f64>,
}

/// Scratch buffers for grid evaluations; one per worker thread.
#[derive(Debug, Clone)]
pub struct Workspace {
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    v0: Vec<[f64; 2]>,
    v1: Vec<[f64; 2]>,
    v2: Vec<[f64; 2]>,
    g0: Vec<[[f64; 2]; 2]>,
    g1: Vec<[[f64; 2]; 2]>,
    h: Vec<f64>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let basis = SpectralBasis::new(spec.basis.clone())?;
        spec.drift.validate()?;
        spec.noise.validate(basis.n_modes())?;
        match (&spec.drift, basis.kind()) {
            (DriftSpec::NavierStokes, BasisKind::DirichletInterval) => {
                return Err(invalid(
                    "navier_stokes drift requires the fourier_torus_2d_divfree basis",
                ))
            }
            (DriftSpec::ReactionPolynomial { .. }, BasisKind::FourierTorus2dDivFree) => {
                return Err(invalid(
                    "reaction_polynomial drift requires the dirichlet_interval basis",
                ))
            }
            _ => {}
        }
        if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if !(spec.dt > 0.0 && spec.dt <= spec.horizon) {
            return Err(invalid("dt must be in (0, horizon]"));
        }
        let n_steps = (spec.horizon / spec.dt).round() as usize;
        if ((n_steps as f64) * spec.dt - spec.horizon).abs() > 1e-9 * spec.horizon {
            return Err(invalid(format!(
                "horizon {} is not an integer multiple of dt {}",
                spec.horizon, spec.dt
            )));
        }
        let t = &spec.tolerances;
        if !(t.picard_tol > 0.0) || t.max_picard_iters == 0 || !(t.blowup_factor > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if t.subinterval_len.is_some_and(|s| !(s > 0.0)) || t.cutoff_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(invalid("tolerances must be positive"));
        }
        let colloc = Arc::new(Collocation::dealiased(&basis)?);
        let dt = spec.dt;
        let decay = basis.eigenvalues().iter().map(|g| (-g * dt).exp()).collect();
        // exact standard deviation of int_0^dt e^{-gamma s} dw(s)
        let noise_sd = basis
            .eigenvalues()
            .iter()
            .map(|g| (-(-2.0 * g * dt).exp_m1() / (2.0 * g)).sqrt())
            .collect();
        Ok(Model {
            spec,
            basis,
            colloc,
            n_steps,
            decay,
            noise_sd,
        })
    }

    /// Same model with a different time step.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.dt = dt;
        Model::new(spec)
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.horizon = horizon;
        Model::new(spec)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn collocation(&self) -> &Collocation {
        &self.colloc
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    pub fn n_noise_modes(&self) -> usize {
        self.spec.noise.n_noise_modes()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    /// `e^{-gamma_k dt}` per mode.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// `sqrt((1 - e^{-2 gamma_k dt}) / (2 gamma_k))` per mode.
    pub fn noise_sd(&self) -> &[f64] {
        &self.noise_sd
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.spec.noise.q_eigenvalues
    }

    pub fn drift_spec(&self) -> &DriftSpec {
        &self.spec.drift
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.spec.noise
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.spec.tolerances
    }

    /// Drift and noise are both state independent: `B = 0`, `g` constant.
    pub fn is_linear_additive(&self) -> bool {
        matches!(self.spec.drift, DriftSpec::None) && self.spec.noise.g.is_constant()
    }

    pub fn workspace(&self) -> Workspace {
        let np = self.colloc.n_points();
        let n = self.n_modes();
        let (ns, nv) = match self.basis.kind() {
            BasisKind::DirichletInterval => (np, 0),
            BasisKind::FourierTorus2dDivFree => (0, np),
        };
        Workspace {
            s0: vec![0.0; ns],
            s1: vec![0.0; ns],
            s2: vec![0.0; ns],
            v0: vec![[0.0; 2]; nv],
            v1: vec![[0.0; 2]; nv],
            v2: vec![[0.0; 2]; nv],
            g0: vec![[[0.0; 2]; 2]; nv],
            g1: vec![[[0.0; 2]; 2]; nv],
            h: vec![0.0; n],
        }
    }

    pub(crate) fn field(&self, coeffs: Vec<f64>) -> SpectralField {
        SpectralField::from_vec_unchecked(self.basis.clone(), coeffs)
    }

    pub(crate) fn check_field(&self, x: &SpectralField) -> Result<()> {
        if SpectralBasis::same(&self.basis, x.basis()) {
            Ok(())
        } else {
            Err(Error::BasisMismatch(
                "field basis does not match the model basis".to_string(),
            ))
        }
    }

    /// `B(x)` into `out`.
    pub(crate) fn drift_into(&self, x: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let c = &*self.colloc;
        match &self.spec.drift {
            DriftSpec::None => out.iter_mut().for_each(|o| *o = 0.0),
            DriftSpec::ReactionPolynomial { coeffs } => {
                c.synth_scalar(x, &mut ws.s0);
                ws.s0.iter_mut().for_each(|v| *v = poly(coeffs, *v));
                c.analyze_scalar(&ws.s0, out);
            }
            DriftSpec::NavierStokes => {
                c.synth_vector(x, &mut ws.v0);
                c.synth_gradient(x, &mut ws.g0);
                for ((f, u), g) in ws.v1.iter_mut().zip(&ws.v0).zip(&ws.g0) {
                    // -(u . grad) u
                    f[0] = -(u[0] * g[0][0] + u[1] * g[1][0]);
                    f[1] = -(u[0] * g[0][1] + u[1] * g[1][1]);
                }
                c.analyze_vector(&ws.v1, out);
            }
        }
    }

    /// `DB(x)^T v` into `out`.
    pub(crate) fn drift_vjp_into(&self, x: &[f64], v: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let c = &*self.colloc;
        match &self.spec.drift {
            DriftSpec::None => out.iter_mut().for_each(|o| *o = 0.0),
            DriftSpec::ReactionPolynomial { coeffs } => {
                c.synth_scalar(x, &mut ws.s0);
                c.synth_scalar(v, &mut ws.s1);
                for (a, b) in ws.s1.iter_mut().zip(&ws.s0) {
                    *a *= poly_derivative(coeffs, *b);
                }
                c.analyze_scalar(&ws.s1, out);
            }
            DriftSpec::NavierStokes => {
                // <v, DB(u) d> = -b(d, u, v) + b(u, v, d)
                c.synth_vector(x, &mut ws.v0);
                c.synth_gradient(x, &mut ws.g0);
                c.synth_vector(v, &mut ws.v1);
                c.synth_gradient(v, &mut ws.g1);
                for p in 0..ws.v2.len() {
                    let u = ws.v0[p];
                    let gu = ws.g0[p];
                    let vv = ws.v1[p];
                    let gv = ws.g1[p];
                    let mut w = [0.0; 2];
                    for j in 0..2 {
                        // (u . grad) v, component j
                        let adv = u[0] * gv[0][j] + u[1] * gv[1][j];
                        // sum_k d_j u_k v_k
                        let stretch = gu[j][0] * vv[0] + gu[j][1] * vv[1];
                        w[j] = adv - stretch;
                    }
                    ws.v2[p] = w;
                }
                c.analyze_vector(&ws.v2, out);
            }
        }
    }

    /// Pointwise `g(x(xi))` on the dealiased grid (empty for constant `g`).
    fn g_grid(&self, x: &[f64], ws: &mut Workspace) {
        let c = &*self.colloc;
        let g = &self.spec.noise.g;
        match self.basis.kind() {
            BasisKind::DirichletInterval => {
                c.synth_scalar(x, &mut ws.s2);
                ws.s2.iter_mut().for_each(|v| *v = g.eval(*v));
            }
            BasisKind::FourierTorus2dDivFree => {
                c.synth_vector(x, &mut ws.v2);
                ws.v2.iter_mut().for_each(|v| {
                    let s = g.eval_sq(v[0] * v[0] + v[1] * v[1]);
                    *v = [s, 0.0];
                });
            }
        }
    }

    /// Applies `G(x)` given a prepared `g` grid.
    fn apply_g(&self, h: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let lambdas = &self.spec.noise.q_eigenvalues;
        if let DiffusionCoefficient::Constant { c } = self.spec.noise.g {
            for (k, o) in out.iter_mut().enumerate() {
                *o = if k < lambdas.len() { c * lambdas[k] * h[k] } else { 0.0 };
            }
            return;
        }
        ws.h.iter_mut().for_each(|v| *v = 0.0);
        for (j, (l, hj)) in lambdas.iter().zip(h).enumerate() {
            ws.h[j] = l * hj;
        }
        let c = &*self.colloc;
        match self.basis.kind() {
            BasisKind::DirichletInterval => {
                c.synth_scalar(&ws.h, &mut ws.s1);
                for (q, g) in ws.s1.iter_mut().zip(&ws.s2) {
                    *q *= g;
                }
                c.analyze_scalar(&ws.s1, out);
            }
            BasisKind::FourierTorus2dDivFree => {
                c.synth_vector(&ws.h, &mut ws.v1);
                for (q, g) in ws.v1.iter_mut().zip(&ws.v2) {
                    q[0] *= g[0];
                    q[1] *= g[0];
                }
                c.analyze_vector(&ws.v1, out);
            }
        }
    }

    /// `G(x) h` into `out` (`h` has `n_noise_modes` entries, missing trailing
    /// entries count as zero).
    pub(crate) fn diffusion_into(&self, x: &[f64], h: &[f64], out: &mut [f64], ws: &mut Workspace) {
        if !self.spec.noise.g.is_constant() {
            self.g_grid(x, ws);
        }
        self.apply_g(h, out, ws);
    }

    /// `G(x) h1` and `G(x) h2` sharing one evaluation of `g(x)`.
    pub(crate) fn diffusion_pair_into(
        &self,
        x: &[f64],
        h1: &[f64],
        out1: &mut [f64],
        h2: &[f64],
        out2: &mut [f64],
        ws: &mut Workspace,
    ) {
        if !self.spec.noise.g.is_constant() {
            self.g_grid(x, ws);
        }
        self.apply_g(h1, out1, ws);
        self.apply_g(h2, out2, ws);
    }

    /// `G(x)^T v` into `out` (length `n_noise_modes`).
    pub(crate) fn diffusion_t_into(&self, x: &[f64], v: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let lambdas = &self.spec.noise.q_eigenvalues;
        if let DiffusionCoefficient::Constant { c } = self.spec.noise.g {
            for (j, o) in out.iter_mut().enumerate() {
                *o = c * lambdas[j] * v[j];
            }
            return;
        }
        self.g_grid(x, ws);
        let c = &*self.colloc;
        match self.basis.kind() {
            BasisKind::DirichletInterval => {
                c.synth_scalar(v, &mut ws.s1);
                for (a, g) in ws.s1.iter_mut().zip(&ws.s2) {
                    *a *= g;
                }
                c.analyze_scalar(&ws.s1, out);
            }
            BasisKind::FourierTorus2dDivFree => {
                c.synth_vector(v, &mut ws.v1);
                for (a, g) in ws.v1.iter_mut().zip(&ws.v2) {
                    a[0] *= g[0];
                    a[1] *= g[0];
                }
                c.analyze_vector(&ws.v1, out);
            }
        }
        for (o, l) in out.iter_mut().zip(lambdas) {
            *o *= l;
        }
    }

    /// `[D_x (G(x) u)]^T v` into `out` (length `n_modes`).
    pub(crate) fn diffusion_state_vjp_into(
        &self,
        x: &[f64],
        u: &[f64],
        v: &[f64],
        out: &mut [f64],
        ws: &mut Workspace,
    ) {
        let g = &self.spec.noise.g;
        if g.is_constant() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let lambdas = &self.spec.noise.q_eigenvalues;
        ws.h.iter_mut().for_each(|v| *v = 0.0);
        for (j, (l, uj)) in lambdas.iter().zip(u).enumerate() {
            ws.h[j] = l * uj;
        }
        let c = &*self.colloc;
        match self.basis.kind() {
            BasisKind::DirichletInterval => {
                c.synth_scalar(x, &mut ws.s0);
                c.synth_scalar(&ws.h, &mut ws.s1);
                c.synth_scalar(v, &mut ws.s2);
                for p in 0..ws.s0.len() {
                    ws.s1[p] *= ws.s2[p] * g.derivative(ws.s0[p]);
                }
                c.analyze_scalar(&ws.s1, out);
            }
            BasisKind::FourierTorus2dDivFree => {
                c.synth_vector(x, &mut ws.v0);
                c.synth_vector(&ws.h, &mut ws.v1);
                c.synth_vector(v, &mut ws.v2);
                for p in 0..ws.v0.len() {
                    let xu = ws.v0[p];
                    let r2 = xu[0] * xu[0] + xu[1] * xu[1];
                    // grad of g(|eta|^2) = g'(|eta|) eta / |eta|, written via eval_sq
                    let DiffusionCoefficient::BoundedRational { c: cc } = *g else {
                        unreachable!()
                    };
                    let d = 1.0 + r2;
                    let scale = -2.0 * cc / (d * d);
                    let qv = ws.v1[p][0] * ws.v2[p][0] + ws.v1[p][1] * ws.v2[p][1];
                    ws.v1[p] = [qv * scale * xu[0], qv * scale * xu[1]];
                }
                c.analyze_vector(&ws.v1, out);
            }
        }
    }

    /// `B(x)` as a field.
    pub fn drift_apply(&self, x: &SpectralField) -> Result<SpectralField> {
        self.check_field(x)?;
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.n_modes()];
        self.drift_into(x.coeffs(), &mut out, &mut ws);
        Ok(self.field(out))
    }

    /// `G(x) h` as a field.
    pub fn diffusion_apply(&self, x: &SpectralField, h: &[f64]) -> Result<SpectralField> {
        self.check_field(x)?;
        if h.len() != self.n_noise_modes() {
            return Err(Error::DimensionMismatch {
                what: "noise-mode coefficients",
                expected: self.n_noise_modes(),
                got: h.len(),
            });
        }
        let mut ws = self.workspace();
        let mut out = vec![0.0; self.n_modes()];
        self.diffusion_into(x.coeffs(), h, &mut out, &mut ws);
        Ok(self.field(out))
    }

    /// `(G h)(xi)` on the dealiased interval grid for given pointwise state
    /// values, before projection.
    pub fn diffusion_on_grid(&self, state_values: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if self.basis.kind() != BasisKind::DirichletInterval {
            return Err(Error::BasisMismatch(
                "grid diffusion is defined for the interval basis".to_string(),
            ));
        }
        let c = &*self.colloc;
        if state_values.len() != c.n_points() {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: c.n_points(),
                got: state_values.len(),
            });
        }
        if h.len() != self.n_noise_modes() {
            return Err(Error::DimensionMismatch {
                what: "noise-mode coefficients",
                expected: self.n_noise_modes(),
                got: h.len(),
            });
        }
        let mut qh = vec![0.0; self.n_modes()];
        for (j, (l, hj)) in self.lambdas().iter().zip(h).enumerate() {
            qh[j] = l * hj;
        }
        let mut vals = vec![0.0; c.n_points()];
        c.synth_scalar(&qh, &mut vals);
        let g = &self.spec.noise.g;
        Ok(vals
            .iter()
            .zip(state_values)
            .map(|(q, s)| g.eval(*s) * q)
            .collect())
    }

    /// Contraction estimate inputs: Lipschitz constants of `B` and of
    /// `x -> G(x)h` (per unit `|h|`) on the L2 ball of radius `r`.
    pub(crate) fn lipschitz_estimates(&self, r: f64) -> (f64, f64) {
        let sup_fn = self.basis.sup_basis_function();
        let n = self.n_modes() as f64;
        let r_sup = r * sup_fn * n.sqrt();
        let lip_b = match &self.spec.drift {
            DriftSpec::None => 0.0,
            DriftSpec::ReactionPolynomial { coeffs } => {
                let m = 64;
                (0..=m)
                    .map(|i| {
                        let s = -r_sup + 2.0 * r_sup * i as f64 / m as f64;
                        poly_derivative(coeffs, s).abs()
                    })
                    .fold(0.0, f64::max)
            }
            DriftSpec::NavierStokes => {
                let kmax = self.basis.eigenvalues().last().copied().unwrap_or(1.0).sqrt();
                2.0 * kmax * r_sup
            }
        };
        let lam1 = self.lambdas().first().copied().unwrap_or(0.0);
        let lip_g = self.spec.noise.g.lipschitz() * lam1 * sup_fn * n.sqrt();
        (lip_b, lip_g)
    }
}

/// Per-wavevector complex 2-vector coefficients of an arbitrary (not
/// necessarily divergence-free) vector field on the torus.
pub type RawVectorField = Vec<([i32; 2], [Complex64; 2])>;

/// `(I - k k^T / |k|^2) c`.
pub fn leray_project_vector(k: [i32; 2], c: [Complex64; 2]) -> [Complex64; 2] {
    let kk = [k[0] as f64, k[1] as f64];
    let k2 = kk[0] * kk[0] + kk[1] * kk[1];
    if k2 == 0.0 {
        return c;
    }
    let kc = c[0] * kk[0] + c[1] * kk[1];
    [c[0] - kc * (kk[0] / k2), c[1] - kc * (kk[1] / k2)]
}

/// Leray projection of raw Fourier coefficients onto the divergence-free
/// basis. Wavevectors outside the basis are dropped; a non-Hermitian input
/// is additionally projected onto real fields.
pub fn leray_project(basis: &Arc<SpectralBasis>, raw: &RawVectorField) -> Result<SpectralField> {
    if basis.kind() != BasisKind::FourierTorus2dDivFree {
        return Err(Error::BasisMismatch(
            "Leray projection requires the torus basis".to_string(),
        ));
    }
    let lookup: HashMap<[i32; 2], [Complex64; 2]> = raw.iter().copied().collect();
    let amp = basis.sup_basis_function();
    let zero = [Complex64::new(0.0, 0.0); 2];
    let mut coeffs = vec![0.0; basis.n_modes()];
    for (i, mode) in basis.modes().iter().enumerate() {
        let Mode::Torus { k, parity } = *mode else {
            unreachable!()
        };
        let n = SpectralBasis::mode_direction(k);
        let cp = leray_project_vector(k, *lookup.get(&k).unwrap_or(&zero));
        let cm = leray_project_vector([-k[0], -k[1]], *lookup.get(&[-k[0], -k[1]]).unwrap_or(&zero));
        let sp = cp[0] * n[0] + cp[1] * n[1];
        let sm = cm[0] * n[0] + cm[1] * n[1];
        // alpha - i beta = 2 s / amp with s the Hermitian part
        let s = (sp + sm.conj()) * (1.0 / amp);
        coeffs[i] = match parity {
            Parity::Cos => s.re,
            Parity::Sin => -s.im,
        };
    }
    SpectralField::new(basis.clone(), coeffs)
}

/// `b(u, v, w) = sum_ij int u_i d_i v_j w_j` by dealiased quadrature.
pub fn ns_trilinear(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    u.check_same(v)?;
    u.check_same(w)?;
    if u.basis().kind() != BasisKind::FourierTorus2dDivFree {
        return Err(Error::BasisMismatch(
            "trilinear form requires the torus basis".to_string(),
        ));
    }
    let c = Collocation::dealiased(u.basis())?;
    let np = c.n_points();
    let mut uv = vec![[0.0; 2]; np];
    let mut wv = vec![[0.0; 2]; np];
    let mut gv = vec![[[0.0; 2]; 2]; np];
    c.synth_vector(u.coeffs(), &mut uv);
    c.synth_vector(w.coeffs(), &mut wv);
    c.synth_gradient(v.coeffs(), &mut gv);
    let mut acc = 0.0;
    for p in 0..np {
        for i in 0..2 {
            for j in 0..2 {
                acc += uv[p][i] * gv[p][i][j] * wv[p][j];
            }
        }
    }
    Ok(acc * c.weight())
}
