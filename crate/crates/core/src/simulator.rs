//! Small-noise stochastic paths by exponential Euler with exact per-mode
//! convolution variance:
//!
//! `X_{n+1} = S(dt)(X_n + dt (B(X_n) + G(X_n) u_n)) + sqrt(eps) Sigma G(X_n) xi_n`
//!
//! with `Sigma_k = sqrt((1 - e^{-2 gamma_k dt}) / (2 gamma_k))` and
//! `xi_n ~ N(0, I)` on the retained noise modes.
//!
//! Every path owns a ChaCha8 stream seeded by `path_seed(master, index)`.
//! The seed does not depend on `eps`, so sweeps over `eps` use common random
//! numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{Model, Workspace};
use crate::skeleton::{exp_euler, ControlPath, Interpolation, TimeGrid, Trajectory};
use crate::spectral::{l2, l2_dist, SpectralField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eps: f64,
    pub seed: u64,
    /// Number of Brownian modes driven; all noise modes when absent.
    #[serde(default)]
    pub noise_truncation: Option<usize>,
}

impl SimConfig {
    pub fn new(eps: f64, seed: u64) -> Self {
        SimConfig {
            eps,
            seed,
            noise_truncation: None,
        }
    }

    fn truncation(&self, model: &Model) -> Result<usize> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps must be finite and nonnegative"));
        }
        let m = model.n_noise_modes();
        match self.noise_truncation {
            None => Ok(m),
            Some(t) if t >= 1 && t <= m => Ok(t),
            Some(t) => Err(invalid(format!(
                "noise_truncation {t} must lie in 1..={m}"
            ))),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index`: `splitmix64(master ^ splitmix64(index))`.
pub fn path_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// One realization.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub trajectory: Trajectory,
    /// `sup_n |X_n - reference_n|` when a reference was supplied.
    pub sup_deviation: Option<f64>,
    pub rng_draws_consumed: u64,
}

/// Step-by-step path generator.
pub struct Stepper<'a> {
    model: &'a Model,
    sqrt_eps: f64,
    truncation: usize,
    rng: ChaCha8Rng,
    ws: Workspace,
    x: Vec<f64>,
    next: Vec<f64>,
    f: Vec<f64>,
    gu: Vec<f64>,
    gxi: Vec<f64>,
    xi: Vec<f64>,
    zero_u: Vec<f64>,
    draws: u64,
    guard: f64,
    node: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a Model, x0: &[f64], cfg: &SimConfig, path_index: u64) -> Result<Self> {
        let truncation = cfg.truncation(model)?;
        if x0.len() != model.n_modes() {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: model.n_modes(),
                got: x0.len(),
            });
        }
        let n = model.n_modes();
        let m = model.n_noise_modes();
        Ok(Stepper {
            model,
            sqrt_eps: cfg.eps.sqrt(),
            truncation,
            rng: ChaCha8Rng::seed_from_u64(path_seed(cfg.seed, path_index)),
            ws: model.workspace(),
            x: x0.to_vec(),
            next: vec![0.0; n],
            f: vec![0.0; n],
            gu: vec![0.0; n],
            gxi: vec![0.0; n],
            xi: vec![0.0; m],
            zero_u: vec![0.0; m],
            draws: 0,
            guard: model.tolerances().blowup_factor * (l2(x0) + 1.0),
            node: 0,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Draws the Gaussian increments of the next step (without stepping).
    fn draw(&mut self) {
        if self.sqrt_eps == 0.0 {
            return;
        }
        for j in 0..self.truncation {
            self.xi[j] = StandardNormal.sample(&mut self.rng);
        }
        self.draws += self.truncation as u64;
    }

    /// Advances one step with control `u` (state-grid value at the left node).
    pub fn step(&mut self, u: Option<&[f64]>) -> Result<&[f64]> {
        let model = self.model;
        self.draw();
        model.drift_into(&self.x, &mut self.f, &mut self.ws);
        let u = u.unwrap_or(&self.zero_u);
        let has_u = u.iter().any(|c| *c != 0.0);
        if self.sqrt_eps > 0.0 {
            model.diffusion_pair_into(&self.x, u, &mut self.gu, &self.xi, &mut self.gxi, &mut self.ws);
        } else if has_u {
            model.diffusion_into(&self.x, u, &mut self.gu, &mut self.ws);
        }
        if has_u {
            for (f, g) in self.f.iter_mut().zip(&self.gu) {
                *f += g;
            }
        }
        exp_euler(model, &self.x, &self.f, &mut self.next);
        if self.sqrt_eps > 0.0 {
            for (k, o) in self.next.iter_mut().enumerate() {
                *o += self.sqrt_eps * model.noise_sd()[k] * self.gxi[k];
            }
        }
        std::mem::swap(&mut self.x, &mut self.next);
        self.node += 1;
        let norm = l2(&self.x);
        if !(norm <= self.guard) {
            return Err(Error::BlowUp {
                node: self.node,
                norm,
                guard: self.guard,
            });
        }
        Ok(&self.x)
    }

    /// The `sqrt(eps) Sigma G(X_n) xi_n` term of the last step.
    fn noise_term(&self) -> Vec<f64> {
        if self.sqrt_eps == 0.0 {
            return vec![0.0; self.x.len()];
        }
        self.gxi
            .iter()
            .zip(self.model.noise_sd())
            .map(|(g, s)| self.sqrt_eps * s * g)
            .collect()
    }
}

fn control_values(model: &Model, u: Option<&ControlPath>) -> Result<Option<Vec<Vec<f64>>>> {
    let Some(u) = u else { return Ok(None) };
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
    Ok(Some(Interpolation::new(u.grid(), &grid).apply(u.values())))
}

fn run_path(
    model: &Model,
    x0: &SpectralField,
    u: Option<&[Vec<f64>]>,
    cfg: &SimConfig,
    index: u64,
    reference: Option<&Trajectory>,
) -> Result<PathSample> {
    model.check_field(x0)?;
    let grid = TimeGrid::of_model(model);
    if let Some(r) = reference {
        if *r.grid() != grid {
            return Err(invalid("reference must live on the model time grid"));
        }
    }
    let mut st = Stepper::new(model, x0.coeffs(), cfg, index)?;
    let mut states = Vec::with_capacity(grid.n_nodes());
    states.push(x0.coeffs().to_vec());
    for n in 0..grid.n_steps() {
        let x = st.step(u.map(|u| u[n].as_slice()))?;
        states.push(x.to_vec());
    }
    let sup_deviation = reference.map(|r| {
        states
            .iter()
            .zip(r.states())
            .map(|(a, b)| l2_dist(a, b.coeffs()))
            .fold(0.0, f64::max)
    });
    Ok(PathSample {
        trajectory: Trajectory::from_raw(model, grid, states),
        sup_deviation,
        rng_draws_consumed: st.draws(),
    })
}

/// One uncontrolled path `X^eps_{x0}` (path index 0 of `cfg.seed`).
pub fn simulate(model: &Model, x0: &SpectralField, cfg: &SimConfig) -> Result<PathSample> {
    run_path(model, x0, None, cfg, 0, None)
}

/// Path `index` of the stream family of `cfg.seed`.
pub fn simulate_path(
    model: &Model,
    x0: &SpectralField,
    u: Option<&ControlPath>,
    cfg: &SimConfig,
    index: u64,
    reference: Option<&Trajectory>,
) -> Result<PathSample> {
    let uu = control_values(model, u)?;
    run_path(model, x0, uu.as_deref(), cfg, index, reference)
}

/// One controlled path `X^{eps,u}_{x0}`.
pub fn simulate_controlled(
    model: &Model,
    x0: &SpectralField,
    u: &ControlPath,
    cfg: &SimConfig,
) -> Result<PathSample> {
    simulate_path(model, x0, Some(u), cfg, 0, None)
}

/// Residual of the discrete stochastic mild identity for path `index`,
/// regenerating the Gaussian increments from the seed.
pub fn stochastic_mild_residual(
    traj: &Trajectory,
    model: &Model,
    u: Option<&ControlPath>,
    cfg: &SimConfig,
    index: u64,
) -> Result<f64> {
    let grid = TimeGrid::of_model(model);
    if *traj.grid() != grid {
        return Err(invalid("trajectory must live on the model time grid"));
    }
    let uu = control_values(model, u)?;
    let n = model.n_modes();
    let x0 = traj.initial().coeffs();
    // replay: only the noise terms are taken from the stepper; the drift is
    // re-evaluated on the stored states
    let mut st = Stepper::new(model, x0, cfg, index)?;
    let mut ws = model.workspace();
    let mut w = x0.to_vec();
    let mut f = vec![0.0; n];
    let mut gu = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut worst = 0.0f64;
    for m in 0..grid.n_steps() {
        let xm = traj.states()[m].coeffs();
        st.x.copy_from_slice(xm);
        let um = uu.as_ref().map(|u| u[m].as_slice());
        st.step(um)?;
        let noise = st.noise_term();
        model.drift_into(xm, &mut f, &mut ws);
        if let Some(um) = um {
            model.diffusion_into(xm, um, &mut gu, &mut ws);
            f.iter_mut().zip(&gu).for_each(|(a, b)| *a += b);
        }
        exp_euler(model, &w, &f, &mut next);
        for (a, b) in next.iter_mut().zip(&noise) {
            *a += b;
        }
        std::mem::swap(&mut w, &mut next);
        worst = worst.max(l2_dist(&w, traj.states()[m + 1].coeffs()));
    }
    Ok(worst)
}

/// Scalar path functionals for [`batch_simulate`].
#[derive(Clone, Debug)]
pub enum PathFunctional {
    /// `|X(T)|_{L2}`.
    EndpointNorm,
    /// `X(T)` coefficient of one mode.
    EndpointCoefficient(usize),
    /// `sup_n |X_n - phi_n|_{L2}`.
    SupDeviation(Trajectory),
    /// `1{sup_n |X_n - phi_n|_{L2} < delta}`.
    TubeIndicator { reference: Trajectory, delta: f64 },
    /// Constant 1 (sanity checks).
    Always,
}

/// Mean, variance and a normal-approximation 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance (0 for a single path).
    pub variance: f64,
    pub std_err: f64,
    /// `None` when undefined (single path).
    pub ci95: Option<(f64, f64)>,
}

impl BatchStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("statistics need at least one value"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_err = (variance / n as f64).sqrt();
        let ci95 = (n > 1).then_some((mean - 1.96 * std_err, mean + 1.96 * std_err));
        Ok(BatchStats {
            n,
            mean,
            variance,
            std_err,
            ci95,
        })
    }
}

/// Order-preserving parallel map; results are identical for every pool size.
pub fn par_map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Functional values of paths `0..n_paths` in path order.
pub fn batch_values(
    model: &Model,
    x0: &SpectralField,
    u: Option<&ControlPath>,
    cfg: &SimConfig,
    n_paths: usize,
    functional: &PathFunctional,
) -> Result<Vec<f64>> {
    if n_paths == 0 {
        return Err(invalid("n_paths must be at least 1"));
    }
    model.check_field(x0)?;
    cfg.truncation(model)?;
    let grid = TimeGrid::of_model(model);
    let reference = match functional {
        PathFunctional::SupDeviation(r) | PathFunctional::TubeIndicator { reference: r, .. } => {
            if *r.grid() != grid {
                return Err(invalid("reference must live on the model time grid"));
            }
            Some(r.raw())
        }
        _ => None,
    };
    if let PathFunctional::EndpointCoefficient(k) = functional {
        if *k >= model.n_modes() {
            return Err(invalid("mode index out of range"));
        }
    }
    if let PathFunctional::Always = functional {
        return Ok(vec![1.0; n_paths]);
    }
    let uu = control_values(model, u)?;
    let results = par_map_indexed(n_paths, |i| -> Result<f64> {
        let mut st = Stepper::new(model, x0.coeffs(), cfg, i as u64)?;
        let mut dev = match &reference {
            Some(r) => l2_dist(x0.coeffs(), &r[0]),
            None => 0.0,
        };
        for n in 0..grid.n_steps() {
            let x = st.step(uu.as_ref().map(|u| u[n].as_slice()))?;
            if let Some(r) = &reference {
                dev = dev.max(l2_dist(x, &r[n + 1]));
                if let PathFunctional::TubeIndicator { delta, .. } = functional {
                    if dev >= *delta {
                        return Ok(0.0);
                    }
                }
            }
        }
        Ok(match functional {
            PathFunctional::EndpointNorm => l2(st.state()),
            PathFunctional::EndpointCoefficient(k) => st.state()[*k],
            PathFunctional::SupDeviation(_) => dev,
            PathFunctional::TubeIndicator { delta, .. } => f64::from(u8::from(dev < *delta)),
            PathFunctional::Always => 1.0,
        })
    });
    results.into_iter().collect()
}

/// Monte Carlo statistics of a path functional.
pub fn batch_simulate(
    model: &Model,
    x0: &SpectralField,
    cfg: &SimConfig,
    n_paths: usize,
    functional: &PathFunctional,
) -> Result<BatchStats> {
    BatchStats::from_values(&batch_values(model, x0, None, cfg, n_paths, functional)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::skeleton::{solve_skeleton, SolverOptions};

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference generator seeded with 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(path_seed(1, 0), path_seed(1, 1));
        assert_ne!(path_seed(1, 0), path_seed(2, 0));
    }

    #[test]
    fn eps_zero_matches_skeleton() {
        let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 0.01)).unwrap();
        let x0 = SpectralField::single_mode(m.basis(), 0, 0.8).unwrap();
        let p = simulate(&m, &x0, &SimConfig::new(0.0, 1)).unwrap();
        let u = ControlPath::zeros(TimeGrid::of_model(&m), 1);
        let s = solve_skeleton(&m, &x0, &u, &SolverOptions::from_model(&m)).unwrap();
        assert!(p.trajectory.sup_distance(&s).unwrap() < 1e-12);
        assert_eq!(p.rng_draws_consumed, 0);
    }

    #[test]
    fn same_seed_same_path() {
        let m = Model::new(ModelSpec::linear_diagonal(3, 1.0, 0.01)).unwrap();
        let x0 = SpectralField::zeros(m.basis());
        let a = simulate(&m, &x0, &SimConfig::new(0.1, 42)).unwrap();
        let b = simulate(&m, &x0, &SimConfig::new(0.1, 42)).unwrap();
        let c = simulate(&m, &x0, &SimConfig::new(0.1, 43)).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_ne!(a.trajectory, c.trajectory);
        assert_eq!(a.rng_draws_consumed, 300);
    }

    #[test]
    fn truncation_validated() {
        let m = Model::new(ModelSpec::linear_diagonal(3, 1.0, 0.1)).unwrap();
        let x0 = SpectralField::zeros(m.basis());
        let mut cfg = SimConfig::new(0.1, 1);
        cfg.noise_truncation = Some(4);
        assert!(simulate(&m, &x0, &cfg).is_err());
        cfg.noise_truncation = Some(1);
        let p = simulate(&m, &x0, &cfg).unwrap();
        assert!(p.trajectory.states().iter().all(|s| s.coeffs()[1] == 0.0));
        assert!(simulate(&m, &x0, &SimConfig::new(-1.0, 1)).is_err());
    }

    #[test]
    fn stats_single_and_always() {
        let s = BatchStats::from_values(&[2.5]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!(s.ci95.is_none());
        let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 0.1)).unwrap();
        let x0 = SpectralField::zeros(m.basis());
        let st = batch_simulate(&m, &x0, &SimConfig::new(0.3, 1), 7, &PathFunctional::Always).unwrap();
        assert_eq!(st.mean, 1.0);
        assert!(batch_simulate(&m, &x0, &SimConfig::new(0.3, 1), 0, &PathFunctional::Always).is_err());
    }

    #[test]
    fn blowup_guard_trips() {
        let mut spec = ModelSpec::ornstein_uhlenbeck(1.0, 0.01);
        spec.tolerances.blowup_factor = 1e-3;
        let m = Model::new(spec).unwrap();
        let x0 = SpectralField::zeros(m.basis());
        let err = simulate(&m, &x0, &SimConfig::new(1.0, 3)).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }
}
