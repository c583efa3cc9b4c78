//! Exit times and exit places from a ball around a stable equilibrium.
//!
//! `tau` is the time of the first grid node outside the domain; paths are
//! stepped past the model horizon in blocks of the base grid with the same
//! random stream, so a sample is a deterministic function of
//! `(seed, path index, eps)`.

use serde::{Deserialize, Serialize};

use crate::action::{quasipotential, QpOptions, QpTarget, QuasipotentialResult};
use crate::error::{invalid, Error, Result};
use crate::models::Model;
use crate::simulator::{par_map_indexed, path_seed, SimConfig, Stepper};
use crate::spectral::{GridValues, SpectralField};
use crate::stats::{linear_fit, median, wilson_ci, LinearFit};

/// Upper limit on predicted simulated steps per exit experiment.
pub const EXIT_STEP_BUDGET: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallNorm {
    /// Euclidean norm of the coefficients.
    L2,
    /// Pointwise maximum on the collocation grid.
    Sup,
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub center: SpectralField,
    pub radius: f64,
    pub norm: BallNorm,
}

impl Domain {
    pub fn l2_ball(center: SpectralField, radius: f64) -> Self {
        Domain {
            center,
            radius,
            norm: BallNorm::L2,
        }
    }

    /// Distance from the centre in the domain norm.
    pub fn distance(&self, model: &Model, x: &[f64]) -> f64 {
        match self.norm {
            BallNorm::L2 => x
                .iter()
                .zip(self.center.coeffs())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
            BallNorm::Sup => {
                let d: Vec<f64> = x.iter().zip(self.center.coeffs()).map(|(a, b)| a - b).collect();
                match model.collocation().synthesize(&model.field(d)) {
                    Ok(GridValues::Scalar(v)) => v.iter().fold(0.0, |m, a| m.max(a.abs())),
                    Ok(GridValues::Vector(v)) => v
                        .iter()
                        .fold(0.0, |m, a| m.max((a[0] * a[0] + a[1] * a[1]).sqrt())),
                    Err(_) => f64::INFINITY,
                }
            }
        }
    }

    pub fn contains(&self, model: &Model, x: &[f64]) -> bool {
        self.distance(model, x) < self.radius
    }

    fn validate(&self, model: &Model) -> Result<()> {
        model.check_field(&self.center)?;
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("domain radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ExitProblem {
    pub domain: Domain,
    /// Stable equilibrium `O`.
    pub equilibrium: SpectralField,
    /// Start of every path; usually `O`.
    pub x0: SpectralField,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    pub n_paths: usize,
    /// Censoring limit in time steps.
    pub max_steps: u64,
    /// `V(O, boundary of D)`.
    pub v_ref: f64,
    pub seed: u64,
}

impl ExitProblem {
    pub fn validate(&self, model: &Model) -> Result<()> {
        self.domain.validate(model)?;
        model.check_field(&self.equilibrium)?;
        model.check_field(&self.x0)?;
        if !self.domain.contains(model, self.equilibrium.coeffs()) {
            return Err(invalid("equilibrium must lie inside the domain"));
        }
        if !self.domain.contains(model, self.x0.coeffs()) {
            return Err(invalid("initial state must lie inside the domain"));
        }
        if !(self.v_ref > 0.0 && self.v_ref.is_finite()) {
            return Err(invalid("reference quasipotential must be positive and finite"));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1"));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(invalid("eps_list must contain positive values"));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("eps_list must be strictly decreasing"));
        }
        Ok(())
    }

    /// Predicted path-steps `sum_eps n_paths min(e^{V/eps} / dt, max_steps)`.
    pub fn predicted_steps(&self, model: &Model) -> f64 {
        self.eps_list
            .iter()
            .map(|e| {
                let per_path = ((self.v_ref / e).exp() / model.dt()).min(self.max_steps as f64);
                self.n_paths as f64 * per_path
            })
            .sum()
    }

    pub fn check_budget(&self, model: &Model) -> Result<()> {
        let steps = self.predicted_steps(model);
        if steps > EXIT_STEP_BUDGET {
            return Err(Error::Budget(format!(
                "predicted {steps:.3e} steps exceed the budget of {EXIT_STEP_BUDGET:.1e}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub eps: f64,
    pub path_index: u64,
    /// Seed of the path's random stream.
    pub seed: u64,
    /// First node outside the domain, or the censoring time.
    pub tau: f64,
    pub steps: u64,
    pub censored: bool,
    /// State at `tau` (coefficients).
    pub exit_point: Vec<f64>,
    /// `dist(exit_point, O) - r`; zero when censored.
    pub overshoot: f64,
}

/// One exit-time draw; `eps = 0` runs the deterministic flow.
pub fn sample_exit(model: &Model, problem: &ExitProblem, eps: f64, path_index: u64) -> Result<ExitSample> {
    problem.validate(model)?;
    sample_exit_unchecked(model, problem, eps, path_index)
}

fn sample_exit_unchecked(
    model: &Model,
    problem: &ExitProblem,
    eps: f64,
    path_index: u64,
) -> Result<ExitSample> {
    let cfg = SimConfig::new(eps, problem.seed);
    let mut st = Stepper::new(model, problem.x0.coeffs(), &cfg, path_index)?;
    let dom = &problem.domain;
    for step in 1..=problem.max_steps {
        let x = match st.step(None) {
            Ok(x) => x,
            // a path that blows up has left any bounded domain
            Err(Error::BlowUp { .. }) => st.state(),
            Err(e) => return Err(e),
        };
        let d = dom.distance(model, x);
        if !(d < dom.radius) {
            return Ok(ExitSample {
                eps,
                path_index,
                seed: path_seed(problem.seed, path_index),
                tau: step as f64 * model.dt(),
                steps: step,
                censored: false,
                exit_point: x.to_vec(),
                overshoot: d - dom.radius,
            });
        }
    }
    Ok(ExitSample {
        eps,
        path_index,
        seed: path_seed(problem.seed, path_index),
        tau: problem.max_steps as f64 * model.dt(),
        steps: problem.max_steps,
        censored: true,
        exit_point: st.state().to_vec(),
        overshoot: 0.0,
    })
}

/// All `n_paths` samples at one eps, in path order.
pub fn sample_exits(model: &Model, problem: &ExitProblem, eps: f64) -> Result<Vec<ExitSample>> {
    problem.validate(model)?;
    par_map_indexed(problem.n_paths, |i| sample_exit_unchecked(model, problem, eps, i as u64))
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRow {
    pub eps: f64,
    pub n: usize,
    pub n_censored: usize,
    /// Mean over uncensored samples; `None` if all are censored.
    pub mean_tau: Option<f64>,
    /// Mean with censored samples counted at their censoring time.
    pub mean_tau_lower: f64,
    /// Normal 95% interval of `mean_tau`.
    pub mean_ci: Option<(f64, f64)>,
    pub median_tau: f64,
    /// `eps log mean_tau`.
    pub eps_log_mean: Option<f64>,
    pub mean_overshoot: Option<f64>,
    /// `P(e^{(V - eta)/eps} <= tau <= e^{(V + eta)/eps})`.
    pub window_prob: f64,
    pub window_ci: (f64, f64),
    pub all_censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitScalingReport {
    pub v_ref: f64,
    pub eta: f64,
    pub rows: Vec<ExitRow>,
    /// `eps log mean_tau` regressed on `eps` over rows with exits.
    pub fit: Option<LinearFit>,
    /// Intercept of `fit`, the `eps -> 0` extrapolation.
    pub extrapolated_limit: Option<f64>,
    /// `|extrapolated_limit - v_ref|`.
    pub extrapolation_error: Option<f64>,
    /// `eps log mean_tau` strictly increases as eps decreases.
    pub strictly_increasing: bool,
    pub notes: Vec<String>,
}

fn exit_row(samples: &[ExitSample], eps: f64, v: f64, eta: f64) -> Result<ExitRow> {
    let n = samples.len();
    let done: Vec<f64> = samples.iter().filter(|s| !s.censored).map(|s| s.tau).collect();
    let n_censored = n - done.len();
    let all_taus: Vec<f64> = samples.iter().map(|s| s.tau).collect();
    let mean_tau_lower = all_taus.iter().sum::<f64>() / n as f64;
    let (mean_tau, mean_ci) = if done.is_empty() {
        (None, None)
    } else {
        let m = done.iter().sum::<f64>() / done.len() as f64;
        let ci = (done.len() > 1).then(|| {
            let var = done.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (done.len() - 1) as f64;
            let half = 1.959_963_984_540_054 * (var / done.len() as f64).sqrt();
            (m - half, m + half)
        });
        (Some(m), ci)
    };
    let overshoots: Vec<f64> = samples.iter().filter(|s| !s.censored).map(|s| s.overshoot).collect();
    let (lo, hi) = (((v - eta) / eps).exp(), ((v + eta) / eps).exp());
    // censored samples count as outside: their tau is only a lower bound
    let in_window = samples
        .iter()
        .filter(|s| !s.censored && s.tau >= lo && s.tau <= hi)
        .count() as u64;
    Ok(ExitRow {
        eps,
        n,
        n_censored,
        mean_tau,
        mean_tau_lower,
        mean_ci,
        median_tau: median(&all_taus)?,
        eps_log_mean: mean_tau.map(|m| eps * m.ln()),
        mean_overshoot: (!overshoots.is_empty())
            .then(|| overshoots.iter().sum::<f64>() / overshoots.len() as f64),
        window_prob: in_window as f64 / n as f64,
        window_ci: wilson_ci(in_window, n as u64)?,
        all_censored: done.is_empty(),
    })
}

/// `eps log E[tau]` against `V` over the eps grid, with the window
/// probability at `eta`.
pub fn exit_scaling(model: &Model, problem: &ExitProblem, eta: f64) -> Result<ExitScalingReport> {
    problem.validate(model)?;
    if !(eta > 0.0) {
        return Err(invalid("eta must be positive"));
    }
    problem.check_budget(model)?;
    let samples = problem
        .eps_list
        .iter()
        .map(|e| sample_exits(model, problem, *e))
        .collect::<Result<Vec<_>>>()?;
    exit_scaling_from_samples(problem, eta, &samples)
}

/// Aggregation step of [`exit_scaling`]; `samples[i]` belong to `eps_list[i]`.
pub fn exit_scaling_from_samples(
    problem: &ExitProblem,
    eta: f64,
    samples: &[Vec<ExitSample>],
) -> Result<ExitScalingReport> {
    let mut rows = Vec::with_capacity(samples.len());
    let mut notes = vec!["tau taken at the first grid node outside the domain".to_string()];
    for (eps, s) in problem.eps_list.iter().zip(samples) {
        let row = exit_row(s, *eps, problem.v_ref, eta)?;
        if row.all_censored {
            notes.push(format!("all samples censored at eps = {eps}; excluded from the fit"));
        } else if row.n_censored > 0 {
            notes.push(format!(
                "{} censored samples at eps = {eps}; mean_tau is uncensored-only, mean_tau_lower counts them at the censoring time",
                row.n_censored
            ));
        }
        rows.push(row);
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.eps_log_mean.map(|v| (r.eps, v)))
        .collect();
    let fit = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        Some(linear_fit(&x, &y)?)
    } else {
        None
    };
    let extrapolated_limit = fit.as_ref().map(|f| f.intercept);
    Ok(ExitScalingReport {
        v_ref: problem.v_ref,
        eta,
        strictly_increasing: pts.len() >= 2 && pts.windows(2).all(|w| w[1].1 > w[0].1),
        extrapolation_error: extrapolated_limit.map(|l| (l - problem.v_ref).abs()),
        extrapolated_limit,
        fit,
        rows,
        notes,
    })
}

/// A cap of the boundary: exit directions `d` with `<d, axis> >= min_cos`
/// (or `|<d, axis>| >= min_cos` when two-sided), directions normalized in
/// coefficient space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCell {
    pub name: String,
    pub axis: Vec<f64>,
    pub min_cos: f64,
    pub two_sided: bool,
}

impl BoundaryCell {
    fn contains(&self, dir: &[f64]) -> bool {
        let c: f64 = dir.iter().zip(&self.axis).map(|(a, b)| a * b).sum();
        if self.two_sided {
            c.abs() >= self.min_cos
        } else {
            c >= self.min_cos
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFrequency {
    pub name: String,
    pub count: u64,
    pub freq: f64,
    pub ci: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitPlaceReport {
    pub eps: f64,
    pub n_exits: u64,
    pub n_censored: u64,
    pub cells: Vec<CellFrequency>,
    /// Exits in no cell (the partition failed to cover them).
    pub unassigned: u64,
}

/// Empirical exit-place distribution over boundary cells at one eps.
pub fn exit_place_histogram(
    model: &Model,
    problem: &ExitProblem,
    eps: f64,
    cells: &[BoundaryCell],
) -> Result<ExitPlaceReport> {
    problem.validate(model)?;
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    let cells: Vec<BoundaryCell> = cells
        .iter()
        .map(|c| {
            if c.axis.len() != model.n_modes() {
                return Err(Error::DimensionMismatch {
                    what: "cell axis",
                    expected: model.n_modes(),
                    got: c.axis.len(),
                });
            }
            let norm = c.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(invalid(format!("cell {} has a zero axis", c.name)));
            }
            Ok(BoundaryCell {
                axis: c.axis.iter().map(|a| a / norm).collect(),
                ..c.clone()
            })
        })
        .collect::<Result<_>>()?;
    let single = ExitProblem {
        eps_list: vec![eps],
        ..problem.clone()
    };
    single.check_budget(model)?;
    let samples = sample_exits(model, problem, eps)?;
    let mut counts = vec![0u64; cells.len()];
    let (mut n_exits, mut unassigned) = (0u64, 0u64);
    for s in samples.iter().filter(|s| !s.censored) {
        n_exits += 1;
        let d: Vec<f64> = s
            .exit_point
            .iter()
            .zip(problem.equilibrium.coeffs())
            .map(|(a, b)| a - b)
            .collect();
        let norm = d.iter().map(|a| a * a).sum::<f64>().sqrt();
        let dir: Vec<f64> = d.iter().map(|a| a / norm).collect();
        let mut hit = false;
        for (c, cell) in counts.iter_mut().zip(&cells) {
            if cell.contains(&dir) {
                *c += 1;
                hit = true;
            }
        }
        if !hit {
            unassigned += 1;
        }
    }
    let cells = cells
        .iter()
        .zip(&counts)
        .map(|(cell, &count)| {
            Ok(CellFrequency {
                name: cell.name.clone(),
                count,
                freq: if n_exits == 0 { 0.0 } else { count as f64 / n_exits as f64 },
                ci: if n_exits == 0 { (0.0, 1.0) } else { wilson_ci(count, n_exits)? },
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExitPlaceReport {
        eps,
        n_exits,
        n_censored: samples.len() as u64 - n_exits,
        cells,
        unassigned,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractionEntry {
    pub x0: Vec<f64>,
    /// The noiseless flow never left the domain.
    pub stays_in_domain: bool,
    /// `|X^0(T0) - O|`, or `inf` after leaving the domain.
    #[serde(with = "crate::floats")]
    pub final_distance: f64,
    pub attracted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractionReport {
    pub t0: f64,
    pub rho: f64,
    pub entries: Vec<AttractionEntry>,
    /// Indices of probes violating either condition.
    pub violations: Vec<usize>,
}

/// Runs the noiseless flow from each probe for time `t0` and checks that it
/// stays in `domain` and ends within `rho` of `equilibrium` (L2).
pub fn verify_attraction(
    model: &Model,
    domain: &Domain,
    equilibrium: &SpectralField,
    probes: &[SpectralField],
    t0: f64,
    rho: f64,
) -> Result<AttractionReport> {
    domain.validate(model)?;
    model.check_field(equilibrium)?;
    if !(t0 > 0.0 && rho > 0.0) {
        return Err(invalid("t0 and rho must be positive"));
    }
    let steps = (t0 / model.dt()).round().max(1.0) as usize;
    let cfg = SimConfig::new(0.0, 0);
    let entries = probes
        .iter()
        .map(|x0| {
            model.check_field(x0)?;
            let mut st = Stepper::new(model, x0.coeffs(), &cfg, 0)?;
            let mut inside = domain.contains(model, x0.coeffs());
            for _ in 0..steps {
                if !inside {
                    break;
                }
                inside = match st.step(None) {
                    Ok(x) => domain.contains(model, x),
                    Err(Error::BlowUp { .. }) => false,
                    Err(e) => return Err(e),
                };
            }
            let final_distance = if inside {
                st.state()
                    .iter()
                    .zip(equilibrium.coeffs())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                f64::INFINITY
            };
            Ok(AttractionEntry {
                x0: x0.coeffs().to_vec(),
                stays_in_domain: inside,
                final_distance,
                attracted: final_distance < rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !(e.stays_in_domain && e.attracted))
        .map(|(i, _)| i)
        .collect();
    Ok(AttractionReport {
        t0,
        rho,
        entries,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityTrend {
    pub rhos: Vec<f64>,
    /// `V(O + rho e_1, boundary points)` per rho.
    pub values: Vec<f64>,
    pub v_origin: f64,
    /// `|values - v_origin|` shrinks as rho decreases.
    pub trend_ok: bool,
    pub note: String,
}

/// Surrogate for regularity of `V` near `O`: quasipotential from shifted
/// starts `O + rho e_1` to the `2 n` axis points of the boundary.
pub fn inner_regularity_trend(
    model: &Model,
    domain: &Domain,
    equilibrium: &SpectralField,
    rhos: &[f64],
    horizons: &[f64],
    opts: &QpOptions,
) -> Result<RegularityTrend> {
    domain.validate(model)?;
    if rhos.is_empty() || rhos.iter().any(|r| !(*r > 0.0 && *r < domain.radius)) {
        return Err(invalid("rhos must lie in (0, radius)"));
    }
    if rhos.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("rhos must be strictly decreasing"));
    }
    let mut targets = Vec::new();
    for k in 0..model.n_modes() {
        for s in [1.0, -1.0] {
            let mut c = domain.center.coeffs().to_vec();
            c[k] += s * domain.radius;
            targets.push(model.field(c));
        }
    }
    let target = QpTarget::Points(targets);
    let run = |start: &SpectralField| -> Result<QuasipotentialResult> {
        quasipotential(model, start, &target, horizons, opts)
    };
    let v_origin = run(equilibrium)?.value;
    let values = rhos
        .iter()
        .map(|r| {
            let mut c = equilibrium.coeffs().to_vec();
            c[0] += r;
            Ok(run(&model.field(c))?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let gaps: Vec<f64> = values.iter().map(|v| (v - v_origin).abs()).collect();
    Ok(RegularityTrend {
        rhos: rhos.to_vec(),
        trend_ok: gaps.windows(2).all(|w| w[1] <= w[0] + 1e-9),
        values,
        v_origin,
        note: "trend only; regularity of the quasipotential is not certified".to_string(),
    })
}
