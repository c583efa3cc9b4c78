use fwspde_core::action::{
    level_set_probe, minimize_action, penalized_objective, quasipotential, ActionProblem,
    GradientMethod, Membership, ProbeOptions, QpOptions, QpTarget, Target, Tracking,
};
use fwspde_core::models::{DiffusionCoefficient, DriftSpec, Model, ModelSpec, NoiseSpec, Tolerances};
use fwspde_core::skeleton::{solve_skeleton, ControlPath, SolverOptions, TimeGrid};
use fwspde_core::spectral::{BasisSpec, SpectralField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimal action of the discrete single-mode problem
/// `X_{n+1} = a (X_n + dt lambda u_n)`, energy `1/2 sum w_n dt u_n^2`,
/// from the normal equations of the least-norm control.
fn discrete_lq_action(gamma: f64, lambda: f64, dt: f64, n: usize, y: f64) -> f64 {
    let a = (-gamma * dt).exp();
    let mut gram = 0.0;
    for k in 0..n {
        let c = a.powi((n - k) as i32) * dt * lambda;
        let w = if k == 0 { 0.5 } else { 1.0 };
        gram += c * c / (w * dt);
    }
    0.5 * y * y / gram
}

fn continuum_lq_action(gamma: f64, lambda: f64, t: f64, y: f64) -> f64 {
    let w = lambda * lambda * (1.0 - (-2.0 * gamma * t).exp()) / (2.0 * gamma);
    0.5 * y * y / w
}

#[test]
fn single_mode_matches_gramian() {
    for t in [0.5, 1.0, 2.0] {
        let m = Model::new(ModelSpec::ornstein_uhlenbeck(t, 1e-3)).unwrap();
        let x0 = SpectralField::zeros(m.basis());
        let y = SpectralField::single_mode(m.basis(), 0, 1.0).unwrap();
        let r = minimize_action(&m, &ActionProblem::to_point(x0, y, 1e-4)).unwrap();
        assert!(r.converged);
        let exact = continuum_lq_action(1.0, 1.0, t, 1.0);
        let discrete = discrete_lq_action(1.0, 1.0, 1e-3, m.n_steps(), 1.0);
        assert!((r.action - exact).abs() <= 0.01 * exact, "T={t}: {} vs {exact}", r.action);
        assert!((r.action - discrete).abs() <= 1e-3 * discrete, "T={t}: {} vs {discrete}", r.action);
        assert!(r.penalized_objective <= discrete * (1.0 + 1e-9));
        assert!((r.action - r.control.energy()).abs() < 1e-15);
    }
}

#[test]
fn continuum_oracle_value() {
    // 1/(1 - e^{-2})
    assert!((continuum_lq_action(1.0, 1.0, 1.0, 1.0) - 1.156_517_642_749_665_7).abs() < 1e-10);
}

#[test]
fn diagonal_model_decouples() {
    let m = Model::new(ModelSpec::linear_diagonal(3, 1.0, 1e-2)).unwrap();
    let x0 = SpectralField::zeros(m.basis());
    let y = SpectralField::new(m.basis().clone(), vec![0.0, 0.5, 0.0]).unwrap();
    let r = minimize_action(&m, &ActionProblem::to_point(x0, y, 1e-4)).unwrap();
    assert!(r.converged);
    let dt = 1e-2;
    let off: f64 = r
        .control
        .values()
        .iter()
        .map(|v| 0.5 * dt * (v[0] * v[0] + v[2] * v[2]))
        .sum();
    assert!(off <= 1e-8, "{off}");
    // mode 2 has gamma = 4
    let exact = discrete_lq_action(4.0, 1.0, dt, 100, 0.5);
    assert!((r.action - exact).abs() < 2e-3 * exact);
}

#[test]
fn action_monotone_along_ray() {
    let m = Model::new(ModelSpec::linear_diagonal(2, 1.0, 1e-2)).unwrap();
    let x0 = SpectralField::new(m.basis().clone(), vec![0.4, -0.2]).unwrap();
    let free = [0.4 * (-1.0f64).exp(), -0.2 * (-4.0f64).exp()];
    let mut last = -1.0;
    for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = SpectralField::new(m.basis().clone(), vec![free[0] + s, free[1] + 0.5 * s]).unwrap();
        let r = minimize_action(&m, &ActionProblem::to_point(x0.clone(), y, 1e-4)).unwrap();
        assert!(r.action >= last - 1e-9);
        last = r.action;
    }
}

fn random_control(grid: TimeGrid, m: usize, rng: &mut ChaCha8Rng) -> ControlPath {
    let phases: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..6.0)).collect();
    ControlPath::from_fn(grid, |t| phases.iter().map(|p| 0.5 * (3.0 * t + p).sin()).collect()).unwrap()
}

fn check_gradient(model: &Model, problem: &ActionProblem, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cgrid = problem.control_grid.unwrap_or(TimeGrid::of_model(model));
    let u = random_control(cgrid, model.n_noise_modes(), &mut rng);
    let (_, grad) = penalized_objective(model, problem, &u, GradientMethod::Adjoint).unwrap();
    for _ in 0..10 {
        let dir: Vec<Vec<f64>> = (0..cgrid.n_nodes())
            .map(|_| (0..model.n_noise_modes()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // directional derivative in the scaled variable: grad is w.r.t. z,
        // and z_i = c_i sqrt(w_i dt)
        let sq: Vec<f64> = (0..cgrid.n_nodes())
            .map(|i| (cgrid.trapezoid_weight(i) * cgrid.dt()).sqrt())
            .collect();
        let predicted: f64 = grad
            .values()
            .iter()
            .zip(&dir)
            .zip(&sq)
            .map(|((g, d), s)| g.iter().zip(d).map(|(a, b)| a * b / s).sum::<f64>())
            .sum();
        let h = 1e-5;
        let shift = |sign: f64| {
            let v: Vec<Vec<f64>> = u
                .values()
                .iter()
                .zip(&dir)
                .zip(&sq)
                .map(|((c, d), s)| c.iter().zip(d).map(|(a, b)| a + sign * h * b / (s * s)).collect())
                .collect();
            ControlPath::new(cgrid, v).unwrap()
        };
        let (fp, _) = penalized_objective(model, problem, &shift(1.0), GradientMethod::Adjoint).unwrap();
        let (fm, _) = penalized_objective(model, problem, &shift(-1.0), GradientMethod::Adjoint).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        assert!(
            (fd - predicted).abs() <= 1e-4 * fd.abs().max(predicted.abs()).max(1e-8),
            "fd {fd} adjoint {predicted}"
        );
    }
}

fn reaction_model() -> Model {
    Model::new(ModelSpec {
        basis: BasisSpec::interval(6, std::f64::consts::PI),
        drift: DriftSpec::ReactionPolynomial {
            coeffs: vec![0.0, 1.0, 0.0, -1.0],
        },
        noise: NoiseSpec::power_law(1.0, 1.5, 6, DiffusionCoefficient::BoundedRational { c: 1.0 }),
        horizon: 0.5,
        dt: 0.01,
        tolerances: Tolerances::default(),
    })
    .unwrap()
}

fn ns_model() -> Model {
    let n = 2 * 12;
    Model::new(ModelSpec {
        basis: BasisSpec::torus(2),
        drift: DriftSpec::NavierStokes,
        noise: NoiseSpec::power_law(1.0, 2.0, n, DiffusionCoefficient::BoundedRational { c: 2.0 }),
        horizon: 0.2,
        dt: 0.01,
        tolerances: Tolerances::default(),
    })
    .unwrap()
}

#[test]
fn adjoint_gradient_reaction() {
    let m = reaction_model();
    let x0 = SpectralField::new(m.basis().clone(), vec![0.8, -0.3, 0.2, 0.0, 0.1, 0.0]).unwrap();
    let y = SpectralField::new(m.basis().clone(), vec![1.0, 0.5, 0.0, 0.0, 0.0, -0.2]).unwrap();
    let mut p = ActionProblem::to_point(x0.clone(), y, 1e-3);
    p.penalty_weight = 50.0;
    check_gradient(&m, &p, 1);
    // coarse control grid and a tracking reference
    p.control_grid = Some(TimeGrid::new(0.5, 7).unwrap());
    let zero = ControlPath::zeros(TimeGrid::of_model(&m), m.n_noise_modes());
    let reference = solve_skeleton(&m, &x0, &zero, &SolverOptions::from_model(&m)).unwrap();
    p.tracking = Some(Tracking {
        reference,
        weight: 3.0,
    });
    check_gradient(&m, &p, 2);
    p.target = Target::Ball {
        center: SpectralField::zeros(m.basis()),
        radius: 0.1,
        tol: 1e-3,
    };
    check_gradient(&m, &p, 3);
}

#[test]
fn adjoint_gradient_navier_stokes() {
    let m = ns_model();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0c: Vec<f64> = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let yc: Vec<f64> = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x0 = SpectralField::new(m.basis().clone(), x0c).unwrap();
    let y = SpectralField::new(m.basis().clone(), yc).unwrap();
    let mut p = ActionProblem::to_point(x0, y, 1e-3);
    p.penalty_weight = 20.0;
    check_gradient(&m, &p, 4);
}

#[test]
fn finite_difference_gradient_agrees_with_adjoint() {
    let mut spec = ModelSpec::ornstein_uhlenbeck(0.2, 0.02);
    spec.noise.g = DiffusionCoefficient::BoundedRational { c: 1.0 };
    spec.drift = DriftSpec::ReactionPolynomial {
        coeffs: vec![0.0, 0.5, 0.0, -1.0],
    };
    let m = Model::new(spec).unwrap();
    let x0 = SpectralField::single_mode(m.basis(), 0, 0.3).unwrap();
    let y = SpectralField::single_mode(m.basis(), 0, 0.9).unwrap();
    let p = ActionProblem::to_point(x0, y, 1e-3);
    let u = ControlPath::constant(TimeGrid::of_model(&m), vec![0.7]).unwrap();
    let (fa, ga) = penalized_objective(&m, &p, &u, GradientMethod::Adjoint).unwrap();
    let (ff, gf) = penalized_objective(&m, &p, &u, GradientMethod::FiniteDifference).unwrap();
    assert_eq!(fa, ff);
    for (a, b) in ga.values().iter().zip(gf.values()) {
        assert!((a[0] - b[0]).abs() <= 1e-6 * (1.0 + a[0].abs()));
    }
    // the finite-difference path also optimizes
    let mut p = p;
    p.optimizer.gradient = GradientMethod::FiniteDifference;
    let r = minimize_action(&m, &p).unwrap();
    assert!(r.terminal_gap <= 1e-3);
}

#[test]
fn quasipotential_of_ou_ball() {
    let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 0.01)).unwrap();
    let origin = SpectralField::zeros(m.basis());
    let q = quasipotential(
        &m,
        &origin,
        &QpTarget::BallBoundary { radius: 1.0 },
        &[2.0, 4.0, 8.0, 16.0],
        &QpOptions::default(),
    )
    .unwrap();
    assert!((q.value - 1.0).abs() < 0.02, "{}", q.value);
    assert!(q.monotone_flag);
    // symmetric: +r and -r cost the same
    let last = q.per_point[0].len() - 1;
    assert!((q.per_point[0][last] - q.per_point[1][last]).abs() < 1e-6);
    let zero = quasipotential(&m, &origin, &QpTarget::Point(origin.clone()), &[1.0], &QpOptions::default())
        .unwrap();
    assert!(zero.value < 1e-9);
}

#[test]
fn quasipotential_of_gradient_model_point() {
    // b(s) = -s on top of the diffusion: U = s^2, gamma_eff = 2 per unit noise
    let mut spec = ModelSpec::ornstein_uhlenbeck(1.0, 0.01);
    spec.drift = DriftSpec::ReactionPolynomial { coeffs: vec![0.0, -1.0] };
    let m = Model::new(spec).unwrap();
    let origin = SpectralField::zeros(m.basis());
    let z = SpectralField::single_mode(m.basis(), 0, 0.5).unwrap();
    let q = quasipotential(&m, &origin, &QpTarget::Point(z), &[1.0, 3.0, 6.0], &QpOptions::default())
        .unwrap();
    // gamma z^2 with gamma = 2
    assert!((q.value - 0.5).abs() < 0.015, "{}", q.value);
    assert!(q.monotone_flag);
}

#[test]
fn level_set_membership() {
    let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 0.01)).unwrap();
    let x0 = SpectralField::zeros(m.basis());
    let grid = TimeGrid::of_model(&m);
    let opts = SolverOptions::from_model(&m);
    let free = solve_skeleton(&m, &x0, &ControlPath::zeros(grid, 1), &opts).unwrap();
    let u = ControlPath::from_fn(grid, |t| vec![(t - 1.0f64).exp()]).unwrap();
    let driven = solve_skeleton(&m, &x0, &u, &opts).unwrap();
    let a_star = u.energy();
    let probe = ProbeOptions::default();
    let out = level_set_probe(&m, &x0, 0.0, std::slice::from_ref(&free), &probe).unwrap();
    assert_eq!(out[0].membership, Membership::Member);
    let half = level_set_probe(&m, &x0, a_star / 2.0, std::slice::from_ref(&driven), &probe).unwrap();
    assert_eq!(half[0].membership, Membership::NonMember);
    let twice = level_set_probe(&m, &x0, 2.0 * a_star, std::slice::from_ref(&driven), &probe).unwrap();
    assert_eq!(twice[0].membership, Membership::Member);
    assert!(twice[0].action_upper <= a_star * 1.001);
}

#[test]
fn degenerate_noise_is_unreachable() {
    let spec = ModelSpec {
        noise: NoiseSpec::additive(vec![1.0]),
        ..ModelSpec::linear_diagonal(2, 1.0, 0.02)
    };
    let m = Model::new(spec).unwrap();
    let x0 = SpectralField::zeros(m.basis());
    let y = SpectralField::new(m.basis().clone(), vec![0.0, 0.5]).unwrap();
    let r = minimize_action(&m, &ActionProblem::to_point(x0.clone(), y.clone(), 1e-3)).unwrap();
    assert!(r.unreachable && !r.converged);
    let grid = TimeGrid::of_model(&m);
    let candidate = fwspde_core::skeleton::Trajectory::constant(grid, y);
    for s in [0.1, 1.0, 10.0] {
        let out = level_set_probe(&m, &x0, s, std::slice::from_ref(&candidate), &ProbeOptions::default()).unwrap();
        assert_eq!(out[0].membership, Membership::NonMember);
    }
}
