use fwspde_core::models::{DiffusionCoefficient, DriftSpec, Model, ModelSpec, NoiseSpec};
use fwspde_core::simulator::{simulate, SimConfig};
use fwspde_core::skeleton::{
    apply_m, apply_m_residual, mild_residual, solve_skeleton, ControlPath, SolverOptions, TimeGrid,
    Trajectory,
};
use fwspde_core::spectral::{BasisSpec, SpectralField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

#[test]
fn apply_m_matches_scalar_ode_oracle() {
    // one sine mode on (0, pi): the cubic projects with factor 3/(2 pi),
    // so b = -(2 pi / 3) s^3 gives v' = -v - (v + 1)^3 for the coefficient
    let oracle = -0.238_277_865_832_501_4;
    let mut errs = Vec::new();
    for dt in [1e-3, 5e-4, 2.5e-4] {
        let m = Model::new(ModelSpec {
            drift: DriftSpec::ReactionPolynomial {
                coeffs: vec![0.0, 0.0, 0.0, -2.0 * std::f64::consts::PI / 3.0],
            },
            ..ModelSpec::ornstein_uhlenbeck(0.5, dt)
        })
        .unwrap();
        let one = SpectralField::new(m.basis().clone(), vec![1.0]).unwrap();
        let psi = Trajectory::constant(TimeGrid::of_model(&m), one);
        let opts = SolverOptions::from_model(&m);
        let phi = apply_m(&m, &psi, &opts).unwrap();
        assert!(apply_m_residual(&phi, &psi, &m).unwrap() <= opts.picard_tol);
        errs.push((phi.endpoint().coeffs()[0] - 1.0 - oracle).abs());
    }
    assert!(errs[2] < 2e-4, "{errs:?}");
    assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8, "{errs:?}");
}

#[test]
fn apply_m_trivial_cases() {
    let m = reaction16(0.01);
    let grid = TimeGrid::of_model(&m);
    let zero = Trajectory::constant(grid, SpectralField::zeros(m.basis()));
    let opts = SolverOptions::from_model(&m);
    assert_eq!(apply_m(&m, &zero, &opts).unwrap().sup_l2(), 0.0);
    let lin = Model::new(ModelSpec::linear_diagonal(3, 1.0, 0.01)).unwrap();
    let psi = Trajectory::constant(
        TimeGrid::of_model(&lin),
        SpectralField::new(lin.basis().clone(), vec![0.3, -0.2, 0.1]).unwrap(),
    );
    assert_eq!(apply_m(&lin, &psi, &opts).unwrap(), psi);
}

#[test]
fn residual_examples() {
    let m = Model::new(ModelSpec::ornstein_uhlenbeck(1.0, 0.01)).unwrap();
    let grid = TimeGrid::of_model(&m);
    let c = 0.7;
    let u = ControlPath::constant(grid, vec![c]).unwrap();
    // exact discrete solution of x_{n+1} = e^{-dt}(x_n + dt c), x_0 = 0.5
    let a = (-0.01f64).exp();
    let mut x = 0.5;
    let mut states = vec![SpectralField::new(m.basis().clone(), vec![x]).unwrap()];
    for _ in 0..grid.n_steps() {
        x = a * (x + 0.01 * c);
        states.push(SpectralField::new(m.basis().clone(), vec![x]).unwrap());
    }
    let exact = Trajectory::new(grid, states.clone()).unwrap();
    assert!(mild_residual(&exact, &m, &u).unwrap() <= 1e-10);
    states[40] = SpectralField::new(m.basis().clone(), vec![states[40].coeffs()[0] + 0.1]).unwrap();
    let bad = Trajectory::new(grid, states).unwrap();
    assert!(mild_residual(&bad, &m, &u).unwrap() >= 0.05);
}

#[test]
fn solver_output_is_certified() {
    for dt in [0.01, 0.005] {
        let m = reaction16(dt);
        let u = smooth_control(&m);
        let opts = SolverOptions::from_model(&m);
        let phi = solve_skeleton(&m, &reaction_x0(&m), &u, &opts).unwrap();
        assert!(mild_residual(&phi, &m, &u).unwrap() <= opts.picard_tol);
        assert_eq!(phi.initial(), &reaction_x0(&m));
    }
}

#[test]
fn zero_control_is_the_free_flow() {
    let m = reaction16(0.01);
    let x0 = reaction_x0(&m);
    let u = ControlPath::zeros(TimeGrid::of_model(&m), m.n_noise_modes());
    assert_eq!(u.energy(), 0.0);
    let phi = solve_skeleton(&m, &x0, &u, &SolverOptions::from_model(&m)).unwrap();
    let free = simulate(&m, &x0, &SimConfig::new(0.0, 1)).unwrap();
    assert!(phi.sup_distance(&free.trajectory).unwrap() <= 1e-12);
}

/// `|X_dt(T) - X_{dt/2}(T)|` for successive halvings.
fn halving_differences(dts: &[f64]) -> Vec<f64> {
    let ends: Vec<Vec<f64>> = dts
        .iter()
        .map(|dt| {
            let m = reaction16(*dt);
            let u = smooth_control(&m);
            solve_skeleton(&m, &reaction_x0(&m), &u, &SolverOptions::from_model(&m))
                .unwrap()
                .endpoint()
                .coeffs()
                .to_vec()
        })
        .collect();
    ends.windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect()
}

#[test]
fn grid_halving_ratio() {
    let d = halving_differences(&[0.01, 0.005, 0.0025, 0.00125]);
    for w in d.windows(2) {
        assert!(w[0] / w[1] >= 1.8, "{d:?}");
    }
}

#[test]
fn navier_stokes_energy_decays() {
    let m = Model::new(ModelSpec {
        basis: BasisSpec::torus(2),
        drift: DriftSpec::NavierStokes,
        noise: NoiseSpec::additive(vec![1.0; 4]),
        horizon: 0.5,
        dt: 1e-3,
        tolerances: Default::default(),
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let c: Vec<f64> = (0..m.n_modes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0 = SpectralField::new(m.basis().clone(), c).unwrap();
        let u = ControlPath::zeros(TimeGrid::of_model(&m), m.n_noise_modes());
        let phi = solve_skeleton(&m, &x0, &u, &SolverOptions::from_model(&m)).unwrap();
        let e: Vec<f64> = phi.states().iter().map(|s| s.l2_norm()).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}

#[test]
fn m_is_lipschitz_with_stable_constant() {
    let ratio = |dt: f64, r: f64| {
        let m = reaction16(dt);
        let grid = TimeGrid::of_model(&m);
        let opts = SolverOptions::from_model(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for _ in 0..6 {
            let mut a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.iter_mut().for_each(|v| *v *= r / na);
            let b: Vec<f64> = a.iter().map(|v| v * 0.97).collect();
            let pa = Trajectory::constant(grid, SpectralField::new(m.basis().clone(), a).unwrap());
            let pb = Trajectory::constant(grid, SpectralField::new(m.basis().clone(), b).unwrap());
            let d_out = apply_m(&m, &pa, &opts)
                .unwrap()
                .sup_distance(&apply_m(&m, &pb, &opts).unwrap())
                .unwrap();
            worst = worst.max(d_out / pa.sup_distance(&pb).unwrap());
        }
        worst
    };
    let c: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|r| ratio(0.01, *r)).collect();
    assert!(c.iter().all(|v| v.is_finite()));
    let fine: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|r| ratio(0.005, *r)).collect();
    for (a, b) in c.iter().zip(&fine) {
        assert!((a / b - 1.0).abs() < 0.1, "{c:?} {fine:?}");
    }
}

#[test]
fn m_grows_under_scaling() {
    let m = reaction16(0.01);
    let grid = TimeGrid::of_model(&m);
    let opts = SolverOptions::from_model(&m);
    let base: Vec<f64> = (1..=16).map(|k| 0.5 / k as f64).collect();
    let norms: Vec<f64> = [1.0, 1.5, 2.0, 3.0]
        .iter()
        .map(|s| {
            let c = base.iter().map(|v| v * s).collect();
            let psi = Trajectory::constant(grid, SpectralField::new(m.basis().clone(), c).unwrap());
            apply_m(&m, &psi, &opts).unwrap().sup_l2()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] >= w[0]), "{norms:?}");
}
