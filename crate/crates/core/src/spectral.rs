//! Eigenbasis representation of the state space.
//!
//! Two analytic bases are supported:
//!
//! * `DirichletInterval`: `e_k(x) = sqrt(2/L) sin(k pi x / L)` on `(0, L)`,
//!   eigenvalues `(k pi / L)^2`.
//! * `FourierTorus2dDivFree`: divergence-free vector fields on the torus
//!   `[0, L)^2`. Every wavevector `k` in the half plane
//!   (`k1 > 0`, or `k1 == 0 && k2 > 0`) with `0 < |k|_inf <= K` carries two
//!   real modes `sqrt(2)/L * n_k cos(k.x)` and `sqrt(2)/L * n_k sin(k.x)`,
//!   where `n_k = k_perp / |k|`. Eigenvalues are `|2 pi k / L|^2`.
//!
//! The real representation is equivalent to one complex coefficient per
//! wavevector with Hermitian symmetry; see [`SpectralField::to_complex`].
//!
//! Nonlinear terms and non-Hilbert norms are evaluated on equispaced
//! collocation grids ([`Collocation`]). A grid with at least four points per
//! mode (interval) or `4K` points per side (torus) integrates every product
//! of up to four basis functions exactly, so cubic and quadratic
//! nonlinearities are projected without aliasing.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn default_interval_length() -> f64 {
    PI
}

fn default_torus_length() -> f64 {
    2.0 * PI
}

/// Serializable description of a basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum BasisSpec {
    #[serde(rename = "dirichlet_interval")]
    DirichletInterval {
        n_modes: usize,
        #[serde(default = "default_interval_length")]
        domain_length: f64,
    },
    #[serde(rename = "fourier_torus_2d_divfree")]
    FourierTorus2dDivFree {
        k_max: usize,
        #[serde(default = "default_torus_length")]
        domain_length: f64,
    },
}

impl BasisSpec {
    pub fn interval(n_modes: usize, domain_length: f64) -> Self {
        BasisSpec::DirichletInterval {
            n_modes,
            domain_length,
        }
    }

    pub fn torus(k_max: usize) -> Self {
        BasisSpec::FourierTorus2dDivFree {
            k_max,
            domain_length: default_torus_length(),
        }
    }

    pub fn kind(&self) -> BasisKind {
        match self {
            BasisSpec::DirichletInterval { .. } => BasisKind::DirichletInterval,
            BasisSpec::FourierTorus2dDivFree { .. } => BasisKind::FourierTorus2dDivFree,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    DirichletInterval,
    FourierTorus2dDivFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Cos,
    Sin,
}

/// Label of one real basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sine { k: usize },
    Torus { k: [i32; 2], parity: Parity },
}

#[derive(Debug)]
pub struct SpectralBasis {
    spec: BasisSpec,
    modes: Vec<Mode>,
    eigenvalues: Vec<f64>,
}

impl PartialEq for SpectralBasis {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl SpectralBasis {
    pub fn new(spec: BasisSpec) -> Result<Arc<Self>> {
        match spec {
            BasisSpec::DirichletInterval {
                n_modes,
                domain_length,
            } => {
                if n_modes == 0 {
                    return Err(invalid("n_modes must be positive"));
                }
                if !(domain_length > 0.0 && domain_length.is_finite()) {
                    return Err(invalid("domain_length must be positive"));
                }
                let modes = (1..=n_modes).map(|k| Mode::Sine { k }).collect();
                let eigenvalues = (1..=n_modes)
                    .map(|k| (k as f64 * PI / domain_length).powi(2))
                    .collect();
                Ok(Arc::new(SpectralBasis {
                    spec,
                    modes,
                    eigenvalues,
                }))
            }
            BasisSpec::FourierTorus2dDivFree {
                k_max,
                domain_length,
            } => {
                if k_max == 0 {
                    return Err(invalid("k_max must be positive"));
                }
                if !(domain_length > 0.0 && domain_length.is_finite()) {
                    return Err(invalid("domain_length must be positive"));
                }
                let kk = k_max as i32;
                let mut waves = Vec::new();
                for k1 in 0..=kk {
                    for k2 in -kk..=kk {
                        if k1 > 0 || k2 > 0 {
                            waves.push([k1, k2]);
                        }
                    }
                }
                waves.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
                let scale = (2.0 * PI / domain_length).powi(2);
                let mut modes = Vec::with_capacity(2 * waves.len());
                let mut eigenvalues = Vec::with_capacity(2 * waves.len());
                for k in waves {
                    let g = scale * (k[0] * k[0] + k[1] * k[1]) as f64;
                    for parity in [Parity::Cos, Parity::Sin] {
                        modes.push(Mode::Torus { k, parity });
                        eigenvalues.push(g);
                    }
                }
                Ok(Arc::new(SpectralBasis {
                    spec,
                    modes,
                    eigenvalues,
                }))
            }
        }
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn kind(&self) -> BasisKind {
        self.spec.kind()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn domain_length(&self) -> f64 {
        match self.spec {
            BasisSpec::DirichletInterval { domain_length, .. }
            | BasisSpec::FourierTorus2dDivFree { domain_length, .. } => domain_length,
        }
    }

    /// `sup_k |e_k|_inf`.
    pub fn sup_basis_function(&self) -> f64 {
        match self.spec {
            BasisSpec::DirichletInterval { domain_length, .. } => (2.0 / domain_length).sqrt(),
            BasisSpec::FourierTorus2dDivFree { domain_length, .. } => 2f64.sqrt() / domain_length,
        }
    }

    /// Smallest collocation size that dealiases quartic products: points for
    /// the interval, points per side for the torus.
    pub fn dealiased_size(&self) -> usize {
        match self.spec {
            BasisSpec::DirichletInterval { n_modes, .. } => 4 * n_modes,
            BasisSpec::FourierTorus2dDivFree { k_max, .. } => 4 * k_max,
        }
    }

    /// Wavenumber scale `2 pi / L` of the torus (1 for the interval).
    fn wave_scale(&self) -> f64 {
        match self.spec {
            BasisSpec::DirichletInterval { .. } => 1.0,
            BasisSpec::FourierTorus2dDivFree { domain_length, .. } => 2.0 * PI / domain_length,
        }
    }

    /// Divergence-free direction `k_perp / |k|` of a torus mode.
    pub fn mode_direction(k: [i32; 2]) -> [f64; 2] {
        let norm = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
        [-(k[1] as f64) / norm, k[0] as f64 / norm]
    }

    /// Index of the mode with the given label.
    pub fn mode_index(&self, mode: Mode) -> Option<usize> {
        self.modes.iter().position(|m| *m == mode)
    }

    pub(crate) fn same(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b) || a.spec == b.spec
    }
}

/// Coefficients of a function in a fixed eigenbasis.
#[derive(Clone, Debug)]
pub struct SpectralField {
    basis: Arc<SpectralBasis>,
    coeffs: Vec<f64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        SpectralBasis::same(&self.basis, &other.basis) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn new(basis: Arc<SpectralBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.n_modes() {
            return Err(Error::DimensionMismatch {
                what: "field coefficients",
                expected: basis.n_modes(),
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("field coefficients must be finite"));
        }
        Ok(SpectralField { basis, coeffs })
    }

    pub(crate) fn from_vec_unchecked(basis: Arc<SpectralBasis>, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), basis.n_modes());
        SpectralField { basis, coeffs }
    }

    pub fn zeros(basis: &Arc<SpectralBasis>) -> Self {
        SpectralField {
            coeffs: vec![0.0; basis.n_modes()],
            basis: basis.clone(),
        }
    }

    pub fn single_mode(basis: &Arc<SpectralBasis>, index: usize, value: f64) -> Result<Self> {
        if index >= basis.n_modes() {
            return Err(invalid(format!(
                "mode index {index} out of range for {} modes",
                basis.n_modes()
            )));
        }
        let mut f = Self::zeros(basis);
        f.coeffs[index] = value;
        Ok(f)
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        l2(&self.coeffs)
    }

    pub fn dot(&self, other: &SpectralField) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn distance(&self, other: &SpectralField) -> Result<f64> {
        self.check_same(other)?;
        Ok(l2_dist(&self.coeffs, &other.coeffs))
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_same(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_vec_unchecked(self.basis.clone(), coeffs))
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_same(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_vec_unchecked(self.basis.clone(), coeffs))
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        Self::from_vec_unchecked(self.basis.clone(), self.coeffs.iter().map(|c| s * c).collect())
    }

    pub(crate) fn check_same(&self, other: &SpectralField) -> Result<()> {
        if SpectralBasis::same(&self.basis, &other.basis) {
            Ok(())
        } else {
            Err(Error::BasisMismatch(
                "fields live on different bases".to_string(),
            ))
        }
    }

    /// Complex Fourier coefficients `c_k` of a torus field over every nonzero
    /// wavevector with `|k|_inf <= K`, so that `u(x) = sum_k c_k e^{i k.x}`.
    pub fn to_complex(&self) -> Result<Vec<([i32; 2], [Complex64; 2])>> {
        if self.basis.kind() != BasisKind::FourierTorus2dDivFree {
            return Err(Error::BasisMismatch(
                "complex view requires the torus basis".to_string(),
            ));
        }
        let amp = self.basis.sup_basis_function();
        let mut out = Vec::new();
        let modes = self.basis.modes();
        let mut i = 0;
        while i < modes.len() {
            let (k, alpha, beta) = match (modes[i], modes[i + 1]) {
                (
                    Mode::Torus {
                        k,
                        parity: Parity::Cos,
                    },
                    Mode::Torus {
                        parity: Parity::Sin, ..
                    },
                ) => (k, self.coeffs[i], self.coeffs[i + 1]),
                _ => unreachable!("torus modes come in cos/sin pairs"),
            };
            let n = SpectralBasis::mode_direction(k);
            let s = Complex64::new(alpha, -beta) * (0.5 * amp);
            out.push((k, [s * n[0], s * n[1]]));
            out.push(([-k[0], -k[1]], [s.conj() * n[0], s.conj() * n[1]]));
            i += 2;
        }
        Ok(out)
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `S(t) x`: coefficient `k` multiplied by `exp(-gamma_k t)`.
pub fn semigroup_apply(field: &SpectralField, t: f64) -> Result<SpectralField> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("semigroup time must be >= 0, got {t}")));
    }
    let coeffs = field
        .coeffs
        .iter()
        .zip(field.basis.eigenvalues())
        .map(|(c, g)| c * (-g * t).exp())
        .collect();
    Ok(SpectralField::from_vec_unchecked(field.basis.clone(), coeffs))
}

/// Values of a field on a collocation grid.
#[derive(Clone, Debug, PartialEq)]
pub enum GridValues {
    Scalar(Vec<f64>),
    Vector(Vec<[f64; 2]>),
}

impl GridValues {
    pub fn len(&self) -> usize {
        match self {
            GridValues::Scalar(v) => v.len(),
            GridValues::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
enum Tables {
    /// `sine[mode * n_points + j] = e_mode(x_j)`
    Interval { sine: Vec<f64> },
    /// Per wavevector: `cos(k.x_p)` followed by `sin(k.x_p)`; `wave[mode]`
    /// points into the list.
    Torus {
        trig: Vec<Vec<f64>>,
        wave: Vec<usize>,
    },
}

/// Equispaced collocation grid with precomputed basis tables.
///
/// Interval points are `x_j = j L / N`, `j = 0..N`; torus points are
/// `(i L / n, j L / n)` in row-major order with `i` the x index.
#[derive(Debug)]
pub struct Collocation {
    basis: Arc<SpectralBasis>,
    side: usize,
    n_points: usize,
    weight: f64,
    tables: Tables,
}

impl Collocation {
    /// Grid of `size` points (interval) or `size x size` points (torus).
    pub fn new(basis: &Arc<SpectralBasis>, size: usize) -> Result<Self> {
        let need = basis.dealiased_size();
        if size < need {
            return Err(Error::UnderResolvedGrid { need, got: size });
        }
        let len = basis.domain_length();
        match basis.spec {
            BasisSpec::DirichletInterval { n_modes, .. } => {
                let amp = basis.sup_basis_function();
                let mut sine = vec![0.0; n_modes * size];
                for k in 0..n_modes {
                    for j in 0..size {
                        let x = j as f64 * len / size as f64;
                        sine[k * size + j] = amp * ((k + 1) as f64 * PI * x / len).sin();
                    }
                }
                Ok(Collocation {
                    basis: basis.clone(),
                    side: size,
                    n_points: size,
                    weight: len / size as f64,
                    tables: Tables::Interval { sine },
                })
            }
            BasisSpec::FourierTorus2dDivFree { .. } => {
                let scale = basis.wave_scale();
                let h = len / size as f64;
                let mut trig = Vec::new();
                let mut wave = Vec::with_capacity(basis.n_modes());
                let mut last: Option<[i32; 2]> = None;
                for mode in basis.modes() {
                    let Mode::Torus { k, .. } = *mode else {
                        unreachable!()
                    };
                    if last != Some(k) {
                        let mut table = vec![0.0; 2 * size * size];
                        for i in 0..size {
                            for j in 0..size {
                                let theta =
                                    scale * (k[0] as f64 * i as f64 * h + k[1] as f64 * j as f64 * h);
                                table[i * size + j] = theta.cos();
                                table[size * size + i * size + j] = theta.sin();
                            }
                        }
                        trig.push(table);
                        last = Some(k);
                    }
                    wave.push(trig.len() - 1);
                }
                Ok(Collocation {
                    basis: basis.clone(),
                    side: size,
                    n_points: size * size,
                    weight: h * h,
                    tables: Tables::Torus { trig, wave },
                })
            }
        }
    }

    /// Default dealiased grid for nonlinear terms.
    /// The interval grid gets one extra point so that cubic reaction terms
    /// are integrated exactly (the frequency `4n` aliases onto 0 at `N = 4n`).
    pub fn dealiased(basis: &Arc<SpectralBasis>) -> Result<Self> {
        let extra = match basis.kind() {
            BasisKind::DirichletInterval => 1,
            BasisKind::FourierTorus2dDivFree => 0,
        };
        Self::new(basis, basis.dealiased_size() + extra)
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        &self.basis
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Quadrature weight of every point.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Grid coordinates: `[x, 0]` on the interval, `[x, y]` on the torus.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let len = self.basis.domain_length();
        let h = len / self.side as f64;
        match self.tables {
            Tables::Interval { .. } => (0..self.side).map(|j| [j as f64 * h, 0.0]).collect(),
            Tables::Torus { .. } => (0..self.side)
                .flat_map(|i| (0..self.side).map(move |j| [i as f64 * h, j as f64 * h]))
                .collect(),
        }
    }

    fn torus_mode(&self, m: usize) -> ([f64; 2], [f64; 2], Parity, &[f64]) {
        let Tables::Torus { trig, wave } = &self.tables else {
            unreachable!()
        };
        let Mode::Torus { k, parity } = self.basis.modes[m] else {
            unreachable!()
        };
        let scale = self.basis.wave_scale();
        (
            SpectralBasis::mode_direction(k),
            [scale * k[0] as f64, scale * k[1] as f64],
            parity,
            &trig[wave[m]],
        )
    }

    /// Scalar synthesis (interval basis).
    pub(crate) fn synth_scalar(&self, coeffs: &[f64], out: &mut [f64]) {
        let Tables::Interval { sine } = &self.tables else {
            panic!("scalar synthesis requires the interval basis")
        };
        let n = self.n_points;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &sine[k * n..(k + 1) * n];
            for (o, s) in out.iter_mut().zip(row) {
                *o += c * s;
            }
        }
    }

    /// Scalar projection onto the first `out.len()` modes (interval basis).
    pub(crate) fn analyze_scalar(&self, values: &[f64], out: &mut [f64]) {
        let Tables::Interval { sine } = &self.tables else {
            panic!("scalar analysis requires the interval basis")
        };
        let n = self.n_points;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &sine[k * n..(k + 1) * n];
            *o = self.weight * row.iter().zip(values).map(|(s, v)| s * v).sum::<f64>();
        }
    }

    /// Velocity synthesis (torus basis).
    pub(crate) fn synth_vector(&self, coeffs: &[f64], out: &mut [[f64; 2]]) {
        let amp = self.basis.sup_basis_function();
        let np = self.n_points;
        out.iter_mut().for_each(|v| *v = [0.0; 2]);
        for (m, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (dir, _, parity, table) = self.torus_mode(m);
            let t = match parity {
                Parity::Cos => &table[..np],
                Parity::Sin => &table[np..],
            };
            let a0 = c * amp * dir[0];
            let a1 = c * amp * dir[1];
            for (o, s) in out.iter_mut().zip(t) {
                o[0] += a0 * s;
                o[1] += a1 * s;
            }
        }
    }

    /// Velocity gradient synthesis: `out[p][i][j] = d_i u_j` (torus basis).
    pub(crate) fn synth_gradient(&self, coeffs: &[f64], out: &mut [[[f64; 2]; 2]]) {
        let amp = self.basis.sup_basis_function();
        let np = self.n_points;
        out.iter_mut().for_each(|v| *v = [[0.0; 2]; 2]);
        for (m, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (dir, kv, parity, table) = self.torus_mode(m);
            // d/dx_i cos = -k_i sin, d/dx_i sin = k_i cos
            let (t, sign) = match parity {
                Parity::Cos => (&table[np..], -1.0),
                Parity::Sin => (&table[..np], 1.0),
            };
            let a = c * amp * sign;
            let coef = [
                [a * kv[0] * dir[0], a * kv[0] * dir[1]],
                [a * kv[1] * dir[0], a * kv[1] * dir[1]],
            ];
            for (o, s) in out.iter_mut().zip(t) {
                o[0][0] += coef[0][0] * s;
                o[0][1] += coef[0][1] * s;
                o[1][0] += coef[1][0] * s;
                o[1][1] += coef[1][1] * s;
            }
        }
    }

    /// Orthogonal projection of a vector field onto the first `out.len()`
    /// divergence-free modes (torus basis). This is the Leray projection
    /// followed by truncation.
    pub(crate) fn analyze_vector(&self, values: &[[f64; 2]], out: &mut [f64]) {
        let amp = self.basis.sup_basis_function();
        let np = self.n_points;
        for (m, o) in out.iter_mut().enumerate() {
            let (dir, _, parity, table) = self.torus_mode(m);
            let t = match parity {
                Parity::Cos => &table[..np],
                Parity::Sin => &table[np..],
            };
            let s: f64 = values
                .iter()
                .zip(t)
                .map(|(v, s)| (dir[0] * v[0] + dir[1] * v[1]) * s)
                .sum();
            *o = self.weight * amp * s;
        }
    }

    /// Grid values of a field.
    pub fn synthesize(&self, field: &SpectralField) -> Result<GridValues> {
        self.check(field)?;
        Ok(match self.basis.kind() {
            BasisKind::DirichletInterval => {
                let mut v = vec![0.0; self.n_points];
                self.synth_scalar(&field.coeffs, &mut v);
                GridValues::Scalar(v)
            }
            BasisKind::FourierTorus2dDivFree => {
                let mut v = vec![[0.0; 2]; self.n_points];
                self.synth_vector(&field.coeffs, &mut v);
                GridValues::Vector(v)
            }
        })
    }

    /// Projection of grid values onto the basis.
    pub fn project(&self, values: &GridValues) -> Result<SpectralField> {
        if values.len() != self.n_points {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: self.n_points,
                got: values.len(),
            });
        }
        let mut coeffs = vec![0.0; self.basis.n_modes()];
        match (self.basis.kind(), values) {
            (BasisKind::DirichletInterval, GridValues::Scalar(v)) => {
                self.analyze_scalar(v, &mut coeffs)
            }
            (BasisKind::FourierTorus2dDivFree, GridValues::Vector(v)) => {
                self.analyze_vector(v, &mut coeffs)
            }
            _ => {
                return Err(Error::BasisMismatch(
                    "grid value type does not match the basis".to_string(),
                ))
            }
        }
        Ok(SpectralField::from_vec_unchecked(self.basis.clone(), coeffs))
    }

    fn check(&self, field: &SpectralField) -> Result<()> {
        if SpectralBasis::same(&self.basis, &field.basis) {
            Ok(())
        } else {
            Err(Error::BasisMismatch(
                "field and collocation grid use different bases".to_string(),
            ))
        }
    }
}

/// Pointwise values on an equispaced grid of `n_points` points (interval) or
/// `n_points` points per side (torus).
pub fn eval_on_grid(field: &SpectralField, n_points: usize) -> Result<GridValues> {
    Collocation::new(&field.basis, n_points)?.synthesize(field)
}

/// Norms of a field: `l2` by Parseval, `sup` and `l4` on the grid and
/// `h_delta` by weighted Parseval `(sum gamma_k^delta c_k^2)^(1/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l2: f64,
    pub sup: f64,
    pub l4: f64,
    pub h_delta: Vec<(f64, f64)>,
}

impl NormReport {
    pub fn h(&self, delta: f64) -> Option<f64> {
        self.h_delta
            .iter()
            .find(|(d, _)| *d == delta)
            .map(|(_, v)| *v)
    }
}

pub fn h_delta_norm(field: &SpectralField, delta: f64) -> Result<f64> {
    if !(-2.0..=2.0).contains(&delta) {
        return Err(invalid(format!(
            "H^delta norms are supported for delta in [-2, 2], got {delta}"
        )));
    }
    Ok(field
        .coeffs
        .iter()
        .zip(field.basis.eigenvalues())
        .map(|(c, g)| g.powf(delta) * c * c)
        .sum::<f64>()
        .sqrt())
}

pub fn norms(field: &SpectralField, grid: usize, deltas: &[f64]) -> Result<NormReport> {
    let colloc = Collocation::new(&field.basis, grid)?;
    let values = colloc.synthesize(field)?;
    let (sup, l4) = match &values {
        GridValues::Scalar(v) => (
            v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            (colloc.weight * v.iter().map(|x| x.powi(4)).sum::<f64>()).powf(0.25),
        ),
        GridValues::Vector(v) => (
            v.iter()
                .fold(0.0f64, |m, x| m.max((x[0] * x[0] + x[1] * x[1]).sqrt())),
            (colloc.weight
                * v.iter()
                    .map(|x| (x[0] * x[0] + x[1] * x[1]).powi(2))
                    .sum::<f64>())
            .powf(0.25),
        ),
    };
    let h_delta = deltas
        .iter()
        .map(|&d| h_delta_norm(field, d).map(|v| (d, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NormReport {
        l2: field.l2_norm(),
        sup,
        l4,
        h_delta,
    })
}
