use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::norm_sq;

/// `V_N = span{e_k(xi) = sqrt(2) sin(k pi xi), k = 1..N}` on (0, 1) with
/// Dirichlet eigenvalues `lambda_k = (k pi)^2`, plus the interior collocation
/// grid `xi_i = i / (M + 1)` on which the discrete sine transform is exact.
#[derive(Clone, Debug)]
pub struct SpectralSpace {
    modes: usize,
    collocation: usize,
    eigenvalues: Vec<f64>,
    grid: Vec<f64>,
    /// `e_k(xi_i)`, row-major `M x N`.
    basis: Vec<f64>,
}

impl SpectralSpace {
    /// `N` modes on the default grid `M = 4N + 1`.
    pub fn new(modes: usize) -> Result<Self> {
        Self::with_collocation(modes, 4 * modes + 1)
    }

    pub fn with_collocation(modes: usize, collocation: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::invalid("spectral space needs at least one mode"));
        }
        if collocation < 2 * modes + 1 {
            return Err(Error::invalid(format!(
                "collocation size {collocation} below 2N+1 = {}",
                2 * modes + 1
            )));
        }
        let eigenvalues = (1..=modes).map(|k| (k as f64 * PI).powi(2)).collect();
        let grid: Vec<f64> = (1..=collocation).map(|i| i as f64 / (collocation + 1) as f64).collect();
        let mut basis = Vec::with_capacity(collocation * modes);
        for xi in &grid {
            basis.extend((1..=modes).map(|k| 2f64.sqrt() * (k as f64 * PI * xi).sin()));
        }
        Ok(Self {
            modes,
            collocation,
            eigenvalues,
            grid,
            basis,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn collocation_size(&self) -> usize {
        self.collocation
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest Dirichlet eigenvalue, `pi^2`.
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn basis_value(&self, grid_index: usize, mode: usize) -> f64 {
        self.basis[grid_index * self.modes + mode]
    }

    /// Quadrature weight `1 / (M + 1)` of every interior node.
    pub fn weight(&self) -> f64 {
        1.0 / (self.collocation + 1) as f64
    }

    /// Synthesis: `values_i = sum_k coeffs_k e_k(xi_i)`.
    pub fn to_grid(&self, coeffs: &[f64], values: &mut [f64]) {
        for (i, v) in values.iter_mut().enumerate() {
            let row = &self.basis[i * self.modes..(i + 1) * self.modes];
            *v = row.iter().zip(coeffs).map(|(e, c)| e * c).sum();
        }
    }

    /// Analysis: `coeffs_k = (1 / (M + 1)) sum_i values_i e_k(xi_i)`.
    pub fn project(&self, values: &[f64], coeffs: &mut [f64]) {
        coeffs.fill(0.0);
        for (i, v) in values.iter().enumerate() {
            let row = &self.basis[i * self.modes..(i + 1) * self.modes];
            for (c, e) in coeffs.iter_mut().zip(row) {
                *c += v * e;
            }
        }
        let w = self.weight();
        coeffs.iter_mut().for_each(|c| *c *= w);
    }

    /// Discrete Gram matrix `(1 / (M + 1)) sum_i e_j(xi_i) e_k(xi_i)`.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.modes;
        let mut g = vec![0.0; n * n];
        for i in 0..self.collocation {
            let row = &self.basis[i * n..(i + 1) * n];
            for j in 0..n {
                for k in 0..n {
                    g[j * n + k] += row[j] * row[k];
                }
            }
        }
        let w = self.weight();
        g.iter_mut().for_each(|v| *v *= w);
        g
    }

    /// Projects a pointwise function of `xi` onto `V_N` through the grid.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> SpectralField {
        let values: Vec<f64> = self.grid.iter().map(|&xi| f(xi)).collect();
        let mut coeffs = vec![0.0; self.modes];
        self.project(&values, &mut coeffs);
        SpectralField::new(coeffs)
    }
}

/// Element of `V_N`, stored by its sine-basis coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(modes: usize) -> Self {
        Self::new(vec![0.0; modes])
    }

    /// The basis vector `e_k` (1-based `k`).
    pub fn basis(modes: usize, k: usize) -> Self {
        let mut f = Self::zeros(modes);
        f.coeffs[k - 1] = 1.0;
        f
    }

    /// `sum_{k in ks} sin(k pi xi)`, exactly `1/sqrt(2)` on each listed mode.
    pub fn sine_sum(modes: usize, ks: impl IntoIterator<Item = usize>) -> Self {
        let mut f = Self::zeros(modes);
        for k in ks {
            f.coeffs[k - 1] += 1.0 / 2f64.sqrt();
        }
        f
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    /// `||x||^2` in `L^2(0, 1)` (Parseval).
    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.coeffs)
    }

    /// `||grad x||^2 = sum_k lambda_k coeffs_k^2`.
    pub fn grad_norm_sq(&self, space: &SpectralSpace) -> f64 {
        self.coeffs
            .iter()
            .zip(space.eigenvalues())
            .map(|(c, l)| l * c * c)
            .sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| a * c).collect())
    }

    pub fn grid_values(&self, space: &SpectralSpace) -> Vec<f64> {
        let mut v = vec![0.0; space.collocation_size()];
        space.to_grid(&self.coeffs, &mut v);
        v
    }

    /// CSV `k,coeff`.
    pub fn coeffs_csv(&self) -> String {
        let mut s = String::from("k,coeff\n");
        for (k, c) in self.coeffs.iter().enumerate() {
            let _ = writeln!(s, "{},{c}", k + 1);
        }
        s
    }

    /// CSV `xi,u(xi)` on the collocation grid.
    pub fn values_csv(&self, space: &SpectralSpace) -> String {
        let mut s = String::from("xi,u(xi)\n");
        for (xi, u) in space.grid().iter().zip(self.grid_values(space)) {
            let _ = writeln!(s, "{xi},{u}");
        }
        s
    }
}

/// `P_N F(x)`: evaluate `x` on the grid, apply `f` pointwise, project back.
pub fn nemytskii_project(x: &SpectralField, f: impl Fn(f64) -> f64, space: &SpectralSpace) -> Result<SpectralField> {
    if x.modes() != space.modes() {
        return Err(Error::invalid(format!(
            "field has {} modes but the space has {}",
            x.modes(),
            space.modes()
        )));
    }
    let mut values = x.grid_values(space);
    values.iter_mut().for_each(|v| *v = f(*v));
    ensure_finite(&values, "reaction term on collocation grid", &x.coeffs)?;
    let mut out = vec![0.0; space.modes()];
    space.project(&values, &mut out);
    Ok(SpectralField::new(out))
}
