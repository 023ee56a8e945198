//! Truncated power-series conductivities.
//!
//! Quasilinear: `gamma(x, tau, z) = 1 + sum_{j>=0, k>=1} c_jk(x) tau^j z^k / (j! k!)`.
//! Semilinear:  `gamma(x, tau)    = 1 + sum_{k>=1} c_k(x) tau^k / k!`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Quasilinear,
    Semilinear,
}

/// One stored series term. For semilinear models `z_order` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub tau_order: usize,
    pub z_order: usize,
    pub field: ScalarField,
    scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityModel {
    kind: ModelKind,
    omega: [f64; 2],
    grid: Grid2D,
    j_max: usize,
    k_max: usize,
    terms: Vec<Term>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `exp(-40 |x - (0.5, 0.5)|^2)`
pub fn bump(x: f64, y: f64) -> f64 {
    (-40.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()
}

/// Gaussian bump with given center and sharpness.
pub fn bump_at(x: f64, y: f64, center: [f64; 2], sharpness: f64) -> f64 {
    (-sharpness * ((x - center[0]).powi(2) + (y - center[1]).powi(2))).exp()
}

impl ConductivityModel {
    /// `gamma = 1` on `grid`.
    pub fn linear(grid: Grid2D, kind: ModelKind, omega: [f64; 2]) -> Result<Self> {
        let n = (omega[0] * omega[0] + omega[1] * omega[1]).sqrt();
        if kind == ModelKind::Quasilinear && (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("omega must be a unit vector, |omega| = {n}")));
        }
        Ok(Self {
            kind,
            omega,
            grid,
            j_max: 0,
            k_max: 0,
            terms: Vec::new(),
        })
    }

    pub fn quasilinear(grid: Grid2D, omega: [f64; 2]) -> Result<Self> {
        Self::linear(grid, ModelKind::Quasilinear, omega)
    }

    pub fn semilinear(grid: Grid2D) -> Result<Self> {
        Self::linear(grid, ModelKind::Semilinear, [1.0, 0.0])
    }

    /// Quasilinear model with `c_{0,1} = amplitude * bump`, omega = (1, 0).
    pub fn builtin_bump(grid: Grid2D, amplitude: f64) -> Self {
        let mut m = Self::quasilinear(grid, [1.0, 0.0]).expect("unit omega");
        m.set_term(0, 1, ScalarField::from_real_fn(grid, |x, y| amplitude * bump(x, y)))
            .expect("valid term");
        m
    }

    /// Sets the quasilinear coefficient `c_jk` (`k >= 1`), or the semilinear
    /// `c_j` when `k == 0`. Replaces an existing term of the same orders.
    pub fn set_term(&mut self, j: usize, k: usize, field: ScalarField) -> Result<()> {
        if field.grid() != &self.grid {
            return Err(Error::InvalidInput("coefficient on a different grid".into()));
        }
        match self.kind {
            ModelKind::Quasilinear if k == 0 => {
                return Err(Error::InvalidInput(
                    "quasilinear terms need z-order >= 1 (gamma(x, tau, 0) = 1)".into(),
                ))
            }
            ModelKind::Semilinear if k != 0 || j == 0 => {
                return Err(Error::InvalidInput(
                    "semilinear terms are c_j tau^j / j! with j >= 1".into(),
                ))
            }
            _ => {}
        }
        self.terms.retain(|t| !(t.tau_order == j && t.z_order == k));
        self.terms.push(Term {
            tau_order: j,
            z_order: k,
            field,
            scale: 1.0 / (factorial(j) * factorial(k)),
        });
        self.terms.sort_by_key(|t| (t.z_order, t.tau_order));
        self.j_max = self.terms.iter().map(|t| t.tau_order).max().unwrap_or(0);
        self.k_max = self.terms.iter().map(|t| t.z_order).max().unwrap_or(0);
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn omega(&self) -> [f64; 2] {
        self.omega
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Highest stored orders `(J, K)`.
    pub fn orders(&self) -> (usize, usize) {
        (self.j_max, self.k_max)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_linear(&self) -> bool {
        self.terms.iter().all(|t| t.field.max_abs() == 0.0)
    }

    pub fn term(&self, j: usize, k: usize) -> Option<&ScalarField> {
        self.terms
            .iter()
            .find(|t| t.tau_order == j && t.z_order == k)
            .map(|t| &t.field)
    }

    /// Quasilinear `d_z^k gamma(x, lambda, 0) = sum_j c_jk lambda^j / j!`;
    /// semilinear `d_tau^k gamma(x, 0) = c_k` (lambda ignored).
    pub fn taylor_coefficient(&self, k: usize, lambda: Complex64) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for t in &self.terms {
            let w = match self.kind {
                ModelKind::Quasilinear if t.z_order == k => lambda.powu(t.tau_order as u32) / factorial(t.tau_order),
                ModelKind::Semilinear if t.tau_order == k => Complex64::new(1.0, 0.0),
                _ => continue,
            };
            for (o, v) in out.values_mut().iter_mut().zip(t.field.values()) {
                *o += v * w;
            }
        }
        out
    }

    /// `(gamma, d_tau gamma, d_z gamma)` at one node.
    #[inline]
    pub fn gamma_at(&self, node: usize, tau: Complex64, z: Complex64) -> (Complex64, Complex64, Complex64) {
        let one = Complex64::new(1.0, 0.0);
        let mut g = one;
        let mut gt = Complex64::new(0.0, 0.0);
        let mut gz = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let c = t.field.values()[node] * t.scale;
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (j, k) = (t.tau_order as u32, t.z_order as u32);
            let tj = if j == 0 { one } else { tau.powu(j) };
            let zk = if k == 0 { one } else { z.powu(k) };
            g += c * tj * zk;
            if j > 0 {
                gt += c * (j as f64) * tau.powu(j - 1) * zk;
            }
            if k > 0 {
                gz += c * (k as f64) * tj * z.powu(k - 1);
            }
        }
        (g, gt, gz)
    }
}

/// Truncated series value at every node.
pub fn evaluate_gamma(model: &ConductivityModel, tau: &ScalarField, zval: &ScalarField) -> Result<ScalarField> {
    if tau.grid() != model.grid() || zval.grid() != model.grid() {
        return Err(Error::InvalidInput("fields must live on the model grid".into()));
    }
    let values = (0..model.grid().node_count())
        .map(|n| model.gamma_at(n, tau.values()[n], zval.values()[n]).0)
        .collect();
    ScalarField::from_values(*model.grid(), values)
}
