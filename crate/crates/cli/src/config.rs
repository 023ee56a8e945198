use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use qlcond::dtn::Stencil;
use qlcond::grid::{BoundaryData, Grid2D, ScalarField};
use qlcond::io::load_model;
use qlcond::model::{bump, ConductivityModel};
use qlcond::recon::FrequencyPlan;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Dtn,
    Linearize,
    Reconstruct,
    Runge,
    CgoProbe,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Dtn => "dtn",
            Command::Linearize => "linearize",
            Command::Reconstruct => "reconstruct",
            Command::Runge => "runge",
            Command::CgoProbe => "cgo-probe",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinModel {
    /// `gamma = 1`.
    Linear,
    /// `c_{0,1} = amplitude * bump`.
    Bump { amplitude: f64 },
    /// `c_{0,1} = amplitude * bump`, `c_{0,2} = amplitude2 * bump`.
    TwoOrder { amplitude: f64, amplitude2: f64 },
    /// Semilinear `c_1 = amplitude * bump`.
    Semilinear { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    File { path: PathBuf },
    Builtin(BuiltinModel),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Builtin(BuiltinModel::Linear)
    }
}

/// Boundary data as traces of simple functions, scaled by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Xy { scale: f64 },
    X2MinusY2 { scale: f64 },
    Linear { a: f64, b: f64, scale: f64 },
    /// `cos(pi mode s / 2)` in the perimeter coordinate `s`.
    Fourier { mode: u32, scale: f64 },
    /// Random combination of the first `modes` perimeter modes, seeded.
    Random { modes: u32, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default = "default_dirs")]
    pub directions: usize,
    /// Explicit h values; overrides `h_min`, `h_max`, `n_h`.
    #[serde(default)]
    pub hs: Option<Vec<f64>>,
    #[serde(default = "default_h_min")]
    pub h_min: f64,
    #[serde(default = "default_h_max")]
    pub h_max: f64,
    #[serde(default = "default_n_h")]
    pub n_h: usize,
    /// Rotate the direction set by a seeded random angle.
    #[serde(default)]
    pub random_offset: bool,
}

fn default_dirs() -> usize {
    16
}
fn default_h_min() -> f64 {
    0.25
}
fn default_h_max() -> f64 {
    0.5
}
fn default_n_h() -> usize {
    3
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            directions: default_dirs(),
            hs: None,
            h_min: default_h_min(),
            h_max: default_h_max(),
            n_h: default_n_h(),
            random_offset: false,
        }
    }
}

impl PlanConfig {
    pub fn build(&self, seed: u64) -> FrequencyPlan {
        let mut plan = FrequencyPlan::uniform(self.directions, self.h_min, self.h_max, self.n_h);
        if let Some(hs) = &self.hs {
            plan.hs = hs.clone();
        }
        if self.random_offset && self.directions > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let off = rng.gen::<f64>() * std::f64::consts::TAU / self.directions as f64;
            for a in &mut plan.angles {
                *a += off;
            }
        }
        plan
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilConfig {
    /// Step factor: `t = factor * delta_cfg / max|f|`.
    pub factor: Option<f64>,
    pub levels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungeConfig {
    #[serde(default = "default_sources")]
    pub n_sources: usize,
    #[serde(default = "default_ps")]
    pub p: Vec<f64>,
}

fn default_sources() -> usize {
    64
}
fn default_ps() -> Vec<f64> {
    vec![2.0, 4.0]
}

impl Default for RungeConfig {
    fn default() -> Self {
        Self {
            n_sources: default_sources(),
            p: default_ps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Remainder sweep geometry constant.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_probe_hs")]
    pub hs: Vec<f64>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_distances")]
    pub distances: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Number of seeded random frequency splits to record.
    #[serde(default = "default_splits")]
    pub splits: usize,
}

fn default_c() -> f64 {
    0.2
}
fn default_probe_hs() -> Vec<f64> {
    vec![0.5, 0.35, 0.25, 0.18]
}
fn default_a() -> f64 {
    1.0
}
fn default_distances() -> Vec<f64> {
    vec![0.2, 0.3, 0.4]
}
fn default_radius() -> f64 {
    0.15
}
fn default_splits() -> usize {
    8
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            c: default_c(),
            hs: default_probe_hs(),
            a: default_a(),
            distances: default_distances(),
            radius: default_radius(),
            splits: default_splits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub lambda: [f64; 2],
    #[serde(default)]
    pub boundary: Vec<BoundarySpec>,
    /// Linearization order, or highest order for reconstruction.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub delta_cfg: Option<f64>,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub stencil: StencilConfig,
    #[serde(default)]
    pub reg_weight: Option<f64>,
    /// Fixed sign; calibrated when absent.
    #[serde(default)]
    pub sign: Option<f64>,
    #[serde(default)]
    pub runge: RungeConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: None,
            grid: None,
            seed: None,
            out: None,
            model: ModelSpec::default(),
            lambda: [0.0, 0.0],
            boundary: Vec::new(),
            m: None,
            tol: None,
            delta_cfg: None,
            plan: PlanConfig::default(),
            stencil: StencilConfig::default(),
            reg_weight: None,
            sign: None,
            runge: RungeConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

pub const DEFAULT_GRID: usize = 32;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config JSON: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn lambda(&self) -> Complex64 {
        Complex64::new(self.lambda[0], self.lambda[1])
    }

    pub fn grid_size(&self) -> usize {
        self.grid.unwrap_or(DEFAULT_GRID)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn stencil_for(&self, fs: &[BoundaryData], default_factor: f64) -> Stencil {
        let base = Stencil::scaled_for(fs, self.stencil.factor.unwrap_or(default_factor));
        Stencil {
            levels: self.stencil.levels.unwrap_or(base.levels),
            ..base
        }
    }
}

/// Resolves the model against `grid`; file paths are relative to `base`.
pub fn build_model(spec: &ModelSpec, grid: Grid2D, base: &Path) -> Result<ConductivityModel, CliError> {
    let field = |a: f64| ScalarField::from_real_fn(grid, move |x, y| a * bump(x, y));
    match spec {
        ModelSpec::File { path } => {
            let p = if path.is_absolute() { path.clone() } else { base.join(path) };
            if !p.exists() {
                return Err(CliError::Config(format!("model manifest {} not found", p.display())));
            }
            load_model(&p, grid)
                .map(|(m, _)| m)
                .map_err(|e| CliError::Config(format!("model manifest {}: {e}", p.display())))
        }
        ModelSpec::Builtin(b) => {
            let m = match b {
                BuiltinModel::Linear => ConductivityModel::quasilinear(grid, [1.0, 0.0]),
                BuiltinModel::Bump { amplitude } => Ok(ConductivityModel::builtin_bump(grid, *amplitude)),
                BuiltinModel::TwoOrder { amplitude, amplitude2 } => {
                    let mut m = ConductivityModel::builtin_bump(grid, *amplitude);
                    m.set_term(0, 2, field(*amplitude2)).map(|_| m)
                }
                BuiltinModel::Semilinear { amplitude } => {
                    ConductivityModel::semilinear(grid).and_then(|mut m| m.set_term(1, 0, field(*amplitude)).map(|_| m))
                }
            };
            m.map_err(|e| CliError::Config(format!("model: {e}")))
        }
    }
}

/// Boundary datum number `index` of the config.
pub fn build_boundary(spec: &BoundarySpec, grid: Grid2D, seed: u64, index: usize) -> BoundaryData {
    use std::f64::consts::PI;
    let along = |f: &dyn Fn(f64) -> f64| {
        let mut v = vec![Complex64::new(0.0, 0.0); grid.boundary_count()];
        for (k, n) in grid.boundary_nodes().into_iter().enumerate() {
            v[k] = Complex64::new(f(grid.perimeter_coord(n).unwrap_or(0.0)), 0.0);
        }
        BoundaryData::from_values(grid, v).expect("boundary length")
    };
    match *spec {
        BoundarySpec::Xy { scale } => BoundaryData::from_real_fn(grid, |x, y| scale * x * y),
        BoundarySpec::X2MinusY2 { scale } => BoundaryData::from_real_fn(grid, |x, y| scale * (x * x - y * y)),
        BoundarySpec::Linear { a, b, scale } => BoundaryData::from_real_fn(grid, |x, y| scale * (a * x + b * y)),
        BoundarySpec::Fourier { mode, scale } => along(&|s| scale * (PI * mode as f64 * s / 2.0).cos()),
        BoundarySpec::Random { modes, scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
            let coef: Vec<(f64, f64)> = (0..=modes).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let norm: f64 = coef.iter().map(|(a, b)| a.abs() + b.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
            along(&|s| {
                let t = PI * s / 2.0;
                scale
                    * coef
                        .iter()
                        .enumerate()
                        .map(|(k, (a, b))| a * (k as f64 * t).cos() + b * (k as f64 * t).sin())
                        .sum::<f64>()
                    / norm
            })
        }
    }
}
