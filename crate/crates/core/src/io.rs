//! CSV and JSON artifacts. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{DecayFit, RemainderFit, RungeFit};
use crate::dtn::LevelLog;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::model::{ConductivityModel, ModelKind};
use crate::recon::FrequencySample;

pub const FIELD_HEADER: &str = "i,j,x,y,value_re,value_im";
pub const SAMPLES_HEADER: &str = "m,lambda_re,lambda_im,h,xi_x,xi_y,raw_re,raw_im,fourier_re,fourier_im";
pub const LINEARIZATION_HEADER: &str = "m,t,level,value_re,value_im,est_err";
pub const RUNGE_HEADER: &str = "n_sources,p,residual";
pub const REMAINDER_HEADER: &str = "h,kappa,c1_norm,shape,ratio";
pub const DECAY_HEADER: &str = "h,value_re,value_im,log_abs";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Row-major in `j` then `i`.
pub fn field_csv(field: &ScalarField) -> String {
    let g = field.grid();
    let mut s = String::from(FIELD_HEADER);
    s.push('\n');
    for j in 0..=g.ny() {
        for i in 0..=g.nx() {
            let n = g.index(i, j);
            let [x, y] = g.coords(n);
            let v = field.values()[n];
            let _ = writeln!(s, "{i},{j},{},{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(v.re), fmt_f64(v.im));
        }
    }
    s
}

fn check_header(text: &str, header: &str) -> Result<()> {
    match text.lines().next() {
        Some(h) if h.trim() == header => Ok(()),
        Some(h) => Err(Error::Parse(format!("expected header `{header}`, found `{h}`"))),
        None => Err(Error::Parse("empty CSV".into())),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse `{tok}`")))
}

/// Parses a field CSV; the grid is the one spanned by the largest `i`, `j`.
pub fn parse_field_csv(text: &str) -> Result<ScalarField> {
    check_header(text, FIELD_HEADER)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split(',').collect();
        if t.len() != 6 {
            return Err(Error::Parse(format!("line {}: expected 6 columns", ln + 1)));
        }
        let i: usize = parse_num(t[0], ln + 1)?;
        let j: usize = parse_num(t[1], ln + 1)?;
        rows.push((i, j, Complex64::new(parse_num(t[4], ln + 1)?, parse_num(t[5], ln + 1)?)));
    }
    let nx = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let ny = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let grid = Grid2D::new(nx, ny)?;
    if rows.len() != grid.node_count() {
        return Err(Error::Parse(format!("{} rows for a {nx}x{ny} grid", rows.len())));
    }
    let mut values = vec![Complex64::new(0.0, 0.0); grid.node_count()];
    let mut seen = vec![false; grid.node_count()];
    for (i, j, v) in rows {
        let n = grid.index(i, j);
        if seen[n] {
            return Err(Error::Parse(format!("duplicate node ({i}, {j})")));
        }
        seen[n] = true;
        values[n] = v;
    }
    ScalarField::from_values(grid, values)
}

pub fn samples_csv(samples: &[FrequencySample]) -> String {
    let mut s = String::from(SAMPLES_HEADER);
    s.push('\n');
    for x in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            x.m,
            fmt_f64(x.lambda.re),
            fmt_f64(x.lambda.im),
            fmt_f64(x.h),
            fmt_f64(x.xi[0]),
            fmt_f64(x.xi[1]),
            fmt_f64(x.raw_form.re),
            fmt_f64(x.raw_form.im),
            fmt_f64(x.fourier_value.re),
            fmt_f64(x.fourier_value.im)
        );
    }
    s
}

pub fn linearization_csv(logs: &[LevelLog]) -> String {
    let mut s = String::from(LINEARIZATION_HEADER);
    s.push('\n');
    for l in logs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            l.m,
            fmt_f64(l.t),
            l.level,
            fmt_f64(l.value.re),
            fmt_f64(l.value.im),
            fmt_f64(l.est_err)
        );
    }
    s
}

pub fn runge_csv(fits: &[RungeFit]) -> String {
    let mut s = String::from(RUNGE_HEADER);
    s.push('\n');
    for f in fits {
        for &(n, r) in &f.history {
            let _ = writeln!(s, "{n},{},{}", fmt_f64(f.p), fmt_f64(r));
        }
    }
    s
}

pub fn remainder_csv(fit: &RemainderFit) -> String {
    let mut s = String::from(REMAINDER_HEADER);
    s.push('\n');
    for r in &fit.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(r.h),
            fit.kappa,
            fmt_f64(r.c1_norm),
            fmt_f64(r.shape),
            fmt_f64(r.ratio)
        );
    }
    s
}

pub fn decay_csv(fit: &DecayFit) -> String {
    let mut s = String::from(DECAY_HEADER);
    s.push('\n');
    for (h, v) in fit.hs.iter().zip(&fit.values) {
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(*h), fmt_f64(v.re), fmt_f64(v.im), fmt_f64(v.norm().ln()));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    /// tau order (semilinear: series order).
    pub j: usize,
    /// z order (0 for semilinear).
    pub k: usize,
    /// Field CSV, relative to the manifest.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: ModelKind,
    pub omega: [f64; 2],
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub lambda_defaults: Vec<Complex64>,
    #[serde(default)]
    pub coefficients: Vec<CoefficientEntry>,
}

/// Writes `model.json` and one `c_{j}_{k}.csv` per stored term into `dir`.
pub fn save_model(dir: &Path, model: &ConductivityModel, lambda_defaults: &[Complex64]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut coefficients = Vec::new();
    for t in model.terms() {
        let file = format!("c_{}_{}.csv", t.tau_order, t.z_order);
        write_text(&dir.join(&file), &field_csv(&t.field))?;
        coefficients.push(CoefficientEntry {
            j: t.tau_order,
            k: t.z_order,
            file,
        });
    }
    let (j, k) = model.orders();
    let manifest = ModelManifest {
        kind: model.kind(),
        omega: model.omega(),
        j,
        k,
        lambda_defaults: lambda_defaults.to_vec(),
        coefficients,
    };
    let path = dir.join("model.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a model manifest. Coefficient fields must match `grid`; with no
/// coefficients the manifest describes `gamma = 1` on `grid`.
pub fn load_model(path: &Path, grid: Grid2D) -> Result<(ConductivityModel, ModelManifest)> {
    let manifest: ModelManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut model = ConductivityModel::linear(grid, manifest.kind, manifest.omega)?;
    for e in &manifest.coefficients {
        let text = fs::read_to_string(base.join(&e.file))?;
        let field = parse_field_csv(&text)?;
        if field.grid() != &grid {
            return Err(Error::InvalidInput(format!(
                "coefficient {} is on a {}x{} grid, expected {}x{}",
                e.file,
                field.grid().nx(),
                field.grid().ny(),
                grid.nx(),
                grid.ny()
            )));
        }
        model.set_term(e.j, e.k, field)?;
    }
    let (j, k) = model.orders();
    if !manifest.coefficients.is_empty() && (j != manifest.j || k != manifest.k) {
        return Err(Error::InvalidInput(format!(
            "manifest declares J={}, K={} but coefficients give J={j}, K={k}",
            manifest.j, manifest.k
        )));
    }
    Ok((model, manifest))
}
