//! Grid, log-permeability field and ensemble types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, NeumaierSum};

/// Regular 2D Cartesian grid. Lengths in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub thickness: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            dx: 5.0,
            dy: 5.0,
            thickness: 10.0,
        }
    }
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, thickness: f64) -> Result<Self> {
        let g = Self {
            nx,
            ny,
            dx,
            dy,
            thickness,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n`×`n` grid with the default 5 m cells and 10 m thickness.
    pub fn square(n: usize) -> Self {
        Self {
            nx: n,
            ny: n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need nx, ny >= 2, got {}x{}",
                self.nx, self.ny
            )));
        }
        for (name, v) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("thickness", self.thickness),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index of column `i`, row `j`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Cell-center position in meters.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.thickness
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy)
    }
}

/// Log10-permeability map (log10 of millidarcy), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogPermField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl LogPermField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({}x{})", grid.len(), grid.nx, grid.ny),
                found: format!("{} values", values.len()),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at cell {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Permeability in millidarcy at flat index `k`.
    pub fn perm_md(&self, k: usize) -> f64 {
        10f64.powf(self.values[k])
    }

    /// Hard truncation into `[lo, hi]`.
    pub fn clipped(&self, lo: f64, hi: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }
}

/// Provenance label of an ensemble.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnsembleTag {
    Prior,
    Diffusion,
    Posterior(usize),
    Other(String),
}

impl std::fmt::Display for EnsembleTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnsembleTag::Prior => write!(f, "prior"),
            EnsembleTag::Diffusion => write!(f, "diffusion"),
            EnsembleTag::Posterior(i) => write!(f, "posterior-iter-{i}"),
            EnsembleTag::Other(s) => write!(f, "{s}"),
        }
    }
}

/// Ordered collection of fields sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<LogPermField>,
    pub seed: u64,
    pub tag: EnsembleTag,
}

impl Ensemble {
    pub fn new(members: Vec<LogPermField>, seed: u64, tag: EnsembleTag) -> Result<Self> {
        if let Some(first) = members.first() {
            let g = *first.grid();
            if let Some(bad) = members.iter().position(|m| *m.grid() != g) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{g:?}"),
                    found: format!("member {bad} with {:?}", members[bad].grid()),
                });
            }
        }
        Ok(Self { members, seed, tag })
    }

    /// Builds an ensemble from rows of a members×cells matrix.
    pub fn from_matrix(grid: GridSpec, m: &Matrix, seed: u64, tag: EnsembleTag) -> Result<Self> {
        let members = (0..m.rows())
            .map(|r| LogPermField::new(grid, m.row(r).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, seed, tag)
    }

    pub fn members(&self) -> &[LogPermField] {
        &self.members
    }

    pub fn into_members(self) -> Vec<LogPermField> {
        self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.members.first().map(|m| m.grid())
    }

    /// Members as rows of a dense matrix.
    pub fn to_matrix(&self) -> Matrix {
        let cols = self.members.first().map_or(0, |m| m.values().len());
        let mut out = Matrix::zeros(self.members.len(), cols);
        for (r, m) in self.members.iter().enumerate() {
            out.row_mut(r).copy_from_slice(m.values());
        }
        out
    }

    /// First `n` members.
    pub fn truncated(&self, n: usize) -> Ensemble {
        Ensemble {
            members: self.members[..n.min(self.members.len())].to_vec(),
            seed: self.seed,
            tag: self.tag.clone(),
        }
    }
}

/// Per-cell ensemble mean and the members×cells matrix of deviations from it.
#[derive(Clone, Debug)]
pub struct Anomalies {
    pub mean: Vec<f64>,
    pub deviations: Matrix,
}

/// Arithmetic per-cell mean (compensated summation) and deviations `z_j - mean`.
pub fn ensemble_mean_and_deviations(e: &Ensemble) -> Result<Anomalies> {
    if e.len() < 2 {
        return Err(Error::InsufficientEnsemble {
            found: e.len(),
            needed: 2,
        });
    }
    Ok(row_anomalies(&e.to_matrix()))
}

/// Column means and row deviations of a dense matrix (rows are samples).
pub fn row_anomalies(m: &Matrix) -> Anomalies {
    let n = m.rows();
    let mut mean = vec![0.0; m.cols()];
    for (c, mu) in mean.iter_mut().enumerate() {
        // Shift by the first row so identical rows give an exact mean.
        let shift = if n > 0 { m[(0, c)] } else { 0.0 };
        let mut s = NeumaierSum::default();
        for r in 0..n {
            s.add(m[(r, c)] - shift);
        }
        *mu = shift + s.total() / n as f64;
    }
    let mut deviations = m.clone();
    for r in 0..n {
        for (v, mu) in deviations.row_mut(r).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    Anomalies { mean, deviations }
}

/// Unbiased per-cell sample variance.
pub fn cell_variances(e: &Ensemble) -> Result<Vec<f64>> {
    let a = ensemble_mean_and_deviations(e)?;
    let n = e.len();
    let mut var = vec![0.0; a.mean.len()];
    for r in 0..n {
        for (v, d) in var.iter_mut().zip(a.deviations.row(r)) {
            *v += d * d;
        }
    }
    for v in &mut var {
        *v /= (n - 1) as f64;
    }
    Ok(var)
}
