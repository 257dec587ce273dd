//! Score backends, normalization statistics and the weight file format.

use std::io::{Read, Write};
use std::path::Path;

use chda_core::io::{BinReader, BinWriter};
use chda_core::{Ensemble, GridSpec};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};

const MAGIC: &[u8; 4] = b"CHSW";
const VERSION: u16 = 1;

/// Per-pixel z-scoring statistics. Pixels with zero spread are only centred.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Per-pixel mean and population standard deviation of the members.
    pub fn from_ensemble(e: &Ensemble) -> Result<Self> {
        let n = e.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let a = chda_core::field::row_anomalies(&e.to_matrix());
        let mut var = vec![0.0; a.mean.len()];
        for r in 0..n {
            for (v, d) in var.iter_mut().zip(a.deviations.row(r)) {
                *v += d * d;
            }
        }
        Ok(Self {
            mean: a.mean,
            std: var.into_iter().map(|v| (v / n as f64).sqrt()).collect(),
        })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { v - m })
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { v * s + m } else { v + m })
            .collect()
    }

    /// Scale factor of pixel `k` (1 for zero-spread pixels).
    pub fn scale(&self, k: usize) -> f64 {
        if self.std[k] > 0.0 {
            self.std[k]
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    /// Independent Gaussian pixels with the given mean and variance.
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    /// All mass at one field.
    PointMass {
        x0: Vec<f64>,
    },
    Network(Network),
}

/// A score function in normalized space plus the statistics that map
/// samples back to log-permeability.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    pub backend: Backend,
    pub stats: NormStats,
    pub grid: GridSpec,
}

impl ScoreModel {
    pub fn gaussian(grid: GridSpec, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != grid.len() || var.len() != grid.len() || var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "gaussian backend needs one mean and variance >= 0 per cell".into(),
            ));
        }
        Ok(Self {
            backend: Backend::Gaussian { mean, var },
            stats: NormStats::identity(grid.len()),
            grid,
        })
    }

    pub fn point_mass(grid: GridSpec, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != grid.len() {
            return Err(Error::InvalidArgument(
                "point mass must match the grid".into(),
            ));
        }
        Ok(Self {
            backend: Backend::PointMass { x0 },
            stats: NormStats::identity(grid.len()),
            grid,
        })
    }

    pub fn network(net: Network, stats: NormStats) -> Result<Self> {
        let s = net.spec();
        let grid = GridSpec::new(s.nx, s.ny, 1.0, 1.0, 1.0)?;
        if stats.mean.len() != grid.len() || stats.std.len() != grid.len() {
            return Err(Error::InvalidArgument(
                "normalization stats do not match the network".into(),
            ));
        }
        Ok(Self {
            backend: Backend::Network(net),
            stats,
            grid,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    /// `∇ log p_t(x)` at noise level `sigma_t`.
    pub fn score(&self, x: &[f64], t: f64, sigma_t: f64) -> Vec<f64> {
        let s2 = sigma_t * sigma_t;
        match &self.backend {
            Backend::Gaussian { mean, var } => x
                .iter()
                .zip(mean.iter().zip(var))
                .map(|(v, (m, w))| -(v - m) / (w + s2))
                .collect(),
            Backend::PointMass { x0 } => x.iter().zip(x0).map(|(v, m)| -(v - m) / s2).collect(),
            Backend::Network(net) => net.score(x, t, sigma_t),
        }
    }

    /// `Jᵀ v` with `J = I + σ_t² ∂s/∂x` the Jacobian of the Tweedie
    /// estimate `x + σ_t² s(x, t)`.
    pub fn tweedie_vjp(&self, x: &[f64], t: f64, sigma_t: f64, v: &[f64]) -> Vec<f64> {
        let s2 = sigma_t * sigma_t;
        match &self.backend {
            Backend::Gaussian { var, .. } => {
                v.iter().zip(var).map(|(g, w)| g * w / (w + s2)).collect()
            }
            Backend::PointMass { .. } => vec![0.0; v.len()],
            // x̂₀ = x + σ_t · output
            Backend::Network(net) => {
                let back = net.output_vjp(x, t, sigma_t, v);
                v.iter().zip(&back).map(|(g, b)| g + sigma_t * b).collect()
            }
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let Backend::Network(net) = &self.backend else {
            return Err(Error::InvalidArgument(
                "only network backends have weight files".into(),
            ));
        };
        let mut w = BinWriter::new(w);
        let s = net.spec();
        w.bytes(MAGIC)?;
        w.u16(VERSION)?;
        for v in [s.nx, s.ny, s.channels, s.blocks, s.embed_dim] {
            w.u32(v as u32)?;
        }
        w.u32(s.fourier_scale_milli)?;
        w.u64(s.fourier_seed)?;
        w.f64s(&self.stats.mean)?;
        w.f64s(&self.stats.std)?;
        w.u64(net.params().len() as u64)?;
        w.f64s(net.params())?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BinReader::new(r);
        r.magic(MAGIC)?;
        let v = r.u16("version")?;
        if v != VERSION {
            return Err(Error::Format(format!(
                "unsupported weight file version {v}"
            )));
        }
        let mut dims = [0usize; 5];
        for (d, name) in dims
            .iter_mut()
            .zip(["nx", "ny", "channels", "blocks", "embed_dim"])
        {
            *d = r.u32(name)? as usize;
        }
        let spec = NetworkSpec {
            nx: dims[0],
            ny: dims[1],
            channels: dims[2],
            blocks: dims[3],
            embed_dim: dims[4],
            fourier_scale_milli: r.u32("fourier scale")?,
            fourier_seed: r.u64("fourier seed")?,
        };
        spec.validate()?;
        let n = spec.n_pixels();
        let stats = NormStats {
            mean: r.f64s(n)?,
            std: r.f64s(n)?,
        };
        let count = r.u64("weight count")? as usize;
        if count != spec.n_params() {
            return Err(Error::Format(format!(
                "weight count {count} does not match the descriptor ({})",
                spec.n_params()
            )));
        }
        let params = r.f64s(count)?;
        if !r.at_end()? {
            return Err(Error::Format("trailing bytes after weights".into()));
        }
        Self::network(Network::from_params(spec, params)?, stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
