//! Taper matrices for localized ensemble updates: distance-based
//! Gaspari-Cohn, pseudo-optimal from sample covariances, and the same taper
//! estimated from a large proxy-evaluated super-ensemble.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_field, ChannelPrior};
use crate::error::{Error, Result};
use crate::field::{Ensemble, EnsembleTag, GridSpec, LogPermField};
use crate::io::save_ensemble;
use crate::linalg::Matrix;
use crate::proxy::{Predictor, ProxyConfig, ProxyKind, ProxyModel};
use crate::rng::RngStream;

/// Members per accumulation partition. Partitions are merged in index order,
/// so results do not depend on the thread count.
pub const PARTITION: usize = 64;

/// Default threshold on the absolute correlation below which entries are zeroed.
pub const DEFAULT_ETA: f64 = 1e-3;

/// Fifth-order compactly supported correlation function; `c` is the
/// half-support, so the weight vanishes for `r >= 2c`.
pub fn gaspari_cohn(r: f64, c: f64) -> f64 {
    let z = r.abs() / c;
    if z <= 1.0 {
        (((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0
    } else if z < 2.0 {
        ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LocalizationMethod {
    None,
    GaspariCohn,
    PseudoOptimal,
    Ml(ProxyKind),
}

impl LocalizationMethod {
    pub const ALL: [LocalizationMethod; 6] = [
        LocalizationMethod::None,
        LocalizationMethod::GaspariCohn,
        LocalizationMethod::PseudoOptimal,
        LocalizationMethod::Ml(ProxyKind::Linear),
        LocalizationMethod::Ml(ProxyKind::RandomForest),
        LocalizationMethod::Ml(ProxyKind::GradientBoosting),
    ];

    pub fn name(&self) -> String {
        match self {
            LocalizationMethod::None => "none".into(),
            LocalizationMethod::GaspariCohn => "gc".into(),
            LocalizationMethod::PseudoOptimal => "po".into(),
            LocalizationMethod::Ml(k) => format!("ml-{}", k.short_name()),
        }
    }
}

impl fmt::Display for LocalizationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for LocalizationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LocalizationMethod::None),
            "gc" | "gaspari-cohn" => Ok(LocalizationMethod::GaspariCohn),
            "po" | "pseudo-optimal" => Ok(LocalizationMethod::PseudoOptimal),
            _ => match s.strip_prefix("ml-") {
                Some(k) => Ok(LocalizationMethod::Ml(k.parse()?)),
                None => Err(Error::InvalidArgument(format!(
                    "unknown localization method '{s}'"
                ))),
            },
        }
    }
}

impl Serialize for LocalizationMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for LocalizationMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaperProvenance {
    pub n_e: Option<usize>,
    pub n_s: Option<usize>,
    pub proxy: Option<ProxyKind>,
    pub eta: Option<f64>,
}

/// `N_z x N_d` taper with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationMatrix {
    entries: Matrix,
    method: LocalizationMethod,
    provenance: TaperProvenance,
}

impl LocalizationMatrix {
    pub fn new(
        entries: Matrix,
        method: LocalizationMethod,
        provenance: TaperProvenance,
    ) -> Result<Self> {
        if let Some(v) = entries
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "taper entry {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            entries,
            method,
            provenance,
        })
    }

    pub fn ones(n_z: usize, n_d: usize) -> Self {
        Self {
            entries: Matrix::from_vec(n_z, n_d, vec![1.0; n_z * n_d]).expect("shape"),
            method: LocalizationMethod::None,
            provenance: TaperProvenance {
                n_e: None,
                n_s: None,
                proxy: None,
                eta: None,
            },
        }
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn method(&self) -> LocalizationMethod {
        self.method
    }

    pub fn provenance(&self) -> &TaperProvenance {
        &self.provenance
    }

    pub fn n_params(&self) -> usize {
        self.entries.rows()
    }

    pub fn n_data(&self) -> usize {
        self.entries.cols()
    }

    /// One map per datum, stored as an ensemble of grid-shaped records.
    pub fn to_grid_stack(&self, grid: &GridSpec) -> Result<Ensemble> {
        if grid.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} cells", self.n_params()),
                found: format!("{}", grid.len()),
            });
        }
        Ensemble::from_matrix(
            *grid,
            &self.entries.transpose(),
            0,
            EnsembleTag::Other(format!("taper-{}", self.method)),
        )
    }

    pub fn save_grid_stack(&self, grid: &GridSpec, path: &Path) -> Result<()> {
        save_ensemble(path, &self.to_grid_stack(grid)?)
    }

    /// Per-datum `max` and `mean` entry; data are time-major over `n_wells`.
    pub fn summary_csv(&self, n_wells: usize) -> String {
        let mut s = String::from("datum,report,well,max,mean\n");
        let t = self.entries.transpose();
        for j in 0..t.rows() {
            let col = t.row(j);
            let max = col.iter().copied().fold(0.0, f64::max);
            let mean = col.iter().sum::<f64>() / col.len().max(1) as f64;
            s.push_str(&format!(
                "{j},{},{},{max:.8},{mean:.8}\n",
                j / n_wells,
                j % n_wells
            ));
        }
        s
    }
}

/// Distance taper between each cell and the well of each datum. Data are
/// time-major, so datum `j` belongs to `wells[j % wells.len()]`; `c` is in metres.
pub fn gc_matrix(
    grid: &GridSpec,
    wells: &[usize],
    n_data: usize,
    c: f64,
) -> Result<LocalizationMatrix> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(
            "Gaspari-Cohn half-support must be positive".into(),
        ));
    }
    if wells.is_empty() || !n_data.is_multiple_of(wells.len()) {
        return Err(Error::InvalidArgument(format!(
            "{n_data} data cannot be split over {} wells",
            wells.len()
        )));
    }
    let centers: Vec<(f64, f64)> = wells
        .iter()
        .map(|&w| {
            let (i, j) = grid.coords(w);
            grid.center(i, j)
        })
        .collect();
    let mut m = Matrix::zeros(grid.len(), n_data);
    for cell in 0..grid.len() {
        let (i, j) = grid.coords(cell);
        let (x, y) = grid.center(i, j);
        let per_well: Vec<f64> = centers
            .iter()
            .map(|&(wx, wy)| gaspari_cohn((x - wx).hypot(y - wy), c))
            .collect();
        for (d, v) in m.row_mut(cell).iter_mut().enumerate() {
            *v = per_well[d % wells.len()].clamp(0.0, 1.0);
        }
    }
    LocalizationMatrix::new(
        m,
        LocalizationMethod::GaspariCohn,
        TaperProvenance {
            n_e: None,
            n_s: None,
            proxy: None,
            eta: None,
        },
    )
}

/// Sample cross-covariance between parameters and data plus both variances.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariancePair {
    pub c_zd: Matrix,
    pub var_z: Vec<f64>,
    pub var_d: Vec<f64>,
    pub n_samples: usize,
}

/// Single-pass moments of `(z, d)` pairs (Welford updates, Chan merges).
#[derive(Clone, Debug)]
pub struct CovarianceAccumulator {
    n: usize,
    mean_z: Vec<f64>,
    mean_d: Vec<f64>,
    m2_z: Vec<f64>,
    m2_d: Vec<f64>,
    /// `N_z x N_d` co-moment sums.
    c: Vec<f64>,
}

impl CovarianceAccumulator {
    pub fn new(n_z: usize, n_d: usize) -> Self {
        Self {
            n: 0,
            mean_z: vec![0.0; n_z],
            mean_d: vec![0.0; n_d],
            m2_z: vec![0.0; n_z],
            m2_d: vec![0.0; n_d],
            c: vec![0.0; n_z * n_d],
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, z: &[f64], d: &[f64]) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        // Old z deviations times new d deviations gives the exact co-moment update.
        let mut dz = vec![0.0; z.len()];
        for (k, (&x, m)) in z.iter().zip(self.mean_z.iter_mut()).enumerate() {
            let delta = x - *m;
            *m += delta * inv;
            self.m2_z[k] += delta * (x - *m);
            dz[k] = delta;
        }
        let mut dd_new = vec![0.0; d.len()];
        for (k, (&y, m)) in d.iter().zip(self.mean_d.iter_mut()).enumerate() {
            let delta = y - *m;
            *m += delta * inv;
            dd_new[k] = y - *m;
            self.m2_d[k] += delta * dd_new[k];
        }
        let nd = d.len();
        for (row, &a) in self.c.chunks_exact_mut(nd).zip(&dz) {
            if a != 0.0 {
                for (cv, &b) in row.iter_mut().zip(&dd_new) {
                    *cv += a * b;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let f = na * nb / n;
        let dz: Vec<f64> = other
            .mean_z
            .iter()
            .zip(&self.mean_z)
            .map(|(b, a)| b - a)
            .collect();
        let dd: Vec<f64> = other
            .mean_d
            .iter()
            .zip(&self.mean_d)
            .map(|(b, a)| b - a)
            .collect();
        let nd = dd.len();
        for ((row, orow), &a) in self
            .c
            .chunks_exact_mut(nd)
            .zip(other.c.chunks_exact(nd))
            .zip(&dz)
        {
            for ((cv, &ov), &b) in row.iter_mut().zip(orow).zip(&dd) {
                *cv += ov + f * a * b;
            }
        }
        for k in 0..dz.len() {
            self.m2_z[k] += other.m2_z[k] + f * dz[k] * dz[k];
            self.mean_z[k] += dz[k] * nb / n;
        }
        for k in 0..nd {
            self.m2_d[k] += other.m2_d[k] + f * dd[k] * dd[k];
            self.mean_d[k] += dd[k] * nb / n;
        }
        self.n += other.n;
    }

    /// Covariances with `1/(n-1)` normalization.
    pub fn finish(&self) -> Result<CovariancePair> {
        if self.n < 2 {
            return Err(Error::InsufficientEnsemble {
                found: self.n,
                needed: 2,
            });
        }
        let s = 1.0 / (self.n - 1) as f64;
        Ok(CovariancePair {
            c_zd: Matrix::from_vec(
                self.mean_z.len(),
                self.mean_d.len(),
                self.c.iter().map(|v| v * s).collect(),
            )?,
            var_z: self.m2_z.iter().map(|v| (v * s).max(0.0)).collect(),
            var_d: self.m2_d.iter().map(|v| (v * s).max(0.0)).collect(),
            n_samples: self.n,
        })
    }
}

fn accumulate_partitions<F>(n: usize, n_z: usize, n_d: usize, fill: F) -> Result<CovariancePair>
where
    F: Fn(usize, usize, &mut CovarianceAccumulator) -> Result<()> + Sync,
{
    let parts: Vec<Result<CovarianceAccumulator>> = (0..n.div_ceil(PARTITION))
        .into_par_iter()
        .map(|p| {
            let mut acc = CovarianceAccumulator::new(n_z, n_d);
            let start = p * PARTITION;
            fill(start, PARTITION.min(n - start), &mut acc)?;
            Ok(acc)
        })
        .collect();
    let mut total = CovarianceAccumulator::new(n_z, n_d);
    for part in parts {
        total.merge(&part?);
    }
    total.finish()
}

/// Sample covariances of the rows of `z` (members x cells) and `d` (members x data).
pub fn sample_covariance(z: &Matrix, d: &Matrix) -> Result<CovariancePair> {
    if z.rows() != d.rows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} data rows", z.rows()),
            found: format!("{}", d.rows()),
        });
    }
    accumulate_partitions(z.rows(), z.cols(), d.cols(), |start, count, acc| {
        for r in start..start + count {
            acc.push(z.row(r), d.row(r));
        }
        Ok(())
    })
}

/// Covariances of `(z, f(z))` over a materialized super-ensemble.
pub fn ml_enhanced_covariance(
    super_ensemble: &Ensemble,
    proxy: &dyn Predictor,
) -> Result<CovariancePair> {
    let members = super_ensemble.members();
    let n_z = check_proxy_shape(super_ensemble.grid(), proxy)?;
    accumulate_partitions(
        members.len(),
        n_z,
        proxy.n_outputs(),
        |start, count, acc| {
            for m in &members[start..start + count] {
                acc.push(m.values(), &proxy.predict_values(m.values()));
            }
            Ok(())
        },
    )
}

/// Produces super-ensemble members in fixed-size partitions without
/// materializing the full set. Partition `p` must depend only on `(rng, p)`.
pub trait FieldSampler: Sync {
    fn grid(&self) -> GridSpec;
    fn sample_partition(
        &self,
        partition: usize,
        count: usize,
        rng: &RngStream,
    ) -> Result<Vec<Vec<f64>>>;
}

/// Draws fresh realizations from the channel prior.
#[derive(Clone, Debug)]
pub struct GeostatSampler {
    pub grid: GridSpec,
    pub prior: ChannelPrior,
}

impl FieldSampler for GeostatSampler {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn sample_partition(
        &self,
        partition: usize,
        count: usize,
        rng: &RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        (0..count)
            .map(|k| {
                let mut r = rng.fork_indexed("member", (partition * PARTITION + k) as u64);
                let params = self.prior.sample(&mut r);
                Ok(generate_field(&params, &self.grid, &mut r)?.into_values())
            })
            .collect()
    }
}

/// Streams `n_s` sampled fields through the proxy and accumulates covariances.
pub fn ml_enhanced_covariance_streamed(
    sampler: &dyn FieldSampler,
    n_s: usize,
    proxy: &dyn Predictor,
    rng: &RngStream,
) -> Result<CovariancePair> {
    let grid = sampler.grid();
    let n_z = check_proxy_shape(Some(&grid), proxy)?;
    accumulate_partitions(n_s, n_z, proxy.n_outputs(), |start, count, acc| {
        let fields = sampler.sample_partition(
            start / PARTITION,
            count,
            &rng.fork_indexed("partition", (start / PARTITION) as u64),
        )?;
        for z in &fields {
            acc.push(z, &proxy.predict_values(z));
        }
        Ok(())
    })
}

fn check_proxy_shape(grid: Option<&GridSpec>, proxy: &dyn Predictor) -> Result<usize> {
    let n_z = grid.map_or(0, GridSpec::len);
    if n_z != proxy.n_features() {
        return Err(Error::DimensionMismatch {
            expected: format!("proxy with {n_z} inputs"),
            found: format!("{}", proxy.n_features()),
        });
    }
    Ok(n_z)
}

/// Taper `c² / (c² + (c² + c_ii c_jj) / N_e)`, zeroed where
/// `|c| < η sqrt(c_ii c_jj)`.
pub fn pseudo_optimal_entry(c: f64, var_z: f64, var_d: f64, n_e: usize, eta: f64) -> f64 {
    let vv = var_z * var_d;
    if c == 0.0 || vv <= 0.0 || c.abs() < eta * vv.sqrt() {
        return 0.0;
    }
    let c2 = c * c;
    (c2 / (c2 + (c2 + vv) / n_e as f64)).clamp(0.0, 1.0)
}

pub fn pseudo_optimal_taper(
    cov: &CovariancePair,
    n_e: usize,
    eta: f64,
) -> Result<LocalizationMatrix> {
    if n_e < 2 {
        return Err(Error::InsufficientEnsemble {
            found: n_e,
            needed: 2,
        });
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(
            "threshold must be non-negative".into(),
        ));
    }
    let n_d = cov.var_d.len();
    let mut m = cov.c_zd.clone();
    for (i, row) in m.as_mut_slice().chunks_exact_mut(n_d).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = pseudo_optimal_entry(*v, cov.var_z[i], cov.var_d[j], n_e, eta);
        }
    }
    LocalizationMatrix::new(
        m,
        LocalizationMethod::PseudoOptimal,
        TaperProvenance {
            n_e: Some(n_e),
            n_s: Some(cov.n_samples),
            proxy: None,
            eta: Some(eta),
        },
    )
}

/// Pseudo-optimal taper from the working ensemble itself.
pub fn plain_pseudo_optimal(z: &Matrix, d: &Matrix, eta: f64) -> Result<LocalizationMatrix> {
    pseudo_optimal_taper(&sample_covariance(z, d)?, z.rows(), eta)
}

/// Proxy-enhanced taper: fit on the working pairs, evaluate the proxy on
/// `n_s` sampled fields, and apply the pseudo-optimal formula with the
/// working ensemble size.
#[allow(clippy::too_many_arguments)]
pub fn ml_localization(
    z: &Matrix,
    d: &Matrix,
    kind: ProxyKind,
    proxy_cfg: &ProxyConfig,
    sampler: &dyn FieldSampler,
    n_s: usize,
    eta: f64,
    rng: &RngStream,
) -> Result<(LocalizationMatrix, ProxyModel)> {
    if n_s < z.rows() {
        return Err(Error::InvalidArgument(format!(
            "super-ensemble size {n_s} is smaller than the working ensemble ({})",
            z.rows()
        )));
    }
    let proxy = ProxyModel::fit(kind, proxy_cfg, z, d, &rng.fork("proxy"))?;
    let cov = ml_enhanced_covariance_streamed(sampler, n_s, &proxy, &rng.fork("super"))?;
    let taper = ml_taper(&cov, z.rows(), eta, kind)?;
    Ok((taper, proxy))
}

/// Pseudo-optimal taper from proxy covariances, tagged with the proxy kind.
pub fn ml_taper(
    cov: &CovariancePair,
    n_e: usize,
    eta: f64,
    kind: ProxyKind,
) -> Result<LocalizationMatrix> {
    let mut t = pseudo_optimal_taper(cov, n_e, eta)?;
    t.method = LocalizationMethod::Ml(kind);
    t.provenance.proxy = Some(kind);
    Ok(t)
}

/// Builds an ensemble of `n` sampled fields (for inspection or reuse).
pub fn sample_ensemble(sampler: &dyn FieldSampler, n: usize, rng: &RngStream) -> Result<Ensemble> {
    let grid = sampler.grid();
    let parts: Vec<Result<Vec<Vec<f64>>>> = (0..n.div_ceil(PARTITION))
        .into_par_iter()
        .map(|p| {
            sampler.sample_partition(
                p,
                PARTITION.min(n - p * PARTITION),
                &rng.fork_indexed("partition", p as u64),
            )
        })
        .collect();
    let mut members = Vec::with_capacity(n);
    for part in parts {
        for v in part? {
            members.push(LogPermField::new(grid, v)?);
        }
    }
    Ensemble::new(members, rng.seed(), EnsembleTag::Diffusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gc_reference_points() {
        assert_eq!(gaspari_cohn(0.0, 3.0), 1.0);
        assert!((gaspari_cohn(3.0, 3.0) - 5.0 / 24.0).abs() < 1e-12);
        assert_eq!(gaspari_cohn(6.0, 3.0), 0.0);
        assert_eq!(gaspari_cohn(100.0, 3.0), 0.0);
        // Continuous near the support edge and monotone decreasing.
        assert!(gaspari_cohn(5.999_999, 3.0) < 1e-12);
        let mut prev = 1.0;
        for k in 1..=60 {
            let w = gaspari_cohn(k as f64 * 0.1, 3.0);
            assert!(w <= prev && w >= 0.0);
            prev = w;
        }
    }

    #[test]
    fn pseudo_optimal_reference_values() {
        assert!((pseudo_optimal_entry(1.0, 1.0, 1.0, 50, 1e-3) - 25.0 / 26.0).abs() < 1e-12);
        assert_eq!(pseudo_optimal_entry(0.0, 1.0, 1.0, 50, 1e-3), 0.0);
        assert_eq!(pseudo_optimal_entry(0.5, 0.0, 1.0, 50, 1e-3), 0.0);
        assert!(pseudo_optimal_entry(0.3, 1.0, 1.0, 1_000_000_000, 1e-3) > 1.0 - 1e-6);
        assert_eq!(pseudo_optimal_entry(0.99, 1.0, 1.0, 50, 1.0), 0.0);
    }

    #[test]
    fn gc_matrix_properties() {
        let grid = GridSpec::square(21);
        let well = grid.index(10, 10);
        let t = gc_matrix(&grid, &[well], 3, 25.0).unwrap();
        assert_eq!(t.entries()[(well, 0)], 1.0);
        assert_eq!(t.entries()[(grid.index(0, 0), 2)], 0.0);
        // Radial symmetry.
        let a = t.entries()[(grid.index(13, 10), 0)];
        for (i, j) in [(7, 10), (10, 13), (10, 7)] {
            assert_eq!(t.entries()[(grid.index(i, j), 0)], a);
        }
        assert!(gc_matrix(&grid, &[well, well], 3, 25.0).is_err());
    }

    fn random_pairs(n: usize, n_z: usize, n_d: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = RngStream::new(seed);
        let mut z = Matrix::zeros(n, n_z);
        rng.fill_normal(z.as_mut_slice());
        let mut d = Matrix::zeros(n, n_d);
        for r in 0..n {
            for c in 0..n_d {
                d[(r, c)] = 100.0 + z[(r, c % n_z)] * 3.0 + rng.normal();
            }
        }
        (z, d)
    }

    #[test]
    fn streaming_matches_two_pass() {
        let (z, d) = random_pairs(500, 7, 5, 1);
        let cov = sample_covariance(&z, &d).unwrap();
        let n = 500.0;
        for i in 0..7 {
            let mz = (0..500).map(|r| z[(r, i)]).sum::<f64>() / n;
            for j in 0..5 {
                let md = (0..500).map(|r| d[(r, j)]).sum::<f64>() / n;
                let c = (0..500)
                    .map(|r| (z[(r, i)] - mz) * (d[(r, j)] - md))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!((cov.c_zd[(i, j)] - c).abs() <= 1e-9 * c.abs().max(1e-3));
                let vd = (0..500).map(|r| (d[(r, j)] - md).powi(2)).sum::<f64>() / (n - 1.0);
                assert!((cov.var_d[j] - vd).abs() <= 1e-9 * vd);
            }
            let vz = (0..500).map(|r| (z[(r, i)] - mz).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((cov.var_z[i] - vz).abs() <= 1e-9 * vz);
        }
    }

    struct Constant(usize);

    impl Predictor for Constant {
        fn n_features(&self) -> usize {
            self.0
        }
        fn n_outputs(&self) -> usize {
            2
        }
        fn predict_values(&self, _: &[f64]) -> Vec<f64> {
            vec![3.0, -1.0]
        }
    }

    #[test]
    fn constant_proxy_gives_zero_covariance() {
        let grid = GridSpec::square(4);
        let sampler = GeostatSampler {
            grid,
            prior: ChannelPrior::default(),
        };
        let cov = ml_enhanced_covariance_streamed(&sampler, 100, &Constant(16), &RngStream::new(3))
            .unwrap();
        assert!(cov.c_zd.as_slice().iter().all(|&v| v == 0.0));
        let t = pseudo_optimal_taper(&cov, 50, DEFAULT_ETA).unwrap();
        assert!(t.entries().as_slice().iter().all(|&v| v == 0.0));
        assert!(
            ml_enhanced_covariance_streamed(&sampler, 100, &Constant(15), &RngStream::new(3))
                .is_err()
        );
    }

    #[test]
    fn taper_is_scale_invariant() {
        let (z, d) = random_pairs(60, 6, 4, 2);
        let t1 = plain_pseudo_optimal(&z, &d, DEFAULT_ETA).unwrap();
        let mut z2 = z.clone();
        z2.as_mut_slice().iter_mut().for_each(|v| *v *= 7.5);
        let mut d2 = d.clone();
        d2.as_mut_slice().iter_mut().for_each(|v| *v *= 0.01);
        let t2 = plain_pseudo_optimal(&z2, &d2, DEFAULT_ETA).unwrap();
        for (a, b) in t1.entries().as_slice().iter().zip(t2.entries().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in LocalizationMethod::ALL {
            assert_eq!(m.name().parse::<LocalizationMethod>().unwrap(), m);
        }
        assert!("ml-svm".parse::<LocalizationMethod>().is_err());
    }

    #[test]
    fn grid_stack_and_summary() {
        let grid = GridSpec::square(5);
        let t = gc_matrix(&grid, &[0, 4, 20, 24], 8, 10.0).unwrap();
        let stack = t.to_grid_stack(&grid).unwrap();
        assert_eq!(stack.len(), 8);
        assert_eq!(
            stack.members()[5].values(),
            t.entries().column(5).as_slice()
        );
        assert_eq!(t.summary_csv(4).lines().count(), 9);
    }

    #[test]
    fn sampler_partitions_are_deterministic() {
        let sampler = GeostatSampler {
            grid: GridSpec::square(8),
            prior: ChannelPrior::default(),
        };
        let rng = RngStream::new(9);
        let a = sample_ensemble(&sampler, 130, &rng).unwrap();
        let b = sample_ensemble(&sampler, 70, &rng).unwrap();
        assert_eq!(a.members()[..70], b.members()[..]);
    }
}
