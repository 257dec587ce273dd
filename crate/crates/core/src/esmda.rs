//! Ensemble smoother with multiple data assimilation.

use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{row_anomalies, Ensemble, EnsembleTag, GridSpec, LogPermField};
use crate::flow::{FlowSimulator, ObservationSet};
use crate::linalg::{spd_solve, Matrix};
use crate::localization::{
    gc_matrix, ml_enhanced_covariance, ml_enhanced_covariance_streamed, ml_taper,
    plain_pseudo_optimal, sample_ensemble, FieldSampler, LocalizationMatrix, LocalizationMethod,
    DEFAULT_ETA,
};
use crate::proxy::{ProxyConfig, ProxyModel, ValidationReport};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsmdaConfig {
    /// Inflation factors, one per assimilation; their reciprocals sum to one.
    pub alphas: Vec<f64>,
    /// Hard bounds on log10 permeability after each update.
    pub bounds: [f64; 2],
    pub localization: LocalizationMethod,
    /// Gaspari-Cohn half-support in metres.
    pub gc_half_support_m: f64,
    pub eta: f64,
    /// Super-ensemble size for proxy-based tapers.
    pub n_super: usize,
    /// Draw a new super-ensemble every iteration instead of reusing one.
    pub regenerate_super: bool,
    pub proxy: ProxyConfig,
}

impl Default for EsmdaConfig {
    fn default() -> Self {
        Self {
            alphas: vec![4.0; 4],
            bounds: [1.0, 4.0],
            localization: LocalizationMethod::None,
            gc_half_support_m: 50.0,
            eta: DEFAULT_ETA,
            n_super: 5000,
            regenerate_super: false,
            proxy: ProxyConfig::default(),
        }
    }
}

impl EsmdaConfig {
    pub fn n_assimilations(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one assimilation is required".into(),
            ));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 1.0 && a.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "inflation factor {a} must be >= 1"
            )));
        }
        let s: f64 = self.alphas.iter().map(|a| 1.0 / a).sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "inflation reciprocals sum to {s}, not 1"
            )));
        }
        if !(self.bounds[0] < self.bounds[1]) {
            return Err(Error::InvalidArgument(
                "lower bound must be below upper bound".into(),
            ));
        }
        if !(self.gc_half_support_m > 0.0) || !(self.eta >= 0.0) {
            return Err(Error::InvalidArgument(
                "half-support must be positive and eta non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the assimilation log. Iteration 0 describes the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct AssimilationRecord {
    pub iteration: usize,
    pub prior_tag: EnsembleTag,
    pub posterior_tag: EnsembleTag,
    pub rmse: f64,
    pub nv: f64,
    pub method: LocalizationMethod,
    pub n_e: usize,
    pub n_s: Option<usize>,
    pub proxy_rmse: Option<f64>,
    pub simulate_seconds: f64,
    pub taper_seconds: f64,
    pub update_seconds: f64,
}

impl AssimilationRecord {
    pub const CSV_HEADER: &'static str = "iter,rmse,nv,method,Ne,Ns";

    /// Deterministic CSV row (no timings).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.10e},{:.10e},{},{},{}",
            self.iteration,
            self.rmse,
            self.nv,
            self.method,
            self.n_e,
            self.n_s.map_or(String::new(), |n| n.to_string())
        )
    }

    pub fn seconds(&self) -> f64 {
        self.simulate_seconds + self.taper_seconds + self.update_seconds
    }
}

/// Maps a parameter vector to predicted data.
pub trait ForwardModel: Sync {
    fn n_data(&self) -> usize;
    fn forward(&self, z: &[f64]) -> Result<Vec<f64>>;
}

impl ForwardModel for FlowSimulator {
    fn n_data(&self) -> usize {
        FlowSimulator::n_data(self)
    }

    fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let field = LogPermField::new(*self.grid(), z.to_vec())?;
        Ok(self.simulate(&field)?.values)
    }
}

/// Runs the forward model on every row in parallel; failures name the member.
pub fn simulate_ensemble(forward: &dyn ForwardModel, z: &Matrix) -> Result<Matrix> {
    let rows: Vec<Result<Vec<f64>>> = (0..z.rows())
        .into_par_iter()
        .map(|r| forward.forward(z.row(r)))
        .collect();
    let mut data = Vec::with_capacity(z.rows() * forward.n_data());
    for (member, row) in rows.into_iter().enumerate() {
        let row = row.map_err(|e| Error::MemberSimulation {
            member,
            source: Box::new(e),
        })?;
        data.extend_from_slice(&row);
    }
    Matrix::from_vec(z.rows(), forward.n_data(), data)
}

/// One analysis step:
/// `z_j += (L ∘ C_zD (C_DD + α C_D)⁻¹)(d_obs + √α ε_j − d_j)`, then clipping.
/// Member `j` draws its perturbation from `rng.fork_indexed("member", j)`.
pub fn esmda_update(
    z: &Matrix,
    d: &Matrix,
    obs: &ObservationSet,
    alpha: f64,
    taper: Option<&LocalizationMatrix>,
    bounds: Option<[f64; 2]>,
    rng: &RngStream,
) -> Result<Matrix> {
    let (n_e, n_z, n_d) = (z.rows(), z.cols(), d.cols());
    if d.rows() != n_e || obs.len() != n_d || obs.sigma.len() != n_d {
        return Err(Error::DimensionMismatch {
            expected: format!("{n_e} forecast rows with {} data", obs.len()),
            found: format!("{}x{}", d.rows(), n_d),
        });
    }
    if n_e < 2 {
        return Err(Error::InsufficientEnsemble {
            found: n_e,
            needed: 2,
        });
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inflation factor {alpha} must be >= 1"
        )));
    }
    if let Some(t) = taper {
        if t.n_params() != n_z || t.n_data() != n_d {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_z}x{n_d} taper"),
                found: format!("{}x{}", t.n_params(), t.n_data()),
            });
        }
    }
    let za = row_anomalies(z).deviations;
    let da = row_anomalies(d).deviations;
    let scale = 1.0 / (n_e - 1) as f64;

    // C_DD + α C_D
    let dat = da.transpose();
    let mut a = Matrix::zeros(n_d, n_d);
    for p in 0..n_d {
        for q in p..n_d {
            let v = dot(dat.row(p), dat.row(q)) * scale;
            a[(p, q)] = v;
            a[(q, p)] = v;
        }
        a[(p, p)] += alpha * obs.sigma[p] * obs.sigma[p];
    }
    // G = (C_DD + α C_D)⁻¹ ΔDᵀ, then K = C_zD (C_DD + α C_D)⁻¹ = ΔZᵀ Gᵀ / (N−1).
    let g = spd_solve(&a, &dat)
        .map_err(|e| Error::Singular(format!("C_DD + alpha*C_D could not be factorized: {e}")))?;
    let mut k = Matrix::zeros(n_z, n_d);
    for m in 0..n_e {
        let zr = za.row(m);
        let gm: Vec<f64> = (0..n_d).map(|p| g[(p, m)] * scale).collect();
        for (i, &zv) in zr.iter().enumerate() {
            if zv != 0.0 {
                for (kv, &gv) in k.row_mut(i).iter_mut().zip(&gm) {
                    *kv += zv * gv;
                }
            }
        }
    }
    if let Some(t) = taper {
        for (kv, lv) in k.as_mut_slice().iter_mut().zip(t.entries().as_slice()) {
            *kv *= lv;
        }
    }
    let sa = alpha.sqrt();
    let innovations: Vec<Vec<f64>> = (0..n_e)
        .map(|j| {
            let mut r = rng.fork_indexed("member", j as u64);
            (0..n_d)
                .map(|p| obs.values[p] + sa * obs.sigma[p] * r.normal() - d[(j, p)])
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n_e)
        .into_par_iter()
        .map(|j| {
            let e = &innovations[j];
            let mut out = z.row(j).to_vec();
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(k.row(i), e);
                if let Some([lo, hi]) = bounds {
                    *o = o.clamp(lo, hi);
                }
            }
            out
        })
        .collect();
    Matrix::from_vec(n_e, n_z, rows.concat())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ratio of summed per-column sample variances, `tr(C_post)/tr(C_prior)`.
pub fn normalized_variance_matrix(prior: &Matrix, post: &Matrix) -> Result<f64> {
    if prior.cols() != post.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} columns", prior.cols()),
            found: format!("{}", post.cols()),
        });
    }
    for m in [prior, post] {
        if m.rows() < 2 {
            return Err(Error::InsufficientEnsemble {
                found: m.rows(),
                needed: 2,
            });
        }
    }
    let trace = |m: &Matrix| {
        let a = row_anomalies(m).deviations;
        a.as_slice().iter().map(|v| v * v).sum::<f64>() / (m.rows() - 1) as f64
    };
    let tp = trace(prior);
    if tp <= 0.0 {
        return Err(Error::ZeroPriorVariance);
    }
    Ok(trace(post) / tp)
}

pub fn normalized_variance(prior: &Ensemble, post: &Ensemble) -> Result<f64> {
    if prior.grid() != post.grid() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", prior.grid()),
            found: format!("{:?}", post.grid()),
        });
    }
    normalized_variance_matrix(&prior.to_matrix(), &post.to_matrix())
}

/// Root-mean-square of `d − d_obs` over all members and data.
pub fn data_rmse(d: &Matrix, obs: &ObservationSet) -> Result<f64> {
    if d.cols() != obs.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} data", obs.len()),
            found: format!("{}", d.cols()),
        });
    }
    let mut s = 0.0;
    for r in 0..d.rows() {
        for (v, o) in d.row(r).iter().zip(&obs.values) {
            s += (v - o) * (v - o);
        }
    }
    Ok((s / (d.rows() * d.cols()).max(1) as f64).sqrt())
}

/// A taper for one iteration plus diagnostics of how it was obtained.
#[derive(Clone, Debug)]
pub struct BuiltTaper {
    pub taper: Option<LocalizationMatrix>,
    pub proxy_report: Option<ValidationReport>,
    pub n_super: Option<usize>,
}

pub trait TaperBuilder: Sync {
    fn method(&self) -> LocalizationMethod;
    fn build(
        &self,
        iteration: usize,
        z: &Matrix,
        d: &Matrix,
        rng: &RngStream,
    ) -> Result<BuiltTaper>;
}

/// Builds the configured taper: distance-based, plain pseudo-optimal, or
/// proxy-enhanced over a sampled super-ensemble.
pub struct StandardTaper<'a> {
    cfg: EsmdaConfig,
    grid: GridSpec,
    wells: Vec<usize>,
    sampler: Option<&'a dyn FieldSampler>,
    super_seed: RngStream,
    cached: OnceLock<Ensemble>,
}

impl<'a> StandardTaper<'a> {
    /// `wells` are the observation cells, data being time-major over them.
    /// `super_seed` fixes the super-ensemble stream.
    pub fn new(
        cfg: &EsmdaConfig,
        grid: GridSpec,
        wells: Vec<usize>,
        sampler: Option<&'a dyn FieldSampler>,
        super_seed: RngStream,
    ) -> Result<Self> {
        if matches!(cfg.localization, LocalizationMethod::Ml(_)) && sampler.is_none() {
            return Err(Error::InvalidArgument(
                "proxy localization needs a super-ensemble sampler".into(),
            ));
        }
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            wells,
            sampler,
            super_seed,
            cached: OnceLock::new(),
        })
    }
}

impl TaperBuilder for StandardTaper<'_> {
    fn method(&self) -> LocalizationMethod {
        self.cfg.localization
    }

    fn build(
        &self,
        iteration: usize,
        z: &Matrix,
        d: &Matrix,
        rng: &RngStream,
    ) -> Result<BuiltTaper> {
        let none = BuiltTaper {
            taper: None,
            proxy_report: None,
            n_super: None,
        };
        match self.cfg.localization {
            LocalizationMethod::None => Ok(none),
            LocalizationMethod::GaspariCohn => Ok(BuiltTaper {
                taper: Some(gc_matrix(
                    &self.grid,
                    &self.wells,
                    d.cols(),
                    self.cfg.gc_half_support_m,
                )?),
                ..none
            }),
            LocalizationMethod::PseudoOptimal => Ok(BuiltTaper {
                taper: Some(plain_pseudo_optimal(z, d, self.cfg.eta)?),
                ..none
            }),
            LocalizationMethod::Ml(kind) => {
                let sampler = self.sampler.expect("checked in constructor");
                let n_s = self.cfg.n_super;
                if n_s < z.rows() {
                    return Err(Error::InvalidArgument(format!(
                        "super-ensemble size {n_s} is smaller than the working ensemble ({})",
                        z.rows()
                    )));
                }
                let proxy = ProxyModel::fit(kind, &self.cfg.proxy, z, d, &rng.fork("proxy"))?;
                let cov = if self.cfg.regenerate_super {
                    let stream = self.super_seed.fork_indexed("iteration", iteration as u64);
                    ml_enhanced_covariance_streamed(sampler, n_s, &proxy, &stream)?
                } else {
                    let ens = match self.cached.get() {
                        Some(e) => e,
                        None => {
                            let e = sample_ensemble(sampler, n_s, &self.super_seed)?;
                            self.cached.get_or_init(|| e)
                        }
                    };
                    ml_enhanced_covariance(ens, &proxy)?
                };
                Ok(BuiltTaper {
                    taper: Some(ml_taper(&cov, z.rows(), self.cfg.eta, kind)?),
                    proxy_report: Some(proxy.validation_report()),
                    n_super: Some(n_s),
                })
            }
        }
    }
}

/// Everything produced by a smoother run.
#[derive(Clone, Debug)]
pub struct EsmdaOutcome {
    pub posterior: Ensemble,
    /// Records for the prior (iteration 0) and each assimilation.
    pub records: Vec<AssimilationRecord>,
    /// Predicted data of the prior and of each posterior, in iteration order.
    pub data: Vec<Matrix>,
    pub tapers: Vec<Option<LocalizationMatrix>>,
    pub proxy_reports: Vec<Option<ValidationReport>>,
}

/// Runs the full assimilation schedule. Iteration `i` uses
/// `rng.fork_indexed("iteration", i)`, split into taper and perturbation streams.
pub fn run_esmda(
    cfg: &EsmdaConfig,
    prior: &Ensemble,
    forward: &dyn ForwardModel,
    obs: &ObservationSet,
    tapers: &dyn TaperBuilder,
    rng: &RngStream,
) -> Result<EsmdaOutcome> {
    cfg.validate()?;
    let grid = *prior.grid().ok_or(Error::InsufficientEnsemble {
        found: 0,
        needed: 2,
    })?;
    let n_e = prior.len();
    let z0 = prior.to_matrix();
    let t = Instant::now();
    let mut d = simulate_ensemble(forward, &z0)?;
    let mut sim_seconds = t.elapsed().as_secs_f64();
    let method = tapers.method();
    let mut records = vec![AssimilationRecord {
        iteration: 0,
        prior_tag: prior.tag.clone(),
        posterior_tag: prior.tag.clone(),
        rmse: data_rmse(&d, obs)?,
        nv: 1.0,
        method,
        n_e,
        n_s: None,
        proxy_rmse: None,
        simulate_seconds: sim_seconds,
        taper_seconds: 0.0,
        update_seconds: 0.0,
    }];
    let mut out_data = vec![d.clone()];
    let mut out_tapers = Vec::new();
    let mut reports = Vec::new();
    let mut z = z0.clone();
    let mut tag = prior.tag.clone();
    for (i, &alpha) in cfg.alphas.iter().enumerate() {
        let it = rng.fork_indexed("iteration", i as u64);
        let t = Instant::now();
        let built = tapers.build(i, &z, &d, &it.fork("taper"))?;
        let taper_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        z = esmda_update(
            &z,
            &d,
            obs,
            alpha,
            built.taper.as_ref(),
            Some(cfg.bounds),
            &it.fork("perturb"),
        )?;
        let update_seconds = t.elapsed().as_secs_f64();
        assert!(z
            .as_slice()
            .iter()
            .all(|v| (cfg.bounds[0]..=cfg.bounds[1]).contains(v)));
        let t = Instant::now();
        d = simulate_ensemble(forward, &z)?;
        sim_seconds = t.elapsed().as_secs_f64();
        let post_tag = EnsembleTag::Posterior(i + 1);
        records.push(AssimilationRecord {
            iteration: i + 1,
            prior_tag: tag,
            posterior_tag: post_tag.clone(),
            rmse: data_rmse(&d, obs)?,
            nv: normalized_variance_matrix(&z0, &z)?,
            method,
            n_e,
            n_s: built.n_super,
            proxy_rmse: built.proxy_report.as_ref().map(|r| r.rmse_total),
            simulate_seconds: sim_seconds,
            taper_seconds,
            update_seconds,
        });
        tag = post_tag;
        out_data.push(d.clone());
        out_tapers.push(built.taper);
        reports.push(built.proxy_report);
    }
    let posterior = Ensemble::from_matrix(grid, &z, prior.seed, tag)?;
    Ok(EsmdaOutcome {
        posterior,
        records,
        data: out_data,
        tapers: out_tapers,
        proxy_reports: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_obs(values: Vec<f64>, sigma: Vec<f64>) -> ObservationSet {
        ObservationSet {
            times: vec![0.0],
            n_wells: values.len(),
            values,
            sigma,
        }
    }

    #[test]
    fn default_schedule_is_valid() {
        let cfg = EsmdaConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_assimilations(), 4);
        let bad = EsmdaConfig {
            alphas: vec![4.0, 4.0, 4.0],
            ..EsmdaConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn conjugate_scalar_update() {
        let n = 100_000;
        let mut r = RngStream::new(1);
        let z = Matrix::from_vec(n, 1, (0..n).map(|_| r.normal()).collect()).unwrap();
        let obs = scalar_obs(vec![1.0], vec![1.0]);
        let post = esmda_update(&z, &z, &obs, 1.0, None, None, &RngStream::new(2)).unwrap();
        let a = row_anomalies(&post);
        let var = a.deviations.as_slice().iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
        assert!((a.mean[0] - 0.5).abs() < 0.01, "{}", a.mean[0]);
        assert!((var - 0.5).abs() < 0.01, "{var}");
    }

    #[test]
    fn unit_and_zero_tapers() {
        let mut r = RngStream::new(3);
        let mut z = Matrix::zeros(30, 5);
        z.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = 2.5 + 0.3 * r.normal());
        let mut d = Matrix::zeros(30, 3);
        for m in 0..30 {
            for p in 0..3 {
                d[(m, p)] = z[(m, p)] + z[(m, p + 1)];
            }
        }
        let obs = scalar_obs(vec![5.0, 5.1, 4.9], vec![0.1; 3]);
        let rng = RngStream::new(4);
        let plain = esmda_update(&z, &d, &obs, 4.0, None, Some([1.0, 4.0]), &rng).unwrap();
        let ones = LocalizationMatrix::ones(5, 3);
        assert_eq!(
            esmda_update(&z, &d, &obs, 4.0, Some(&ones), Some([1.0, 4.0]), &rng).unwrap(),
            plain
        );
        let zeros = LocalizationMatrix::new(
            Matrix::zeros(5, 3),
            LocalizationMethod::None,
            ones.provenance().clone(),
        )
        .unwrap();
        assert_eq!(
            esmda_update(&z, &d, &obs, 4.0, Some(&zeros), Some([1.0, 4.0]), &rng).unwrap(),
            z
        );
    }

    #[test]
    fn bounds_are_enforced() {
        let z = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let obs = scalar_obs(vec![100.0], vec![0.01]);
        let post = esmda_update(
            &z,
            &z,
            &obs,
            1.0,
            None,
            Some([1.0, 4.0]),
            &RngStream::new(5),
        )
        .unwrap();
        assert!(post.as_slice().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn nv_examples() {
        let mut r = RngStream::new(6);
        let mut z = Matrix::zeros(20, 4);
        r.fill_normal(z.as_mut_slice());
        assert!((normalized_variance_matrix(&z, &z).unwrap() - 1.0).abs() < 1e-15);
        let a = row_anomalies(&z);
        let mut half = z.clone();
        for m in 0..20 {
            for c in 0..4 {
                half[(m, c)] = a.mean[c] + 0.5 * a.deviations[(m, c)];
            }
        }
        assert!((normalized_variance_matrix(&z, &half).unwrap() - 0.25).abs() < 1e-12);
        let flat = Matrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let other = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(matches!(
            normalized_variance_matrix(&flat, &other),
            Err(Error::ZeroPriorVariance)
        ));
    }

    #[test]
    fn rmse_examples() {
        let obs = scalar_obs(vec![1.0, 2.0], vec![1.0, 1.0]);
        let d = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(data_rmse(&d, &obs).unwrap(), 0.0);
        let one = scalar_obs(vec![3.0], vec![1.0]);
        assert_eq!(
            data_rmse(&Matrix::from_vec(1, 1, vec![5.0]).unwrap(), &one).unwrap(),
            2.0
        );
    }

    #[test]
    fn singular_system_is_reported() {
        let z = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let d = Matrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let obs = scalar_obs(vec![1.0, 1.0], vec![0.0, 0.0]);
        assert!(matches!(
            esmda_update(&z, &d, &obs, 1.0, None, None, &RngStream::new(1)),
            Err(Error::Singular(_))
        ));
    }
}
