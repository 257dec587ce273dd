//! Reverse-time samplers: probability-flow ODE (midpoint), Euler-Maruyama,
//! predictor-corrector, and likelihood-guided posterior sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use chda_core::localization::{FieldSampler, PARTITION};
use chda_core::{Ensemble, EnsembleTag, GridSpec, LogPermField, RngStream};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::schedule::VESchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerConfig {
    Ode { steps: usize },
    Em { steps: usize },
    Pc { steps: usize, snr: f64 },
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Ode { steps: 1000 }
    }
}

impl SamplerConfig {
    pub fn pc_default() -> Self {
        SamplerConfig::Pc {
            steps: 500,
            snr: 0.16,
        }
    }

    fn steps(&self) -> usize {
        match *self {
            SamplerConfig::Ode { steps }
            | SamplerConfig::Em { steps }
            | SamplerConfig::Pc { steps, .. } => steps,
        }
    }
}

/// Hard data in log-permeability units at the given cell indices.
#[derive(Clone, Debug, PartialEq)]
pub struct HardData {
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma_obs: f64,
}

impl HardData {
    pub fn empty() -> Self {
        Self {
            cells: vec![],
            values: vec![],
            sigma_obs: 1.0,
        }
    }

    /// Observations of `truth` on a regular lattice with the given spacing.
    pub fn lattice(grid: &GridSpec, truth: &[f64], spacing: usize, sigma_obs: f64) -> Self {
        let off = spacing / 2;
        let mut cells = Vec::new();
        for j in (off..grid.ny).step_by(spacing.max(1)) {
            for i in (off..grid.nx).step_by(spacing.max(1)) {
                cells.push(grid.index(i, j));
            }
        }
        let values = cells.iter().map(|&c| truth[c]).collect();
        Self {
            cells,
            values,
            sigma_obs,
        }
    }
}

/// How the likelihood term acts on the sampler state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Guidance {
    /// `−w (x̂₀ − y)` applied directly on the observed cells.
    #[default]
    Plain,
    /// The same residual pulled back through the Tweedie Jacobian, which
    /// makes the term an exact gradient of `−½ w ‖H x̂₀ − y‖²`.
    Jacobian,
}

/// Settings for [`sample_posterior`].
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSettings {
    pub gamma: f64,
    pub steps: usize,
    /// Langevin corrector signal-to-noise ratio; `None` skips the corrector.
    pub snr: Option<f64>,
    pub bounds: Option<[f64; 2]>,
    pub guidance: Guidance,
}

impl PosteriorSettings {
    /// Plain guidance with no corrector and no clipping.
    pub fn new(gamma: f64, steps: usize) -> Self {
        Self {
            gamma,
            steps,
            snr: None,
            bounds: None,
            guidance: Guidance::Plain,
        }
    }
}

struct Guide {
    cells: Vec<usize>,
    values: Vec<f64>,
    weight: Vec<f64>,
    form: Guidance,
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "sampler state".into(),
            location: format!("step {step}"),
        })
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least 2 steps required, got {steps}"
        )));
    }
    Ok(())
}

/// Tweedie denoised estimate `x + σ_t² s(x, t)`.
pub fn tweedie(model: &ScoreModel, x: &[f64], t: f64, sigma_t: f64) -> Vec<f64> {
    let s = model.score(x, t, sigma_t);
    x.iter()
        .zip(&s)
        .map(|(v, g)| v + sigma_t * sigma_t * g)
        .collect()
}

/// `x_T ~ N(0, (1 + σ_T²) I)`, the terminal marginal of z-scored data.
fn initial_state(model: &ScoreModel, sched: &VESchedule, rng: &mut RngStream) -> Vec<f64> {
    let sm = (1.0 + sched.sigma_max().powi(2)).sqrt();
    (0..model.dim()).map(|_| sm * rng.normal()).collect()
}

fn time_grid(sched: &VESchedule, steps: usize) -> (Vec<f64>, f64) {
    let h = (sched.t_max - sched.eps) / steps as f64;
    ((0..=steps).map(|k| sched.t_max - k as f64 * h).collect(), h)
}

/// Final noise-free denoising at the smallest time.
fn finish(model: &ScoreModel, sched: &VESchedule, x: Vec<f64>, steps: usize) -> Result<Vec<f64>> {
    let out = tweedie(model, &x, sched.eps, sched.sigma_t(sched.eps));
    check_finite(&out, steps)?;
    Ok(out)
}

/// Probability-flow ODE `dx/dt = −½ g² s` from `T` to `eps` (midpoint rule),
/// starting from a terminal state drawn from `rng`.
pub fn sample_ode(
    model: &ScoreModel,
    sched: &VESchedule,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_steps(steps)?;
    let x = initial_state(model, sched, rng);
    integrate_ode(model, sched, steps, x)
}

/// Deterministic ODE integration from a given terminal state.
pub fn integrate_ode(
    model: &ScoreModel,
    sched: &VESchedule,
    steps: usize,
    mut x: Vec<f64>,
) -> Result<Vec<f64>> {
    check_steps(steps)?;
    let (ts, h) = time_grid(sched, steps);
    for k in 0..steps {
        let t = ts[k];
        let s = model.score(&x, t, sched.sigma_t(t));
        let a = 0.5 * sched.g(t).powi(2);
        let mid: Vec<f64> = x.iter().zip(&s).map(|(v, g)| v + 0.5 * h * a * g).collect();
        let tm = t - 0.5 * h;
        let sm = model.score(&mid, tm, sched.sigma_t(tm));
        let am = 0.5 * sched.g(tm).powi(2);
        for (v, g) in x.iter_mut().zip(&sm) {
            *v += h * am * g;
        }
        check_finite(&x, k)?;
    }
    finish(model, sched, x, steps)
}

/// Euler-Maruyama on the reverse SDE with optional hard-data guidance.
/// With `gamma = 0` (or no data) this is plain Euler-Maruyama.
/// Prior score plus the likelihood term `−w (x̂₀ − y)` on observed cells.
fn guided_score(model: &ScoreModel, x: &[f64], t: f64, st: f64, guide: Option<&Guide>) -> Vec<f64> {
    let mut s = model.score(x, t, st);
    let Some(guide) = guide else { return s };
    let cells = guide.cells.iter().zip(&guide.values).zip(&guide.weight);
    match guide.form {
        Guidance::Plain => {
            for ((&c, &y), &w) in cells {
                let x0 = x[c] + st * st * s[c];
                s[c] -= w * (x0 - y);
            }
        }
        Guidance::Jacobian => {
            let mut r = vec![0.0; x.len()];
            for ((&c, &y), &w) in cells {
                r[c] += w * (x[c] + st * st * s[c] - y);
            }
            for (sv, g) in s.iter_mut().zip(model.tweedie_vjp(x, t, st, &r)) {
                *sv -= g;
            }
        }
    }
    s
}

fn reverse_sde(
    model: &ScoreModel,
    sched: &VESchedule,
    steps: usize,
    snr: Option<f64>,
    guide: Option<&Guide>,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_steps(steps)?;
    let mut corrector = rng.fork("corrector");
    let mut x = initial_state(model, sched, rng);
    let (ts, h) = time_grid(sched, steps);
    let n = model.dim();
    let mut z = vec![0.0; n];
    for k in 0..steps {
        let t = ts[k];
        let st = sched.sigma_t(t);
        if let Some(snr) = snr {
            let s = guided_score(model, &x, t, st, guide);
            let mut zc = vec![0.0; n];
            corrector.fill_normal(&mut zc);
            let gn = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            let zn = zc.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn > 0.0 {
                let eps = 2.0 * (snr * zn / gn).powi(2);
                let sq = (2.0 * eps).sqrt();
                for ((v, g), w) in x.iter_mut().zip(&s).zip(&zc) {
                    *v += eps * g + sq * w;
                }
            }
        }
        let s = guided_score(model, &x, t, st, guide);
        let g = sched.g(t);
        rng.fill_normal(&mut z);
        let (a, b) = (g * g * h, g * h.sqrt());
        for ((v, sv), zv) in x.iter_mut().zip(&s).zip(&z) {
            *v += a * sv + b * zv;
        }
        check_finite(&x, k)?;
    }
    finish(model, sched, x, steps)
}

pub fn sample_em(
    model: &ScoreModel,
    sched: &VESchedule,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    reverse_sde(model, sched, steps, None, None, rng)
}

/// Langevin corrector then Euler-Maruyama predictor at each step; corrector
/// step size `2 (snr ‖z‖ / ‖s‖)²`.
pub fn sample_pc(
    model: &ScoreModel,
    sched: &VESchedule,
    steps: usize,
    snr: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "snr must be positive, got {snr}"
        )));
    }
    reverse_sde(model, sched, steps, Some(snr), None, rng)
}

/// Reverse SDE with drift `s + γ g_lik`,
/// `g_lik = −σ_obs⁻² Hᵀ(H x̂₀ − y)` and `x̂₀` the Tweedie estimate
/// (see [`Guidance`] for the Jacobian variant). `data` holds
/// log-permeability values; the returned field is denormalized and clipped
/// to `bounds`. With `snr` set, each step is preceded by the Langevin
/// corrector of [`sample_pc`] driven by the same guided score, so `γ = 0` or
/// an empty data set reproduces [`sample_pc`].
pub fn sample_posterior(
    model: &ScoreModel,
    sched: &VESchedule,
    data: &HardData,
    settings: &PosteriorSettings,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let PosteriorSettings {
        gamma,
        steps,
        snr,
        bounds,
        guidance,
    } = *settings;
    if let Some(snr) = snr {
        if !(snr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "snr must be positive, got {snr}"
            )));
        }
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "conditioning strength must be >= 0, got {gamma}"
        )));
    }
    if !(data.sigma_obs > 0.0) {
        return Err(Error::InvalidArgument(
            "observation sigma must be positive".into(),
        ));
    }
    if data.cells.len() != data.values.len() || data.cells.iter().any(|&c| c >= model.dim()) {
        return Err(Error::InvalidArgument(
            "observation cells must be valid and match the values".into(),
        ));
    }
    // Normalized space: values are z-scored and σ_obs is divided by the
    // per-cell scale, giving weights γ / σ_c².
    let st = &model.stats;
    let guide = Guide {
        cells: data.cells.clone(),
        values: data
            .cells
            .iter()
            .zip(&data.values)
            .map(|(&c, &y)| (y - st.mean[c]) / st.scale(c))
            .collect(),
        weight: data
            .cells
            .iter()
            .map(|&c| gamma * (st.scale(c) / data.sigma_obs).powi(2))
            .collect(),
        form: guidance,
    };
    let active = gamma > 0.0 && !data.cells.is_empty();
    let x = reverse_sde(model, sched, steps, snr, active.then_some(&guide), rng)?;
    Ok(to_field_values(model, &x, bounds))
}

fn to_field_values(model: &ScoreModel, x: &[f64], bounds: Option<[f64; 2]>) -> Vec<f64> {
    let mut v = model.stats.denormalize(x);
    if let Some([lo, hi]) = bounds {
        v.iter_mut().for_each(|x| *x = x.clamp(lo, hi));
    }
    v
}

/// Draws one normalized-space sample with the configured sampler.
pub fn sample_one(
    model: &ScoreModel,
    sched: &VESchedule,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    match *cfg {
        SamplerConfig::Ode { steps } => sample_ode(model, sched, steps, rng),
        SamplerConfig::Em { steps } => sample_em(model, sched, steps, rng),
        SamplerConfig::Pc { steps, snr } => sample_pc(model, sched, steps, snr, rng),
    }
}

/// `n` samples in normalized space; sample `k` uses `rng.fork_indexed("sample", k)`.
pub fn sample_many(
    model: &ScoreModel,
    sched: &VESchedule,
    cfg: &SamplerConfig,
    n: usize,
    rng: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    check_steps(cfg.steps())?;
    (0..n)
        .into_par_iter()
        .map(|k| sample_one(model, sched, cfg, &mut rng.fork_indexed("sample", k as u64)))
        .collect()
}

/// Samples mapped back to log-permeability and clipped to `bounds`.
pub fn generate_ensemble(
    model: &ScoreModel,
    grid: GridSpec,
    sched: &VESchedule,
    cfg: &SamplerConfig,
    n: usize,
    bounds: Option<[f64; 2]>,
    rng: &RngStream,
) -> Result<Ensemble> {
    check_grid(model, &grid)?;
    let members = sample_many(model, sched, cfg, n, rng)?
        .into_iter()
        .map(|x| LogPermField::new(grid, to_field_values(model, &x, bounds)).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble::new(members, rng.seed(), EnsembleTag::Diffusion)?)
}

fn check_grid(model: &ScoreModel, grid: &GridSpec) -> Result<()> {
    if grid.nx != model.grid.nx || grid.ny != model.grid.ny {
        return Err(Error::InvalidArgument(format!(
            "model is {}x{}, grid is {}x{}",
            model.grid.nx, model.grid.ny, grid.nx, grid.ny
        )));
    }
    Ok(())
}

/// Super-ensemble source backed by a score model.
pub struct DiffusionSampler {
    pub model: ScoreModel,
    pub grid: GridSpec,
    pub schedule: VESchedule,
    pub sampler: SamplerConfig,
    pub bounds: Option<[f64; 2]>,
}

impl DiffusionSampler {
    pub fn new(
        model: ScoreModel,
        grid: GridSpec,
        schedule: VESchedule,
        sampler: SamplerConfig,
        bounds: Option<[f64; 2]>,
    ) -> Result<Self> {
        check_grid(&model, &grid)?;
        Ok(Self {
            model,
            grid,
            schedule,
            sampler,
            bounds,
        })
    }
}

impl FieldSampler for DiffusionSampler {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn sample_partition(
        &self,
        partition: usize,
        count: usize,
        rng: &RngStream,
    ) -> chda_core::Result<Vec<Vec<f64>>> {
        (0..count)
            .map(|k| {
                let mut r = rng.fork_indexed("member", (partition * PARTITION + k) as u64);
                sample_one(&self.model, &self.schedule, &self.sampler, &mut r)
                    .map(|x| to_field_values(&self.model, &x, self.bounds))
                    .map_err(|e| chda_core::Error::Other(e.to_string()))
            })
            .collect()
    }
}

/// Summary statistics of generated fields. Reported only; nothing is filtered.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDiagnostics {
    pub n: usize,
    pub channel_fraction_mean: f64,
    /// Share of samples whose channel fraction lies in `[0.35, 0.45]`.
    pub in_proportion_band: f64,
    /// Share of all cells with `log10 k ∈ [1, 4]`.
    pub in_range: f64,
}

pub fn diagnostics(e: &Ensemble, threshold: f64) -> SampleDiagnostics {
    let n = e.len();
    let mut frac_sum = 0.0;
    let mut in_band = 0usize;
    let (mut ok, mut total) = (0usize, 0usize);
    for m in e.members() {
        let v = m.values();
        let f = v.iter().filter(|&&x| x > threshold).count() as f64 / v.len() as f64;
        frac_sum += f;
        if (0.35..=0.45).contains(&f) {
            in_band += 1;
        }
        ok += v.iter().filter(|&&x| (1.0..=4.0).contains(&x)).count();
        total += v.len();
    }
    SampleDiagnostics {
        n,
        channel_fraction_mean: frac_sum / n.max(1) as f64,
        in_proportion_band: in_band as f64 / n.max(1) as f64,
        in_range: ok as f64 / total.max(1) as f64,
    }
}
