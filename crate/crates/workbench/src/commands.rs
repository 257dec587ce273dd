//! Subcommand implementations. Each takes a validated configuration and an
//! output directory and finishes by writing the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use chda_core::esmda::{run_esmda, EsmdaOutcome, StandardTaper};
use chda_core::flow::{observe, FlowSimulator};
use chda_core::io::{load_ensemble, load_field_on, save_ensemble, save_field};
use chda_core::localization::{FieldSampler, GeostatSampler, LocalizationMethod};
use chda_core::{Ensemble, EnsembleTag, GridSpec, LogPermField, Matrix, RngStream};
use chda_scorediff::{
    diagnostics, dsm_train, generate_ensemble, sample_posterior, Checkpoint, DiffusionSampler,
    HardData, Network, NetworkSpec, NormStats, PosteriorSettings, SamplerConfig, ScoreModel,
};

use crate::config::{ExperimentConfig, SuperSampler};
use crate::error::{Error, Result};
use crate::report;
use crate::rundir::{write_atomic, RunDir, RunManifest};

pub const WEIGHTS: &str = "score.chsw";
pub const CHECKPOINT: &str = "checkpoint.chck";
pub const LOSS_CSV: &str = "loss.csv";
pub const RECORDS: &str = "records.csv";
pub const TRUTH: &str = "truth.chda";
pub const OBSERVATIONS: &str = "observations.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const TAPER_FINAL: &str = "taper_final.chen";

/// Directory of one (method, ensemble size) cell inside a run.
pub fn cell_dir(method: &str, n_e: usize) -> String {
    format!("cells/{method}_ne{n_e}")
}

/// Prior ensemble of `n` members. Member `k` does not depend on `n`, so
/// smaller sweeps use a prefix of larger ones.
pub fn prior_ensemble(cfg: &ExperimentConfig, n: usize, master: &RngStream) -> Result<Ensemble> {
    Ok(cfg
        .channel
        .training_set(n, &cfg.grid, &master.fork("prior"))?)
}

/// The synthetic truth, drawn from a stream no ensemble uses.
pub fn truth_field(cfg: &ExperimentConfig, master: &RngStream) -> Result<LogPermField> {
    let e = cfg
        .channel
        .training_set(1, &cfg.grid, &master.fork("truth"))?;
    Ok(e.into_members().remove(0))
}

fn write_members(rd: &RunDir, dir: &str, e: &Ensemble) -> Result<()> {
    let width = e.len().saturating_sub(1).to_string().len().max(4);
    for (k, m) in e.members().iter().enumerate() {
        save_field(rd.path(&format!("{dir}/member_{k:0width$}.chda"))?, m)?;
    }
    Ok(())
}

/// Reads an ensemble file or a directory of field files (sorted by name).
pub fn load_fields(path: &Path) -> Result<Ensemble> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    if path.is_file() {
        return Ok(load_ensemble(
            path,
            0,
            EnsembleTag::Other("dataset".into()),
        )?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "chda"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Runtime(format!(
            "no field files in {}",
            path.display()
        )));
    }
    let first = chda_core::io::load_field(&files[0])?;
    let grid = *first.grid();
    let mut members = vec![first];
    for f in &files[1..] {
        members.push(load_field_on(f, &grid)?);
    }
    Ok(Ensemble::new(
        members,
        0,
        EnsembleTag::Other("dataset".into()),
    )?)
}

pub fn generate_prior(cfg: &ExperimentConfig, out: &Path, n: Option<usize>) -> Result<RunManifest> {
    let n = n.unwrap_or_else(|| {
        cfg.experiment
            .ensemble_sizes
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
    });
    if n == 0 {
        return Err(Error::Config("prior size must be positive".into()));
    }
    let master = RngStream::new(cfg.seed);
    let mut rd = RunDir::create(out, cfg)?;
    let prior = rd.time("prior", |_| prior_ensemble(cfg, n, &master))?;
    rd.time("write", |rd| write_members(rd, "ensembles/prior", &prior))?;
    rd.finish("generate-prior")
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Overrides `diffusion.dataset`.
    pub dataset: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs of this invocation, leaving a checkpoint.
    pub stop_after: Option<usize>,
}

pub fn train_score(cfg: &ExperimentConfig, out: &Path, opts: &TrainOptions) -> Result<RunManifest> {
    let dataset = opts
        .dataset
        .clone()
        .or_else(|| cfg.diffusion.dataset.clone());
    for p in dataset.iter().chain(&opts.resume) {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let master = RngStream::new(cfg.seed);
    let mut rd = RunDir::create(out, cfg)?;
    let fields = rd.time("dataset", |_| match &dataset {
        Some(p) => load_fields(p),
        None => Ok(cfg.channel.training_set(
            cfg.diffusion.n_train,
            &cfg.grid,
            &master.fork("training-set"),
        )?),
    })?;
    let grid = *fields
        .grid()
        .ok_or_else(|| Error::Runtime("empty training set".into()))?;
    let stats = NormStats::from_ensemble(&fields)?;
    let data: Vec<Vec<f64>> = fields
        .members()
        .iter()
        .map(|m| stats.normalize(m.values()))
        .collect();
    let spec = NetworkSpec {
        nx: grid.nx,
        ny: grid.ny,
        ..cfg.diffusion.network
    };
    spec.validate()?;
    let resume = opts.resume.as_deref().map(Checkpoint::load).transpose()?;
    let start = resume.as_ref().map_or(0, |c| c.epochs_done);
    let ckpt_path = rd.path(CHECKPOINT)?;
    let mut last: Option<Checkpoint> = None;
    let mut interrupted = false;
    let trained = rd.time("train", |_| {
        let r = dsm_train(
            &data,
            spec,
            &cfg.diffusion.schedule,
            &cfg.diffusion.train,
            &master.fork("train"),
            resume,
            |c| {
                let mut buf = Vec::new();
                c.write(&mut buf)?;
                write_atomic(&ckpt_path, &buf)
                    .map_err(|e| chda_scorediff::Error::InvalidArgument(e.to_string()))?;
                if opts.stop_after.is_some_and(|k| c.epochs_done >= start + k) {
                    last = Some(c.clone());
                    interrupted = true;
                    return Err(chda_scorediff::Error::InvalidArgument("stopped".into()));
                }
                Ok(())
            },
        );
        match r {
            Err(_) if interrupted => Ok(None),
            other => Ok(Some(other?)),
        }
    })?;
    let (net, history, ckpt) = match trained {
        Some(o) => (o.network, o.history, o.checkpoint),
        None => {
            let c = last.expect("set when interrupted");
            (
                Network::from_params(spec, c.params.clone())?,
                c.history.clone(),
                c,
            )
        }
    };
    let mut buf = Vec::new();
    ckpt.write(&mut buf)?;
    write_atomic(&ckpt_path, &buf)?;
    let mut csv = String::from("epoch,loss,best\n");
    for h in &history {
        let _ = writeln!(csv, "{},{:.12e},{:.12e}", h.epoch, h.loss, h.best);
    }
    rd.write(LOSS_CSV, csv.as_bytes())?;
    ScoreModel::network(net, stats)?.save(&rd.path(WEIGHTS)?)?;
    rd.finish("train-score")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SampleMode {
    Ode,
    Pc,
    Em,
    Posterior,
}

/// Closed-form score backends for testing the samplers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticSpec {
    /// Independent cells, `N(mean, var)` in log-permeability.
    Gaussian {
        mean: f64,
        var: f64,
    },
    PointMass(f64),
}

impl FromStr for AnalyticSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|e| format!("'{t}': {e}"));
        match parts.as_slice() {
            ["gaussian", m, v] => {
                let var = num(v)?;
                if !(var > 0.0) {
                    return Err("gaussian variance must be positive".into());
                }
                Ok(AnalyticSpec::Gaussian { mean: num(m)?, var })
            }
            ["point-mass", v] => Ok(AnalyticSpec::PointMass(num(v)?)),
            _ => Err(format!(
                "expected gaussian:MEAN:VAR or point-mass:VALUE, got '{s}'"
            )),
        }
    }
}

impl AnalyticSpec {
    /// A standard backend plus normalization statistics carrying the
    /// target moments, so sampling runs in unit-scale coordinates.
    pub fn model(&self, grid: GridSpec) -> Result<ScoreModel> {
        let n = grid.len();
        Ok(match *self {
            AnalyticSpec::Gaussian { mean, var } => ScoreModel {
                stats: NormStats {
                    mean: vec![mean; n],
                    std: vec![var.sqrt(); n],
                },
                ..ScoreModel::gaussian(grid, vec![0.0; n], vec![1.0; n])?
            },
            AnalyticSpec::PointMass(v) => ScoreModel {
                stats: NormStats {
                    mean: vec![v; n],
                    std: vec![0.0; n],
                },
                ..ScoreModel::point_mass(grid, vec![0.0; n])?
            },
        })
    }
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub n: usize,
    /// Defaults to the kind of `diffusion.sampler`.
    pub mode: Option<SampleMode>,
    /// Overrides `diffusion.weights`.
    pub weights: Option<PathBuf>,
    pub analytic: Option<AnalyticSpec>,
    /// Field providing hard data in posterior mode; defaults to the held-out truth.
    pub truth: Option<PathBuf>,
}

fn load_model(cfg: &ExperimentConfig, weights: Option<&Path>) -> Result<ScoreModel> {
    let path = weights
        .map(Path::to_path_buf)
        .or_else(|| cfg.diffusion.weights.clone())
        .ok_or_else(|| {
            Error::Config(
                "no score model: pass --weights, --analytic or set diffusion.weights".into(),
            )
        })?;
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut m = ScoreModel::load(&path)?;
    if m.grid.nx != cfg.grid.nx || m.grid.ny != cfg.grid.ny {
        return Err(Error::Config(format!(
            "weights are for a {}x{} grid, config grid is {}x{}",
            m.grid.nx, m.grid.ny, cfg.grid.nx, cfg.grid.ny
        )));
    }
    m.grid = cfg.grid;
    Ok(m)
}

/// Sampler settings for `mode`, taken from the config when its kind matches.
fn sampler_for(cfg: &ExperimentConfig, mode: SampleMode) -> SamplerConfig {
    match (mode, cfg.diffusion.sampler) {
        (SampleMode::Ode, c @ SamplerConfig::Ode { .. })
        | (SampleMode::Em, c @ SamplerConfig::Em { .. })
        | (SampleMode::Pc, c @ SamplerConfig::Pc { .. }) => c,
        (SampleMode::Ode, _) => SamplerConfig::Ode { steps: 1000 },
        (SampleMode::Em, _) => SamplerConfig::Em { steps: 1000 },
        _ => SamplerConfig::pc_default(),
    }
}

pub fn sample(cfg: &ExperimentConfig, out: &Path, opts: &SampleOptions) -> Result<RunManifest> {
    if opts.n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let model = match &opts.analytic {
        Some(a) => a.model(cfg.grid)?,
        None => load_model(cfg, opts.weights.as_deref())?,
    };
    let mode = opts.mode.unwrap_or(match cfg.diffusion.sampler {
        SamplerConfig::Ode { .. } => SampleMode::Ode,
        SamplerConfig::Em { .. } => SampleMode::Em,
        SamplerConfig::Pc { .. } => SampleMode::Pc,
    });
    let master = RngStream::new(cfg.seed);
    let rng = master.fork("sample");
    let bounds = Some(cfg.diffusion.bounds);
    let sched = &cfg.diffusion.schedule;
    let mut rd = RunDir::create(out, cfg)?;
    let ens = if mode == SampleMode::Posterior {
        let truth = match &opts.truth {
            Some(p) if !p.exists() => return Err(Error::MissingFile(p.clone())),
            Some(p) => load_field_on(p, &cfg.grid)?,
            None => truth_field(cfg, &master)?,
        };
        let p = &cfg.diffusion.posterior;
        let hard = if p.spacing == 0 {
            HardData::empty()
        } else {
            HardData::lattice(&cfg.grid, truth.values(), p.spacing, p.sigma_obs)
        };
        let settings = PosteriorSettings {
            gamma: p.gamma,
            steps: p.steps,
            snr: (p.snr > 0.0).then_some(p.snr),
            bounds,
            guidance: p.guidance,
        };
        let ens = rd.time("sample", |_| {
            let members = (0..opts.n)
                .into_par_iter()
                .map(|k| {
                    let mut r = rng.fork_indexed("sample", k as u64);
                    let v = sample_posterior(&model, sched, &hard, &settings, &mut r)?;
                    Ok(LogPermField::new(cfg.grid, v)?)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Ensemble::new(members, rng.seed(), EnsembleTag::Diffusion)?)
        })?;
        let mut csv = String::from("cell,i,j,value\n");
        for (&c, v) in hard.cells.iter().zip(&hard.values) {
            let (i, j) = cfg.grid.coords(c);
            let _ = writeln!(csv, "{c},{i},{j},{v}");
        }
        rd.write("hard_data.csv", csv.as_bytes())?;
        let mut csv = String::from("member,rmse\n");
        for (k, m) in ens.members().iter().enumerate() {
            let _ = writeln!(csv, "{k},{:.10e}", hard_data_rmse(m.values(), &hard));
        }
        rd.write("conditioning.csv", csv.as_bytes())?;
        ens
    } else {
        let sc = sampler_for(cfg, mode);
        rd.time("sample", |_| {
            Ok(generate_ensemble(
                &model, cfg.grid, sched, &sc, opts.n, bounds, &rng,
            )?)
        })?
    };
    rd.time("write", |rd| write_members(rd, "ensembles/samples", &ens))?;
    let threshold = 0.5 * (cfg.channel.channel_logk + cfg.channel.background_logk);
    let d = diagnostics(&ens, threshold);
    let csv = format!(
        "n,channel_fraction_mean,in_proportion_band,in_range\n{},{:.10e},{:.10e},{:.10e}\n",
        d.n, d.channel_fraction_mean, d.in_proportion_band, d.in_range
    );
    rd.write("diagnostics.csv", csv.as_bytes())?;
    rd.finish("sample")
}

/// RMSE of a field at the hard-data cells (0 without data).
pub fn hard_data_rmse(values: &[f64], hard: &HardData) -> f64 {
    if hard.cells.is_empty() {
        return 0.0;
    }
    let s: f64 = hard
        .cells
        .iter()
        .zip(&hard.values)
        .map(|(&c, y)| (values[c] - y).powi(2))
        .sum();
    (s / hard.cells.len() as f64).sqrt()
}

struct CellResult {
    records: Vec<String>,
    timings: Vec<String>,
}

fn matrix_csv(out: &mut String, iter: usize, d: &Matrix) {
    for r in 0..d.rows() {
        let _ = write!(out, "{iter},{r}");
        for v in d.row(r) {
            let _ = write!(out, ",{v:.10e}");
        }
        out.push('\n');
    }
}

fn write_cell(rd: &RunDir, cfg: &ExperimentConfig, dir: &str, o: &EsmdaOutcome) -> Result<()> {
    let mut csv = String::from(chda_core::esmda::AssimilationRecord::CSV_HEADER);
    csv.push('\n');
    for r in &o.records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    rd.write(&format!("{dir}/{RECORDS}"), csv.as_bytes())?;
    let n_d = o.data[0].cols();
    let mut p = String::from("iter,member");
    for j in 0..n_d {
        let _ = write!(p, ",d{j}");
    }
    p.push('\n');
    let last = o.data.len() - 1;
    matrix_csv(&mut p, 0, &o.data[0]);
    matrix_csv(&mut p, last, &o.data[last]);
    rd.write(&format!("{dir}/{PREDICTIONS}"), p.as_bytes())?;
    for (i, t) in o.tapers.iter().enumerate() {
        if let Some(t) = t {
            rd.write(
                &format!("{dir}/taper_iter{}.csv", i + 1),
                t.summary_csv(4).as_bytes(),
            )?;
        }
    }
    for (i, r) in o.proxy_reports.iter().enumerate() {
        if let Some(r) = r {
            rd.write(
                &format!("{dir}/proxy_iter{}.csv", i + 1),
                r.to_csv().as_bytes(),
            )?;
        }
    }
    if cfg.experiment.save_ensembles {
        save_ensemble(rd.path(&format!("{dir}/posterior.chen"))?, &o.posterior)?;
        if let Some(Some(t)) = o.tapers.last() {
            t.save_grid_stack(&cfg.grid, &rd.path(&format!("{dir}/{TAPER_FINAL}"))?)?;
        }
    }
    Ok(())
}

/// Truth, observations, prior and the full (method × ensemble size) sweep,
/// followed by the report.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.check_inputs()?;
    let master = RngStream::new(cfg.seed);
    let mut rd = RunDir::create(out, cfg)?;
    let sim = FlowSimulator::standard(cfg.grid, cfg.sim.clone())?;
    let obs = rd.time("truth", |rd| {
        let truth = truth_field(cfg, &master)?;
        let series = sim.simulate(&truth)?;
        let obs = observe(
            &series,
            cfg.experiment.noise_fraction,
            &mut master.fork("noise"),
        )?;
        save_field(rd.path(TRUTH)?, &truth)?;
        rd.write("truth_pressure.csv", series.to_csv().as_bytes())?;
        rd.write(OBSERVATIONS, obs.to_csv().as_bytes())?;
        Ok(obs)
    })?;
    let sizes = &cfg.experiment.ensemble_sizes;
    let n_max = sizes.iter().copied().max().expect("validated non-empty");
    let prior = rd.time("prior", |rd| {
        let p = prior_ensemble(cfg, n_max, &master)?;
        write_members(rd, "ensembles/prior", &p)?;
        Ok(p)
    })?;
    let sampler: Box<dyn FieldSampler> = match cfg.experiment.super_sampler {
        SuperSampler::Geostat => Box::new(GeostatSampler {
            grid: cfg.grid,
            prior: cfg.channel.clone(),
        }),
        SuperSampler::Diffusion => Box::new(DiffusionSampler::new(
            load_model(cfg, None)?,
            cfg.grid,
            cfg.diffusion.schedule,
            cfg.diffusion.sampler,
            Some(cfg.diffusion.bounds),
        )?),
    };
    let cells: Vec<(LocalizationMethod, usize)> = sizes
        .iter()
        .flat_map(|&n| cfg.experiment.methods.iter().map(move |&m| (m, n)))
        .collect();
    let wells = sim.monitor_cells().to_vec();
    let results = rd.time("sweep", |rd| {
        cells
            .par_iter()
            .map(|&(method, n_e)| {
                let t = Instant::now();
                let ec = chda_core::esmda::EsmdaConfig {
                    localization: method,
                    ..cfg.esmda.clone()
                };
                let taper = StandardTaper::new(
                    &ec,
                    cfg.grid,
                    wells.clone(),
                    Some(sampler.as_ref()),
                    master.fork("super"),
                )?;
                let o = run_esmda(
                    &ec,
                    &prior.truncated(n_e),
                    &sim,
                    &obs,
                    &taper,
                    &master.fork("esmda"),
                )?;
                let dir = cell_dir(&method.name(), n_e);
                write_cell(rd, cfg, &dir, &o)?;
                let timings = o
                    .records
                    .iter()
                    .map(|r| {
                        format!(
                            "{method},{n_e},{},{:.6},{:.6},{:.6}",
                            r.iteration, r.simulate_seconds, r.taper_seconds, r.update_seconds
                        )
                    })
                    .chain(std::iter::once(format!(
                        "{method},{n_e},total,{:.6},,",
                        t.elapsed().as_secs_f64()
                    )))
                    .collect();
                Ok(CellResult {
                    records: o.records.iter().map(|r| r.csv_row()).collect(),
                    timings,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut records = String::from(chda_core::esmda::AssimilationRecord::CSV_HEADER);
    records.push('\n');
    let mut timings = String::from("method,Ne,iter,simulate_s,taper_s,update_s\n");
    for r in &results {
        for row in &r.records {
            records.push_str(row);
            records.push('\n');
        }
        for row in &r.timings {
            timings.push_str(row);
            timings.push('\n');
        }
    }
    rd.write(RECORDS, records.as_bytes())?;
    rd.write("timings.csv", timings.as_bytes())?;
    rd.time("report", |rd| report::write_report(rd.root()).map(|_| ()))?;
    rd.finish("run-experiment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_specs_parse() {
        assert_eq!(
            "gaussian:2.5:0.04".parse::<AnalyticSpec>().unwrap(),
            AnalyticSpec::Gaussian {
                mean: 2.5,
                var: 0.04
            }
        );
        assert_eq!(
            "point-mass:3".parse::<AnalyticSpec>().unwrap(),
            AnalyticSpec::PointMass(3.0)
        );
        for bad in ["gaussian:1", "gaussian:1:-1", "uniform:0:1", "point-mass:x"] {
            assert!(bad.parse::<AnalyticSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn prior_is_nested_and_truth_is_held_out() {
        let cfg = ExperimentConfig {
            grid: GridSpec::square(16),
            ..ExperimentConfig::default()
        };
        let master = RngStream::new(3);
        let small = prior_ensemble(&cfg, 5, &master).unwrap();
        let large = prior_ensemble(&cfg, 12, &master).unwrap();
        assert_eq!(small.members(), &large.members()[..5]);
        let truth = truth_field(&cfg, &master).unwrap();
        assert!(large.members().iter().all(|m| m != &truth));
    }

    #[test]
    fn hard_data_rmse_matches_hand_value() {
        let hard = HardData {
            cells: vec![0, 2],
            values: vec![1.0, 2.0],
            sigma_obs: 0.1,
        };
        assert!((hard_data_rmse(&[1.5, 9.0, 1.5], &hard) - 0.5).abs() < 1e-15);
        assert_eq!(hard_data_rmse(&[1.0], &HardData::empty()), 0.0);
    }
}
