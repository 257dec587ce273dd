//! Denoising score-matching training with momentum SGD or Adam under a
//! cosine learning-rate decay, early stopping and resumable checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use chda_core::io::{BinReader, BinWriter};
use chda_core::RngStream;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};
use crate::schedule::VESchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Cosine decay from `lr_max` at the first step to `lr_min` at the last.
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    /// Stop after this many epochs without relative improvement `min_delta`.
    pub patience: Option<usize>,
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::SgdMomentum,
            lr_max: 1e-4,
            lr_min: 1e-6,
            momentum: 0.9,
            patience: Some(20),
            min_delta: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || !(self.lr_max > 0.0)
            || !(self.lr_min >= 0.0)
            || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid training config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub best: f64,
}

/// Complete training state after some number of epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epochs_done: usize,
    pub params: Vec<f64>,
    /// Momentum buffer, or Adam's first moment.
    pub m: Vec<f64>,
    /// Adam's second moment (empty for SGD).
    pub v: Vec<f64>,
    pub steps: u64,
    pub history: Vec<EpochLoss>,
    pub stale: usize,
}

const CKPT_MAGIC: &[u8; 4] = b"CHCK";

impl Checkpoint {
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BinWriter::new(w);
        w.bytes(CKPT_MAGIC)?;
        w.u64(self.epochs_done as u64)?;
        w.u64(self.steps)?;
        w.u64(self.stale as u64)?;
        for v in [&self.params, &self.m, &self.v] {
            w.u64(v.len() as u64)?;
            w.f64s(v)?;
        }
        w.u64(self.history.len() as u64)?;
        for h in &self.history {
            w.u64(h.epoch as u64)?;
            w.f64(h.loss)?;
            w.f64(h.best)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BinReader::new(r);
        r.magic(CKPT_MAGIC)?;
        let epochs_done = r.u64("epochs")? as usize;
        let steps = r.u64("steps")?;
        let stale = r.u64("stale")? as usize;
        let mut vecs = Vec::new();
        for _ in 0..3 {
            let n = r.u64("length")? as usize;
            vecs.push(r.f64s(n)?);
        }
        let n = r.u64("history length")? as usize;
        let mut history = Vec::with_capacity(n);
        for _ in 0..n {
            history.push(EpochLoss {
                epoch: r.u64("epoch")? as usize,
                loss: r.f64("loss")?,
                best: r.f64("best")?,
            });
        }
        let v = vecs.pop().unwrap();
        let m = vecs.pop().unwrap();
        let params = vecs.pop().unwrap();
        Ok(Self {
            epochs_done,
            params,
            m,
            v,
            steps,
            history,
            stale,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochLoss>,
    pub checkpoint: Checkpoint,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// CSV `epoch,loss,best`; `best` is the running minimum.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss,best\n");
        for h in &self.history {
            s.push_str(&format!("{},{:.12e},{:.12e}\n", h.epoch, h.loss, h.best));
        }
        s
    }
}

fn draw_time(sched: &VESchedule, rng: &mut RngStream) -> f64 {
    sched.eps + (sched.t_max - sched.eps) * rng.uniform()
}

/// Mean loss over `n` fixed `(x₀, t, ε)` triples drawn from `rng`; no gradient.
pub fn dsm_loss(
    net: &Network,
    data: &[Vec<f64>],
    sched: &VESchedule,
    n: usize,
    rng: &RngStream,
) -> f64 {
    let mut scratch = vec![0.0; net.params().len()];
    let mut r = rng.clone();
    let mut total = 0.0;
    for k in 0..n {
        let x0 = &data[k % data.len()];
        let t = draw_time(sched, &mut r);
        let mut eps = vec![0.0; x0.len()];
        r.fill_normal(&mut eps);
        total += net.loss_and_grad(x0, &eps, t, sched.sigma_t(t), &mut scratch);
    }
    total / n.max(1) as f64
}

/// Trains a score network on normalized fields. Epoch `e` draws its order,
/// times and noise from `rng.fork_indexed("epoch", e)`, so a run resumed
/// from a checkpoint replays exactly. `on_epoch` sees each finished epoch.
pub fn dsm_train(
    data: &[Vec<f64>],
    spec: NetworkSpec,
    sched: &VESchedule,
    cfg: &TrainConfig,
    rng: &RngStream,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    sched.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(bad) = data.iter().position(|x| x.len() != spec.n_pixels()) {
        return Err(Error::InvalidArgument(format!(
            "training field {bad} does not match the network grid"
        )));
    }
    let n_params = spec.n_params();
    let mut state = match resume {
        Some(c) => {
            if c.params.len() != n_params {
                return Err(Error::InvalidArgument(
                    "checkpoint does not match the network spec".into(),
                ));
            }
            c
        }
        None => Checkpoint {
            epochs_done: 0,
            params: Network::new(spec, &mut rng.fork("init"))?.params().to_vec(),
            m: vec![0.0; n_params],
            v: if cfg.optimizer == OptimizerKind::Adam {
                vec![0.0; n_params]
            } else {
                vec![]
            },
            steps: 0,
            history: vec![],
            stale: 0,
        },
    };
    let mut net = Network::from_params(spec, state.params.clone())?;
    let batches = data.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches).max(1) as f64;
    let mut stopped_early = false;
    for epoch in state.epochs_done..cfg.epochs {
        if let Some(p) = cfg.patience {
            if state.stale >= p {
                stopped_early = true;
                break;
            }
        }
        let mut er = rng.fork_indexed("epoch", epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        er.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let draws: Vec<(f64, Vec<f64>)> = chunk
                .iter()
                .map(|_| {
                    let t = draw_time(sched, &mut er);
                    let mut eps = vec![0.0; spec.n_pixels()];
                    er.fill_normal(&mut eps);
                    (t, eps)
                })
                .collect();
            let per: Vec<(f64, Vec<f64>)> = chunk
                .par_iter()
                .zip(&draws)
                .map(|(&i, (t, eps))| {
                    let mut g = vec![0.0; n_params];
                    let l = net.loss_and_grad(&data[i], eps, *t, sched.sigma_t(*t), &mut g);
                    (l, g)
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for (l, g) in &per {
                loss += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / chunk.len() as f64;
            loss *= inv;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss".into(),
                    location: format!("epoch {epoch}, batch {b}"),
                });
            }
            grad.iter_mut().for_each(|g| *g *= inv);
            let lr = cfg.lr_min
                + 0.5
                    * (cfg.lr_max - cfg.lr_min)
                    * (1.0 + (std::f64::consts::PI * state.steps as f64 / total_steps).cos());
            state.steps += 1;
            let p = net.params_mut();
            match cfg.optimizer {
                OptimizerKind::SgdMomentum => {
                    for ((w, m), g) in p.iter_mut().zip(&mut state.m).zip(&grad) {
                        *m = cfg.momentum * *m + g;
                        *w -= lr * *m;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2, e): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                    let k = state.steps as i32;
                    let (c1, c2) = (1.0 - b1.powi(k), 1.0 - b2.powi(k));
                    for (((w, m), v), g) in
                        p.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(&grad)
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + e);
                    }
                }
            }
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_loss /= data.len() as f64;
        let prev_best = state.history.last().map_or(f64::INFINITY, |h| h.best);
        if epoch_loss < prev_best * (1.0 - cfg.min_delta) {
            state.stale = 0;
        } else {
            state.stale += 1;
        }
        state.history.push(EpochLoss {
            epoch,
            loss: epoch_loss,
            best: prev_best.min(epoch_loss),
        });
        state.epochs_done = epoch + 1;
        state.params = net.params().to_vec();
        on_epoch(&state)?;
    }
    state.params = net.params().to_vec();
    Ok(TrainOutcome {
        network: net,
        history: state.history.clone(),
        checkpoint: state,
        stopped_early,
    })
}
