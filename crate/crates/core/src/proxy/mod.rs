//! Regression proxies mapping a flattened log-permeability field to the
//! simulated data vector. One independent tree model per output; the linear
//! proxy is solved jointly.

mod linear;
mod tree;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::LogPermField;
use crate::io::{BinReader, BinWriter};
use crate::linalg::Matrix;
use crate::rng::RngStream;

pub use linear::LinearModel;
use tree::{grow_boost_tree, grow_forest_tree, Columns, Node};
pub use tree::{BoostParams, ForestParams, Tree};

const MAGIC: &[u8; 4] = b"CHML";
const VERSION: u16 = 1;
pub const MIN_TRAINING_MEMBERS: usize = 10;

/// Anything that maps a parameter vector to a data vector.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict_values(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyKind {
    Linear,
    RandomForest,
    GradientBoosting,
}

impl ProxyKind {
    pub const ALL: [ProxyKind; 3] = [
        ProxyKind::Linear,
        ProxyKind::RandomForest,
        ProxyKind::GradientBoosting,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ProxyKind::Linear => "linear",
            ProxyKind::RandomForest => "rf",
            ProxyKind::GradientBoosting => "gbt",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ProxyKind::Linear => 0,
            ProxyKind::RandomForest => 1,
            ProxyKind::GradientBoosting => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(ProxyKind::Linear),
            1 => Ok(ProxyKind::RandomForest),
            2 => Ok(ProxyKind::GradientBoosting),
            _ => Err(Error::Format(format!("unknown proxy kind tag {t}"))),
        }
    }
}

impl fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ProxyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProxyKind::Linear),
            "rf" | "random-forest" => Ok(ProxyKind::RandomForest),
            "gbt" | "gradient-boosting" => Ok(ProxyKind::GradientBoosting),
            _ => Err(Error::InvalidArgument(format!("unknown proxy kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyConfig {
    pub ridge: f64,
    pub validation_fraction: f64,
    pub forest: ForestParams,
    pub boost: BoostParams,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-8,
            validation_fraction: 0.2,
            forest: ForestParams::default(),
            boost: BoostParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub n_members: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub split_seed: u64,
    pub rmse_per_output: Vec<f64>,
    pub rmse_total: f64,
    pub fit_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rmse_total: f64,
    pub rmse_per_output: Vec<f64>,
    pub fit_seconds: f64,
}

impl ValidationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("output,rmse\n");
        for (k, r) in self.rmse_per_output.iter().enumerate() {
            s.push_str(&format!("{k},{r:.10e}\n"));
        }
        s.push_str(&format!("total,{:.10e}\n", self.rmse_total));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
enum State {
    Linear(LinearModel),
    /// One forest per output.
    Forest(Vec<Vec<Tree>>),
    /// Per-output base value and boosting rounds.
    Boost(Vec<f64>, Vec<Vec<Tree>>),
}

/// A fitted proxy. Immutable after fitting; prediction is a pure function.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyModel {
    kind: ProxyKind,
    n_features: usize,
    n_outputs: usize,
    state: State,
    meta: TrainingMeta,
}

/// Seeded 80/20 style split: returns (train, validation) row indices.
pub fn split_indices(
    n: usize,
    validation_fraction: f64,
    split_seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(split_seed).shuffle(&mut idx);
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

impl ProxyModel {
    /// Fits on a seeded training split of the rows of `x` (members x cells)
    /// and `d` (members x data); records validation RMSE on the held-out rows.
    pub fn fit(
        kind: ProxyKind,
        cfg: &ProxyConfig,
        x: &Matrix,
        d: &Matrix,
        rng: &RngStream,
    ) -> Result<Self> {
        if x.rows() != d.rows() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} data rows", x.rows()),
                found: format!("{}", d.rows()),
            });
        }
        if x.rows() < MIN_TRAINING_MEMBERS {
            return Err(Error::InsufficientEnsemble {
                found: x.rows(),
                needed: MIN_TRAINING_MEMBERS,
            });
        }
        if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "validation_fraction must lie in (0, 1)".into(),
            ));
        }
        let split_seed = rng.fork("split").next_u64();
        let (train, val) = split_indices(x.rows(), cfg.validation_fraction, split_seed);
        let start = Instant::now();
        let state = fit_state(
            kind,
            cfg,
            &x.select_rows(&train),
            &d.select_rows(&train),
            rng,
        )?;
        let fit_seconds = start.elapsed().as_secs_f64().max(1e-9);
        let mut model = Self {
            kind,
            n_features: x.cols(),
            n_outputs: d.cols(),
            state,
            meta: TrainingMeta {
                n_members: x.rows(),
                n_train: train.len(),
                n_validation: val.len(),
                split_seed,
                rmse_per_output: Vec::new(),
                rmse_total: 0.0,
                fit_seconds,
            },
        };
        let q = d.cols();
        let mut sq = vec![0.0; q];
        for &r in &val {
            let pred = model.predict_values(x.row(r));
            for ((s, p), t) in sq.iter_mut().zip(&pred).zip(d.row(r)) {
                *s += (p - t) * (p - t);
            }
        }
        let nv = val.len() as f64;
        model.meta.rmse_total = (sq.iter().sum::<f64>() / (nv * q as f64)).sqrt();
        model.meta.rmse_per_output = sq.iter().map(|s| (s / nv).sqrt()).collect();
        Ok(model)
    }

    pub fn kind(&self) -> ProxyKind {
        self.kind
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn validation_report(&self) -> ValidationReport {
        ValidationReport {
            rmse_total: self.meta.rmse_total,
            rmse_per_output: self.meta.rmse_per_output.clone(),
            fit_seconds: self.meta.fit_seconds,
        }
    }

    pub fn predict(&self, z: &LogPermField) -> Result<Vec<f64>> {
        if z.values().len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: format!("{} cells", self.n_features),
                found: format!("{}", z.values().len()),
            });
        }
        Ok(self.predict_values(z.values()))
    }

    /// Predicts every row of `x`; identical to calling `predict` per row.
    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: format!("{} cells", self.n_features),
                found: format!("{}", x.cols()),
            });
        }
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .into_par_iter()
            .map(|r| self.predict_values(x.row(r)))
            .collect();
        Matrix::from_vec(x.rows(), self.n_outputs, rows.concat())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BinWriter::new(w);
        w.bytes(MAGIC)?;
        w.u16(VERSION)?;
        w.u8(self.kind.tag())?;
        w.u32(self.n_features as u32)?;
        w.u32(self.n_outputs as u32)?;
        let m = &self.meta;
        w.u32(m.n_members as u32)?;
        w.u32(m.n_train as u32)?;
        w.u32(m.n_validation as u32)?;
        w.u64(m.split_seed)?;
        w.f64(m.fit_seconds)?;
        w.f64(m.rmse_total)?;
        w.f64s(&m.rmse_per_output)?;
        match &self.state {
            State::Linear(l) => {
                w.f64s(&l.x_mean)?;
                w.f64s(&l.y_mean)?;
                w.f64s(l.coef.as_slice())?;
            }
            State::Forest(forests) => write_forests(&mut w, forests)?,
            State::Boost(base, rounds) => {
                w.f64s(base)?;
                write_forests(&mut w, rounds)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BinReader::new(r);
        r.magic(MAGIC)?;
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported proxy file version {version}"
            )));
        }
        let kind = ProxyKind::from_tag(r.u8("kind")?)?;
        let n_features = r.u32("feature count")? as usize;
        let n_outputs = r.u32("output count")? as usize;
        let n_members = r.u32("member count")? as usize;
        let n_train = r.u32("train count")? as usize;
        let n_validation = r.u32("validation count")? as usize;
        let split_seed = r.u64("split seed")?;
        let fit_seconds = r.f64("fit seconds")?;
        let rmse_total = r.f64("rmse")?;
        let rmse_per_output = r.f64s(n_outputs)?;
        let state = match kind {
            ProxyKind::Linear => {
                let x_mean = r.f64s(n_features)?;
                let y_mean = r.f64s(n_outputs)?;
                let coef =
                    Matrix::from_vec(n_features, n_outputs, r.f64s(n_features * n_outputs)?)?;
                State::Linear(LinearModel {
                    x_mean,
                    y_mean,
                    coef,
                })
            }
            ProxyKind::RandomForest => State::Forest(read_forests(&mut r, n_outputs, n_features)?),
            ProxyKind::GradientBoosting => {
                let base = r.f64s(n_outputs)?;
                State::Boost(base, read_forests(&mut r, n_outputs, n_features)?)
            }
        };
        if !r.at_end()? {
            return Err(Error::Format("trailing bytes after proxy model".into()));
        }
        Ok(Self {
            kind,
            n_features,
            n_outputs,
            state,
            meta: TrainingMeta {
                n_members,
                n_train,
                n_validation,
                split_seed,
                rmse_per_output,
                rmse_total,
                fit_seconds,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

impl Predictor for ProxyModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn predict_values(&self, x: &[f64]) -> Vec<f64> {
        match &self.state {
            State::Linear(l) => l.predict(x),
            State::Forest(forests) => forests
                .iter()
                .map(|trees| trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64)
                .collect(),
            State::Boost(base, rounds) => base
                .iter()
                .zip(rounds)
                .map(|(b, trees)| trees.iter().fold(*b, |acc, t| acc + t.predict(x)))
                .collect(),
        }
    }
}

fn fit_state(
    kind: ProxyKind,
    cfg: &ProxyConfig,
    x: &Matrix,
    d: &Matrix,
    rng: &RngStream,
) -> Result<State> {
    let q = d.cols();
    let targets = d.transpose();
    match kind {
        ProxyKind::Linear => Ok(State::Linear(LinearModel::fit(x, d, cfg.ridge)?)),
        ProxyKind::RandomForest => {
            let rows: Vec<&[f64]> = (0..x.rows()).map(|r| x.row(r)).collect();
            let cols = Columns::from_rows(&rows);
            let n = x.rows();
            let p = &cfg.forest;
            let forests = (0..q)
                .into_par_iter()
                .map(|o| {
                    let y = targets.row(o);
                    (0..p.n_trees.max(1))
                        .map(|t| {
                            let mut tr =
                                rng.fork_indexed("forest", (o * p.n_trees.max(1) + t) as u64);
                            let mut weights = vec![0.0; n];
                            if p.bootstrap {
                                for _ in 0..n {
                                    weights[tr.index(n)] += 1.0;
                                }
                            } else {
                                weights.fill(1.0);
                            }
                            grow_forest_tree(&cols, y, &weights, p, &mut tr)
                        })
                        .collect()
                })
                .collect();
            Ok(State::Forest(forests))
        }
        ProxyKind::GradientBoosting => {
            let rows: Vec<&[f64]> = (0..x.rows()).map(|r| x.row(r)).collect();
            let cols = Columns::from_rows(&rows);
            let orders = cols.sorted_orders();
            let p = &cfg.boost;
            let fitted: Vec<(f64, Vec<Tree>)> = (0..q)
                .into_par_iter()
                .map(|o| {
                    let y = targets.row(o);
                    let base = y.iter().sum::<f64>() / y.len() as f64;
                    let mut pred = vec![base; y.len()];
                    let mut trees = Vec::with_capacity(p.n_rounds);
                    let mut resid = vec![0.0; y.len()];
                    for _ in 0..p.n_rounds {
                        for ((g, t), f) in resid.iter_mut().zip(y).zip(&pred) {
                            *g = t - f;
                        }
                        let tree = grow_boost_tree(&cols, &orders, &resid, p);
                        for (r, f) in pred.iter_mut().enumerate() {
                            *f += tree.predict(rows[r]);
                        }
                        trees.push(tree);
                    }
                    (base, trees)
                })
                .collect();
            let (base, rounds) = fitted.into_iter().unzip();
            Ok(State::Boost(base, rounds))
        }
    }
}

fn write_forests<W: Write>(w: &mut BinWriter<W>, forests: &[Vec<Tree>]) -> Result<()> {
    for trees in forests {
        w.u32(trees.len() as u32)?;
        for t in trees {
            w.u32(t.nodes.len() as u32)?;
            for n in &t.nodes {
                w.u32(n.feature)?;
                w.f64(n.threshold)?;
                w.u32(n.left)?;
                w.u32(n.right)?;
                w.f64(n.value)?;
            }
        }
    }
    Ok(())
}

fn read_forests<R: Read>(
    r: &mut BinReader<R>,
    n_outputs: usize,
    n_features: usize,
) -> Result<Vec<Vec<Tree>>> {
    let mut out = Vec::with_capacity(n_outputs);
    for _ in 0..n_outputs {
        let n_trees = r.u32("tree count")? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = r.u32("node count")? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let node = Node {
                    feature: r.u32("feature")?,
                    threshold: r.f64("threshold")?,
                    left: r.u32("left")?,
                    right: r.u32("right")?,
                    value: r.f64("value")?,
                };
                let bad_child = |c: u32| c as usize >= n_nodes;
                if !Tree::is_leaf(&node)
                    && ((node.feature as usize) >= n_features
                        || bad_child(node.left)
                        || bad_child(node.right))
                {
                    return Err(Error::Format("corrupt tree node".into()));
                }
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(Error::Format("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        out.push(trees);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, p: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = RngStream::new(seed);
        let mut x = Matrix::zeros(n, p);
        rng.fill_normal(x.as_mut_slice());
        let mut d = Matrix::zeros(n, 3);
        for r in 0..n {
            d[(r, 0)] = 2.0 * x[(r, 0)] - x[(r, 1)] + 0.5;
            d[(r, 1)] = if x[(r, 2)] > 0.0 { 1.0 } else { -1.0 };
            d[(r, 2)] = x[(r, 3)] * x[(r, 4)];
        }
        (x, d)
    }

    #[test]
    fn linear_exact_on_linear_data() {
        let (x, mut d) = synthetic(60, 8, 1);
        for r in 0..60 {
            d[(r, 1)] = x[(r, 5)] - 3.0;
            d[(r, 2)] = 0.25 * x[(r, 7)];
        }
        let m = ProxyModel::fit(
            ProxyKind::Linear,
            &ProxyConfig::default(),
            &x,
            &d,
            &RngStream::new(2),
        )
        .unwrap();
        assert!(m.validation_report().rmse_total < 1e-8);
        assert_eq!(m.meta().n_validation, 12);
    }

    #[test]
    fn constant_targets_predicted_by_all_kinds() {
        let (x, _) = synthetic(20, 6, 3);
        let d = Matrix::from_vec(20, 2, vec![4.5; 40]).unwrap();
        for kind in ProxyKind::ALL {
            let m =
                ProxyModel::fit(kind, &ProxyConfig::default(), &x, &d, &RngStream::new(4)).unwrap();
            assert_eq!(m.validation_report().rmse_total, 0.0, "{kind}");
            assert!((m.predict_values(x.row(0))[1] - 4.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_depth_zero_tree_predicts_training_mean() {
        let (x, d) = synthetic(30, 6, 5);
        let cfg = ProxyConfig {
            forest: ForestParams {
                n_trees: 1,
                max_depth: Some(0),
                bootstrap: false,
                ..ForestParams::default()
            },
            ..ProxyConfig::default()
        };
        let m = ProxyModel::fit(ProxyKind::RandomForest, &cfg, &x, &d, &RngStream::new(6)).unwrap();
        let (train, _) = split_indices(30, 0.2, m.meta().split_seed);
        let mean0 = train.iter().map(|&r| d[(r, 0)]).sum::<f64>() / train.len() as f64;
        for r in 0..30 {
            assert!((m.predict_values(x.row(r))[0] - mean0).abs() < 1e-12);
        }
    }

    #[test]
    fn trees_beat_linear_on_step_target() {
        let (x, d) = synthetic(200, 6, 7);
        let d = d.transpose().select_rows(&[1]).transpose();
        let cfg = ProxyConfig::default();
        let rng = RngStream::new(8);
        let lin = ProxyModel::fit(ProxyKind::Linear, &cfg, &x, &d, &rng).unwrap();
        for kind in [ProxyKind::RandomForest, ProxyKind::GradientBoosting] {
            let m = ProxyModel::fit(kind, &cfg, &x, &d, &rng).unwrap();
            assert!(m.meta().rmse_total < lin.meta().rmse_total, "{kind}");
        }
    }

    #[test]
    fn forest_stays_inside_target_range() {
        let (x, d) = synthetic(50, 6, 9);
        let m = ProxyModel::fit(
            ProxyKind::RandomForest,
            &ProxyConfig::default(),
            &x,
            &d,
            &RngStream::new(10),
        )
        .unwrap();
        let (train, _) = split_indices(50, 0.2, m.meta().split_seed);
        let mut probe = RngStream::new(11);
        for _ in 0..100 {
            let z: Vec<f64> = (0..6).map(|_| 5.0 * probe.normal()).collect();
            let pred = m.predict_values(&z);
            for o in 0..3 {
                let lo = train
                    .iter()
                    .map(|&r| d[(r, o)])
                    .fold(f64::INFINITY, f64::min);
                let hi = train
                    .iter()
                    .map(|&r| d[(r, o)])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(pred[o] >= lo - 1e-12 && pred[o] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn batch_matches_single_and_file_round_trip() {
        let (x, d) = synthetic(40, 6, 12);
        for kind in ProxyKind::ALL {
            let m = ProxyModel::fit(kind, &ProxyConfig::default(), &x, &d, &RngStream::new(13))
                .unwrap();
            let batch = m.predict_batch(&x).unwrap();
            for r in 0..40 {
                assert_eq!(batch.row(r), m.predict_values(x.row(r)).as_slice());
            }
            let mut buf = Vec::new();
            m.write(&mut buf).unwrap();
            let back = ProxyModel::read(buf.as_slice()).unwrap();
            assert_eq!(back, m);
            assert!(ProxyModel::read(&buf[..buf.len() - 3]).is_err());
        }
    }

    #[test]
    fn fit_is_deterministic_and_rejects_bad_shapes() {
        let (x, d) = synthetic(30, 6, 14);
        let a = ProxyModel::fit(
            ProxyKind::GradientBoosting,
            &ProxyConfig::default(),
            &x,
            &d,
            &RngStream::new(15),
        )
        .unwrap();
        let b = ProxyModel::fit(
            ProxyKind::GradientBoosting,
            &ProxyConfig::default(),
            &x,
            &d,
            &RngStream::new(15),
        )
        .unwrap();
        assert_eq!(a.predict_batch(&x).unwrap(), b.predict_batch(&x).unwrap());
        let small = x.select_rows(&[0, 1, 2]);
        assert!(matches!(
            ProxyModel::fit(
                ProxyKind::Linear,
                &ProxyConfig::default(),
                &small,
                &d.select_rows(&[0, 1, 2]),
                &RngStream::new(1)
            ),
            Err(Error::InsufficientEnsemble { .. })
        ));
        let grid = crate::field::GridSpec::square(3);
        let z = LogPermField::constant(grid, 2.0).unwrap();
        assert!(a.predict(&z).is_err());
    }

    #[test]
    fn report_csv_lists_every_output() {
        let (x, d) = synthetic(30, 6, 16);
        let m = ProxyModel::fit(
            ProxyKind::Linear,
            &ProxyConfig::default(),
            &x,
            &d,
            &RngStream::new(17),
        )
        .unwrap();
        let csv = m.validation_report().to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert!(m.validation_report().fit_seconds > 0.0);
    }
}
