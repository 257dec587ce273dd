use std::collections::HashMap;

use chda_core::localization::{
    ml_enhanced_covariance, ml_localization, plain_pseudo_optimal, pseudo_optimal_taper,
    FieldSampler,
};
use chda_core::proxy::{Predictor, ProxyConfig, ProxyKind};
use chda_core::{Ensemble, EnsembleTag, GridSpec, LogPermField, Matrix, Result, RngStream};

/// Returns the simulated data stored for each training field.
struct Lookup {
    n_z: usize,
    n_d: usize,
    table: HashMap<Vec<u64>, Vec<f64>>,
}

impl Predictor for Lookup {
    fn n_features(&self) -> usize {
        self.n_z
    }

    fn n_outputs(&self) -> usize {
        self.n_d
    }

    fn predict_values(&self, x: &[f64]) -> Vec<f64> {
        self.table[&x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()].clone()
    }
}

struct GaussianSampler {
    grid: GridSpec,
}

impl FieldSampler for GaussianSampler {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn sample_partition(
        &self,
        _partition: usize,
        count: usize,
        rng: &RngStream,
    ) -> Result<Vec<Vec<f64>>> {
        let mut r = rng.clone();
        Ok((0..count)
            .map(|_| {
                let mut v = vec![0.0; self.grid.len()];
                r.fill_normal(&mut v);
                v
            })
            .collect())
    }
}

/// Each datum sums three known cells.
fn sparse_support(n_d: usize) -> Vec<[usize; 3]> {
    (0..n_d)
        .map(|j| [8 * j + 1, 8 * j + 3, 8 * j + 6])
        .collect()
}

fn linear_data(z: &Matrix, support: &[[usize; 3]]) -> Matrix {
    let mut d = Matrix::zeros(z.rows(), support.len());
    for m in 0..z.rows() {
        for (j, cells) in support.iter().enumerate() {
            d[(m, j)] = cells.iter().map(|&c| z[(m, c)]).sum();
        }
    }
    d
}

#[test]
fn exact_proxy_reproduces_plain_pseudo_optimal_bitwise() {
    let grid = GridSpec::square(8);
    let mut r = RngStream::new(41);
    let members: Vec<LogPermField> = (0..80)
        .map(|_| {
            LogPermField::new(grid, (0..64).map(|_| 2.5 + 0.4 * r.normal()).collect()).unwrap()
        })
        .collect();
    let e = Ensemble::new(members, 41, EnsembleTag::Prior).unwrap();
    let z = e.to_matrix();
    let d = linear_data(&z, &sparse_support(3));
    let table = (0..z.rows())
        .map(|m| {
            (
                z.row(m).iter().map(|v| v.to_bits()).collect(),
                d.row(m).to_vec(),
            )
        })
        .collect();
    let proxy = Lookup {
        n_z: 64,
        n_d: 3,
        table,
    };
    let ml =
        pseudo_optimal_taper(&ml_enhanced_covariance(&e, &proxy).unwrap(), z.rows(), 1e-3).unwrap();
    let plain = plain_pseudo_optimal(&z, &d, 1e-3).unwrap();
    assert_eq!(ml.entries(), plain.entries());
}

#[test]
fn linear_proxy_taper_concentrates_on_true_support() {
    // 40 training rows determine the 36 coefficients exactly.
    let grid = GridSpec::square(6);
    let n_e = 50;
    let support = sparse_support(4);
    let mut r = RngStream::new(42);
    let mut z = Matrix::zeros(n_e, grid.len());
    r.fill_normal(z.as_mut_slice());
    let d = linear_data(&z, &support);
    let sampler = GaussianSampler { grid };
    let (taper, _) = ml_localization(
        &z,
        &d,
        ProxyKind::Linear,
        &ProxyConfig::default(),
        &sampler,
        2000,
        1e-3,
        &RngStream::new(43),
    )
    .unwrap();
    assert_eq!((taper.n_params(), taper.n_data()), (36, 4));
    for (j, cells) in support.iter().enumerate() {
        for i in 0..grid.len() {
            let v = taper.entries()[(i, j)];
            assert!((0.0..=1.0).contains(&v));
            if cells.contains(&i) {
                assert!(v > 0.5, "support cell {i} datum {j}: {v}");
            } else {
                assert!(v < 0.5, "cell {i} datum {j}: {v}");
            }
        }
    }
}

#[test]
fn unit_threshold_removes_everything() {
    let mut r = RngStream::new(44);
    let mut z = Matrix::zeros(30, 20);
    r.fill_normal(z.as_mut_slice());
    let d = linear_data(&z, &[[1, 2, 3]]);
    let t = plain_pseudo_optimal(&z, &d, 1.0).unwrap();
    assert!(t.entries().as_slice().iter().all(|&v| v == 0.0));
}
