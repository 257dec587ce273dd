use chda_core::{GridSpec, RngStream};
use chda_scorediff::{
    sample_many, sample_posterior, Guidance, HardData, PosteriorSettings, SamplerConfig,
    ScoreModel, VESchedule,
};

/// Per-pixel means on the scale of z-scored data. The sampler starts from a
/// zero-mean terminal state, which leaves a bias of `μ σ_d / σ_T` in the ODE.
fn target(grid: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let mean = (0..n).map(|k| 0.1 * ((k % 5) as f64 - 2.0)).collect();
    let var = (0..n).map(|k| 0.5 + 0.25 * (k % 7) as f64).collect();
    (mean, var)
}

/// Largest per-pixel mean and variance deviations in units of their standard errors,
/// plus the same for the pixel-averaged errors.
fn moment_z_scores(samples: &[Vec<f64>], mean: &[f64], var: &[f64]) -> (f64, f64, f64, f64) {
    let n = samples.len() as f64;
    let (mut zm, mut zv, mut pooled_m, mut pooled_v) = (0f64, 0f64, 0.0, 0.0);
    for k in 0..mean.len() {
        let m = samples.iter().map(|s| s[k]).sum::<f64>() / n;
        let v = samples.iter().map(|s| (s[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
        let sm = (var[k] / n).sqrt();
        let sv = var[k] * (2.0 / (n - 1.0)).sqrt();
        zm = zm.max((m - mean[k]).abs() / sm);
        zv = zv.max((v - var[k]).abs() / sv);
        pooled_m += (m - mean[k]) / sm;
        pooled_v += (v - var[k]) / sv;
    }
    let root = (mean.len() as f64).sqrt();
    (zm, zv, pooled_m.abs() / root, pooled_v.abs() / root)
}

fn check_sampler(cfg: SamplerConfig, seed: u64) {
    let grid = GridSpec::square(8);
    let (mean, var) = target(&grid);
    let model = ScoreModel::gaussian(grid, mean.clone(), var.clone()).unwrap();
    let samples = sample_many(
        &model,
        &VESchedule::default(),
        &cfg,
        2000,
        &RngStream::new(seed),
    )
    .unwrap();
    let (zm, zv, pm, pv) = moment_z_scores(&samples, &mean, &var);
    // Pixel-averaged errors at 3 standard errors; per-pixel maxima over 64
    // pixels allow for the multiplicity of the comparison.
    assert!(
        pm < 3.0 && pv < 3.0,
        "{cfg:?}: pooled mean z {pm}, pooled var z {pv}"
    );
    assert!(
        zm < 4.0 && zv < 4.0,
        "{cfg:?}: max mean z {zm}, max var z {zv}"
    );
}

#[test]
fn ode_reproduces_gaussian_moments() {
    check_sampler(SamplerConfig::Ode { steps: 1000 }, 51);
}

#[test]
fn pc_reproduces_gaussian_moments() {
    // The Langevin corrector carries an O(snr²) variance bias, so the moment
    // check uses a small snr just as the ODE check uses a fine step.
    check_sampler(
        SamplerConfig::Pc {
            steps: 500,
            snr: 0.01,
        },
        52,
    );
}

#[test]
fn point_mass_ode_collapses() {
    let grid = GridSpec::square(8);
    let x0: Vec<f64> = (0..64).map(|k| (k as f64 * 0.37).sin()).collect();
    let model = ScoreModel::point_mass(grid, x0.clone()).unwrap();
    let samples = sample_many(
        &model,
        &VESchedule::default(),
        &SamplerConfig::Ode { steps: 1000 },
        50,
        &RngStream::new(53),
    )
    .unwrap();
    for s in samples {
        let err = s
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "{err}");
    }
}

fn conditioned_rmse(guidance: Guidance) -> f64 {
    let grid = GridSpec::square(8);
    let (mean, var) = target(&grid);
    let model = ScoreModel::gaussian(grid, mean, var).unwrap();
    let truth: Vec<f64> = (0..64)
        .map(|k| 2.5 + 0.8 * (k as f64 * 0.91).cos())
        .collect();
    let data = HardData::lattice(&grid, &truth, 4, 0.01);
    assert_eq!(data.cells.len(), 4);
    let sched = VESchedule::default();
    let settings = PosteriorSettings {
        guidance,
        ..PosteriorSettings::new(1.0, 100_000)
    };
    let mut sq = 0.0;
    let reps = 20;
    for r in 0..reps {
        // The explicit step is stable while dt·(γ/σ_obs²)·g²σ_d²/(σ_d² + σ_t²) < 2;
        // here that product peaks near 1.3.
        let x = sample_posterior(
            &model,
            &sched,
            &data,
            &settings,
            &mut RngStream::new(60 + r),
        )
        .unwrap();
        sq += data
            .cells
            .iter()
            .zip(&data.values)
            .map(|(&c, y)| (x[c] - y).powi(2))
            .sum::<f64>();
    }
    (sq / (reps as usize * data.cells.len()) as f64).sqrt()
}

#[test]
fn conditioned_gaussian_samples_honour_hard_data() {
    let rmse = conditioned_rmse(Guidance::Plain);
    assert!(rmse < 0.01, "observed-cell rmse {rmse}");
}

#[test]
fn jacobian_guidance_honours_hard_data() {
    let rmse = conditioned_rmse(Guidance::Jacobian);
    assert!(rmse < 0.01, "observed-cell rmse {rmse}");
}

#[test]
fn rejects_negative_strength_and_bad_cells() {
    let grid = GridSpec::square(4);
    let model = ScoreModel::gaussian(grid, vec![0.0; 16], vec![1.0; 16]).unwrap();
    let sched = VESchedule::default();
    let data = HardData {
        cells: vec![3],
        values: vec![1.0],
        sigma_obs: 0.1,
    };
    assert!(sample_posterior(
        &model,
        &sched,
        &data,
        &PosteriorSettings::new(-1.0, 10),
        &mut RngStream::new(1)
    )
    .is_err());
    let bad = HardData {
        cells: vec![16],
        ..data
    };
    assert!(sample_posterior(
        &model,
        &sched,
        &bad,
        &PosteriorSettings::new(1.0, 10),
        &mut RngStream::new(1)
    )
    .is_err());
}
