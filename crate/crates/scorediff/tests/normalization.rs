use chda_core::channel::ChannelPrior;
use chda_core::{GridSpec, RngStream};
use chda_scorediff::{
    diagnostics, generate_ensemble, Network, NetworkSpec, NormStats, SamplerConfig, ScoreModel,
    VESchedule,
};

#[test]
fn stored_statistics_match_recomputation() {
    let grid = GridSpec::square(16);
    let prior = ChannelPrior::default();
    let data = prior
        .training_set(3242, &grid, &RngStream::new(81))
        .unwrap();
    let stats = NormStats::from_ensemble(&data).unwrap();
    let spec = NetworkSpec {
        nx: 16,
        ny: 16,
        ..NetworkSpec::default()
    };
    let model =
        ScoreModel::network(Network::new(spec, &mut RngStream::new(82)).unwrap(), stats).unwrap();
    let mut buf = Vec::new();
    model.write(&mut buf).unwrap();
    let loaded = ScoreModel::read(buf.as_slice()).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(NormStats::from_ensemble(&data).unwrap(), loaded.stats);
    for m in data.members().iter().take(50) {
        let back = loaded
            .stats
            .denormalize(&loaded.stats.normalize(m.values()));
        for (a, b) in back.iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn diagnostics_report_without_filtering() {
    let grid = GridSpec::square(8);
    let model = ScoreModel::gaussian(grid, vec![2.5; 64], vec![1.0; 64]).unwrap();
    let e = generate_ensemble(
        &model,
        grid,
        &VESchedule::default(),
        &SamplerConfig::Ode { steps: 200 },
        40,
        None,
        &RngStream::new(83),
    )
    .unwrap();
    let d = diagnostics(&e, 2.5);
    assert_eq!(d.n, 40);
    assert!(d.in_range < 1.0 && d.in_range > 0.5);
    let clipped = generate_ensemble(
        &model,
        grid,
        &VESchedule::default(),
        &SamplerConfig::Ode { steps: 200 },
        40,
        Some([1.0, 4.0]),
        &RngStream::new(83),
    )
    .unwrap();
    assert_eq!(clipped.len(), 40);
    assert_eq!(diagnostics(&clipped, 2.5).in_range, 1.0);
}
