use chda_core::channel::ChannelPrior;
use chda_core::flow::{FlowSimulator, SimConfig};
use chda_core::{GridSpec, LogPermField, RngStream};
use rayon::prelude::*;

fn channelized(n: usize, grid: &GridSpec, seed: u64) -> Vec<LogPermField> {
    ChannelPrior::default()
        .training_set(n, grid, &RngStream::new(seed))
        .unwrap()
        .into_members()
}

#[test]
fn mass_balance_closes_on_channelized_fields() {
    let grid = GridSpec::square(32);
    let cfg = SimConfig::default();
    let sim = FlowSimulator::standard(grid, cfg.clone()).unwrap();
    let pore = cfg.porosity * cfg.total_compressibility * grid.cell_volume();
    let worst = channelized(20, &grid, 11)
        .par_iter()
        .map(|f| {
            let out = sim.simulate_detailed(f).unwrap();
            let mut worst: f64 = 0.0;
            for (state, injected) in out.states.iter().zip(&out.injected_m3) {
                let stored: f64 = state
                    .iter()
                    .map(|p| pore * (p - cfg.initial_pressure_bar))
                    .sum();
                worst = worst.max((stored - injected).abs() / injected);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    assert!(worst < 1e-3, "relative imbalance {worst}");
}

#[test]
fn doubling_permeability_never_raises_injector_pressure() {
    let grid = GridSpec::square(32);
    let sim = FlowSimulator::standard(grid, SimConfig::default()).unwrap();
    let inj = sim.injector_cell();
    channelized(20, &grid, 12).par_iter().for_each(|f| {
        let doubled =
            LogPermField::new(grid, f.values().iter().map(|v| v + 2f64.log10()).collect()).unwrap();
        let a = sim.simulate_detailed(f).unwrap();
        let b = sim.simulate_detailed(&doubled).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert!(sb[inj] <= sa[inj] + 1e-9, "{} > {}", sb[inj], sa[inj]);
        }
    });
}

#[test]
fn halving_the_time_step_changes_monitors_little() {
    let grid = GridSpec::square(32);
    let cfg = SimConfig::default();
    let fine = SimConfig {
        substeps_per_report: 2 * cfg.substeps_per_report,
        ..cfg.clone()
    };
    let coarse = FlowSimulator::standard(grid, cfg).unwrap();
    let fine = FlowSimulator::standard(grid, fine).unwrap();
    for f in channelized(5, &grid, 13) {
        let a = coarse.simulate(&f).unwrap();
        let b = fine.simulate(&f).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() / y < 5e-3, "{x} vs {y}");
        }
    }
}

#[test]
fn simulation_is_bitwise_deterministic() {
    let grid = GridSpec::square(32);
    let sim = FlowSimulator::standard(grid, SimConfig::default()).unwrap();
    let f = &channelized(1, &grid, 14)[0];
    let a = sim.simulate(f).unwrap();
    let b = sim.simulate(f).unwrap();
    assert_eq!(a.values, b.values);
}
