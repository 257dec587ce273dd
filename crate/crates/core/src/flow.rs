//! Single-phase, slightly compressible Darcy flow on a 2D Cartesian grid.
//!
//! Cell-centered finite volumes with harmonic-mean transmissibilities,
//! no-flow outer boundaries and fully implicit (backward Euler) time
//! stepping. Each step solves for the pressure increment
//!
//! `(φ c_t V / Δt) δp_i + Σ_j T_ij (δp_i - δp_j) = q_i - Σ_j T_ij (p_i - p_j)`
//!
//! with Jacobi-preconditioned conjugate gradients. The rate-controlled
//! injector enters as a source term; its Peaceman well index is used only to
//! report bottom-hole pressure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, LogPermField};
use crate::rng::RngStream;

pub const MD_TO_M2: f64 = 9.869_233e-16;
pub const BAR_TO_PA: f64 = 1e5;
pub const CP_TO_PA_S: f64 = 1e-3;
pub const DAY_S: f64 = 86_400.0;
pub const YEAR_DAYS: f64 = 365.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WellKind {
    /// Rate in m³/day.
    Injector {
        rate_m3_per_day: f64,
    },
    Monitor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub i: usize,
    pub j: usize,
    pub kind: WellKind,
}

/// Monitor order used in every data vector: north, east, south, west.
pub const MONITOR_NAMES: [&str; 4] = ["N", "E", "S", "W"];

/// Injector at the grid center and four monitors `offset` cells away in the
/// cardinal directions (N = +j, E = +i).
pub fn five_spot(grid: &GridSpec, offset: usize, rate_m3_per_day: f64) -> Result<Vec<WellSpec>> {
    let (ci, cj) = (grid.nx / 2, grid.ny / 2);
    if offset == 0 || ci < offset || cj < offset || ci + offset >= grid.nx || cj + offset >= grid.ny
    {
        return Err(Error::InvalidArgument(format!(
            "monitor offset {offset} does not fit a {}x{} grid",
            grid.nx, grid.ny
        )));
    }
    Ok(vec![
        WellSpec {
            i: ci,
            j: cj,
            kind: WellKind::Injector { rate_m3_per_day },
        },
        WellSpec {
            i: ci,
            j: cj + offset,
            kind: WellKind::Monitor,
        },
        WellSpec {
            i: ci + offset,
            j: cj,
            kind: WellKind::Monitor,
        },
        WellSpec {
            i: ci,
            j: cj - offset,
            kind: WellKind::Monitor,
        },
        WellSpec {
            i: ci - offset,
            j: cj,
            kind: WellKind::Monitor,
        },
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub porosity: f64,
    /// Total compressibility, 1/bar.
    pub total_compressibility: f64,
    /// Viscosity, cP.
    pub viscosity: f64,
    pub initial_pressure_bar: f64,
    pub duration_days: f64,
    pub n_reports: usize,
    /// Injection rate, m³/year.
    pub injection_rate: f64,
    pub substeps_per_report: usize,
    /// Monitor distance from the injector in cells; `None` uses `nx / 4`.
    pub monitor_offset: Option<usize>,
    pub well_radius_m: f64,
    pub solver_tolerance: f64,
    pub max_solver_iterations: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            porosity: 0.3,
            total_compressibility: 1e-3,
            viscosity: 3000.0,
            initial_pressure_bar: 150.0,
            duration_days: 730.0,
            n_reports: 24,
            injection_rate: 1000.0,
            substeps_per_report: 4,
            monitor_offset: None,
            well_radius_m: 0.1,
            solver_tolerance: 1e-10,
            max_solver_iterations: 20_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("porosity", self.porosity),
            ("total_compressibility", self.total_compressibility),
            ("viscosity", self.viscosity),
            ("initial_pressure_bar", self.initial_pressure_bar),
            ("duration_days", self.duration_days),
            ("well_radius_m", self.well_radius_m),
            ("solver_tolerance", self.solver_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.injection_rate.is_finite() && self.injection_rate >= 0.0) {
            return Err(Error::InvalidArgument("injection_rate must be >= 0".into()));
        }
        if self.n_reports == 0 || self.substeps_per_report == 0 {
            return Err(Error::InvalidArgument(
                "n_reports and substeps_per_report must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn report_interval_days(&self) -> f64 {
        self.duration_days / self.n_reports as f64
    }

    pub fn report_days(&self) -> Vec<f64> {
        let dt = self.report_interval_days();
        (1..=self.n_reports).map(|k| k as f64 * dt).collect()
    }

    pub fn rate_m3_per_day(&self) -> f64 {
        self.injection_rate / YEAR_DAYS
    }

    pub fn monitor_offset_for(&self, grid: &GridSpec) -> usize {
        self.monitor_offset.unwrap_or(grid.nx / 4)
    }

    /// Standard five-spot layout for `grid`.
    pub fn wells_for(&self, grid: &GridSpec) -> Result<Vec<WellSpec>> {
        five_spot(grid, self.monitor_offset_for(grid), self.rate_m3_per_day())
    }
}

/// Monitor pressures (bar), time-major and well-minor.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub n_wells: usize,
}

impl PressureSeries {
    pub fn at(&self, report: usize, well: usize) -> f64 {
        self.values[report * self.n_wells + well]
    }

    /// CSV with header `report_day,well_N,well_E,well_S,well_W`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("report_day");
        for w in 0..self.n_wells {
            s.push_str(&format!(",well_{}", well_name(w)));
        }
        s.push('\n');
        for (r, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t}"));
            for w in 0..self.n_wells {
                s.push_str(&format!(",{}", self.at(r, w)));
            }
            s.push('\n');
        }
        s
    }
}

fn well_name(w: usize) -> String {
    MONITOR_NAMES
        .get(w)
        .map_or_else(|| w.to_string(), |s| s.to_string())
}

/// Observed data with a diagonal error model.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard deviations; `C_D = diag(sigma²)`.
    pub sigma: Vec<f64>,
    pub n_wells: usize,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    /// CSV: the pressure columns followed by one `sigma_*` column per well.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("report_day");
        for w in 0..self.n_wells {
            s.push_str(&format!(",well_{}", well_name(w)));
        }
        for w in 0..self.n_wells {
            s.push_str(&format!(",sigma_{}", well_name(w)));
        }
        s.push('\n');
        for (r, t) in self.times.iter().enumerate() {
            s.push_str(&format!("{t}"));
            for w in 0..self.n_wells {
                s.push_str(&format!(",{}", self.values[r * self.n_wells + w]));
            }
            for w in 0..self.n_wells {
                s.push_str(&format!(",{}", self.sigma[r * self.n_wells + w]));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty observation file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"report_day")
            || cols.len() < 3
            || !(cols.len() - 1).is_multiple_of(2)
        {
            return Err(Error::Format(format!("bad observation header: {header}")));
        }
        let n_wells = (cols.len() - 1) / 2;
        let mut out = ObservationSet {
            times: vec![],
            values: vec![],
            sigma: vec![],
            n_wells,
        };
        let mut sig = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let nums: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", ln + 2)))?;
            if nums.len() != cols.len() {
                return Err(Error::Format(format!(
                    "line {}: expected {} columns",
                    ln + 2,
                    cols.len()
                )));
            }
            out.times.push(nums[0]);
            out.values.extend_from_slice(&nums[1..=n_wells]);
            sig.extend_from_slice(&nums[n_wells + 1..]);
        }
        out.sigma = sig;
        Ok(out)
    }
}

/// `d_obs = truth + ε`, `ε_k ~ N(0, (noise_frac·truth_k)²)`.
pub fn observe(
    truth: &PressureSeries,
    noise_frac: f64,
    rng: &mut RngStream,
) -> Result<ObservationSet> {
    if !(noise_frac.is_finite() && noise_frac >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_frac must be >= 0, got {noise_frac}"
        )));
    }
    let sigma: Vec<f64> = truth.values.iter().map(|v| noise_frac * v.abs()).collect();
    let values = truth
        .values
        .iter()
        .zip(&sigma)
        .map(|(v, s)| {
            let z = rng.normal();
            if *s == 0.0 {
                *v
            } else {
                v + s * z
            }
        })
        .collect();
    Ok(ObservationSet {
        times: truth.times.clone(),
        values,
        sigma,
        n_wells: truth.n_wells,
    })
}

/// Full simulation output.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub series: PressureSeries,
    /// Cell pressures (bar) at each report time.
    pub states: Vec<Vec<f64>>,
    /// Cumulative injected volume (m³) at each report time.
    pub injected_m3: Vec<f64>,
    /// Injector bottom-hole pressure (bar) at each report time.
    pub injector_bhp: Vec<f64>,
    pub solver_iterations: usize,
}

/// Forward operator from a log-permeability field to monitor pressures.
#[derive(Clone, Debug)]
pub struct FlowSimulator {
    grid: GridSpec,
    cfg: SimConfig,
    injector: (usize, f64),
    monitors: Vec<usize>,
}

impl FlowSimulator {
    pub fn new(grid: GridSpec, cfg: SimConfig, wells: &[WellSpec]) -> Result<Self> {
        grid.validate()?;
        cfg.validate()?;
        let mut injector = None;
        let mut monitors = Vec::new();
        for w in wells {
            if w.i >= grid.nx || w.j >= grid.ny {
                return Err(Error::InvalidArgument(format!(
                    "well at ({}, {}) outside grid",
                    w.i, w.j
                )));
            }
            let idx = grid.index(w.i, w.j);
            match w.kind {
                WellKind::Injector { rate_m3_per_day } => {
                    if injector.replace((idx, rate_m3_per_day)).is_some() {
                        return Err(Error::InvalidArgument("more than one injector".into()));
                    }
                    if (w.i, w.j) != (grid.nx / 2, grid.ny / 2) {
                        return Err(Error::InvalidArgument(
                            "injector must sit at the grid center".into(),
                        ));
                    }
                }
                WellKind::Monitor => monitors.push((w.i, w.j)),
            }
        }
        let injector = injector.ok_or_else(|| Error::InvalidArgument("no injector".into()))?;
        if monitors.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "need 4 monitors, got {}",
                monitors.len()
            )));
        }
        let (ci, cj) = (grid.nx / 2, grid.ny / 2);
        let dist: Vec<usize> = monitors
            .iter()
            .map(|&(i, j)| i.abs_diff(ci) + j.abs_diff(cj))
            .collect();
        let cardinal = monitors.iter().all(|&(i, j)| i == ci || j == cj);
        if !cardinal || dist.iter().any(|&d| d != dist[0] || d == 0) {
            return Err(Error::InvalidArgument(
                "monitors must form an equidistant five-spot".into(),
            ));
        }
        Ok(Self {
            grid,
            cfg,
            injector,
            monitors: monitors.iter().map(|&(i, j)| grid.index(i, j)).collect(),
        })
    }

    /// Simulator with the standard five-spot for `cfg`.
    pub fn standard(grid: GridSpec, cfg: SimConfig) -> Result<Self> {
        let wells = cfg.wells_for(&grid)?;
        Self::new(grid, cfg, &wells)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn n_data(&self) -> usize {
        self.cfg.n_reports * self.monitors.len()
    }

    pub fn injector_cell(&self) -> usize {
        self.injector.0
    }

    pub fn monitor_cells(&self) -> &[usize] {
        &self.monitors
    }

    pub fn simulate(&self, z: &LogPermField) -> Result<PressureSeries> {
        self.run(z, false).map(|o| o.series)
    }

    /// Simulation that also returns per-report cell pressures.
    pub fn simulate_detailed(&self, z: &LogPermField) -> Result<SimOutput> {
        self.run(z, true)
    }

    fn run(&self, z: &LogPermField, keep_states: bool) -> Result<SimOutput> {
        if z.grid() != &self.grid {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.grid),
                found: format!("{:?}", z.grid()),
            });
        }
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let n = g.len();
        let mu = self.cfg.viscosity * CP_TO_PA_S;
        let k: Vec<f64> = z
            .values()
            .iter()
            .map(|v| 10f64.powf(*v) * MD_TO_M2)
            .collect();
        let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
        // East and north face transmissibilities, m³/(Pa·s).
        let mut tx = vec![0.0; n];
        let mut ty = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let c = g.index(i, j);
                if i + 1 < nx {
                    tx[c] = g.dy * g.thickness / g.dx * harmonic(k[c], k[c + 1]) / mu;
                }
                if j + 1 < ny {
                    ty[c] = g.dx * g.thickness / g.dy * harmonic(k[c], k[c + nx]) / mu;
                }
            }
        }
        let dt = self.cfg.report_interval_days() / self.cfg.substeps_per_report as f64 * DAY_S;
        let ct = self.cfg.total_compressibility / BAR_TO_PA;
        let acc = self.cfg.porosity * ct * g.cell_volume() / dt;
        let op = FivePoint {
            nx,
            ny,
            tx: &tx,
            ty: &ty,
            acc,
        };
        let diag = op.diagonal();

        let (inj, rate_day) = self.injector;
        let q = rate_day / DAY_S;
        let p0 = self.cfg.initial_pressure_bar * BAR_TO_PA;
        let mut p = vec![p0; n];
        let mut rhs = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let mut work = CgWork::new(n);

        let r_eq = 0.2 * g.dx;
        let wi_geom =
            2.0 * std::f64::consts::PI * g.thickness / (mu * (r_eq / self.cfg.well_radius_m).ln());

        let mut series = Vec::with_capacity(self.n_data());
        let mut states = Vec::new();
        let mut injected = Vec::with_capacity(self.cfg.n_reports);
        let mut bhp = Vec::with_capacity(self.cfg.n_reports);
        let mut iterations = 0;
        let mut step = 0;
        for report in 1..=self.cfg.n_reports {
            for _ in 0..self.cfg.substeps_per_report {
                step += 1;
                op.flux(&p, &mut rhs);
                for v in rhs.iter_mut() {
                    *v = -*v;
                }
                rhs[inj] += q;
                delta.iter_mut().for_each(|d| *d = 0.0);
                iterations += pcg(&op, &diag, &rhs, &mut delta, &mut work, &self.cfg, step)?;
                for (pi, di) in p.iter_mut().zip(&delta) {
                    *pi += di;
                }
            }
            let t_days = report as f64 * self.cfg.report_interval_days();
            injected.push(rate_day * t_days);
            let wi = wi_geom * k[inj];
            bhp.push((p[inj] + if wi > 0.0 { q / wi } else { 0.0 }) / BAR_TO_PA);
            for &m in &self.monitors {
                series.push(p[m] / BAR_TO_PA);
            }
            if keep_states {
                states.push(p.iter().map(|v| v / BAR_TO_PA).collect());
            }
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::Other(
                "simulation produced non-finite pressures".into(),
            ));
        }
        Ok(SimOutput {
            series: PressureSeries {
                times: self.cfg.report_days(),
                values: series,
                n_wells: self.monitors.len(),
            },
            states,
            injected_m3: injected,
            injector_bhp: bhp,
            solver_iterations: iterations,
        })
    }
}

struct FivePoint<'a> {
    nx: usize,
    ny: usize,
    tx: &'a [f64],
    ty: &'a [f64],
    acc: f64,
}

impl FivePoint<'_> {
    /// `out = L p` (net outflow per cell).
    fn flux(&self, p: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.ny {
            for i in 0..nx {
                let c = j * nx + i;
                if i + 1 < nx {
                    let f = self.tx[c] * (p[c] - p[c + 1]);
                    out[c] += f;
                    out[c + 1] -= f;
                }
                if j + 1 < self.ny {
                    let f = self.ty[c] * (p[c] - p[c + nx]);
                    out[c] += f;
                    out[c + nx] -= f;
                }
            }
        }
    }

    /// `out = (acc I + L) x`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.flux(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += self.acc * xi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let nx = self.nx;
        let mut d = vec![self.acc; nx * self.ny];
        for j in 0..self.ny {
            for i in 0..nx {
                let c = j * nx + i;
                if i + 1 < nx {
                    d[c] += self.tx[c];
                    d[c + 1] += self.tx[c];
                }
                if j + 1 < self.ny {
                    d[c] += self.ty[c];
                    d[c + nx] += self.ty[c];
                }
            }
        }
        d
    }
}

struct CgWork {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
}

impl CgWork {
    fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            z: vec![0.0; n],
            p: vec![0.0; n],
            ap: vec![0.0; n],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG from a zero initial guess. Returns iterations used.
fn pcg(
    op: &FivePoint,
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    w: &mut CgWork,
    cfg: &SimConfig,
    step: usize,
) -> Result<usize> {
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(0);
    }
    let tol = cfg.solver_tolerance * b_norm;
    w.r.copy_from_slice(b);
    for ((z, r), d) in w.z.iter_mut().zip(&w.r).zip(diag) {
        *z = r / d;
    }
    w.p.copy_from_slice(&w.z);
    let mut rz = dot(&w.r, &w.z);
    for it in 1..=cfg.max_solver_iterations {
        op.apply(&w.p, &mut w.ap);
        let alpha = rz / dot(&w.p, &w.ap);
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&w.p).zip(w.r.iter_mut().zip(&w.ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let r_norm = dot(&w.r, &w.r).sqrt();
        if !r_norm.is_finite() {
            break;
        }
        if r_norm <= tol {
            return Ok(it);
        }
        for ((z, r), d) in w.z.iter_mut().zip(&w.r).zip(diag) {
            *z = r / d;
        }
        let rz_new = dot(&w.r, &w.z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in w.p.iter_mut().zip(&w.z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::SolverNonConvergence {
        iterations: cfg.max_solver_iterations,
        residual: dot(&w.r, &w.r).sqrt() / b_norm,
        tolerance: cfg.solver_tolerance,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(n: usize) -> FlowSimulator {
        FlowSimulator::standard(GridSpec::square(n), SimConfig::default()).unwrap()
    }

    #[test]
    fn output_has_24_reports_by_4_wells() {
        let s = sim(32);
        let z = LogPermField::constant(*s.grid(), 2.0).unwrap();
        let out = s.simulate(&z).unwrap();
        assert_eq!(out.values.len(), 96);
        assert_eq!(out.times.len(), 24);
        assert!((out.times[23] - 730.0).abs() < 1e-9);
        assert!(out.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn zero_rate_stays_at_initial_pressure() {
        let cfg = SimConfig {
            injection_rate: 0.0,
            ..SimConfig::default()
        };
        let s = FlowSimulator::standard(GridSpec::square(16), cfg).unwrap();
        let z = LogPermField::new(
            *s.grid(),
            (0..256).map(|k| 1.0 + (k % 7) as f64 * 0.4).collect(),
        )
        .unwrap();
        let out = s.simulate(&z).unwrap();
        assert!(out.values.iter().all(|&v| v == 150.0));
    }

    #[test]
    fn homogeneous_odd_grid_is_symmetric() {
        let s = sim(33);
        let z = LogPermField::constant(*s.grid(), 2.3).unwrap();
        let out = s.simulate(&z).unwrap();
        for r in 0..24 {
            let v: Vec<f64> = (0..4).map(|w| out.at(r, w)).collect();
            for w in 1..4 {
                assert!((v[w] - v[0]).abs() < 1e-8, "report {r}: {v:?}");
            }
        }
    }

    #[test]
    fn non_convergence_reports_iterations() {
        let cfg = SimConfig {
            max_solver_iterations: 2,
            solver_tolerance: 1e-14,
            ..SimConfig::default()
        };
        let s = FlowSimulator::standard(GridSpec::square(16), cfg).unwrap();
        let z = LogPermField::new(
            *s.grid(),
            (0..256).map(|k| 1.0 + (k % 5) as f64 * 0.6).collect(),
        )
        .unwrap();
        match s.simulate(&z) {
            Err(Error::SolverNonConvergence {
                iterations, step, ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(step, 1);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn layout_validation() {
        let g = GridSpec::square(16);
        let mut wells = five_spot(&g, 4, 1.0).unwrap();
        wells[1].j += 1;
        assert!(FlowSimulator::new(g, SimConfig::default(), &wells).is_err());
        assert!(five_spot(&g, 9, 1.0).is_err());
        let wells = five_spot(&g, 4, 1.0).unwrap();
        assert!(FlowSimulator::new(g, SimConfig::default(), &wells[..4]).is_err());
    }

    #[test]
    fn observe_without_noise_is_exact() {
        let s = sim(16);
        let truth = s
            .simulate(&LogPermField::constant(*s.grid(), 2.0).unwrap())
            .unwrap();
        let obs = observe(&truth, 0.0, &mut RngStream::new(1)).unwrap();
        assert_eq!(obs.values, truth.values);
        assert!(obs.sigma.iter().all(|&s| s == 0.0));
        assert!(observe(&truth, -0.1, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn observation_error_model() {
        let truth = PressureSeries {
            times: vec![1.0],
            values: vec![150.0, 160.0, 170.0, 180.0],
            n_wells: 4,
        };
        let rng = RngStream::new(4);
        let mut rel = Vec::with_capacity(40_000);
        for rep in 0..10_000u64 {
            let obs = observe(&truth, 0.01, &mut rng.fork_indexed("rep", rep)).unwrap();
            for (o, t) in obs.values.iter().zip(&truth.values) {
                rel.push((o - t) / t);
            }
            if rep == 0 {
                for (s, t) in obs.sigma.iter().zip(&truth.values) {
                    assert!((s * s - (0.01 * t).powi(2)).abs() < 1e-12);
                }
            }
        }
        // Per-well standard deviation over 10⁴ replicates.
        for w in 0..4 {
            let xs: Vec<f64> = rel.iter().skip(w).step_by(4).copied().collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd =
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            assert!((0.0097..=0.0103).contains(&sd), "well {w}: {sd}");
        }
    }

    #[test]
    fn observation_csv_round_trip() {
        let truth = PressureSeries {
            times: vec![30.0, 60.0],
            values: vec![150.0, 151.0, 152.0, 153.0, 154.0, 155.0, 156.0, 157.0],
            n_wells: 4,
        };
        let obs = observe(&truth, 0.01, &mut RngStream::new(2)).unwrap();
        let csv = obs.to_csv();
        assert!(csv.starts_with(
            "report_day,well_N,well_E,well_S,well_W,sigma_N,sigma_E,sigma_S,sigma_W\n"
        ));
        assert_eq!(ObservationSet::from_csv(&csv).unwrap(), obs);
        assert!(truth
            .to_csv()
            .starts_with("report_day,well_N,well_E,well_S,well_W\n"));
    }
}
