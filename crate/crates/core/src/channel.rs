//! Object-based generator of two-facies channelized log-permeability maps.
//!
//! Each channel is a sinusoidal band. In a frame rotated by the channel
//! orientation (angle from the +x axis), the centerline is
//! `v(u) = v0 + A sin(2πu/λ + φ)` and a cell belongs to the channel when
//! `|v - v(u)| <= w(u)/2`, where the full width
//! `w(u) = W (1 + a_u sin(2πu/λ_u + φ_u))` and `W = ratio × channel thickness`.
//! Channels are stacked until the channel fraction reaches the target.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{Ensemble, EnsembleTag, GridSpec, LogPermField};
use crate::rng::RngStream;

/// Mean and standard deviation of a normal draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalParam {
    pub mean: f64,
    pub std: f64,
}

impl NormalParam {
    pub const fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        let z = rng.normal();
        if self.std == 0.0 {
            self.mean
        } else {
            self.mean + self.std * z
        }
    }
}

/// Distribution of channel parameters, one normal per geometric quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelPrior {
    pub orientation_deg: NormalParam,
    pub amplitude_m: NormalParam,
    pub wavelength_m: NormalParam,
    pub width_thickness_ratio: NormalParam,
    pub channel_proportion: NormalParam,
    pub undulation_wavelength_m: NormalParam,
    /// Channel-body thickness used to turn the width/thickness ratio into a map-view width.
    pub channel_thickness_m: f64,
    /// Relative amplitude of the width undulation.
    pub undulation_amplitude: f64,
    pub channel_logk: f64,
    pub background_logk: f64,
}

impl Default for ChannelPrior {
    fn default() -> Self {
        Self {
            orientation_deg: NormalParam::new(90.0, 30.0),
            amplitude_m: NormalParam::new(250.0, 10.0),
            wavelength_m: NormalParam::new(2000.0, 50.0),
            width_thickness_ratio: NormalParam::new(50.0, 5.0),
            channel_proportion: NormalParam::new(0.40, 0.05),
            undulation_wavelength_m: NormalParam::new(250.0, 10.0),
            channel_thickness_m: 0.2,
            undulation_amplitude: 0.25,
            channel_logk: 2000f64.log10(),
            background_logk: 50f64.log10(),
        }
    }
}

/// One realization's geometric parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub orientation_deg: f64,
    pub amplitude_m: f64,
    pub wavelength_m: f64,
    pub width_thickness_ratio: f64,
    pub channel_proportion: f64,
    pub undulation_wavelength_m: f64,
    pub channel_thickness_m: f64,
    pub undulation_amplitude: f64,
    pub channel_logk: f64,
    pub background_logk: f64,
}

impl ChannelParams {
    /// Parameters at the prior means.
    pub fn mean_of(prior: &ChannelPrior) -> Self {
        Self {
            orientation_deg: prior.orientation_deg.mean,
            amplitude_m: prior.amplitude_m.mean,
            wavelength_m: prior.wavelength_m.mean,
            width_thickness_ratio: prior.width_thickness_ratio.mean,
            channel_proportion: prior.channel_proportion.mean,
            undulation_wavelength_m: prior.undulation_wavelength_m.mean,
            channel_thickness_m: prior.channel_thickness_m,
            undulation_amplitude: prior.undulation_amplitude,
            channel_logk: prior.channel_logk,
            background_logk: prior.background_logk,
        }
    }

    /// Map-view channel width in meters.
    pub fn width_m(&self) -> f64 {
        self.width_thickness_ratio * self.channel_thickness_m
    }
}

const MIN_LENGTH_M: f64 = 1e-3;
const MAX_CHANNELS: usize = 100_000;

impl ChannelPrior {
    /// Draws each parameter from its normal, then clamps to its valid range.
    pub fn sample(&self, rng: &mut RngStream) -> ChannelParams {
        ChannelParams {
            orientation_deg: self.orientation_deg.draw(rng),
            amplitude_m: self.amplitude_m.draw(rng).max(0.0),
            wavelength_m: self.wavelength_m.draw(rng).max(MIN_LENGTH_M),
            width_thickness_ratio: self.width_thickness_ratio.draw(rng).max(MIN_LENGTH_M),
            channel_proportion: self.channel_proportion.draw(rng).clamp(0.05, 0.95),
            undulation_wavelength_m: self.undulation_wavelength_m.draw(rng).max(MIN_LENGTH_M),
            channel_thickness_m: self.channel_thickness_m,
            undulation_amplitude: self.undulation_amplitude,
            channel_logk: self.channel_logk,
            background_logk: self.background_logk,
        }
    }

    /// `n` independent realizations, each with its own parameter draw.
    pub fn training_set(&self, n: usize, grid: &GridSpec, rng: &RngStream) -> Result<Ensemble> {
        use rayon::prelude::*;
        let members = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut member_rng = rng.fork_indexed("realization", k as u64);
                let params = self.sample(&mut member_rng);
                generate_field(&params, grid, &mut member_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members, rng.seed(), EnsembleTag::Prior)
    }
}

/// Default-prior parameter draw.
pub fn sample_params(rng: &mut RngStream) -> ChannelParams {
    ChannelPrior::default().sample(rng)
}

/// Default-prior training set of `n` fields.
pub fn generate_training_set(n: usize, grid: &GridSpec, rng: &RngStream) -> Result<Ensemble> {
    ChannelPrior::default().training_set(n, grid, rng)
}

/// Rasterizes channels onto `grid` until the channel fraction reaches the target.
pub fn generate_field(
    params: &ChannelParams,
    grid: &GridSpec,
    rng: &mut RngStream,
) -> Result<LogPermField> {
    grid.validate()?;
    let n = grid.len();
    let target = params.channel_proportion;
    let (lx, ly) = grid.extent();
    let (cx, cy) = (0.5 * lx, 0.5 * ly);
    let theta = params.orientation_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    // Half-extent of the domain measured across the channel direction.
    let half_across = 0.5 * (lx * sin_t.abs() + ly * cos_t.abs());

    let local: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let (i, j) = grid.coords(k);
            let (x, y) = grid.center(i, j);
            let (px, py) = (x - cx, y - cy);
            (px * cos_t + py * sin_t, -px * sin_t + py * cos_t)
        })
        .collect();

    let mut channel = vec![false; n];
    let mut count = 0usize;
    let needed = (target * n as f64).ceil() as usize;
    let half_width = 0.5 * params.width_m();
    let two_pi = std::f64::consts::TAU;

    for _ in 0..MAX_CHANNELS {
        if count >= needed {
            break;
        }
        let across = rng.uniform_in(-half_across - half_width, half_across + half_width);
        let phase = rng.uniform_in(0.0, two_pi);
        let und_phase = rng.uniform_in(0.0, two_pi);
        let v0 = across - params.amplitude_m * phase.sin();
        for (k, &(u, v)) in local.iter().enumerate() {
            if channel[k] {
                continue;
            }
            let center = v0 + params.amplitude_m * (two_pi * u / params.wavelength_m + phase).sin();
            let hw = half_width
                * (1.0
                    + params.undulation_amplitude
                        * (two_pi * u / params.undulation_wavelength_m + und_phase).sin());
            if (v - center).abs() <= hw {
                channel[k] = true;
                count += 1;
            }
        }
    }

    let values = channel
        .iter()
        .map(|&c| {
            if c {
                params.channel_logk
            } else {
                params.background_logk
            }
        })
        .collect();
    LogPermField::new(*grid, values)
}

/// Fraction of cells at the channel value.
pub fn channel_fraction(field: &LogPermField, channel_logk: f64) -> f64 {
    let v = field.values();
    v.iter().filter(|&&x| x == channel_logk).count() as f64 / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orientation_and_proportion_means() {
        let prior = ChannelPrior::default();
        let mut rng = RngStream::new(100);
        let draws: Vec<_> = (0..1000).map(|_| prior.sample(&mut rng)).collect();
        let mean = |f: fn(&ChannelParams) -> f64| draws.iter().map(f).sum::<f64>() / 1000.0;
        let orient = mean(|p| p.orientation_deg);
        let prop = mean(|p| p.channel_proportion);
        // 3σ/√1000 bands: 30 → 2.85, 0.05 → 0.0047.
        assert!((87.0..=93.0).contains(&orient), "{orient}");
        assert!((0.395..=0.405).contains(&prop), "{prop}");
    }

    #[test]
    fn zero_std_draws_equal_mean() {
        let mut prior = ChannelPrior::default();
        for p in [
            &mut prior.orientation_deg,
            &mut prior.amplitude_m,
            &mut prior.wavelength_m,
            &mut prior.width_thickness_ratio,
            &mut prior.channel_proportion,
            &mut prior.undulation_wavelength_m,
        ] {
            p.std = 0.0;
        }
        let mut rng = RngStream::new(1);
        let expected = ChannelParams::mean_of(&prior);
        for _ in 0..20 {
            assert_eq!(prior.sample(&mut rng), expected);
        }
    }

    #[test]
    fn default_field_is_two_valued() {
        let grid = GridSpec::default();
        let mut rng = RngStream::new(5);
        let params = sample_params(&mut rng);
        let f = generate_field(&params, &grid, &mut rng).unwrap();
        let lo = 50f64.log10();
        let hi = 2000f64.log10();
        assert!((lo - 1.69897).abs() < 1e-5 && (hi - 3.30103).abs() < 1e-5);
        assert!(f.values().iter().all(|&v| v == lo || v == hi));
        assert!(f.values().contains(&hi));
    }

    #[test]
    fn realized_fraction_overshoot_is_bounded() {
        let grid = GridSpec::default();
        let mut prior = ChannelPrior::default();
        prior.channel_proportion = NormalParam::new(0.40, 0.0);
        let rng = RngStream::new(77);
        for k in 0..200 {
            let mut r = rng.fork_indexed("r", k);
            let p = prior.sample(&mut r);
            let f = generate_field(&p, &grid, &mut r).unwrap();
            let frac = channel_fraction(&f, p.channel_logk);
            assert!((0.40..=0.48).contains(&frac), "realization {k}: {frac}");
        }
    }

    #[test]
    fn horizontal_bands_for_zero_orientation() {
        let grid = GridSpec::square(32);
        let params = ChannelParams {
            orientation_deg: 0.0,
            amplitude_m: 0.0,
            undulation_amplitude: 0.0,
            ..ChannelParams::mean_of(&ChannelPrior::default())
        };
        let f = generate_field(&params, &grid, &mut RngStream::new(3)).unwrap();
        for j in 0..grid.ny {
            let first = f.get(0, j);
            assert!((0..grid.nx).all(|i| f.get(i, j) == first), "row {j}");
        }
    }

    #[test]
    fn training_set_size_and_determinism() {
        let grid = GridSpec::square(16);
        let rng = RngStream::new(8);
        let a = generate_training_set(12, &grid, &rng).unwrap();
        let b = generate_training_set(12, &grid, &rng).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        assert_eq!(a.tag, EnsembleTag::Prior);
        assert_eq!(generate_training_set(1, &grid, &rng).unwrap().len(), 1);
    }
}
