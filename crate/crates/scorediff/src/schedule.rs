//! Variance-exploding noise schedule.

use serde::{Deserialize, Serialize};

use chda_core::RngStream;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VESchedule {
    pub sigma: f64,
    pub t_max: f64,
    /// Smallest time used in training and sampling.
    pub eps: f64,
}

impl Default for VESchedule {
    fn default() -> Self {
        Self {
            sigma: 25.0,
            t_max: 1.0,
            eps: 1e-3,
        }
    }
}

impl VESchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 1.0 && self.t_max > 0.0 && self.eps > 0.0 && self.eps < self.t_max) {
            return Err(Error::InvalidArgument(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    /// Marginal standard deviation `sqrt((σ^{2t} − 1) / (2 ln σ))`.
    pub fn sigma_t(&self, t: f64) -> f64 {
        let l = self.sigma.ln();
        // exp_m1 keeps precision for small t.
        ((2.0 * t * l).exp_m1() / (2.0 * l)).sqrt()
    }

    pub fn try_sigma_t(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(self.sigma_t(t))
    }

    /// Diffusion coefficient `g(t) = σ^t`.
    pub fn g(&self, t: f64) -> f64 {
        self.sigma.powf(t)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_t(self.t_max)
    }
}

/// `x_t = x₀ + σ_t ε`, returning `(x_t, ε)`.
pub fn perturb(
    sched: &VESchedule,
    x0: &[f64],
    t: f64,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t > 0.0 && t <= sched.t_max) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside (0, {}]",
            sched.t_max
        )));
    }
    let s = sched.sigma_t(t);
    let mut eps = vec![0.0; x0.len()];
    rng.fill_normal(&mut eps);
    let xt = x0.iter().zip(&eps).map(|(x, e)| x + s * e).collect();
    Ok((xt, eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_reference_values() {
        let s = VESchedule::default();
        assert_eq!(s.sigma_t(0.0), 0.0);
        let expected = (624.0 / (2.0 * 25f64.ln())).sqrt();
        assert!((s.sigma_t(1.0) - expected).abs() < 1e-12);
        assert!((s.sigma_t(1.0) - 9.8452).abs() < 1e-4);
        let mut prev = -1.0;
        for k in 0..1000 {
            let v = s.sigma_t(k as f64 / 999.0);
            assert!(v > prev);
            prev = v;
        }
        assert!(s.try_sigma_t(1.5).is_err());
        assert!(s.try_sigma_t(-0.1).is_err());
    }

    #[test]
    fn perturbation_moments() {
        let s = VESchedule::default();
        let x0 = vec![0.3, -1.2];
        let mut rng = RngStream::new(4);
        let n = 10_000;
        let st = s.sigma_t(0.5);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let (xt, _) = perturb(&s, &x0, 0.5, &mut rng).unwrap();
            for k in 0..2 {
                let d = xt[k] - x0[k];
                sum[k] += xt[k];
                sq[k] += d * d;
            }
        }
        for k in 0..2 {
            assert!(((sq[k] / n as f64) / (st * st) - 1.0).abs() < 0.05);
            assert!((sum[k] / n as f64 - x0[k]).abs() < 3.0 * st / (n as f64).sqrt());
        }
        let (near, _) = perturb(&s, &x0, 1e-9, &mut rng).unwrap();
        assert!(near.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-3));
        assert!(perturb(&s, &x0, 0.0, &mut rng).is_err());
    }
}
