//! Ridge regression with an unpenalized intercept, solved jointly for all outputs.

use crate::error::Result;
use crate::field::row_anomalies;
use crate::linalg::{spd_solve, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub(crate) x_mean: Vec<f64>,
    pub(crate) y_mean: Vec<f64>,
    /// `p x q` coefficients acting on centered inputs.
    pub(crate) coef: Matrix,
}

impl LinearModel {
    /// Fits `y = y_mean + (x - x_mean) W`. Uses the `n x n` dual system when
    /// there are no more samples than features, the `p x p` normal equations
    /// otherwise. Constant inputs leave `W = 0`, i.e. an intercept-only model.
    pub fn fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<Self> {
        let xa = row_anomalies(x);
        let ya = row_anomalies(y);
        let (n, p) = (x.rows(), x.cols());
        let xc = &xa.deviations;
        let coef = if n <= p {
            let mut gram = Matrix::zeros(n, n);
            for a in 0..n {
                for b in a..n {
                    let v = dot(xc.row(a), xc.row(b));
                    gram[(a, b)] = v;
                    gram[(b, a)] = v;
                }
                gram[(a, a)] += lambda;
            }
            let alpha = spd_solve(&gram, &ya.deviations)?;
            let q = y.cols();
            let mut w = Matrix::zeros(p, q);
            for r in 0..n {
                let xr = xc.row(r);
                let ar = alpha.row(r);
                for (f, &xv) in xr.iter().enumerate() {
                    if xv != 0.0 {
                        for (wv, &av) in w.row_mut(f).iter_mut().zip(ar) {
                            *wv += xv * av;
                        }
                    }
                }
            }
            w
        } else {
            let xt = xc.transpose();
            let mut normal = Matrix::zeros(p, p);
            for a in 0..p {
                for b in a..p {
                    let v = dot(xt.row(a), xt.row(b));
                    normal[(a, b)] = v;
                    normal[(b, a)] = v;
                }
                normal[(a, a)] += lambda;
            }
            let yt = ya.deviations.transpose();
            let mut rhs = Matrix::zeros(p, y.cols());
            for a in 0..p {
                for c in 0..y.cols() {
                    rhs[(a, c)] = dot(xt.row(a), yt.row(c));
                }
            }
            spd_solve(&normal, &rhs)?
        };
        Ok(Self {
            x_mean: xa.mean,
            y_mean: ya.mean,
            coef,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.y_mean.clone();
        for (f, (&xv, &mu)) in x.iter().zip(&self.x_mean).enumerate() {
            let d = xv - mu;
            if d != 0.0 {
                for (o, &w) in out.iter_mut().zip(self.coef.row(f)) {
                    *o += d * w;
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
