//! Compact residual convolutional score network with hand-written
//! reverse-mode gradients.
//!
//! Layout: Gaussian Fourier time features, a dense SiLU embedding, an input
//! 3x3 convolution, `blocks` residual blocks
//! `h += conv2(silu(conv1(silu(h)) + dense(e)))`, and a 3x3 output
//! convolution on `silu(h)`. The input is scaled by `1/sqrt(1 + σ_t²)` and
//! the raw output equals `σ_t · score`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use chda_core::RngStream;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    pub blocks: usize,
    /// Width of the time embedding (even).
    pub embed_dim: usize,
    /// Standard deviation of the random Fourier frequencies, times 1000.
    pub fourier_scale_milli: u32,
    /// Seed of the fixed Fourier frequencies.
    pub fourier_seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 16,
            channels: 16,
            blocks: 2,
            embed_dim: 16,
            fourier_scale_milli: 16_000,
            fourier_seed: 0,
        }
    }
}

/// Offsets of every parameter tensor inside the flat weight vector.
#[derive(Clone, Debug)]
struct Layout {
    in_w: usize,
    in_b: usize,
    emb_w: usize,
    emb_b: usize,
    blocks: Vec<BlockLayout>,
    out_w: usize,
    out_b: usize,
    total: usize,
}

#[derive(Clone, Copy, Debug)]
struct BlockLayout {
    c1_w: usize,
    c1_b: usize,
    t_w: usize,
    t_b: usize,
    c2_w: usize,
    c2_b: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0
            || self.ny == 0
            || self.channels == 0
            || self.embed_dim == 0
            || !self.embed_dim.is_multiple_of(2)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid network spec {self:?}"
            )));
        }
        Ok(())
    }

    pub fn fourier_scale(&self) -> f64 {
        self.fourier_scale_milli as f64 / 1000.0
    }

    fn layout(&self) -> Layout {
        let (c, e) = (self.channels, self.embed_dim);
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let in_w = take(c * 9);
        let in_b = take(c);
        let emb_w = take(e * e);
        let emb_b = take(e);
        let blocks = (0..self.blocks)
            .map(|_| BlockLayout {
                c1_w: take(c * c * 9),
                c1_b: take(c),
                t_w: take(c * e),
                t_b: take(c),
                c2_w: take(c * c * 9),
                c2_b: take(c),
            })
            .collect();
        let out_w = take(c * 9);
        let out_b = take(1);
        Layout {
            in_w,
            in_b,
            emb_w,
            emb_b,
            blocks,
            out_w,
            out_b,
            total: off,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<f64>,
    freqs: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Zero-padded 3x3 convolution, channel-major buffers.
fn conv_forward(
    w: &[f64],
    b: &[f64],
    cin: usize,
    cout: usize,
    ny: usize,
    nx: usize,
    x: &[f64],
    y: &mut [f64],
) {
    let hw = nx * ny;
    for o in 0..cout {
        let yo = &mut y[o * hw..(o + 1) * hw];
        yo.fill(b[o]);
        for i in 0..cin {
            let xi = &x[i * hw..(i + 1) * hw];
            for k in 0..9 {
                let wv = w[(o * cin + i) * 9 + k];
                let (dy, dx) = (k as isize / 3 - 1, k as isize % 3 - 1);
                let (c0, c1) = (
                    (-dx).max(0) as usize,
                    (nx as isize - dx).min(nx as isize) as usize,
                );
                for r in 0..ny {
                    let rr = r as isize + dy;
                    if rr < 0 || rr >= ny as isize {
                        continue;
                    }
                    let src = &xi[(rr as usize * nx)..][..nx];
                    let dst = &mut yo[r * nx..(r + 1) * nx];
                    let sx = (c0 as isize + dx) as usize;
                    for (d, s) in dst[c0..c1].iter_mut().zip(&src[sx..sx + (c1 - c0)]) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &[f64],
    cin: usize,
    cout: usize,
    ny: usize,
    nx: usize,
    x: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    let hw = nx * ny;
    for o in 0..cout {
        let go = &gy[o * hw..(o + 1) * hw];
        gb[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * hw..(i + 1) * hw];
            for k in 0..9 {
                let (dy, dx) = (k as isize / 3 - 1, k as isize % 3 - 1);
                let (c0, c1) = (
                    (-dx).max(0) as usize,
                    (nx as isize - dx).min(nx as isize) as usize,
                );
                let sx = (c0 as isize + dx) as usize;
                let wv = w[(o * cin + i) * 9 + k];
                let mut acc = 0.0;
                for r in 0..ny {
                    let rr = r as isize + dy;
                    if rr < 0 || rr >= ny as isize {
                        continue;
                    }
                    let src = &xi[rr as usize * nx..][..nx];
                    let g = &go[r * nx..(r + 1) * nx];
                    for (gv, s) in g[c0..c1].iter().zip(&src[sx..sx + (c1 - c0)]) {
                        acc += gv * s;
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let dst = &mut gx[i * hw + rr as usize * nx..][..nx];
                        for (d, gv) in dst[sx..sx + (c1 - c0)].iter_mut().zip(&g[c0..c1]) {
                            *d += wv * gv;
                        }
                    }
                }
                gw[(o * cin + i) * 9 + k] += acc;
            }
        }
    }
}

/// Intermediate values kept for the backward pass.
struct Tape {
    c_in: f64,
    feats: Vec<f64>,
    emb_pre: Vec<f64>,
    emb: Vec<f64>,
    u: Vec<f64>,
    /// Residual stream before each block and after the last one.
    h: Vec<Vec<f64>>,
    /// Per block: silu(h), conv1 output plus time bias, silu of that.
    a1: Vec<Vec<f64>>,
    c1: Vec<Vec<f64>>,
    a2: Vec<Vec<f64>>,
    a_out: Vec<f64>,
}

impl Network {
    /// Random initialization; residual branches and the output layer start small.
    pub fn new(spec: NetworkSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let lay = spec.layout();
        let (c, e) = (spec.channels, spec.embed_dim);
        let mut params = vec![0.0; lay.total];
        let mut fill = |off: usize, n: usize, std: f64| {
            for p in &mut params[off..off + n] {
                *p = std * rng.normal();
            }
        };
        fill(lay.in_w, c * 9, (1.0 / 9.0f64).sqrt());
        fill(lay.emb_w, e * e, (1.0 / e as f64).sqrt());
        for b in &lay.blocks {
            fill(b.c1_w, c * c * 9, (2.0 / (9 * c) as f64).sqrt());
            fill(b.t_w, c * e, (1.0 / e as f64).sqrt());
            fill(b.c2_w, c * c * 9, 0.1 * (1.0 / (9 * c) as f64).sqrt());
        }
        fill(lay.out_w, c * 9, 0.1 * (1.0 / (9 * c) as f64).sqrt());
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weights, got {}",
                spec.n_params(),
                params.len()
            )));
        }
        let mut frng = RngStream::with_stream(spec.fourier_seed, 0x4655_5249);
        let freqs = (0..spec.embed_dim / 2)
            .map(|_| spec.fourier_scale() * frng.normal())
            .collect();
        Ok(Self {
            spec,
            params,
            freqs,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_tape(&self, x: &[f64], t: f64, sigma_t: f64) -> (Vec<f64>, Tape) {
        let s = &self.spec;
        let lay = s.layout();
        let p = &self.params;
        let (c, e, nx, ny) = (s.channels, s.embed_dim, s.nx, s.ny);
        let hw = nx * ny;
        let c_in = 1.0 / (1.0 + sigma_t * sigma_t).sqrt();
        let mut feats = Vec::with_capacity(e);
        feats.extend(self.freqs.iter().map(|f| (2.0 * PI * f * t).sin()));
        feats.extend(self.freqs.iter().map(|f| (2.0 * PI * f * t).cos()));
        let emb_pre: Vec<f64> = (0..e)
            .map(|r| {
                p[lay.emb_b + r]
                    + (0..e)
                        .map(|k| p[lay.emb_w + r * e + k] * feats[k])
                        .sum::<f64>()
            })
            .collect();
        let emb: Vec<f64> = emb_pre.iter().map(|&v| silu(v)).collect();
        let u: Vec<f64> = x.iter().map(|v| v * c_in).collect();
        let mut h0 = vec![0.0; c * hw];
        conv_forward(&p[lay.in_w..], &p[lay.in_b..], 1, c, ny, nx, &u, &mut h0);
        let mut tape = Tape {
            c_in,
            feats,
            emb_pre,
            emb,
            u,
            h: vec![h0],
            a1: vec![],
            c1: vec![],
            a2: vec![],
            a_out: vec![],
        };
        for b in &lay.blocks {
            let h = tape.h.last().unwrap();
            let a1: Vec<f64> = h.iter().map(|&v| silu(v)).collect();
            let mut c1 = vec![0.0; c * hw];
            conv_forward(&p[b.c1_w..], &p[b.c1_b..], c, c, ny, nx, &a1, &mut c1);
            for ch in 0..c {
                let tb = p[b.t_b + ch]
                    + (0..e)
                        .map(|k| p[b.t_w + ch * e + k] * tape.emb[k])
                        .sum::<f64>();
                c1[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v += tb);
            }
            let a2: Vec<f64> = c1.iter().map(|&v| silu(v)).collect();
            let mut c2 = vec![0.0; c * hw];
            conv_forward(&p[b.c2_w..], &p[b.c2_b..], c, c, ny, nx, &a2, &mut c2);
            let next: Vec<f64> = h.iter().zip(&c2).map(|(a, b)| a + b).collect();
            tape.a1.push(a1);
            tape.c1.push(c1);
            tape.a2.push(a2);
            tape.h.push(next);
        }
        tape.a_out = tape.h.last().unwrap().iter().map(|&v| silu(v)).collect();
        let mut out = vec![0.0; hw];
        conv_forward(
            &p[lay.out_w..],
            &p[lay.out_b..],
            c,
            1,
            ny,
            nx,
            &tape.a_out,
            &mut out,
        );
        (out, tape)
    }

    /// Raw network output `σ_t · s(x, t)`.
    pub fn output(&self, x: &[f64], t: f64, sigma_t: f64) -> Vec<f64> {
        self.forward_tape(x, t, sigma_t).0
    }

    pub fn score(&self, x: &[f64], t: f64, sigma_t: f64) -> Vec<f64> {
        let mut o = self.output(x, t, sigma_t);
        o.iter_mut().for_each(|v| *v /= sigma_t);
        o
    }

    /// Denoising score-matching loss `mean((ε + σ_t s(x₀ + σ_t ε, t))²)` for
    /// one sample; adds its parameter gradient into `grad`.
    pub fn loss_and_grad(
        &self,
        x0: &[f64],
        eps: &[f64],
        t: f64,
        sigma_t: f64,
        grad: &mut [f64],
    ) -> f64 {
        let xt: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| x + sigma_t * e).collect();
        let (out, tape) = self.forward_tape(&xt, t, sigma_t);
        let n = out.len() as f64;
        let resid: Vec<f64> = out.iter().zip(eps).map(|(o, e)| o + e).collect();
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let g_out: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
        self.backward(&tape, &g_out, grad, None);
        loss
    }

    /// Vector-Jacobian product `(∂ output / ∂x)ᵀ v` of [`Network::output`].
    pub fn output_vjp(&self, x: &[f64], t: f64, sigma_t: f64, v: &[f64]) -> Vec<f64> {
        let (_, tape) = self.forward_tape(x, t, sigma_t);
        let mut scratch = vec![0.0; self.params.len()];
        let mut g_u = vec![0.0; x.len()];
        self.backward(&tape, v, &mut scratch, Some(&mut g_u));
        g_u.iter_mut().for_each(|g| *g *= tape.c_in);
        g_u
    }

    fn backward(&self, tape: &Tape, g_out: &[f64], grad: &mut [f64], g_input: Option<&mut [f64]>) {
        let s = &self.spec;
        let lay = s.layout();
        let p = &self.params;
        let (c, e, nx, ny) = (s.channels, s.embed_dim, s.nx, s.ny);
        let hw = nx * ny;
        let mut g_a = vec![0.0; c * hw];
        {
            let (gw, rest) = grad[lay.out_w..].split_at_mut(c * 9);
            let gb = &mut rest[lay.out_b - lay.out_w - c * 9..];
            conv_backward(
                &p[lay.out_w..],
                c,
                1,
                ny,
                nx,
                &tape.a_out,
                g_out,
                gw,
                gb,
                Some(&mut g_a),
            );
        }
        let hl = tape.h.last().unwrap();
        let mut g_h: Vec<f64> = g_a.iter().zip(hl).map(|(g, &h)| g * silu_grad(h)).collect();
        let mut g_emb = vec![0.0; e];
        for (bi, b) in lay.blocks.iter().enumerate().rev() {
            // h_next = h + conv2(a2): g_h flows to both the skip and the branch.
            let mut g_a2 = vec![0.0; c * hw];
            {
                let (gw, rest) = grad[b.c2_w..].split_at_mut(c * c * 9);
                let gb = &mut rest[b.c2_b - b.c2_w - c * c * 9..];
                conv_backward(
                    &p[b.c2_w..],
                    c,
                    c,
                    ny,
                    nx,
                    &tape.a2[bi],
                    &g_h,
                    gw,
                    gb,
                    Some(&mut g_a2),
                );
            }
            let g_c1: Vec<f64> = g_a2
                .iter()
                .zip(&tape.c1[bi])
                .map(|(g, &v)| g * silu_grad(v))
                .collect();
            for ch in 0..c {
                let gt: f64 = g_c1[ch * hw..(ch + 1) * hw].iter().sum();
                grad[b.t_b + ch] += gt;
                for k in 0..e {
                    grad[b.t_w + ch * e + k] += gt * tape.emb[k];
                    g_emb[k] += gt * p[b.t_w + ch * e + k];
                }
            }
            let mut g_a1 = vec![0.0; c * hw];
            {
                let (gw, rest) = grad[b.c1_w..].split_at_mut(c * c * 9);
                let gb = &mut rest[b.c1_b - b.c1_w - c * c * 9..];
                conv_backward(
                    &p[b.c1_w..],
                    c,
                    c,
                    ny,
                    nx,
                    &tape.a1[bi],
                    &g_c1,
                    gw,
                    gb,
                    Some(&mut g_a1),
                );
            }
            let h = &tape.h[bi];
            for ((gh, ga), &hv) in g_h.iter_mut().zip(&g_a1).zip(h) {
                *gh += ga * silu_grad(hv);
            }
        }
        {
            let (gw, rest) = grad[lay.in_w..].split_at_mut(c * 9);
            let gb = &mut rest[lay.in_b - lay.in_w - c * 9..];
            conv_backward(&p[lay.in_w..], 1, c, ny, nx, &tape.u, &g_h, gw, gb, g_input);
        }
        for r in 0..e {
            let gp = g_emb[r] * silu_grad(tape.emb_pre[r]);
            grad[lay.emb_b + r] += gp;
            for k in 0..e {
                grad[lay.emb_w + r * e + k] += gp * tape.feats[k];
            }
        }
    }
}
