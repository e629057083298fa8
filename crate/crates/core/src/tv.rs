//! Smoothed total variation `r(x) = Σ_i sqrt((D_h x)_i² + (D_v x)_i² + ε)`
//! with periodic forward differences, and its exact gradient and Hessian
//! action.

use serde::{Deserialize, Serialize};

use crate::autodiff::{check_same, DifferentiableMap};
use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvConfig {
    pub epsilon_tv: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self { epsilon_tv: 1e-3 }
    }
}

impl TvConfig {
    pub fn new(epsilon_tv: f64) -> Result<Self> {
        let cfg = Self { epsilon_tv };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_tv > 0.0) {
            return Err(Error::Config(format!(
                "epsilon_tv must be positive, got {}",
                self.epsilon_tv
            )));
        }
        Ok(())
    }
}

fn dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [h, w] => Ok((h, w)),
        _ => Err(Error::Dimension(format!(
            "total variation needs a 2-D image, got shape {shape:?}"
        ))),
    }
}

/// Horizontal and vertical forward differences with wrap-around.
fn grad(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gh = vec![0.0; h * w];
    let mut gv = vec![0.0; h * w];
    for i in 0..h {
        let below = ((i + 1) % h) * w;
        for j in 0..w {
            let p = i * w + j;
            gh[p] = x[i * w + (j + 1) % w] - x[p];
            gv[p] = x[below + j] - x[p];
        }
    }
    (gh, gv)
}

/// `D_h^T ph + D_v^T pv`
fn grad_adjoint(ph: &[f64], pv: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let above = ((i + h - 1) % h) * w;
        for j in 0..w {
            let p = i * w + j;
            let left = i * w + (j + w - 1) % w;
            out[p] = ph[left] - ph[p] + pv[above + j] - pv[p];
        }
    }
    out
}

pub fn tv_value(x: &Image, cfg: &TvConfig) -> f64 {
    let (gh, gv) = grad(x.as_slice(), x.height(), x.width());
    gh.iter()
        .zip(&gv)
        .map(|(a, b)| (a * a + b * b + cfg.epsilon_tv).sqrt())
        .sum()
}

pub fn tv_gradient(x: &Image, cfg: &TvConfig) -> Image {
    let (h, w) = (x.height(), x.width());
    let g = tv_gradient_raw(x.as_slice(), h, w, cfg.epsilon_tv);
    Image::new(h, w, g).expect("gradient keeps the image shape")
}

fn tv_gradient_raw(x: &[f64], h: usize, w: usize, eps: f64) -> Vec<f64> {
    let (mut gh, mut gv) = grad(x, h, w);
    for (a, b) in gh.iter_mut().zip(gv.iter_mut()) {
        let s = (*a * *a + *b * *b + eps).sqrt();
        *a /= s;
        *b /= s;
    }
    grad_adjoint(&gh, &gv, h, w)
}

/// Hessian of `r` at `x` applied to `u`.
fn tv_hessian_apply(x: &[f64], u: &[f64], h: usize, w: usize, eps: f64) -> Vec<f64> {
    let (gh, gv) = grad(x, h, w);
    let (mut dh, mut dv) = grad(u, h, w);
    for p in 0..h * w {
        let s2 = gh[p] * gh[p] + gv[p] * gv[p] + eps;
        let s = s2.sqrt();
        let proj = (gh[p] * dh[p] + gv[p] * dv[p]) / (s2 * s);
        dh[p] = dh[p] / s - gh[p] * proj;
        dv[p] = dv[p] / s - gv[p] * proj;
    }
    grad_adjoint(&dh, &dv, h, w)
}

/// `x ↦ ∇r(x)` as a map; its Jacobian is the (symmetric) Hessian of `r`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TvGradient {
    pub cfg: TvConfig,
}

impl TvGradient {
    pub fn new(cfg: TvConfig) -> Self {
        Self { cfg }
    }
}

impl DifferentiableMap for TvGradient {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        dims(input)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = dims(x.shape())?;
        Ok(x.with_data(tv_gradient_raw(x.as_slice(), h, w, self.cfg.epsilon_tv)))
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let (h, w) = dims(x.shape())?;
        check_same(x.shape(), u)?;
        Ok(u.with_data(tv_hessian_apply(
            x.as_slice(),
            u.as_slice(),
            h,
            w,
            self.cfg.epsilon_tv,
        )))
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.jvp(x, v)
    }
}
