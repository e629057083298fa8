//! Restoration problems built on a forward operator, image quality metrics
//! and regularization-weight sweeps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::autodiff::{AdjointComposite, DifferentiableMap};
use crate::error::{Error, Result};
use crate::fbf::{
    fbf_solve, project_box, ArmijoConfig, BoxConstraint, FbfTrace, MonotoneInclusion, StopConfig,
};
use crate::tensor::{conv2d_adjoint, Image, Kernel, Tensor};
use crate::tv::{TvConfig, TvGradient};

pub const DEFAULT_RHO_GRID: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `0 ∈ F(x) - y + ρ∇r(x) + N_C(x)`
    Direct,
    /// `0 ∈ L^T F(x) - L^T y + ρ∇r(x) + N_C(x)`
    LeastSquares,
}

impl std::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "least_squares" | "lsq" => Ok(Self::LeastSquares),
            _ => Err(Error::Config(format!(
                "unknown formulation {s:?} (expected direct or least_squares)"
            ))),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Config(format!("rho must be nonnegative, got {rho}")));
    }
    Ok(())
}

fn regularize(problem: MonotoneInclusion, rho: f64, tv: &TvConfig) -> Result<MonotoneInclusion> {
    check_rho(rho)?;
    tv.validate()?;
    if rho == 0.0 {
        return Ok(problem);
    }
    problem.with_regularizer(rho, Arc::new(TvGradient::new(*tv)))
}

/// `A = operator + ρ∇r`, `∇h = -y`.
pub fn assemble_direct(
    operator: Arc<dyn DifferentiableMap>,
    y: &Image,
    rho: f64,
    tv: &TvConfig,
    constraint: &BoxConstraint,
) -> Result<MonotoneInclusion> {
    let y = y.as_tensor();
    let problem =
        MonotoneInclusion::new(operator, y.scale(-1.0), *constraint)?.with_reference_norm(y.norm());
    regularize(problem, rho, tv)
}

/// `A = L^T ∘ inner + ρ∇r`, `∇h = -L^T y`.
pub fn assemble_least_squares(
    inner: Arc<dyn DifferentiableMap>,
    lin: &Kernel,
    y: &Image,
    rho: f64,
    tv: &TvConfig,
    constraint: &BoxConstraint,
) -> Result<MonotoneInclusion> {
    let y_tilde = conv2d_adjoint(y, lin)?;
    let composite = AdjointComposite::new(lin.clone(), 1.0, inner);
    let problem = MonotoneInclusion::new(
        Arc::new(composite),
        y_tilde.as_tensor().scale(-1.0),
        *constraint,
    )?
    .with_reference_norm(y.as_tensor().norm());
    regularize(problem, rho, tv)
}

fn serialize_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "serialize_psnr")]
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

impl MetricsReport {
    pub fn compute(x: &Image, reference: &Image) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, reference)?,
            ssim: ssim(x, reference)?,
            mae: mae(x, reference)?,
        })
    }
}

fn same_shape(x: &Image, r: &Image) -> Result<()> {
    x.as_tensor().ensure_same_shape(r.as_tensor())
}

/// `10 log10(1 / MSE)` for peak value 1; `+inf` for identical images.
pub fn psnr(x: &Image, reference: &Image) -> Result<f64> {
    same_shape(x, reference)?;
    let n = x.as_slice().len() as f64;
    let mse = x
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

pub fn mae(x: &Image, reference: &Image) -> Result<f64> {
    same_shape(x, reference)?;
    let n = x.as_slice().len() as f64;
    Ok(x.as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * (mx * my) + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

fn weighted_moments(pairs: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64, f64, f64, f64) {
    let (mut sw, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (w, a, b) in pairs {
        sw += w;
        sx += w * a;
        sy += w * b;
        sxx += w * a * a;
        syy += w * b * b;
        sxy += w * (a * b);
    }
    let (mx, my) = (sx / sw, sy / sw);
    (
        mx,
        my,
        sxx / sw - mx * mx,
        syy / sw - my * my,
        sxy / sw - (mx * my),
    )
}

/// Mean SSIM over all positions where an 11x11 Gaussian window
/// (std 1.5) fits inside the image; a single global window for images
/// smaller than that.
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    same_shape(x, reference)?;
    let (h, w) = (x.height(), x.width());
    let (a, b) = (x.as_slice(), reference.as_slice());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let (mx, my, vx, vy, cxy) = weighted_moments(a.iter().zip(b).map(|(&p, &q)| (1.0, p, q)));
        return Ok(ssim_from_moments(mx, my, vx, vy, cxy));
    }
    let c = (SSIM_WINDOW / 2) as f64;
    let g1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - SSIM_WINDOW {
        for j0 in 0..=w - SSIM_WINDOW {
            let it = (0..SSIM_WINDOW).flat_map(|di| {
                let g1 = &g1;
                (0..SSIM_WINDOW).map(move |dj| {
                    let p = (i0 + di) * w + j0 + dj;
                    (g1[di] * g1[dj], a[p], b[p])
                })
            });
            let (mx, my, vx, vy, cxy) = weighted_moments(it);
            total += ssim_from_moments(mx, my, vx, vy, cxy);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Everything needed to set up and solve one restoration problem.
#[derive(Clone)]
pub struct RestorationSpec {
    pub formulation: Formulation,
    /// `F` for the direct problem, the inner map for least squares.
    pub operator: Arc<dyn DifferentiableMap>,
    /// `L_lin`; required by the least-squares formulation.
    pub lin_kernel: Option<Kernel>,
    pub measurement: Image,
    pub rho: f64,
    pub tv: TvConfig,
    pub constraint: BoxConstraint,
    pub armijo: ArmijoConfig,
    pub stop: StopConfig,
}

impl std::fmt::Debug for RestorationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RestorationSpec")
            .field("formulation", &self.formulation)
            .field("rho", &self.rho)
            .field("tv", &self.tv)
            .field("constraint", &self.constraint)
            .field("armijo", &self.armijo)
            .field("stop", &self.stop)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct Restoration {
    pub x_hat: Image,
    pub trace: FbfTrace,
}

impl RestorationSpec {
    pub fn new(
        formulation: Formulation,
        operator: Arc<dyn DifferentiableMap>,
        lin_kernel: Option<Kernel>,
        measurement: Image,
    ) -> Self {
        Self {
            formulation,
            operator,
            lin_kernel,
            measurement,
            rho: 0.0,
            tv: TvConfig::default(),
            constraint: BoxConstraint::default(),
            armijo: ArmijoConfig::default(),
            stop: StopConfig::default(),
        }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self {
            rho,
            ..self.clone()
        }
    }

    fn lin(&self) -> Result<&Kernel> {
        self.lin_kernel.as_ref().ok_or_else(|| {
            Error::Config("the least-squares formulation needs a linear kernel".into())
        })
    }

    pub fn assemble(&self) -> Result<MonotoneInclusion> {
        let y = &self.measurement;
        match self.formulation {
            Formulation::Direct => assemble_direct(
                self.operator.clone(),
                y,
                self.rho,
                &self.tv,
                &self.constraint,
            ),
            Formulation::LeastSquares => assemble_least_squares(
                self.operator.clone(),
                self.lin()?,
                y,
                self.rho,
                &self.tv,
                &self.constraint,
            ),
        }
    }

    /// `proj_C(y)`, or `proj_C(L^T y / Σ|k|)` for least squares.
    pub fn initial_point(&self) -> Result<Tensor> {
        let y = &self.measurement;
        let start = match self.formulation {
            Formulation::Direct => y.as_tensor().clone(),
            Formulation::LeastSquares => {
                let k = self.lin()?;
                let mass: f64 = k.as_slice().iter().map(|v| v.abs()).sum();
                conv2d_adjoint(y, k)?
                    .into_tensor()
                    .scale(1.0 / mass.max(1e-12))
            }
        };
        Ok(project_box(&start, &self.constraint))
    }

    pub fn solve(&self) -> Result<Restoration> {
        let problem = self.assemble()?;
        let x0 = self.initial_point()?;
        let (x, trace) = fbf_solve(&problem, &x0, &self.armijo, &self.stop)?;
        Ok(Restoration {
            x_hat: Image::from_tensor(x)?,
            trace,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub metrics: Option<MetricsReport>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Index of the row with the highest PSNR.
    pub best: Option<usize>,
}

impl SweepTable {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|i| &self.rows[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rho,psnr,ssim,mae,iterations,converged,error\n");
        for r in &self.rows {
            let (p, ss, m) = match &r.metrics {
                Some(m) => (m.psnr.to_string(), m.ssim.to_string(), m.mae.to_string()),
                None => Default::default(),
            };
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            s.push_str(&format!(
                "{},{p},{ss},{m},{},{},{err}\n",
                r.rho, r.iterations, r.converged
            ));
        }
        s
    }
}

fn argmax_psnr(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter_map(|(i, r)| r.metrics.map(|m| (i, m.psnr)))
        .fold(None, |best: Option<(usize, f64)>, (i, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((i, p)),
        })
        .map(|(i, _)| i)
}

/// Solves `template` once per `ρ` (in parallel) and scores each against
/// `ground_truth`. Failed solves are recorded and skipped.
pub fn rho_sweep(
    template: &RestorationSpec,
    rhos: &[f64],
    ground_truth: &Image,
) -> Result<(SweepTable, Vec<Option<Restoration>>)> {
    if rhos.is_empty() {
        return Err(Error::Config("rho sweep needs at least one value".into()));
    }
    same_shape(&template.measurement, ground_truth)?;
    let results: Vec<(SweepRow, Option<Restoration>)> = rhos
        .par_iter()
        .map(|&rho| {
            let outcome = template
                .with_rho(rho)
                .solve()
                .and_then(|r| Ok((MetricsReport::compute(&r.x_hat, ground_truth)?, r)));
            match outcome {
                Ok((m, r)) => (
                    SweepRow {
                        rho,
                        metrics: Some(m),
                        iterations: r.trace.iterations(),
                        converged: r.trace.converged,
                        error: None,
                    },
                    Some(r),
                ),
                Err(e) => (
                    SweepRow {
                        rho,
                        metrics: None,
                        iterations: 0,
                        converged: false,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let (rows, restorations): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let best = argmax_psnr(&rows);
    Ok((SweepTable { rows, best }, restorations))
}

/// Sweeps every image of a set and picks the single `ρ` with the best mean
/// PSNR over the set. Returns that index and the per-image tables.
pub fn rho_sweep_set(
    templates: &[RestorationSpec],
    truths: &[Image],
    rhos: &[f64],
) -> Result<(Option<usize>, Vec<(SweepTable, Vec<Option<Restoration>>)>)> {
    if templates.len() != truths.len() {
        return Err(Error::shape(&[templates.len()], &[truths.len()]));
    }
    let tables = templates
        .iter()
        .zip(truths)
        .map(|(t, g)| rho_sweep(t, rhos, g))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..rhos.len())
        .filter_map(|i| {
            let ps: Option<Vec<f64>> = tables
                .iter()
                .map(|(t, _)| t.rows[i].metrics.map(|m| m.psnr))
                .collect();
            ps.map(|ps| (i, ps.iter().sum::<f64>() / ps.len().max(1) as f64))
        })
        .fold(None, |best: Option<(usize, f64)>, (i, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((i, p)),
        })
        .map(|(i, _)| i);
    Ok((best, tables))
}
