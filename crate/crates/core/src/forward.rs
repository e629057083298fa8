//! Saturated mean-of-blurs measurement model, its affine and linear
//! approximations, Gaussian noise and synthetic motion kernels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{check_input, check_same, DifferentiableMap, Linearization};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{conv_accumulate, Image, Kernel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationParams {
    pub delta: f64,
}

impl SaturationParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!(
                "saturation delta must be positive, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    /// `ψ(t) = (tanh(δ(2t-1)) + 1) / 2`
    pub fn value(&self, t: f64) -> f64 {
        0.5 * ((self.delta * (2.0 * t - 1.0)).tanh() + 1.0)
    }

    /// `ψ'(t) = δ (1 - tanh²(δ(2t-1)))`
    pub fn deriv(&self, t: f64) -> f64 {
        let th = (self.delta * (2.0 * t - 1.0)).tanh();
        self.delta * (1.0 - th * th)
    }
}

pub fn saturate(x: &Tensor, p: &SaturationParams) -> Tensor {
    x.map(|t| p.value(t))
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [h, w] => Ok((h, w)),
        _ => Err(Error::Dimension(format!(
            "expected a 2-D image, got shape {shape:?}"
        ))),
    }
}

fn check_kernels(kernels: &[Kernel]) -> Result<()> {
    if kernels.is_empty() {
        return Err(Error::Config(
            "a blur model needs at least one kernel".into(),
        ));
    }
    if let Some(i) = kernels.iter().position(|k| !k.is_normalized()) {
        return Err(Error::Config(format!(
            "kernel {i} is not normalized (nonnegative with unit sum)"
        )));
    }
    Ok(())
}

fn check_fit(kernels: &[Kernel], h: usize, w: usize) -> Result<()> {
    let side = kernels.iter().map(Kernel::size).max().unwrap_or(1);
    if side > h.min(w) {
        return Err(Error::Dimension(format!(
            "kernel of side {side} does not fit a {h}x{w} image"
        )));
    }
    Ok(())
}

fn blur(x: &[f64], h: usize, w: usize, k: &Kernel, adjoint: bool, alpha: f64, out: &mut [f64]) {
    conv_accumulate(out, x, h, w, k.as_slice(), k.size(), adjoint, alpha);
}

/// `F(x) = (1/K) Σ_k ψ_δ(L_k x)` with periodic boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct SaturatedBlurModel {
    kernels: Vec<Kernel>,
    saturation: SaturationParams,
}

impl SaturatedBlurModel {
    pub fn new(kernels: Vec<Kernel>, saturation: SaturationParams) -> Result<Self> {
        check_kernels(&kernels)?;
        Ok(Self {
            kernels,
            saturation,
        })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn saturation(&self) -> SaturationParams {
        self.saturation
    }

    fn blurred(&self, x: &Tensor) -> Result<(usize, usize, Vec<Vec<f64>>)> {
        let (h, w) = image_dims(x.shape())?;
        check_fit(&self.kernels, h, w)?;
        let out = self
            .kernels
            .iter()
            .map(|k| {
                let mut b = vec![0.0; h * w];
                blur(x.as_slice(), h, w, k, false, 1.0, &mut b);
                b
            })
            .collect();
        Ok((h, w, out))
    }

    /// Slopes `ψ'(L_k x) / K` for each kernel.
    fn slopes(&self, x: &Tensor) -> Result<(usize, usize, Vec<Vec<f64>>)> {
        let (h, w, mut b) = self.blurred(x)?;
        let inv_k = 1.0 / self.kernels.len() as f64;
        for bk in &mut b {
            for v in bk.iter_mut() {
                *v = inv_k * self.saturation.deriv(*v);
            }
        }
        Ok((h, w, b))
    }

    /// The affine first-order approximation around mid-gray.
    pub fn affine(&self) -> MeanBlur {
        let d = self.saturation.delta;
        MeanBlur {
            kernels: self.kernels.clone(),
            gain: d,
            offset: 0.5 * (1.0 - d),
        }
    }

    /// The linear part of [`Self::affine`].
    pub fn linear(&self) -> MeanBlur {
        MeanBlur {
            kernels: self.kernels.clone(),
            gain: self.saturation.delta,
            offset: 0.0,
        }
    }
}

impl DifferentiableMap for SaturatedBlurModel {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (h, w) = image_dims(input)?;
        check_fit(&self.kernels, h, w)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w, b) = self.blurred(x)?;
        let inv_k = 1.0 / self.kernels.len() as f64;
        let mut out = vec![0.0; h * w];
        for bk in &b {
            for (o, &v) in out.iter_mut().zip(bk) {
                *o += inv_k * self.saturation.value(v);
            }
        }
        Ok(x.with_data(out))
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        self.linearize(x)?.apply(u)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.linearize(x)?.apply_adjoint(v)
    }

    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        check_input(self, x)?;
        let (h, w, slopes) = self.slopes(x)?;
        Ok(Box::new(BlurLinearization {
            kernels: &self.kernels,
            slopes,
            shape: x.shape().to_vec(),
            h,
            w,
        }))
    }
}

struct BlurLinearization<'a> {
    kernels: &'a [Kernel],
    slopes: Vec<Vec<f64>>,
    shape: Vec<usize>,
    h: usize,
    w: usize,
}

impl Linearization for BlurLinearization<'_> {
    fn apply(&self, u: &Tensor) -> Result<Tensor> {
        check_same(&self.shape, u)?;
        let n = self.h * self.w;
        let mut out = vec![0.0; n];
        let mut b = vec![0.0; n];
        for (k, s) in self.kernels.iter().zip(&self.slopes) {
            b.fill(0.0);
            blur(u.as_slice(), self.h, self.w, k, false, 1.0, &mut b);
            for ((o, &bv), &sv) in out.iter_mut().zip(&b).zip(s) {
                *o += sv * bv;
            }
        }
        Ok(u.with_data(out))
    }

    fn apply_adjoint(&self, v: &Tensor) -> Result<Tensor> {
        check_same(&self.shape, v)?;
        let mut out = vec![0.0; self.h * self.w];
        for (k, s) in self.kernels.iter().zip(&self.slopes) {
            let sv: Vec<f64> = v.as_slice().iter().zip(s).map(|(a, b)| a * b).collect();
            blur(&sv, self.h, self.w, k, true, 1.0, &mut out);
        }
        Ok(v.with_data(out))
    }
}

/// `x ↦ (gain/K) Σ_k L_k x + offset`
#[derive(Clone, Debug, PartialEq)]
pub struct MeanBlur {
    kernels: Vec<Kernel>,
    gain: f64,
    offset: f64,
}

impl MeanBlur {
    pub fn new(kernels: Vec<Kernel>, gain: f64, offset: f64) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Config(
                "a blur model needs at least one kernel".into(),
            ));
        }
        Ok(Self {
            kernels,
            gain,
            offset,
        })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn linear_part(&self, u: &Tensor, adjoint: bool) -> Result<Tensor> {
        let (h, w) = image_dims(u.shape())?;
        check_fit(&self.kernels, h, w)?;
        let alpha = self.gain / self.kernels.len() as f64;
        let mut out = vec![0.0; h * w];
        for k in &self.kernels {
            blur(u.as_slice(), h, w, k, adjoint, alpha, &mut out);
        }
        Ok(u.with_data(out))
    }
}

impl DifferentiableMap for MeanBlur {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (h, w) = image_dims(input)?;
        check_fit(&self.kernels, h, w)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.linear_part(x, false)?.add_scalar(self.offset))
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        check_same(x.shape(), u)?;
        self.linear_part(u, false)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        check_same(x.shape(), v)?;
        self.linear_part(v, true)
    }
}

pub fn apply_forward(model: &SaturatedBlurModel, x: &Image) -> Result<Image> {
    Image::from_tensor(model.forward(x.as_tensor())?)
}

pub fn apply_affine_approx(model: &SaturatedBlurModel, x: &Image) -> Result<Image> {
    Image::from_tensor(model.affine().forward(x.as_tensor())?)
}

pub fn apply_linear_approx(model: &SaturatedBlurModel, x: &Image) -> Result<Image> {
    Image::from_tensor(model.linear().forward(x.as_tensor())?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be nonnegative, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }
}

/// Adds i.i.d. `N(0, σ²)` noise. Draws come from ChaCha8 seeded with
/// `nm.seed`, transformed by the ziggurat sampler of `rand_distr`.
pub fn add_noise(x: &Image, nm: &NoiseModel) -> Result<Image> {
    if nm.sigma == 0.0 {
        return Ok(x.clone());
    }
    let dist =
        Normal::new(0.0, nm.sigma).map_err(|e| Error::Config(format!("noise model: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(nm.seed);
    let data = x
        .as_slice()
        .iter()
        .map(|&v| v + dist.sample(&mut rng))
        .collect();
    Image::new(x.height(), x.width(), data)
}

/// Random motion-blur kernel.
///
/// A walker starts at the center and takes `steps` unit steps whose heading
/// drifts by Gaussian increments. The path is smoothed with a `[1, 2, 1]/4`
/// filter, splatted bilinearly onto the grid (positions clamped to the
/// grid), clipped and normalized.
pub fn generate_motion_kernel(size: usize, steps: usize, seed: u64) -> Result<Kernel> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::Dimension(format!(
            "kernel side length must be odd, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (size / 2) as f64;
    let hi = (size - 1) as f64;
    let mut heading = rng.random::<f64>() * std::f64::consts::TAU;
    let mut path = vec![(c, c)];
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        heading += 0.6 * z;
        let (pr, pc) = *path.last().expect("path starts non-empty");
        path.push((
            (pr + heading.sin()).clamp(0.0, hi),
            (pc + heading.cos()).clamp(0.0, hi),
        ));
    }
    let n = path.len();
    let smooth: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = path[i.saturating_sub(1)];
            let b = path[i];
            let d = path[(i + 1).min(n - 1)];
            (
                0.25 * a.0 + 0.5 * b.0 + 0.25 * d.0,
                0.25 * a.1 + 0.5 * b.1 + 0.25 * d.1,
            )
        })
        .collect();

    let mut w = vec![0.0; size * size];
    for (r, col) in smooth {
        let (r0, c0) = (r.floor(), col.floor());
        let (fr, fc) = (r - r0, col - c0);
        let (r0, c0) = (r0 as usize, c0 as usize);
        let (r1, c1) = ((r0 + 1).min(size - 1), (c0 + 1).min(size - 1));
        w[r0 * size + c0] += (1.0 - fr) * (1.0 - fc);
        w[r0 * size + c1] += (1.0 - fr) * fc;
        w[r1 * size + c0] += fr * (1.0 - fc);
        w[r1 * size + c1] += fr * fc;
    }
    for v in &mut w {
        *v = v.max(0.0);
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    // the sum may be off by a few ulps; put the correction on the largest tap
    let err = 1.0 - w.iter().sum::<f64>();
    if let Some(m) = w
        .iter_mut()
        .max_by(|a, b| a.partial_cmp(b).expect("finite weights"))
    {
        *m += err;
    }
    Kernel::new(size, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelSidecar {
    size: usize,
    normalized: bool,
    sum: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Writes `path` (F32T, shape `[D, D]`) and a JSON sidecar next to it.
pub fn save_kernel(path: impl AsRef<Path>, k: &Kernel) -> Result<()> {
    let path = path.as_ref();
    io::write_f32t(path, k.weights())?;
    let side = KernelSidecar {
        size: k.size(),
        normalized: k.is_normalized(),
        sum: k.weights().sum(),
    };
    let side_path = sidecar_path(path);
    std::fs::write(&side_path, serde_json::to_string_pretty(&side)?)
        .map_err(|e| Error::io(&side_path, e))
}

/// Reads a kernel file. F32T rounding is undone by renormalizing when the
/// sidecar (if present) marks the kernel as normalized.
pub fn load_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    let path = path.as_ref();
    let k = Kernel::from_tensor(io::read_f32t(path)?)?;
    let side_path = sidecar_path(path);
    if side_path.exists() {
        let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: KernelSidecar = serde_json::from_str(&text)?;
        if side.size != k.size() {
            return Err(Error::Format {
                format: "kernel sidecar",
                reason: format!("sidecar says size {}, payload has {}", side.size, k.size()),
            });
        }
        if side.normalized {
            return k.normalized();
        }
    }
    Ok(k)
}
