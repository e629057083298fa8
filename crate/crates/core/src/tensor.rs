//! Dense row-major `f64` arrays, grayscale images, square convolution
//! kernels and circular 2-D convolution with its exact adjoint.
//!
//! All convolutions use periodic boundaries. With that convention the
//! adjoint of `conv2d_circular(·, k)` is correlation with `k`, which is
//! what [`conv2d_adjoint`] computes; the pair is consistent to rounding.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "tensor shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// A 1-D tensor.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Same shape, new data.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Grayscale image stored as a `[height, width]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    values: Tensor,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: Tensor::new(vec![height, width], data)?,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            values: Tensor::filled(&[height, width], value),
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            values: Tensor {
                shape: vec![height, width],
                data,
            },
        }
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "an image needs a 2-D tensor, got shape {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn height(&self) -> usize {
        self.values.shape[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape[1]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values.data[row * self.width() + col]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn clamped(&self, lower: f64, upper: f64) -> Self {
        Self {
            values: self.values.map(|v| v.clamp(lower, upper)),
        }
    }

    /// Top-left aligned crop.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::Dimension(format!(
                "crop {height}x{width}+{top}+{left} exceeds image {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self::from_fn(height, width, |i, j| {
            self.get(top + i, left + j)
        }))
    }
}

impl From<Image> for Tensor {
    fn from(image: Image) -> Self {
        image.values
    }
}

/// Square convolution kernel with odd side length.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    weights: Tensor,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::Dimension(format!(
                "kernel side length must be odd, got {size}"
            )));
        }
        Ok(Self {
            weights: Tensor::new(vec![size, size], weights)?,
        })
    }

    pub fn from_tensor(weights: Tensor) -> Result<Self> {
        match *weights.shape() {
            [a, b] if a == b => Self::new(a, weights.into_vec()),
            _ => Err(Error::Dimension(format!(
                "a kernel needs a square 2-D tensor, got shape {:?}",
                weights.shape()
            ))),
        }
    }

    /// Centered unit impulse.
    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[(size / 2) * size + size / 2] = 1.0;
        }
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn as_slice(&self) -> &[f64] {
        self.weights.as_slice()
    }

    /// Nonnegative with unit sum (to 1e-12).
    pub fn is_normalized(&self) -> bool {
        self.as_slice().iter().all(|&w| w >= 0.0) && (self.weights.sum() - 1.0).abs() <= 1e-12
    }

    /// Clips negatives and rescales to unit sum.
    pub fn normalized(&self) -> Result<Self> {
        let clipped = self.weights.map(|w| w.max(0.0));
        let total = clipped.sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Dimension(
                "kernel has no positive mass to normalize".into(),
            ));
        }
        Self::from_tensor(clipped.scale(1.0 / total))
    }

    pub fn rotate180(&self) -> Self {
        let mut w = self.as_slice().to_vec();
        w.reverse();
        Self {
            weights: self.weights.with_data(w),
        }
    }
}

/// `out[i, j] += alpha * x[(i - di) mod h, (j - dj) mod w]`
pub(crate) fn shift_axpy(
    out: &mut [f64],
    x: &[f64],
    h: usize,
    w: usize,
    di: isize,
    dj: isize,
    alpha: f64,
) {
    let dj = dj.rem_euclid(w as isize) as usize;
    for i in 0..h {
        let si = (i as isize - di).rem_euclid(h as isize) as usize;
        let src = &x[si * w..(si + 1) * w];
        let dst = &mut out[i * w..(i + 1) * w];
        for (d, s) in dst[dj..].iter_mut().zip(&src[..w - dj]) {
            *d += alpha * s;
        }
        for (d, s) in dst[..dj].iter_mut().zip(&src[w - dj..]) {
            *d += alpha * s;
        }
    }
}

/// `sum_{i,j} a[i, j] * x[(i - di) mod h, (j - dj) mod w]`
pub(crate) fn shift_dot(a: &[f64], x: &[f64], h: usize, w: usize, di: isize, dj: isize) -> f64 {
    let dj = dj.rem_euclid(w as isize) as usize;
    let mut acc = 0.0;
    for i in 0..h {
        let si = (i as isize - di).rem_euclid(h as isize) as usize;
        let src = &x[si * w..(si + 1) * w];
        let row = &a[i * w..(i + 1) * w];
        acc += dot(&row[dj..], &src[..w - dj]) + dot(&row[..dj], &src[w - dj..]);
    }
    acc
}

/// Accumulates `alpha * (k ⊛ x)` into `out`; correlation when `adjoint`.
pub(crate) fn conv_accumulate(
    out: &mut [f64],
    x: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    size: usize,
    adjoint: bool,
    alpha: f64,
) {
    let c = (size / 2) as isize;
    for a in 0..size {
        for b in 0..size {
            let kw = kernel[a * size + b];
            if kw == 0.0 {
                continue;
            }
            let (di, dj) = (a as isize - c, b as isize - c);
            if adjoint {
                shift_axpy(out, x, h, w, -di, -dj, alpha * kw);
            } else {
                shift_axpy(out, x, h, w, di, dj, alpha * kw);
            }
        }
    }
}

fn check_fits(x: &Image, k: &Kernel) -> Result<()> {
    if k.size() > x.height().min(x.width()) {
        return Err(Error::Dimension(format!(
            "kernel of side {} does not fit a {}x{} image",
            k.size(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Periodic 2-D convolution: `out[i,j] = sum_{a,b} k[a,b] x[i-a+c, j-b+c]`
/// with `c` the kernel center and indices taken modulo the image size.
pub fn conv2d_circular(x: &Image, k: &Kernel) -> Result<Image> {
    check_fits(x, k)?;
    let (h, w) = (x.height(), x.width());
    let mut out = vec![0.0; h * w];
    conv_accumulate(
        &mut out,
        x.as_slice(),
        h,
        w,
        k.as_slice(),
        k.size(),
        false,
        1.0,
    );
    Image::new(h, w, out)
}

/// Exact adjoint of [`conv2d_circular`]: periodic correlation with `k`.
pub fn conv2d_adjoint(x: &Image, k: &Kernel) -> Result<Image> {
    check_fits(x, k)?;
    let (h, w) = (x.height(), x.width());
    let mut out = vec![0.0; h * w];
    conv_accumulate(
        &mut out,
        x.as_slice(),
        h,
        w,
        k.as_slice(),
        k.size(),
        true,
        1.0,
    );
    Image::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn random_kernel(rng: &mut ChaCha8Rng, d: usize) -> Kernel {
        Kernel::new(d, (0..d * d).map(|_| rng.random::<f64>() - 0.3).collect()).unwrap()
    }

    // Straight transcription of the summation with explicit wrap-around.
    fn direct_conv(x: &Image, k: &Kernel) -> Image {
        let (h, w, d) = (x.height() as isize, x.width() as isize, k.size() as isize);
        let c = d / 2;
        Image::from_fn(h as usize, w as usize, |i, j| {
            let mut acc = 0.0;
            for a in 0..d {
                for b in 0..d {
                    let si = (i as isize - (a - c)).rem_euclid(h) as usize;
                    let sj = (j as isize - (b - c)).rem_euclid(w) as usize;
                    acc += k.as_slice()[(a * d + b) as usize] * x.get(si, sj);
                }
            }
            acc
        })
    }

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 6, 7);
        let k = Kernel::delta(3).unwrap();
        assert_eq!(conv2d_circular(&x, &k).unwrap(), x);
        assert_eq!(conv2d_adjoint(&x, &k).unwrap(), x);
    }

    #[test]
    fn normalized_kernel_preserves_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = Kernel::new(5, (0..25).map(|_| rng.random::<f64>()).collect())
            .unwrap()
            .normalized()
            .unwrap();
        assert!(k.is_normalized());
        let x = Image::filled(8, 8, 0.37);
        for v in conv2d_circular(&x, &k).unwrap().as_slice() {
            assert!((v - 0.37).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, d) in [(4, 4, 3), (5, 7, 3), (9, 6, 5)] {
            let x = random_image(&mut rng, h, w);
            let k = random_kernel(&mut rng, d);
            let fast = conv2d_circular(&x, &k).unwrap();
            let slow = direct_conv(&x, &k);
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn adjoint_equals_convolution_with_rotated_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_image(&mut rng, 6, 6);
        let k = random_kernel(&mut rng, 3);
        let lhs = conv2d_adjoint(&x, &k).unwrap();
        let rhs = conv2d_circular(&x, &k.rotate180()).unwrap();
        for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn symmetric_kernel_is_self_adjoint() {
        let k = Kernel::new(3, vec![0.1, 0.2, 0.1, 0.3, 1.0, 0.3, 0.1, 0.2, 0.1]).unwrap();
        assert_eq!(k.rotate180(), k);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 5, 5);
        let a = conv2d_circular(&x, &k).unwrap().into_tensor();
        let b = conv2d_adjoint(&x, &k).unwrap().into_tensor();
        assert!(a.sub(&b).unwrap().norm() < 1e-14);
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Image::filled(4, 6, 0.0);
        let k = Kernel::delta(5).unwrap();
        assert!(matches!(conv2d_circular(&x, &k), Err(Error::Dimension(_))));
        assert!(matches!(conv2d_adjoint(&x, &k), Err(Error::Dimension(_))));
        assert!(Kernel::new(4, vec![0.0; 16]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adjoint_identity(seed in any::<u64>(), h in 3usize..=16, w in 3usize..=16, half in 0usize..=1) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = 2 * half + 1;
                let x = random_image(&mut rng, h, w);
                let y = random_image(&mut rng, h, w);
                let k = random_kernel(&mut rng, d);
                let lhs = conv2d_circular(&x, &k).unwrap().as_tensor().dot(y.as_tensor()).unwrap();
                let rhs = x.as_tensor().dot(conv2d_adjoint(&y, &k).unwrap().as_tensor()).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * x.as_tensor().norm() * y.as_tensor().norm());
            }

            #[test]
            fn linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_image(&mut rng, 7, 9);
                let z = random_image(&mut rng, 7, 9);
                let k = random_kernel(&mut rng, 3);
                let combo = Image::from_tensor(x.as_tensor().scale(alpha).axpy(beta, z.as_tensor()).unwrap()).unwrap();
                let lhs = conv2d_circular(&combo, &k).unwrap();
                let rhs = conv2d_circular(&x, &k).unwrap().as_tensor().scale(alpha)
                    .axpy(beta, conv2d_circular(&z, &k).unwrap().as_tensor()).unwrap();
                for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
