use super::{
    check_input, check_same, DifferentiableMap, GradSeeds, Linearization, ParameterVector,
    Trainable,
};
use crate::error::{Error, Result};
use crate::tensor::{conv_accumulate, shift_dot, Kernel, Tensor};

/// `x ↦ x`
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl DifferentiableMap for Identity {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        check_same(x.shape(), u)?;
        Ok(u.clone())
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        check_same(x.shape(), v)?;
        Ok(v.clone())
    }
}

/// A fixed dense matrix acting on the flattened input. Square matrices
/// preserve the input shape; rectangular ones produce a 1-D output.
#[derive(Clone, Debug)]
pub struct DenseLinear {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
}

impl DenseLinear {
    /// `matrix` is row-major.
    pub fn new(rows: usize, cols: usize, matrix: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || matrix.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                matrix.len()
            )));
        }
        Ok(Self { rows, cols, matrix })
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = c;
        }
        Self {
            rows: n,
            cols: n,
            matrix: m,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            m[i * n + i] = d;
        }
        Self {
            rows: n,
            cols: n,
            matrix: m,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.cols)
            .map(|row| crate::tensor::dot(row, x))
            .collect()
    }

    fn mul_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.matrix.chunks_exact(self.cols).zip(v) {
            for (o, &m) in out.iter_mut().zip(row) {
                *o += m * vi;
            }
        }
        out
    }
}

impl DifferentiableMap for DenseLinear {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input.iter().product();
        if n != self.cols {
            return Err(Error::shape(&[self.cols], input));
        }
        Ok(if self.rows == self.cols {
            input.to_vec()
        } else {
            vec![self.rows]
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = check_input(self, x)?;
        Tensor::new(out, self.mul(x.as_slice()))
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        check_same(x.shape(), u)?;
        self.forward(u)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        let out = check_input(self, x)?;
        check_same(&out, v)?;
        Tensor::new(x.shape().to_vec(), self.mul_t(v.as_slice()))
    }
}

fn image_dims(shape: &[usize], min_side: usize) -> Result<(usize, usize)> {
    match *shape {
        [h, w] if h >= min_side && w >= min_side => Ok((h, w)),
        _ => Err(Error::Dimension(format!(
            "expected a 2-D image of side >= {min_side}, got shape {shape:?}"
        ))),
    }
}

/// `x ↦ scale · (k ⊛ x)` with periodic boundaries. The kernel entries are
/// the trainable parameters.
#[derive(Clone, Debug)]
pub struct ConvMap {
    size: usize,
    scale: f64,
    params: ParameterVector,
}

impl ConvMap {
    pub fn new(kernel: Kernel, scale: f64) -> Self {
        let size = kernel.size();
        let mut params = ParameterVector::zeros(&[("kernel", vec![size, size])]);
        params.as_mut_slice().copy_from_slice(kernel.as_slice());
        Self {
            size,
            scale,
            params,
        }
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::new(self.size, self.params.as_slice().to_vec())
            .expect("kernel parameters keep their square layout")
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub(crate) fn apply_raw(&self, x: &[f64], h: usize, w: usize, adjoint: bool) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        conv_accumulate(
            &mut out,
            x,
            h,
            w,
            self.params.as_slice(),
            self.size,
            adjoint,
            self.scale,
        );
        out
    }

    /// `scale · (k ⊛ t)` on a 2-D tensor.
    pub(crate) fn apply(&self, t: &Tensor) -> Result<Tensor> {
        self.forward(t)
    }

    /// `scale · (k ⋆ t)`, the adjoint of [`ConvMap::apply`].
    pub(crate) fn adjoint(&self, t: &Tensor) -> Result<Tensor> {
        let (h, w) = image_dims(t.shape(), self.size)?;
        Ok(t.with_data(self.apply_raw(t.as_slice(), h, w, true)))
    }

    fn kernel_grad(&self, cot: &[f64], x: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let c = (self.size / 2) as isize;
        for a in 0..self.size {
            for b in 0..self.size {
                out[a * self.size + b] +=
                    self.scale * shift_dot(cot, x, h, w, a as isize - c, b as isize - c);
            }
        }
    }
}

impl DifferentiableMap for ConvMap {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        image_dims(input, self.size)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = image_dims(x.shape(), self.size)?;
        Ok(x.with_data(self.apply_raw(x.as_slice(), h, w, false)))
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        check_same(x.shape(), u)?;
        self.forward(u)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (h, w) = image_dims(x.shape(), self.size)?;
        check_same(x.shape(), v)?;
        Ok(v.with_data(self.apply_raw(v.as_slice(), h, w, true)))
    }

    fn params(&self) -> Option<&ParameterVector> {
        Some(&self.params)
    }

    fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
        let (h, w) = image_dims(x.shape(), self.size)?;
        let mut g = vec![0.0; self.params.len()];
        if let Some(s) = seeds.output {
            check_same(x.shape(), s)?;
            self.kernel_grad(s.as_slice(), x.as_slice(), h, w, &mut g);
        }
        if let Some((u, wt)) = seeds.tangent {
            check_same(x.shape(), u)?;
            check_same(x.shape(), wt)?;
            self.kernel_grad(wt.as_slice(), u.as_slice(), h, w, &mut g);
        }
        Ok(g)
    }
}

impl Trainable for ConvMap {
    fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }
}

/// `x ↦ scale · L^T inner(x)` where `L` is periodic convolution with a
/// fixed kernel. Parameters are those of `inner`.
#[derive(Clone, Debug)]
pub struct AdjointComposite<M> {
    outer: ConvMap,
    inner: M,
}

impl<M: DifferentiableMap> AdjointComposite<M> {
    pub fn new(kernel: Kernel, scale: f64, inner: M) -> Self {
        Self {
            outer: ConvMap::new(kernel, scale),
            inner,
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut M {
        &mut self.inner
    }

    pub fn into_inner(self) -> M {
        self.inner
    }

    pub fn kernel(&self) -> Kernel {
        self.outer.kernel()
    }

    pub fn scale(&self) -> f64 {
        self.outer.scale
    }

    fn outer_t(&self, t: &Tensor) -> Result<Tensor> {
        self.outer.adjoint(t)
    }

    fn outer_fwd(&self, t: &Tensor) -> Result<Tensor> {
        self.outer.apply(t)
    }
}

impl<M: DifferentiableMap> DifferentiableMap for AdjointComposite<M> {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mid = self.inner.output_shape(input)?;
        self.outer.output_shape(&mid)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.outer_t(&self.inner.forward(x)?)
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        self.outer_t(&self.inner.jvp(x, u)?)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        check_same(&self.output_shape(x.shape())?, v)?;
        self.inner.vjp(x, &self.outer_fwd(v)?)
    }

    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        self.output_shape(x.shape())?;
        Ok(Box::new(CompositeLinearization {
            outer: &self.outer,
            inner: self.inner.linearize(x)?,
        }))
    }

    fn params(&self) -> Option<&ParameterVector> {
        self.inner.params()
    }

    fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
        let out = self.output_shape(x.shape())?;
        let output = match seeds.output {
            Some(s) => {
                check_same(&out, s)?;
                Some(self.outer_fwd(s)?)
            }
            None => None,
        };
        let tangent = match seeds.tangent {
            Some((u, w)) => {
                check_same(&out, w)?;
                Some((u, self.outer_fwd(w)?))
            }
            None => None,
        };
        self.inner.param_grad(
            x,
            &GradSeeds {
                output: output.as_ref(),
                tangent: tangent.as_ref().map(|(u, w)| (*u, w)),
            },
        )
    }
}

impl<M: Trainable> Trainable for AdjointComposite<M> {
    fn params_mut(&mut self) -> &mut ParameterVector {
        self.inner.params_mut()
    }
}

struct CompositeLinearization<'a> {
    outer: &'a ConvMap,
    inner: Box<dyn Linearization + 'a>,
}

impl Linearization for CompositeLinearization<'_> {
    fn apply(&self, u: &Tensor) -> Result<Tensor> {
        self.outer.adjoint(&self.inner.apply(u)?)
    }

    fn apply_adjoint(&self, v: &Tensor) -> Result<Tensor> {
        self.inner.apply_adjoint(&self.outer.apply(v)?)
    }
}

/// `x ↦ inner(x) + c`
#[derive(Clone, Debug)]
pub struct AddConstant<M> {
    inner: M,
    constant: Tensor,
}

impl<M: DifferentiableMap> AddConstant<M> {
    pub fn new(inner: M, constant: Tensor) -> Self {
        Self { inner, constant }
    }
}

impl<M: DifferentiableMap> DifferentiableMap for AddConstant<M> {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let out = self.inner.output_shape(input)?;
        check_same(&out, &self.constant)?;
        Ok(out)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        self.inner.forward(x)?.add(&self.constant)
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        self.inner.jvp(x, u)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.inner.vjp(x, v)
    }

    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        self.inner.linearize(x)
    }

    fn params(&self) -> Option<&ParameterVector> {
        self.inner.params()
    }

    fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
        self.inner.param_grad(x, seeds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{param_gradient, sym_jacobian_apply, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_and_scaled_identity() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(Identity.forward(&x).unwrap(), x);
        let two = DenseLinear::scaled_identity(3, 2.0);
        assert_eq!(two.forward(&x).unwrap(), x.scale(2.0));
    }

    #[test]
    fn linear_map_derivatives_are_the_matrix() {
        let m = DenseLinear::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::from_vec(vec![5.0, -1.0]);
        let u = Tensor::from_vec(vec![1.0, 1.0]);
        assert_eq!(m.jvp(&x, &u).unwrap().as_slice(), &[3.0, 7.0]);
        assert_eq!(m.vjp(&x, &u).unwrap().as_slice(), &[4.0, 6.0]);
        let zero = Tensor::zeros(&[2]);
        assert_eq!(m.jvp(&x, &zero).unwrap(), zero);
        assert_eq!(m.vjp(&x, &zero).unwrap(), zero);
    }

    #[test]
    fn antisymmetric_map_has_zero_symmetric_part() {
        let m = DenseLinear::new(2, 2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        let x = Tensor::from_vec(vec![0.3, 0.7]);
        let u = Tensor::from_vec(vec![2.0, -5.0]);
        assert_eq!(
            sym_jacobian_apply(&m, &x, &u).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        let s = DenseLinear::new(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        assert_eq!(
            sym_jacobian_apply(&s, &x, &u).unwrap(),
            s.jvp(&x, &u).unwrap()
        );
    }

    #[test]
    fn one_parameter_map_gradient_is_inner_product() {
        // F_θ(x) = θ x as a 1x1 convolution; d<v, F_θ(x)>/dθ = <x, v>
        let map = ConvMap::new(Kernel::new(1, vec![0.7]).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let v = rand_tensor(&mut rng, &[3, 4]);
        let mut tape = Tape::for_map(&map);
        tape.record_output(&map, &x, &v, 1.0).unwrap();
        let g = param_gradient(&map, &tape).unwrap();
        assert!((g.as_slice()[0] - x.dot(&v).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn theta_free_loss_has_zero_gradient() {
        let map = ConvMap::new(Kernel::delta(3).unwrap(), 1.0);
        let tape = Tape::for_map(&map);
        assert!(tape.gradient().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn conv_kernel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = Kernel::new(3, (0..9).map(|_| rng.random::<f64>()).collect()).unwrap();
        let map = ConvMap::new(k.clone(), 0.8);
        let x = rand_tensor(&mut rng, &[6, 5]);
        let s = rand_tensor(&mut rng, &[6, 5]);
        let g = map
            .param_grad(
                &x,
                &GradSeeds {
                    output: Some(&s),
                    tangent: None,
                },
            )
            .unwrap();
        for idx in 0..9 {
            let bump = |t: f64| {
                let mut w = k.as_slice().to_vec();
                w[idx] += t;
                let m = ConvMap::new(Kernel::new(3, w).unwrap(), 0.8);
                m.forward(&x).unwrap().dot(&s).unwrap()
            };
            let fd = (bump(1e-6) - bump(-1e-6)) / 2e-6;
            assert!((fd - g[idx]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn adjoint_composite_is_normal_operator_for_conv_inner() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Kernel::new(3, (0..9).map(|_| rng.random::<f64>()).collect()).unwrap();
        let comp = AdjointComposite::new(k.clone(), 1.0, ConvMap::new(k.clone(), 1.0));
        let x = rand_tensor(&mut rng, &[5, 5]);
        let u = rand_tensor(&mut rng, &[5, 5]);
        let v = rand_tensor(&mut rng, &[5, 5]);
        // L^T L is symmetric: <J u, v> == <u, J v> and jvp == vjp
        let ju = comp.jvp(&x, &u).unwrap();
        let jv = comp.vjp(&x, &u).unwrap();
        for (a, b) in ju.as_slice().iter().zip(jv.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let lhs = comp.jvp(&x, &u).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&comp.vjp(&x, &v).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let lin = comp.linearize(&x).unwrap();
        assert_eq!(lin.apply(&u).unwrap(), ju);
    }
}
