//! Differentiable operators with forward evaluation, Jacobian-vector and
//! vector-Jacobian products, and parameter gradients.
//!
//! This is deliberately not a general autodiff system. Every map
//! implements its own linearization analytically, and the only scalar
//! losses ever differentiated with respect to parameters are sums of
//!
//! * `<s, F(x)>` (data terms, `s` being the loss cotangent), and
//! * `<w, J_F(x) u>` (Rayleigh quotients of the Jacobian).
//!
//! [`Tape`] accumulates those terms. Work done while the tape is detached
//! contributes values but no gradient.

mod linear;
mod net;

use std::sync::Arc;

pub use linear::{AddConstant, AdjointComposite, ConvMap, DenseLinear, Identity};
pub use net::{Activation, ResidualConvNet};

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage with a named segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParameterVector {
    /// Zero-initialized vector for `(name, shape)` segments laid out in order.
    pub fn zeros(segments: &[(&str, Vec<usize>)]) -> Self {
        let mut layout = Vec::with_capacity(segments.len());
        let mut offset = 0;
        for (name, shape) in segments {
            let seg = Segment {
                name: (*name).to_string(),
                shape: shape.clone(),
                offset,
            };
            offset += seg.len();
            layout.push(seg);
        }
        Self {
            values: vec![0.0; offset],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.range()])
    }

    /// Replaces all values, keeping the layout.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::shape(&[self.values.len()], &[values.len()]));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// Same layout, different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.set_values(&values)?;
        Ok(out)
    }

    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        self.layout == other.layout
    }
}

/// Cotangents that define the scalar whose parameter gradient is wanted:
/// `<output, F(x)> + <w, J_F(x) u>` with `tangent = Some((u, w))`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradSeeds<'a> {
    pub output: Option<&'a Tensor>,
    pub tangent: Option<(&'a Tensor, &'a Tensor)>,
}

/// The Jacobian of a map frozen at a point.
pub trait Linearization: Send + Sync {
    /// `J u`
    fn apply(&self, u: &Tensor) -> Result<Tensor>;
    /// `J^T v`
    fn apply_adjoint(&self, v: &Tensor) -> Result<Tensor>;

    /// `(J + J^T) u / 2`
    fn apply_sym(&self, u: &Tensor) -> Result<Tensor> {
        let a = self.apply(u)?;
        let b = self.apply_adjoint(u)?;
        Ok(a.add(&b)?.scale(0.5))
    }
}

pub trait DifferentiableMap: Send + Sync {
    /// Validates an input shape and returns the matching output shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn forward(&self, x: &Tensor) -> Result<Tensor>;

    /// `J(x) u`, computed analytically.
    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor>;

    /// `J(x)^T v`
    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor>;

    /// Jacobian at `x`, for repeated products. Maps with expensive forward
    /// passes override this to cache the evaluation point.
    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        self.output_shape(x.shape())?;
        Ok(Box::new(PointLinearization {
            map: self,
            at: x.clone(),
        }))
    }

    fn params(&self) -> Option<&ParameterVector> {
        None
    }

    fn num_params(&self) -> usize {
        self.params().map_or(0, ParameterVector::len)
    }

    /// Gradient with respect to the parameters of the scalar described by
    /// `seeds`. Parameter-free maps return an empty vector.
    fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
        let _ = seeds;
        self.output_shape(x.shape())?;
        Ok(vec![0.0; self.num_params()])
    }
}

/// Maps whose parameters can be updated in place by an optimizer.
pub trait Trainable: DifferentiableMap {
    fn params_mut(&mut self) -> &mut ParameterVector;
}

struct PointLinearization<'a, M: ?Sized> {
    map: &'a M,
    at: Tensor,
}

impl<M: DifferentiableMap + ?Sized> Linearization for PointLinearization<'_, M> {
    fn apply(&self, u: &Tensor) -> Result<Tensor> {
        self.map.jvp(&self.at, u)
    }

    fn apply_adjoint(&self, v: &Tensor) -> Result<Tensor> {
        self.map.vjp(&self.at, v)
    }
}

macro_rules! forward_map_impl {
    ($($ptr:ty),*) => {$(
        impl<M: DifferentiableMap + ?Sized> DifferentiableMap for $ptr {
            fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
                (**self).output_shape(input)
            }
            fn forward(&self, x: &Tensor) -> Result<Tensor> {
                (**self).forward(x)
            }
            fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
                (**self).jvp(x, u)
            }
            fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
                (**self).vjp(x, v)
            }
            fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
                (**self).linearize(x)
            }
            fn params(&self) -> Option<&ParameterVector> {
                (**self).params()
            }
            fn num_params(&self) -> usize {
                (**self).num_params()
            }
            fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
                (**self).param_grad(x, seeds)
            }
        }
    )*};
}

forward_map_impl!(&M, Box<M>, Arc<M>);

/// Checks that `x` is an admissible input and returns the output shape.
pub(crate) fn check_input(
    map: &(impl DifferentiableMap + ?Sized),
    x: &Tensor,
) -> Result<Vec<usize>> {
    map.output_shape(x.shape())
}

pub(crate) fn check_same(expected: &[usize], t: &Tensor) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::shape(expected, t.shape()));
    }
    Ok(())
}

/// `(J(x) + J(x)^T) u / 2`; requires a square map.
pub fn sym_jacobian_apply(
    map: &(impl DifferentiableMap + ?Sized),
    x: &Tensor,
    u: &Tensor,
) -> Result<Tensor> {
    let out = map.output_shape(x.shape())?;
    if out != x.shape() {
        return Err(Error::Dimension(format!(
            "symmetric Jacobian needs a square map, got {:?} -> {out:?}",
            x.shape()
        )));
    }
    let a = map.jvp(x, u)?;
    let b = map.vjp(x, u)?;
    Ok(a.add(&b)?.scale(0.5))
}

/// Accumulates parameter gradients of a scalar loss assembled from
/// recorded map evaluations.
#[derive(Clone, Debug)]
pub struct Tape {
    grad: Vec<f64>,
    value: f64,
    detached: bool,
}

impl Tape {
    pub fn new(num_params: usize) -> Self {
        Self {
            grad: vec![0.0; num_params],
            value: 0.0,
            detached: false,
        }
    }

    pub fn for_map(map: &(impl DifferentiableMap + ?Sized)) -> Self {
        Self::new(map.num_params())
    }

    pub fn is_detached(&self) -> bool {
        self.detached
    }

    pub fn set_detached(&mut self, detached: bool) {
        self.detached = detached;
    }

    /// Runs `f` with recording disabled, restoring the previous mode after.
    pub fn detached<R>(&mut self, f: impl FnOnce(&mut Tape) -> R) -> R {
        let prev = self.detached;
        self.detached = true;
        let out = f(self);
        self.detached = prev;
        out
    }

    /// Adds a loss contribution. Values are tracked even when detached.
    pub fn add_value(&mut self, v: f64) {
        self.value += v;
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Records `weight * <seed, F(x)>`.
    pub fn record_output(
        &mut self,
        map: &(impl DifferentiableMap + ?Sized),
        x: &Tensor,
        seed: &Tensor,
        weight: f64,
    ) -> Result<()> {
        let out = check_input(map, x)?;
        check_same(&out, seed)?;
        self.record(
            map,
            x,
            &GradSeeds {
                output: Some(seed),
                tangent: None,
            },
            weight,
        )
    }

    /// Records `weight * <w, J_F(x) u>`.
    pub fn record_jacobian_form(
        &mut self,
        map: &(impl DifferentiableMap + ?Sized),
        x: &Tensor,
        u: &Tensor,
        w: &Tensor,
        weight: f64,
    ) -> Result<()> {
        let out = check_input(map, x)?;
        check_same(x.shape(), u)?;
        check_same(&out, w)?;
        self.record(
            map,
            x,
            &GradSeeds {
                output: None,
                tangent: Some((u, w)),
            },
            weight,
        )
    }

    fn record(
        &mut self,
        map: &(impl DifferentiableMap + ?Sized),
        x: &Tensor,
        seeds: &GradSeeds<'_>,
        weight: f64,
    ) -> Result<()> {
        if self.detached || weight == 0.0 || self.grad.is_empty() {
            return Ok(());
        }
        let g = map.param_grad(x, seeds)?;
        if g.len() != self.grad.len() {
            return Err(Error::shape(&[self.grad.len()], &[g.len()]));
        }
        for (acc, gi) in self.grad.iter_mut().zip(g) {
            *acc += weight * gi;
        }
        Ok(())
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn into_gradient(self) -> Vec<f64> {
        self.grad
    }
}

/// Parameter gradient of everything recorded on `tape`, laid out like the
/// map's parameters.
pub fn param_gradient(
    map: &(impl DifferentiableMap + ?Sized),
    tape: &Tape,
) -> Result<ParameterVector> {
    match map.params() {
        Some(p) => p.with_values(tape.gradient().to_vec()),
        None => Ok(ParameterVector::zeros(&[])),
    }
}

/// Rayleigh quotient `v^T M v / |v|^2` for a symmetric action `M`.
pub(crate) fn rayleigh(v: &Tensor, mv: &Tensor) -> f64 {
    dot(v.as_slice(), mv.as_slice()) / dot(v.as_slice(), v.as_slice())
}
