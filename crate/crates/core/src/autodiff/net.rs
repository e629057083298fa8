//! Small fully-convolutional residual network on single-channel images.
//!
//! `F(x) = x + N(x)` where `N` stacks periodic 3x3 (configurable)
//! convolutions with a smooth activation between layers and a linear last
//! layer. The forward pass can carry a tangent so that the parameter
//! gradient of `<w, J(x) u>` is available by reverse accumulation through
//! both the primal and tangent computations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_same, DifferentiableMap, GradSeeds, Linearization, ParameterVector, Trainable};
use crate::error::{Error, Result};
use crate::tensor::{conv_accumulate, shift_dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `x` for `x >= 0`, `alpha (e^x - 1)` otherwise; C^1 when `alpha == 1`.
    Elu { alpha: f64 },
    /// Derivative at 0 is taken as `slope`.
    LeakyRelu { slope: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Elu { alpha: 1.0 }
    }
}

impl Activation {
    fn value(self, a: f64) -> f64 {
        match self {
            Activation::Elu { alpha } => {
                if a >= 0.0 {
                    a
                } else {
                    alpha * a.exp_m1()
                }
            }
            Activation::LeakyRelu { slope } => {
                if a > 0.0 {
                    a
                } else {
                    slope * a
                }
            }
        }
    }

    fn deriv(self, a: f64) -> f64 {
        match self {
            Activation::Elu { alpha } => {
                if a >= 0.0 {
                    1.0
                } else {
                    alpha * a.exp()
                }
            }
            Activation::LeakyRelu { slope } => {
                if a > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    fn second(self, a: f64) -> f64 {
        match self {
            Activation::Elu { alpha } if a < 0.0 => alpha * a.exp(),
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResidualConvNet {
    channels: Vec<usize>,
    ksize: usize,
    activation: Activation,
    residual: bool,
    params: ParameterVector,
}

/// Intermediate values of one evaluation. `inputs[l]` feeds layer `l`
/// (`inputs[0]` is the image), `pre[l]` is layer `l`'s output before the
/// activation.
struct Pass {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    tan_inputs: Vec<Vec<f64>>,
    tan_pre: Vec<Vec<f64>>,
}

impl ResidualConvNet {
    /// Zero-initialized network. `channels` lists widths from input to
    /// output, e.g. `[1, 8, 8, 1]` for three layers.
    pub fn new(
        channels: Vec<usize>,
        ksize: usize,
        activation: Activation,
        residual: bool,
    ) -> Result<Self> {
        if channels.len() < 2 || channels.contains(&0) {
            return Err(Error::Config(format!(
                "need at least two positive channel widths, got {channels:?}"
            )));
        }
        if ksize % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {ksize}"
            )));
        }
        if channels[0] != 1 || *channels.last().unwrap() != 1 {
            return Err(Error::Config(
                "single-channel images in and out are required".into(),
            ));
        }
        let mut segments = Vec::new();
        let names: Vec<(String, String)> = (0..channels.len() - 1)
            .map(|l| (format!("layer{l}.weight"), format!("layer{l}.bias")))
            .collect();
        for (l, (wn, bn)) in names.iter().enumerate() {
            segments.push((
                wn.as_str(),
                vec![channels[l + 1], channels[l], ksize, ksize],
            ));
            segments.push((bn.as_str(), vec![channels[l + 1]]));
        }
        Ok(Self {
            params: ParameterVector::zeros(&segments),
            channels,
            ksize,
            activation,
            residual,
        })
    }

    /// The default architecture: channels 1→8→8→1, 3x3 kernels, ELU,
    /// residual connection, uniform `±1/sqrt(fan_in)` initialization.
    pub fn standard(seed: u64) -> Self {
        let mut net = Self::new(vec![1, 8, 8, 1], 3, Activation::default(), true)
            .expect("standard architecture is valid");
        net.init_uniform(seed);
        net
    }

    /// Uniform in `[-s, s]` with `s = 1/sqrt(fan_in)` for weights and biases.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = self.params.layout().to_vec();
        let values = self.params.as_mut_slice();
        for (l, pair) in layout.chunks(2).enumerate() {
            let fan_in = (self.channels[l] * self.ksize * self.ksize) as f64;
            let s = 1.0 / fan_in.sqrt();
            for seg in pair {
                for v in &mut values[seg.range()] {
                    *v = rng.random_range(-s..=s);
                }
            }
        }
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn kernel_size(&self) -> usize {
        self.ksize
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    fn num_layers(&self) -> usize {
        self.channels.len() - 1
    }

    fn weights(&self, l: usize) -> &[f64] {
        &self.params.as_slice()[self.params.layout()[2 * l].range()]
    }

    fn bias(&self, l: usize) -> &[f64] {
        &self.params.as_slice()[self.params.layout()[2 * l + 1].range()]
    }

    fn dims(&self, shape: &[usize]) -> Result<(usize, usize)> {
        match *shape {
            [h, w] if h >= self.ksize && w >= self.ksize => Ok((h, w)),
            _ => Err(Error::Dimension(format!(
                "network expects a 2-D image of side >= {}, got shape {shape:?}",
                self.ksize
            ))),
        }
    }

    /// Linear part of layer `l`: `out_o = sum_i W[o, i] ⊛ in_i` (+ bias).
    fn layer_apply(&self, l: usize, input: &[f64], h: usize, w: usize, bias: bool) -> Vec<f64> {
        let (cin, cout, k) = (self.channels[l], self.channels[l + 1], self.ksize);
        let hw = h * w;
        let weights = self.weights(l);
        let mut out = vec![0.0; cout * hw];
        for o in 0..cout {
            let dst = &mut out[o * hw..(o + 1) * hw];
            if bias {
                dst.fill(self.bias(l)[o]);
            }
            for i in 0..cin {
                let ker = &weights[(o * cin + i) * k * k..(o * cin + i + 1) * k * k];
                conv_accumulate(dst, &input[i * hw..(i + 1) * hw], h, w, ker, k, false, 1.0);
            }
        }
        out
    }

    /// Adjoint of the linear part of layer `l`.
    fn layer_adjoint(&self, l: usize, cot: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (cin, cout, k) = (self.channels[l], self.channels[l + 1], self.ksize);
        let hw = h * w;
        let weights = self.weights(l);
        let mut out = vec![0.0; cin * hw];
        for o in 0..cout {
            let src = &cot[o * hw..(o + 1) * hw];
            for i in 0..cin {
                let ker = &weights[(o * cin + i) * k * k..(o * cin + i + 1) * k * k];
                conv_accumulate(&mut out[i * hw..(i + 1) * hw], src, h, w, ker, k, true, 1.0);
            }
        }
        out
    }

    /// Accumulates `d<cot, W ⊛ input>/dW` into the layer's weight gradient.
    fn layer_weight_grad(
        &self,
        l: usize,
        cot: &[f64],
        input: &[f64],
        h: usize,
        w: usize,
        grad: &mut [f64],
    ) {
        let (cin, cout, k) = (self.channels[l], self.channels[l + 1], self.ksize);
        let hw = h * w;
        let c = (k / 2) as isize;
        for o in 0..cout {
            let co = &cot[o * hw..(o + 1) * hw];
            for i in 0..cin {
                let xi = &input[i * hw..(i + 1) * hw];
                let base = (o * cin + i) * k * k;
                for a in 0..k {
                    for b in 0..k {
                        grad[base + a * k + b] +=
                            shift_dot(co, xi, h, w, a as isize - c, b as isize - c);
                    }
                }
            }
        }
    }

    fn run(&self, x: &[f64], u: Option<&[f64]>, h: usize, w: usize) -> Pass {
        let n = self.num_layers();
        let mut pass = Pass {
            inputs: vec![x.to_vec()],
            pre: Vec::with_capacity(n),
            tan_inputs: u.map(|u| vec![u.to_vec()]).unwrap_or_default(),
            tan_pre: Vec::new(),
        };
        for l in 0..n {
            let pre = self.layer_apply(l, &pass.inputs[l], h, w, true);
            let tan = u.map(|_| self.layer_apply(l, &pass.tan_inputs[l], h, w, false));
            if l + 1 < n {
                let act = self.activation;
                pass.inputs
                    .push(pre.iter().map(|&a| act.value(a)).collect());
                if let Some(t) = &tan {
                    pass.tan_inputs
                        .push(pre.iter().zip(t).map(|(&a, &t)| act.deriv(a) * t).collect());
                }
            }
            pass.pre.push(pre);
            if let Some(t) = tan {
                pass.tan_pre.push(t);
            }
        }
        pass
    }

    fn output_from(&self, x: &[f64], net_out: &[f64]) -> Vec<f64> {
        if self.residual {
            x.iter().zip(net_out).map(|(a, b)| a + b).collect()
        } else {
            net_out.to_vec()
        }
    }

    /// Reverse sweep over a (possibly tangent-carrying) pass. Returns the
    /// cotangent with respect to the input image and the parameter
    /// gradient (when requested).
    fn backward(
        &self,
        pass: &Pass,
        out_seed: Option<&[f64]>,
        tan_seed: Option<&[f64]>,
        h: usize,
        w: usize,
        want_params: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        let hw = h * w;
        let n = self.num_layers();
        let act = self.activation;
        let mut grad = if want_params {
            vec![0.0; self.params.len()]
        } else {
            Vec::new()
        };
        let mut abar: Option<Vec<f64>> = out_seed.map(<[f64]>::to_vec);
        let mut tbar: Option<Vec<f64>> = tan_seed.map(<[f64]>::to_vec);
        for l in (0..n).rev() {
            if want_params {
                let layout = self.params.layout();
                let (wseg, bseg) = (layout[2 * l].range(), layout[2 * l + 1].range());
                if let Some(ab) = &abar {
                    self.layer_weight_grad(l, ab, &pass.inputs[l], h, w, &mut grad[wseg.clone()]);
                    for (o, gb) in grad[bseg].iter_mut().enumerate() {
                        *gb += ab[o * hw..(o + 1) * hw].iter().sum::<f64>();
                    }
                }
                if let Some(tb) = &tbar {
                    self.layer_weight_grad(l, tb, &pass.tan_inputs[l], h, w, &mut grad[wseg]);
                }
            }
            let hbar = abar.as_ref().map(|ab| self.layer_adjoint(l, ab, h, w));
            let tin_bar = tbar.as_ref().map(|tb| self.layer_adjoint(l, tb, h, w));
            if l == 0 {
                abar = hbar;
                break;
            }
            // through the activation feeding layer l
            let pre = &pass.pre[l - 1];
            let mut new_abar = hbar.map(|hb| {
                pre.iter()
                    .zip(&hb)
                    .map(|(&a, &g)| act.deriv(a) * g)
                    .collect::<Vec<_>>()
            });
            if let Some(tb) = &tin_bar {
                let tpre = &pass.tan_pre[l - 1];
                let extra = pre
                    .iter()
                    .zip(tpre)
                    .zip(tb)
                    .map(|((&a, &t), &g)| act.second(a) * t * g);
                match &mut new_abar {
                    Some(v) => v.iter_mut().zip(extra).for_each(|(v, e)| *v += e),
                    None => new_abar = Some(extra.collect()),
                }
            }
            abar = new_abar;
            tbar = tin_bar.map(|tb| {
                pre.iter()
                    .zip(&tb)
                    .map(|(&a, &g)| act.deriv(a) * g)
                    .collect()
            });
        }
        (abar.unwrap_or_else(|| vec![0.0; hw]), grad)
    }
}

impl DifferentiableMap for ResidualConvNet {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.dims(input)?;
        Ok(input.to_vec())
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.dims(x.shape())?;
        let pass = self.run(x.as_slice(), None, h, w);
        Ok(x.with_data(self.output_from(x.as_slice(), pass.pre.last().unwrap())))
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        self.linearize(x)?.apply(u)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.linearize(x)?.apply_adjoint(v)
    }

    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        let (h, w) = self.dims(x.shape())?;
        let pass = self.run(x.as_slice(), None, h, w);
        let act = self.activation;
        let slopes = pass.pre[..self.num_layers() - 1]
            .iter()
            .map(|pre| pre.iter().map(|&a| act.deriv(a)).collect())
            .collect();
        Ok(Box::new(NetLinearization {
            net: self,
            shape: x.shape().to_vec(),
            h,
            w,
            slopes,
        }))
    }

    fn params(&self) -> Option<&ParameterVector> {
        Some(&self.params)
    }

    fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
        let (h, w) = self.dims(x.shape())?;
        if let Some(s) = seeds.output {
            check_same(x.shape(), s)?;
        }
        if let Some((u, wt)) = seeds.tangent {
            check_same(x.shape(), u)?;
            check_same(x.shape(), wt)?;
        }
        let pass = self.run(x.as_slice(), seeds.tangent.map(|(u, _)| u.as_slice()), h, w);
        let (_, grad) = self.backward(
            &pass,
            seeds.output.map(Tensor::as_slice),
            seeds.tangent.map(|(_, wt)| wt.as_slice()),
            h,
            w,
            true,
        );
        Ok(grad)
    }
}

impl Trainable for ResidualConvNet {
    fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }
}

/// Jacobian of the network at a fixed point: the activation slopes are
/// cached so each product costs one linear sweep.
struct NetLinearization<'a> {
    net: &'a ResidualConvNet,
    shape: Vec<usize>,
    h: usize,
    w: usize,
    slopes: Vec<Vec<f64>>,
}

impl Linearization for NetLinearization<'_> {
    fn apply(&self, u: &Tensor) -> Result<Tensor> {
        check_same(&self.shape, u)?;
        let n = self.net.num_layers();
        let mut t = u.as_slice().to_vec();
        for l in 0..n {
            t = self.net.layer_apply(l, &t, self.h, self.w, false);
            if l + 1 < n {
                t.iter_mut().zip(&self.slopes[l]).for_each(|(t, s)| *t *= s);
            }
        }
        Ok(u.with_data(self.net.output_from(u.as_slice(), &t)))
    }

    fn apply_adjoint(&self, v: &Tensor) -> Result<Tensor> {
        check_same(&self.shape, v)?;
        let n = self.net.num_layers();
        let mut g = v.as_slice().to_vec();
        for l in (0..n).rev() {
            if l + 1 < n {
                g.iter_mut().zip(&self.slopes[l]).for_each(|(g, s)| *g *= s);
            }
            g = self.net.layer_adjoint(l, &g, self.h, self.w);
        }
        Ok(v.with_data(self.net.output_from(v.as_slice(), &g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sym_jacobian_apply;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap()
    }

    fn net_with(act: Activation, seed: u64) -> ResidualConvNet {
        let mut net = ResidualConvNet::new(vec![1, 4, 4, 1], 3, act, true).unwrap();
        net.init_uniform(seed);
        net
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn zero_network_is_identity() {
        let net = ResidualConvNet::new(vec![1, 8, 8, 1], 3, Activation::default(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[6, 6]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_with_bias_adds_activation_path_constant() {
        // layers: 1->2->1, weights zero, biases b0 = [0.5, -1], b1 = [0.25]
        // N(x) = b1 since the last layer's weights are zero
        let mut net = ResidualConvNet::new(vec![1, 2, 1], 3, Activation::default(), true).unwrap();
        let layout = net.params.layout().to_vec();
        let p = net.params.as_mut_slice();
        p[layout[1].range()].copy_from_slice(&[0.5, -1.0]);
        p[layout[3].range()].copy_from_slice(&[0.25]);
        let x = Tensor::filled(&[4, 4], 0.1);
        for v in net.forward(&x).unwrap().as_slice() {
            assert!((v - 0.35).abs() < 1e-15);
        }
    }

    #[test]
    fn jvp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for act in [Activation::default(), Activation::LeakyRelu { slope: 0.1 }] {
            let net = net_with(act, 3);
            let x = rand_tensor(&mut rng, &[7, 6]);
            let u = rand_tensor(&mut rng, &[7, 6]);
            let t = 1e-5;
            let fp = net.forward(&x.axpy(t, &u).unwrap()).unwrap();
            let fm = net.forward(&x.axpy(-t, &u).unwrap()).unwrap();
            let fd = fp.sub(&fm).unwrap().scale(0.5 / t);
            let jv = net.jvp(&x, &u).unwrap();
            assert!(rel_err(jv.as_slice(), fd.as_slice()) < 1e-4);
        }
    }

    #[test]
    fn jvp_vjp_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = net_with(Activation::default(), 5);
        let x = rand_tensor(&mut rng, &[8, 8]);
        let u = rand_tensor(&mut rng, &[8, 8]);
        let v = rand_tensor(&mut rng, &[8, 8]);
        let lhs = net.jvp(&x, &u).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&net.vjp(&x, &v).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        let zero = Tensor::zeros(&[8, 8]);
        assert_eq!(net.jvp(&x, &zero).unwrap(), zero);
        assert_eq!(net.vjp(&x, &zero).unwrap(), zero);
    }

    #[test]
    fn backward_input_cotangent_matches_vjp() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = net_with(Activation::default(), 7);
        let x = rand_tensor(&mut rng, &[5, 5]);
        let v = rand_tensor(&mut rng, &[5, 5]);
        let pass = net.run(x.as_slice(), None, 5, 5);
        let (xbar, _) = net.backward(&pass, Some(v.as_slice()), None, 5, 5, false);
        let xbar: Vec<f64> = xbar.iter().zip(v.as_slice()).map(|(a, b)| a + b).collect();
        assert!(rel_err(&xbar, net.vjp(&x, &v).unwrap().as_slice()) < 1e-13);
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = net_with(Activation::default(), 9);
        let x = rand_tensor(&mut rng, &[6, 6]);
        let u = rand_tensor(&mut rng, &[6, 6]);
        let wt = rand_tensor(&mut rng, &[6, 6]);
        let s = rand_tensor(&mut rng, &[6, 6]);
        let dir: Vec<f64> = (0..net.num_params())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let scalar = |n: &ResidualConvNet| {
            n.forward(&x).unwrap().dot(&s).unwrap() + n.jvp(&x, &u).unwrap().dot(&wt).unwrap()
        };
        let shifted = |t: f64| {
            let mut n = net.clone();
            for (p, d) in n.params.as_mut_slice().iter_mut().zip(&dir) {
                *p += t * d;
            }
            scalar(&n)
        };
        let t = 1e-5;
        let fd = (shifted(t) - shifted(-t)) / (2.0 * t);
        let g = net
            .param_grad(
                &x,
                &GradSeeds {
                    output: Some(&s),
                    tangent: Some((&u, &wt)),
                },
            )
            .unwrap();
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!(
            (fd - analytic).abs() <= 1e-6 * fd.abs().max(1.0),
            "{fd} vs {analytic}"
        );
    }

    #[test]
    fn linearization_matches_sym_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = net_with(Activation::default(), 11);
        let x = rand_tensor(&mut rng, &[5, 6]);
        let u = rand_tensor(&mut rng, &[5, 6]);
        let a = net.linearize(&x).unwrap().apply_sym(&u).unwrap();
        let b = sym_jacobian_apply(&net, &x, &u).unwrap();
        assert!(rel_err(a.as_slice(), b.as_slice()) < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = net_with(Activation::default(), 1);
        assert!(net.forward(&Tensor::zeros(&[2, 2])).is_err());
        assert!(net.forward(&Tensor::zeros(&[16])).is_err());
        let x = Tensor::zeros(&[4, 4]);
        assert!(net.jvp(&x, &Tensor::zeros(&[4, 5])).is_err());
        assert!(ResidualConvNet::new(vec![1, 4, 2], 3, Activation::default(), true).is_err());
        assert!(ResidualConvNet::new(vec![1, 4, 1], 2, Activation::default(), true).is_err());
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = ResidualConvNet::standard(42);
        let b = ResidualConvNet::standard(42);
        assert_eq!(a.params, b.params);
        let first = a.weights(0);
        assert!(first.iter().all(|v| v.abs() <= 1.0 / 3.0));
        let second = a.weights(1);
        let s = 1.0 / (72f64).sqrt();
        assert!(second.iter().all(|v| v.abs() <= s));
    }
}
