//! Smallest eigenvalue of the symmetrized Jacobian by two power iterations.
//!
//! Stage one estimates the dominant eigenvalue `q` of `S = (J + J^T)/2`.
//! With a shift `ρ >= λ_max(S)` the matrix `ρI - S` is positive
//! semidefinite and its dominant eigenvalue is `χ = ρ - λ_min(S)`, which
//! stage two finds. Both stages run detached; only the final Rayleigh
//! quotient at the stage-two witness is differentiated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    rayleigh, DifferentiableMap, GradSeeds, Linearization, ParameterVector, Tape,
};
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

const MAX_RESTARTS: usize = 3;
const DEGENERATE_RAYLEIGH: f64 = 1e-9;
const DEGENERATE_SHIFT: f64 = 1e-3;
const SHIFT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub n_iter: usize,
    /// Multiplier turning `|q|` from stage one into the shift.
    pub shift_margin: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_iter: 100,
            shift_margin: 1.05,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// Cheaper setting used inside the training loop.
    pub fn training(seed: u64) -> Self {
        Self {
            n_iter: 20,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Config("probe n_iter must be >= 1".into()));
        }
        if !(self.shift_margin > 1.0) {
            return Err(Error::Config(format!(
                "probe shift_margin must exceed 1, got {}",
                self.shift_margin
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralEstimate {
    /// Stage-one Rayleigh quotient.
    pub rayleigh: f64,
    pub rho_hat: f64,
    pub chi_hat: f64,
    /// Always `rho_hat - chi_hat`.
    pub lambda_min: f64,
    pub witness: Tensor,
    /// Power steps taken over both stages.
    pub iterations: usize,
}

fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape from a validated tensor")
}

/// Dominant (largest magnitude) eigenvalue of a symmetric action.
///
/// Runs `n_iter` normalized power steps from a Gaussian start drawn from
/// `rng` and returns the Rayleigh quotient of the final iterate together
/// with that iterate.
pub fn power_max_abs_eig(
    apply: impl Fn(&Tensor) -> Result<Tensor>,
    shape: &[usize],
    n_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Tensor)> {
    power_from(apply, None, shape, n_iter, rng)
}

/// Like [`power_max_abs_eig`], starting from `start` when given. Restarts
/// after a vanishing iterate draw fresh Gaussian vectors.
pub fn power_from(
    apply: impl Fn(&Tensor) -> Result<Tensor>,
    start: Option<&Tensor>,
    shape: &[usize],
    n_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Tensor)> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "power iteration needs a positive dimension, got {shape:?}"
        )));
    }
    if n_iter == 0 {
        return Err(Error::Config("power iteration needs n_iter >= 1".into()));
    }
    let mut start = start.filter(|v| v.shape() == shape && v.norm() > 0.0);
    'restart: for _ in 0..=MAX_RESTARTS {
        let mut v = match start.take() {
            Some(v) => v.clone(),
            None => gaussian(shape, rng),
        };
        let vn = v.norm();
        v = v.scale(1.0 / vn);
        for _ in 0..n_iter {
            let av = apply(&v)?;
            let n = av.norm();
            if !n.is_finite() {
                return Err(Error::NonFinite("power iteration iterate".into()));
            }
            if n <= f64::MIN_POSITIVE {
                continue 'restart;
            }
            v = av.scale(1.0 / n);
        }
        let av = apply(&v)?;
        return Ok((
            dot(v.as_slice(), av.as_slice()) / dot(v.as_slice(), v.as_slice()),
            v,
        ));
    }
    Err(Error::ZeroIterate {
        restarts: MAX_RESTARTS,
    })
}

/// Estimate of `λ_min((J_map(x) + J_map(x)^T)/2)`.
///
/// When `record` carries a tape, `weight · ∂λ/∂θ` is accumulated on it,
/// flowing only through the final Rayleigh quotient at the witness.
pub fn lambda_min_sym_jacobian(
    map: &(impl DifferentiableMap + ?Sized),
    x: &Tensor,
    config: &ProbeConfig,
    record: Option<(&mut Tape, f64)>,
) -> Result<SpectralEstimate> {
    config.validate()?;
    if !x.is_finite() {
        return Err(Error::NonFinite("probe point".into()));
    }
    let out = map.output_shape(x.shape())?;
    if out != x.shape() {
        return Err(Error::Dimension(format!(
            "symmetric Jacobian needs a square map, got {:?} -> {out:?}",
            x.shape()
        )));
    }
    let lin = map.linearize(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sym = |u: &Tensor| lin.apply_sym(u);

    let (rayleigh, stage1) = match power_max_abs_eig(sym, x.shape(), config.n_iter, &mut rng) {
        Ok((q, v)) => (q, Some(v)),
        // a numerically vanishing operator: treat as the degenerate spectrum
        Err(Error::ZeroIterate { .. }) => (0.0, None),
        Err(e) => return Err(e),
    };
    // a negative dominant eigenvalue means stage 1 already converged
    // towards the bottom of the spectrum
    let warm = stage1.filter(|_| rayleigh < 0.0);
    let rho_hat = if rayleigh.abs() < DEGENERATE_RAYLEIGH {
        DEGENERATE_SHIFT
    } else {
        config.shift_margin * rayleigh.abs() + SHIFT_FLOOR
    };

    let shifted = |v: &Tensor| -> Result<Tensor> { v.scale(rho_hat).sub(&lin.apply_sym(v)?) };
    let (_, witness) = power_from(shifted, warm.as_ref(), x.shape(), config.n_iter, &mut rng)?;

    let quad = witness_quadratic(lin.as_ref(), &witness)?;
    let chi_hat = rho_hat - quad;
    let lambda_min = rho_hat - chi_hat;

    if let Some((tape, weight)) = record {
        let nv2 = dot(witness.as_slice(), witness.as_slice());
        tape.record_jacobian_form(map, x, &witness, &witness, weight / nv2)?;
    }

    Ok(SpectralEstimate {
        rayleigh,
        rho_hat,
        chi_hat,
        lambda_min,
        witness,
        iterations: 2 * config.n_iter,
    })
}

/// `v^T S v / |v|^2`
fn witness_quadratic(lin: &dyn Linearization, v: &Tensor) -> Result<f64> {
    Ok(rayleigh(v, &lin.apply_sym(v)?))
}

/// `R_T = 2T - I`. `T` is monotone iff `J^s_{R_T} ⪰ -I` everywhere.
#[derive(Clone, Debug)]
pub struct Reflected<M> {
    base: M,
}

impl<M: DifferentiableMap> Reflected<M> {
    pub fn new(base: M) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &M {
        &self.base
    }
}

impl<M: DifferentiableMap> DifferentiableMap for Reflected<M> {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let out = self.base.output_shape(input)?;
        if out != input {
            return Err(Error::Dimension(
                "the reflected operator needs a square map".into(),
            ));
        }
        Ok(out)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        self.base.forward(x)?.scale(2.0).sub(x)
    }

    fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        self.base.jvp(x, u)?.scale(2.0).sub(u)
    }

    fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        self.base.vjp(x, v)?.scale(2.0).sub(v)
    }

    fn linearize<'a>(&'a self, x: &Tensor) -> Result<Box<dyn Linearization + 'a>> {
        self.output_shape(x.shape())?;
        Ok(Box::new(ReflectedLinearization(self.base.linearize(x)?)))
    }

    fn params(&self) -> Option<&ParameterVector> {
        self.base.params()
    }

    fn param_grad(&self, x: &Tensor, seeds: &GradSeeds<'_>) -> Result<Vec<f64>> {
        // the -I term carries no parameters
        let mut g = self.base.param_grad(x, seeds)?;
        g.iter_mut().for_each(|v| *v *= 2.0);
        Ok(g)
    }
}

struct ReflectedLinearization<'a>(Box<dyn Linearization + 'a>);

impl Linearization for ReflectedLinearization<'_> {
    fn apply(&self, u: &Tensor) -> Result<Tensor> {
        self.0.apply(u)?.scale(2.0).sub(u)
    }

    fn apply_adjoint(&self, v: &Tensor) -> Result<Tensor> {
        self.0.apply_adjoint(v)?.scale(2.0).sub(v)
    }

    fn apply_sym(&self, u: &Tensor) -> Result<Tensor> {
        self.0.apply_sym(u)?.scale(2.0).sub(u)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleCertificate {
    pub sample_id: usize,
    /// `λ_min(J^s_{R_T})`
    pub lambda_min_r: f64,
    /// `λ_min(J^s_T) = (λ_min(J^s_{R_T}) + 1) / 2`
    pub lambda_min_t: f64,
    pub iterations: usize,
    pub rho_hat: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub samples: Vec<SampleCertificate>,
    pub min_lambda_t: f64,
    pub beta: f64,
    pub passed: bool,
}

impl CertificateReport {
    /// CSV with header `sample_id,lambda_min_R,lambda_min_T,iterations,rho_hat`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,lambda_min_R,lambda_min_T,iterations,rho_hat\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{:e},{:e},{},{:e}\n",
                s.sample_id, s.lambda_min_r, s.lambda_min_t, s.iterations, s.rho_hat
            ));
        }
        out
    }
}

/// Checks `J^s_T(x) ⪰ βI` on every probe point, probing through the
/// reflected operator. Sample `i` uses seed `config.seed + i`.
pub fn monotonicity_certificate<M: DifferentiableMap>(
    map: &M,
    probe_set: &[Tensor],
    beta: f64,
    config: &ProbeConfig,
) -> Result<CertificateReport> {
    if probe_set.is_empty() {
        return Err(Error::Config("probe set is empty".into()));
    }
    let reflected = Reflected::new(map);
    let samples = probe_set
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let cfg = config.with_seed(config.seed.wrapping_add(i as u64));
            let est = lambda_min_sym_jacobian(&reflected, x, &cfg, None)?;
            Ok(SampleCertificate {
                sample_id: i,
                lambda_min_r: est.lambda_min,
                lambda_min_t: 0.5 * (est.lambda_min + 1.0),
                iterations: est.iterations,
                rho_hat: est.rho_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_lambda_t = samples
        .iter()
        .map(|s| s.lambda_min_t)
        .fold(f64::INFINITY, f64::min);
    Ok(CertificateReport {
        passed: min_lambda_t >= beta,
        samples,
        min_lambda_t,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{AddConstant, DenseLinear, Identity};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let m = DenseLinear::diagonal(&[3.0, 1.0]);
        let x = Tensor::zeros(&[2]);
        let (v, _) = power_max_abs_eig(|u| m.jvp(&x, u), &[2], 100, &mut rng(1)).unwrap();
        assert!((v - 3.0).abs() <= 1e-8);
    }

    #[test]
    fn power_iteration_on_scaled_identity() {
        for c in [-2.5, 0.3, 7.0] {
            let (v, _) = power_max_abs_eig(|u| Ok(u.scale(c)), &[5], 3, &mut rng(2)).unwrap();
            assert!((v - c).abs() < 1e-14);
        }
    }

    #[test]
    fn power_iteration_errors() {
        assert!(matches!(
            power_max_abs_eig(|u| Ok(u.scale(0.0)), &[4], 5, &mut rng(3)),
            Err(Error::ZeroIterate { restarts: 3 })
        ));
        assert!(power_max_abs_eig(|u| Ok(u.clone()), &[], 5, &mut rng(3)).is_err());
        assert!(power_max_abs_eig(|u| Ok(u.clone()), &[0], 5, &mut rng(3)).is_err());
    }

    #[test]
    fn lambda_min_of_diagonal_map() {
        let m = DenseLinear::diagonal(&[2.0, 5.0]);
        let x = Tensor::zeros(&[2]);
        let est = lambda_min_sym_jacobian(&m, &x, &ProbeConfig::default(), None).unwrap();
        assert!((est.lambda_min - 2.0).abs() <= 1e-6);
        assert_eq!(est.lambda_min + est.chi_hat, est.rho_hat);
        assert!(est.rho_hat >= est.rayleigh);
    }

    #[test]
    fn lambda_min_of_negative_identity() {
        let m = DenseLinear::scaled_identity(4, -3.0);
        let x = Tensor::zeros(&[4]);
        let est = lambda_min_sym_jacobian(&m, &x, &ProbeConfig::default(), None).unwrap();
        assert!((est.lambda_min + 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_operator_uses_degenerate_shift() {
        let m = DenseLinear::scaled_identity(3, 0.0);
        let x = Tensor::zeros(&[3]);
        let est = lambda_min_sym_jacobian(&m, &x, &ProbeConfig::default(), None).unwrap();
        assert_eq!(est.rho_hat, DEGENERATE_SHIFT);
        assert!(est.lambda_min.abs() < 1e-15);
    }

    #[test]
    fn config_is_validated() {
        let m = Identity;
        let x = Tensor::zeros(&[3]);
        let bad = ProbeConfig {
            n_iter: 0,
            ..Default::default()
        };
        assert!(lambda_min_sym_jacobian(&m, &x, &bad, None).is_err());
        let bad = ProbeConfig {
            shift_margin: 1.0,
            ..Default::default()
        };
        assert!(lambda_min_sym_jacobian(&m, &x, &bad, None).is_err());
    }

    #[test]
    fn identity_certificate() {
        let probes: Vec<Tensor> = (0..3).map(|i| Tensor::filled(&[4, 4], i as f64)).collect();
        let rep =
            monotonicity_certificate(&Identity, &probes, 1.0 - 1e-12, &ProbeConfig::default())
                .unwrap();
        assert!(rep.passed);
        for s in &rep.samples {
            assert!((s.lambda_min_t - 1.0).abs() < 1e-12);
            assert!((s.lambda_min_r - 1.0).abs() < 1e-12);
        }
        assert!(rep
            .to_csv()
            .starts_with("sample_id,lambda_min_R,lambda_min_T,iterations,rho_hat\n"));
    }

    #[test]
    fn shifted_identity_certificate() {
        let c = Tensor::filled(&[3, 3], 0.4);
        let map = AddConstant::new(Identity, c.scale(-1.0));
        let rep = monotonicity_certificate(
            &map,
            &[Tensor::zeros(&[3, 3])],
            0.0,
            &ProbeConfig::default(),
        )
        .unwrap();
        assert!((rep.min_lambda_t - 1.0).abs() < 1e-12);
        assert!(monotonicity_certificate(&map, &[], 0.0, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn psd_linear_map_passes_at_zero() {
        // symmetric part [[1, 0.5], [0.5, 0.25]] has eigenvalues {0, 1.25};
        // a skew part is added on top
        let m = DenseLinear::new(2, 2, vec![1.0, 1.5, -0.5, 0.25]).unwrap();
        let rep =
            monotonicity_certificate(&m, &[Tensor::zeros(&[2])], -1e-9, &ProbeConfig::default())
                .unwrap();
        assert!(rep.passed, "{:?}", rep.min_lambda_t);
    }
}
