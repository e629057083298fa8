//! Penalized training of operator networks, and the normalized linear
//! kernel fit used as a baseline and as `L_lin` for least squares.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    AdjointComposite, ConvMap, DifferentiableMap, ParameterVector, Tape, Trainable,
};
use crate::dataset::TrainingPair;
use crate::error::{Error, Result};
use crate::spectral::{lambda_min_sym_jacobian, ProbeConfig, Reflected};
use crate::tensor::{dot, Kernel, Tensor};

const PLATEAU_EPOCHS: usize = 10;
const PLATEAU_THRESHOLD: f64 = 1e-4;
const UPSILON_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Penalized toward monotonicity of the model itself.
    Mon,
    /// Unpenalized.
    Nom,
    /// Penalized toward monotonicity of `L_lin^T ∘ model`.
    LsqMon,
    /// Normalized linear kernel, see [`train_linear_kernel`].
    Linear,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mon" => Ok(Self::Mon),
            "nom" => Ok(Self::Nom),
            "lsq_mon" => Ok(Self::LsqMon),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected mon, nom, lsq_mon or linear)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub xi0: f64,
    pub delta_xi: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Power steps per stage when estimating the penalty.
    pub probe_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            xi0: 0.1,
            delta_xi: 0.1,
            epsilon: 0.01,
            learning_rate: 2e-4,
            lr_decay: 0.1,
            seed: 0,
            variant: Variant::Mon,
            probe_iterations: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.xi0 >= 0.0) || !(self.delta_xi >= 0.0) {
            return fail("xi0 and delta_xi must be nonnegative".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.probe_iterations == 0 {
            return fail("probe_iterations must be >= 1".into());
        }
        Ok(())
    }

    /// `(xi0, delta_xi)` after the variant override.
    fn schedule(&self) -> (f64, f64) {
        match self.variant {
            Variant::Nom => (0.0, 0.0),
            _ => (self.xi0, self.delta_xi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyValue {
    pub value: f64,
    /// Estimated `λ_min` of the symmetrized Jacobian of the reflection.
    pub lambda_min: f64,
    /// Whether `1 + λ < ε`, i.e. the penalty carries a gradient.
    pub active: bool,
}

/// `-min{1 + λ, ε}` with `λ` the estimated smallest eigenvalue of the
/// symmetrized Jacobian of `2·map - I` at `x_tilde`.
///
/// With a tape, `weight · ∂P/∂θ` is recorded (nothing when inactive).
pub fn penalty(
    map: &(impl DifferentiableMap + ?Sized),
    x_tilde: &Tensor,
    epsilon: f64,
    probe: &ProbeConfig,
    record: Option<(&mut Tape, f64)>,
) -> Result<PenaltyValue> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "penalty epsilon must be positive, got {epsilon}"
        )));
    }
    let reflected = Reflected::new(map);
    let est = lambda_min_sym_jacobian(&reflected, x_tilde, probe, None)?;
    let active = 1.0 + est.lambda_min < epsilon;
    if active {
        if let Some((tape, weight)) = record {
            let v = &est.witness;
            let nv2 = dot(v.as_slice(), v.as_slice());
            tape.record_jacobian_form(&reflected, x_tilde, v, v, -weight / nv2)?;
        }
    }
    Ok(PenaltyValue {
        value: -(1.0 + est.lambda_min).min(epsilon),
        lambda_min: est.lambda_min,
        active,
    })
}

/// `ν x̄ + (1 - ν) y`
pub fn penal_point(pair: &TrainingPair, nu: f64) -> Result<Tensor> {
    pair.clean
        .as_tensor()
        .scale(nu)
        .axpy(1.0 - nu, pair.measured.as_tensor())
}

/// [`penal_point`] with `ν ~ U[0, 1]` drawn from `rng`.
pub fn sample_penal_point(pair: &TrainingPair, rng: &mut impl Rng) -> Result<Tensor> {
    penal_point(pair, rng.random::<f64>())
}

/// Mean absolute error.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(l1_with_seed(pred, target)?.0)
}

/// Mean absolute error and its gradient with respect to `pred`.
fn l1_with_seed(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.ensure_same_shape(target)?;
    let n = pred.numel().max(1) as f64;
    let loss: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t).abs())
        .sum();
    let seed = pred.zip_map(target, |p, t| {
        let d = p - t;
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    Ok((loss / n, seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: ParameterVector,
    pub second_moment: ParameterVector,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl AdamState {
    pub fn new(like: &ParameterVector) -> Self {
        let zeros = like
            .with_values(vec![0.0; like.len()])
            .expect("same length as the template");
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
        }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(
    params: &mut ParameterVector,
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grad.len() != params.len() || !params.same_layout(&state.first_moment) {
        return Err(Error::shape(&[params.len()], &[grad.len()]));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let m = state.first_moment.as_mut_slice();
    let v = state.second_moment.as_mut_slice();
    for (((p, &g), mi), vi) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *p -= lr * mhat / (vhat.sqrt() + state.eps_adam);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub data_loss: f64,
    /// Mean penalty over batches; NaN when the penalty weight was zero.
    pub penalty: f64,
    pub xi: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,data_loss,penalty,xi,lr\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.data_loss, r.penalty, r.xi, r.lr
            ));
        }
        s
    }
}

struct Plateau {
    best: f64,
    stale: usize,
}

impl Plateau {
    fn new() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns true when the rate should decay.
    fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - PLATEAU_THRESHOLD {
            self.best = loss;
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            if self.stale >= PLATEAU_EPOCHS {
                self.stale = 0;
                true
            } else {
                false
            }
        }
    }
}

fn check_dataset(dataset: &[TrainingPair]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    for p in dataset {
        p.clean
            .as_tensor()
            .ensure_same_shape(p.measured.as_tensor())?;
    }
    Ok(())
}

/// Trains `model` in place.
///
/// Each batch contributes its mean L1 loss plus `ξ` times the penalty at a
/// random convex combination of one random batch element. `lin_kernel` is
/// required by the `lsq_mon` variant and ignored otherwise.
pub fn train<M: Trainable>(
    model: &mut M,
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
    lin_kernel: Option<&Kernel>,
) -> Result<History> {
    cfg.validate()?;
    check_dataset(dataset)?;
    if cfg.variant == Variant::Linear {
        return Err(Error::Config(
            "the linear variant is fitted by train_linear_kernel".into(),
        ));
    }
    let lin = match (cfg.variant, lin_kernel) {
        (Variant::LsqMon, Some(k)) => Some(k.clone()),
        (Variant::LsqMon, None) => {
            return Err(Error::Config(
                "the lsq_mon variant needs a linear kernel".into(),
            ));
        }
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut xi, dxi) = cfg.schedule();
    let mut lr = cfg.learning_rate;
    let mut adam = AdamState::new(model.params_mut());
    let mut plateau = Plateau::new();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut pen_sum = 0.0;
        let mut pen_count = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let mut tape = Tape::for_map(&*model);
            let mut data_loss = 0.0;
            for &i in batch {
                let x = dataset[i].clean.as_tensor();
                let pred = model.forward(x)?;
                let (l, seed) = l1_with_seed(&pred, dataset[i].measured.as_tensor())?;
                data_loss += weight * l;
                tape.record_output(&*model, x, &seed, weight)?;
            }

            let b0 = batch[rng.random_range(0..batch.len())];
            let x_tilde = sample_penal_point(&dataset[b0], &mut rng)?;
            let probe = ProbeConfig {
                n_iter: cfg.probe_iterations,
                seed: rng.next_u64(),
                ..ProbeConfig::default()
            };
            let pen = if xi > 0.0 {
                let p = match &lin {
                    Some(k) => {
                        let composite = AdjointComposite::new(k.clone(), 1.0, &*model);
                        penalty(
                            &composite,
                            &x_tilde,
                            cfg.epsilon,
                            &probe,
                            Some((&mut tape, xi)),
                        )?
                    }
                    None => penalty(
                        &*model,
                        &x_tilde,
                        cfg.epsilon,
                        &probe,
                        Some((&mut tape, xi)),
                    )?,
                };
                pen_sum += p.value;
                pen_count += 1;
                p.value
            } else {
                0.0
            };

            let loss = data_loss + xi * pen;
            let grad_ok = tape.gradient().iter().all(|g| g.is_finite());
            if !loss.is_finite() || !grad_ok {
                return Err(Error::NonFinite(format!(
                    "training diverged at epoch {epoch}, batch {b}: data_loss={data_loss}, \
                     penalty={pen}, xi={xi}, lr={lr}, finite_gradient={grad_ok}"
                )));
            }
            loss_sum += data_loss * batch.len() as f64;
            adam_step(model.params_mut(), tape.gradient(), &mut adam, lr)?;
        }

        let data_loss = loss_sum / dataset.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            data_loss,
            penalty: if pen_count > 0 {
                pen_sum / pen_count as f64
            } else {
                f64::NAN
            },
            xi,
            lr,
        });
        log::info!("epoch {epoch}: data_loss={data_loss:.6} xi={xi} lr={lr}");
        xi += dxi;
        if plateau.observe(data_loss) {
            lr *= cfg.lr_decay;
        }
    }
    Ok(history)
}

/// `υ(f) = max(f, 0) / Σ max(f_i, 0)`; `None` if the mass is below 1e-12.
pub fn upsilon(raw: &[f64]) -> Option<Vec<f64>> {
    let s: f64 = raw.iter().map(|f| f.max(0.0)).sum();
    (s >= UPSILON_FLOOR).then(|| raw.iter().map(|f| f.max(0.0) / s).collect())
}

/// Pulls a gradient with respect to `υ(f)` back to `f`.
fn upsilon_pullback(raw: &[f64], k: &[f64], g_k: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().map(|f| f.max(0.0)).sum();
    let mean = dot(g_k, k);
    raw.iter()
        .zip(g_k)
        .map(|(&f, &g)| if f > 0.0 { (g - mean) / s } else { 0.0 })
        .collect()
}

fn init_raw_kernel(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..size * size)
        .map(|_| rng.random_range(0.5..1.5))
        .collect()
}

/// Fits a normalized kernel `k` minimizing the mean L1 misfit
/// `|k ⊛ x̄ - y|` under the parametrization `k = υ(f)`.
pub fn train_linear_kernel(
    dataset: &[TrainingPair],
    size: usize,
    cfg: &TrainConfig,
) -> Result<(Kernel, History)> {
    cfg.validate()?;
    check_dataset(dataset)?;
    if size % 2 == 0 {
        return Err(Error::Config(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw = ParameterVector::zeros(&[("raw", vec![size, size])]);
    raw.set_values(&init_raw_kernel(size, &mut rng))?;
    let mut adam = AdamState::new(&raw);
    let mut lr = cfg.learning_rate;
    let mut plateau = Plateau::new();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let k = match upsilon(raw.as_slice()) {
                Some(k) => k,
                None => {
                    log::warn!("raw kernel lost all positive mass; re-initializing");
                    raw.set_values(&init_raw_kernel(size, &mut rng))?;
                    adam = AdamState::new(&raw);
                    upsilon(raw.as_slice()).expect("fresh init is positive")
                }
            };
            let conv = ConvMap::new(Kernel::new(size, k.clone())?, 1.0);
            let weight = 1.0 / batch.len() as f64;
            let mut tape = Tape::for_map(&conv);
            for &i in batch {
                let x = dataset[i].clean.as_tensor();
                let pred = conv.forward(x)?;
                let (l, seed) = l1_with_seed(&pred, dataset[i].measured.as_tensor())?;
                loss_sum += l;
                tape.record_output(&conv, x, &seed, weight)?;
            }
            let g = upsilon_pullback(raw.as_slice(), &k, tape.gradient());
            adam_step(&mut raw, &g, &mut adam, lr)?;
        }
        let data_loss = loss_sum / dataset.len() as f64;
        if !data_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "linear kernel fit diverged at epoch {epoch}, lr={lr}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            data_loss,
            penalty: f64::NAN,
            xi: 0.0,
            lr,
        });
        if plateau.observe(data_loss) {
            lr *= cfg.lr_decay;
        }
    }

    let k = match upsilon(raw.as_slice()) {
        Some(k) => k,
        None => init_raw_kernel(size, &mut rng),
    };
    let kernel = Kernel::new(size, k)?.normalized()?;
    Ok((kernel, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{DenseLinear, ResidualConvNet};
    use crate::tensor::{conv2d_circular, Image};

    fn pair(clean: Image, measured: Image) -> TrainingPair {
        TrainingPair { clean, measured }
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    #[test]
    fn penalty_formula() {
        let cfg = ProbeConfig::default();
        let x = Tensor::from_vec(vec![0.3, 0.1, 0.7]);
        // 2T - I has spectrum {0.5} for T = 0.75 I
        let p = penalty(&DenseLinear::scaled_identity(3, 0.75), &x, 0.01, &cfg, None).unwrap();
        assert!((p.value + 0.01).abs() < 1e-12 && !p.active);
        // spectrum {-1.2} for T = -0.1 I
        let p = penalty(&DenseLinear::scaled_identity(3, -0.1), &x, 0.01, &cfg, None).unwrap();
        assert!((p.value - 0.2).abs() < 1e-9 && p.active);
        let p = penalty(&DenseLinear::scaled_identity(3, -1.0), &x, 0.01, &cfg, None).unwrap();
        assert!((p.lambda_min + 3.0).abs() < 1e-9);
        assert!((p.value - 2.0).abs() < 1e-9);
        assert!(penalty(&DenseLinear::scaled_identity(3, 1.0), &x, 0.0, &cfg, None).is_err());
    }

    #[test]
    fn penal_points() {
        let p = pair(Image::filled(2, 2, 0.0), Image::filled(2, 2, 1.0));
        assert_eq!(penal_point(&p, 1.0).unwrap(), *p.clean.as_tensor());
        assert_eq!(penal_point(&p, 0.0).unwrap(), *p.measured.as_tensor());
        assert_eq!(
            penal_point(&p, 0.25).unwrap(),
            Tensor::filled(&[2, 2], 0.75)
        );
    }

    #[test]
    fn l1_loss_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 4, 5).into_tensor();
        let b = random_image(&mut rng, 4, 5).into_tensor();
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert!((l1_loss(&a.add_scalar(0.5), &a).unwrap() - 0.5).abs() < 1e-15);
        let mut acc = 0.0;
        for i in 0..20 {
            acc += (a.as_slice()[i] - b.as_slice()[i]).abs();
        }
        assert!((l1_loss(&a, &b).unwrap() - acc / 20.0).abs() < 1e-15);
        assert!(l1_loss(&a, &Tensor::zeros(&[20])).is_err());
    }

    #[test]
    fn adam_update_rule() {
        let template = ParameterVector::zeros(&[("w", vec![1])]);
        let mut p = template.with_values(vec![1.0]).unwrap();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[0.0], &mut st, 0.1).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);

        let mut p = template.with_values(vec![1.0]).unwrap();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[3.0], &mut st, 0.01).unwrap();
        assert!((p.as_slice()[0] - (1.0 - 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        adam_step(&mut p, &[3.0], &mut st, 0.01).unwrap();
        assert!((p.as_slice()[0] - (1.0 - 0.02)).abs() < 1e-9);

        let mut p = template.with_values(vec![1.0]).unwrap();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[5.0], &mut st, 0.0).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut st, 0.1).is_err());
    }

    #[test]
    fn upsilon_normalizes() {
        assert_eq!(upsilon(&[2.0; 4]).unwrap(), vec![0.25; 4]);
        let k = upsilon(&[-1.0, 3.0, 1.0, 0.0]).unwrap();
        assert_eq!(k, vec![0.0, 0.75, 0.25, 0.0]);
        assert!(upsilon(&[-1.0, 0.0]).is_none());
    }

    #[test]
    fn upsilon_pullback_matches_finite_differences() {
        let raw = [0.3, 1.2, -0.4, 0.8];
        let g_k = [0.5, -1.0, 2.0, 0.25];
        let g = upsilon_pullback(&raw, &upsilon(&raw).unwrap(), &g_k);
        for i in 0..4 {
            let bump = |s: f64| {
                let mut r = raw;
                r[i] += s;
                dot(&upsilon(&r).unwrap(), &g_k)
            };
            let fd = (bump(1e-7) - bump(-1e-7)) / 2e-7;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> Vec<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = random_image(&mut rng, 8, 8);
                let y = Image::from_tensor(x.as_tensor().scale(0.5).add_scalar(0.2)).unwrap();
                pair(x, y)
            })
            .collect()
    }

    #[test]
    fn nom_training_reduces_loss() {
        let data = toy_dataset(1, 3);
        let mut net = ResidualConvNet::standard(1);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 1,
            learning_rate: 1e-3,
            variant: Variant::Nom,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &data, &cfg, None).unwrap();
        let losses: Vec<f64> = h.epochs.iter().map(|r| r.data_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert!(h.epochs.iter().all(|r| r.xi == 0.0 && r.penalty.is_nan()));
    }

    #[test]
    fn zero_weight_mon_matches_nom_and_runs_are_deterministic() {
        let data = toy_dataset(3, 4);
        let base = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let run = |cfg: &TrainConfig| {
            let mut net = ResidualConvNet::standard(2);
            let h = train(&mut net, &data, cfg, None).unwrap();
            (h.to_csv(), net.params().unwrap().clone(), h)
        };
        let nom = run(&TrainConfig {
            variant: Variant::Nom,
            ..base.clone()
        });
        let mon0 = run(&TrainConfig {
            xi0: 0.0,
            delta_xi: 0.0,
            ..base.clone()
        });
        assert_eq!((nom.0, nom.1), (mon0.0, mon0.1));
        let a = run(&base);
        let b = run(&base);
        assert_eq!((&a.0, &a.1), (&b.0, &b.1));
        for (j, r) in a.2.epochs.iter().enumerate() {
            assert_eq!(r.xi, base.xi0 + j as f64 * base.delta_xi);
        }
    }

    #[test]
    fn lsq_mon_needs_a_kernel_and_linear_is_rejected() {
        let data = toy_dataset(1, 5);
        let mut net = ResidualConvNet::standard(3);
        let cfg = TrainConfig {
            epochs: 1,
            variant: Variant::LsqMon,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut net, &data, &cfg, None),
            Err(Error::Config(_))
        ));
        let k = Kernel::delta(3).unwrap();
        assert!(train(&mut net, &data, &cfg, Some(&k)).is_ok());
        let cfg = TrainConfig {
            variant: Variant::Linear,
            ..cfg
        };
        assert!(train(&mut net, &data, &cfg, None).is_err());
        assert!(train(&mut net, &[], &TrainConfig::default(), None).is_err());
    }

    #[test]
    fn penalized_training_pushes_toward_monotone() {
        // target T(x) = -x is far from monotone; the penalty must keep the
        // model's reflection above -1 anyway
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<TrainingPair> = (0..4)
            .map(|_| {
                let x = random_image(&mut rng, 8, 8);
                let y = Image::from_tensor(x.as_tensor().scale(-1.0)).unwrap();
                pair(x, y)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 2,
            xi0: 1.0,
            delta_xi: 1.0,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let mut net = ResidualConvNet::standard(7);
        train(&mut net, &data, &cfg, None).unwrap();
        let probe = ProbeConfig::default();
        let p = penalty(&net, data[0].clean.as_tensor(), 0.01, &probe, None).unwrap();
        assert!(p.lambda_min > -1.0 - 0.05, "{}", p.lambda_min);
    }

    #[test]
    fn linear_kernel_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = Kernel::new(3, vec![0.05, 0.1, 0.0, 0.2, 0.3, 0.05, 0.0, 0.2, 0.1]).unwrap();
        let data: Vec<TrainingPair> = (0..8)
            .map(|_| {
                let x = random_image(&mut rng, 12, 12);
                let y = conv2d_circular(&x, &truth).unwrap();
                pair(x, y)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 4,
            learning_rate: 0.02,
            variant: Variant::Linear,
            ..TrainConfig::default()
        };
        let (k, _) = train_linear_kernel(&data, 3, &cfg).unwrap();
        assert!(k.is_normalized());
        let l1: f64 = k
            .as_slice()
            .iter()
            .zip(truth.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 0.05, "l1 distance {l1}");
    }
}
