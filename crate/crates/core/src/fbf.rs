//! Tseng's forward-backward-forward splitting with projections onto a box,
//! using an Armijo-type backtracking rule for the step size.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::DifferentiableMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxConstraint {
    pub lower: f64,
    pub upper: f64,
}

impl Default for BoxConstraint {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
        }
    }
}

impl BoxConstraint {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let c = Self { lower, upper };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) {
            return Err(Error::Config(format!(
                "box needs lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: &Tensor) -> bool {
        x.as_slice()
            .iter()
            .all(|&v| v >= self.lower && v <= self.upper)
    }
}

pub fn project_box(x: &Tensor, c: &BoxConstraint) -> Tensor {
    x.map(|v| v.clamp(c.lower, c.upper))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmijoConfig {
    pub sigma: f64,
    pub beta: f64,
    pub theta: f64,
    pub max_trials: usize,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            beta: 0.5,
            theta: 0.9,
            max_trials: 60,
        }
    }
}

impl ArmijoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopConfig {
    pub max_iter: usize,
    pub residual_tol: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FbfRecord {
    pub k: usize,
    pub gamma: f64,
    pub trials: usize,
    /// `|x_{k+1} - x_k|` over the reference norm.
    pub residual: f64,
    /// `|x_k - proj_C(x_k - B(x_k))|`, zero exactly at solutions.
    pub natural_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FbfTrace {
    pub records: Vec<FbfRecord>,
    pub converged: bool,
    /// Denominator used for the relative residual.
    pub reference_norm: f64,
}

impl FbfTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,gamma,trials,residual\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.k, r.gamma, r.trials, r.residual
            ));
        }
        s
    }
}

/// `0 ∈ A(x) + ρ ∇r(x) + ∇h(x) + N_C(x)` with `∇h` constant.
#[derive(Clone)]
pub struct MonotoneInclusion {
    pub operator: Arc<dyn DifferentiableMap>,
    /// The constant `∇h`, e.g. `-y`.
    pub grad_h: Tensor,
    pub constraint: BoxConstraint,
    pub rho: f64,
    pub regularizer_grad: Option<Arc<dyn DifferentiableMap>>,
    /// Norm used to make residuals relative (`|y|` when there is a natural
    /// measurement); `max(|x0|, 1)` when absent.
    pub reference_norm: Option<f64>,
}

impl std::fmt::Debug for MonotoneInclusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MonotoneInclusion")
            .field("shape", &self.grad_h.shape())
            .field("constraint", &self.constraint)
            .field("rho", &self.rho)
            .field("regularized", &self.regularizer_grad.is_some())
            .field("reference_norm", &self.reference_norm)
            .finish()
    }
}

impl MonotoneInclusion {
    pub fn new(
        operator: Arc<dyn DifferentiableMap>,
        grad_h: Tensor,
        constraint: BoxConstraint,
    ) -> Result<Self> {
        constraint.validate()?;
        let out = operator.output_shape(grad_h.shape())?;
        if out != grad_h.shape() {
            return Err(Error::shape(grad_h.shape(), &out));
        }
        Ok(Self {
            operator,
            grad_h,
            constraint,
            rho: 0.0,
            regularizer_grad: None,
            reference_norm: None,
        })
    }

    pub fn with_regularizer(mut self, rho: f64, grad: Arc<dyn DifferentiableMap>) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be nonnegative, got {rho}")));
        }
        let out = grad.output_shape(self.grad_h.shape())?;
        if out != self.grad_h.shape() {
            return Err(Error::shape(self.grad_h.shape(), &out));
        }
        self.rho = rho;
        self.regularizer_grad = Some(grad);
        Ok(self)
    }

    pub fn with_reference_norm(mut self, norm: f64) -> Self {
        self.reference_norm = Some(norm);
        self
    }

    pub fn shape(&self) -> &[usize] {
        self.grad_h.shape()
    }

    /// `B(x) = A(x) + ρ ∇r(x) + ∇h`
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut b = self.operator.forward(x)?.add(&self.grad_h)?;
        if let Some(reg) = &self.regularizer_grad {
            if self.rho != 0.0 {
                b = b.axpy(self.rho, &reg.forward(x)?)?;
            }
        }
        Ok(b)
    }
}

#[derive(Clone, Debug)]
pub struct ArmijoOutcome {
    pub gamma: f64,
    pub z: Tensor,
    /// `B(z)`, kept so the corrector step needs no extra evaluation.
    pub bz: Tensor,
    pub trials: usize,
}

/// Backtracking search: the smallest `i` with `γ = σβ^i` such that
/// `z = proj_C(x - γB(x))` satisfies `γ|B(z) - B(x)| <= θ|z - x|`.
pub fn armijo_step(
    b: impl Fn(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    c: &BoxConstraint,
    cfg: &ArmijoConfig,
) -> Result<ArmijoOutcome> {
    let bx = b(x)?;
    armijo_from(&b, x, &bx, c, cfg)
}

fn armijo_from(
    b: &impl Fn(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    bx: &Tensor,
    c: &BoxConstraint,
    cfg: &ArmijoConfig,
) -> Result<ArmijoOutcome> {
    cfg.validate()?;
    let mut gamma = cfg.sigma;
    let mut last = (f64::NAN, f64::NAN);
    for i in 0..=cfg.max_trials {
        let z = project_box(&x.axpy(-gamma, bx)?, c);
        let bz = b(&z)?;
        if !bz.is_finite() {
            return Err(Error::NonFinite(format!(
                "operator value at trial {i} (gamma = {gamma})"
            )));
        }
        let lhs = gamma * bz.sub(bx)?.norm();
        let rhs = cfg.theta * z.sub(x)?.norm();
        if lhs <= rhs {
            return Ok(ArmijoOutcome {
                gamma,
                z,
                bz,
                trials: i,
            });
        }
        last = (lhs, rhs);
        gamma *= cfg.beta;
    }
    Err(Error::StepSearch {
        trials: cfg.max_trials,
        gamma: gamma / cfg.beta,
        lhs: last.0,
        rhs: last.1,
    })
}

/// Solves `problem` by FBF iterations from `x0` (projected onto the box).
///
/// Stops once `|x_{k+1} - x_k| / ref <= residual_tol` or after `max_iter`
/// iterations; `ref` is the problem's reference norm, or `max(|x0|, 1)`.
pub fn fbf_solve(
    problem: &MonotoneInclusion,
    x0: &Tensor,
    cfg: &ArmijoConfig,
    stop: &StopConfig,
) -> Result<(Tensor, FbfTrace)> {
    cfg.validate()?;
    problem.constraint.validate()?;
    if x0.shape() != problem.shape() {
        return Err(Error::shape(problem.shape(), x0.shape()));
    }
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial point".into()));
    }
    let c = &problem.constraint;
    let mut x = project_box(x0, c);
    let reference = problem
        .reference_norm
        .filter(|r| *r > 0.0)
        .unwrap_or_else(|| x.norm().max(1.0));
    let b = |t: &Tensor| problem.eval(t);
    let mut trace = FbfTrace {
        reference_norm: reference,
        ..FbfTrace::default()
    };

    for k in 0..stop.max_iter {
        let bx = b(&x)?;
        if !bx.is_finite() {
            return Err(Error::NonFinite(format!("operator value at iteration {k}")));
        }
        let natural = x.sub(&project_box(&x.sub(&bx)?, c))?.norm();
        let step = armijo_from(&b, &x, &bx, c, cfg)?;
        let next = project_box(&step.z.axpy(-step.gamma, &step.bz.sub(&bx)?)?, c);
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("iterate {}", k + 1)));
        }
        let residual = next.sub(&x)?.norm() / reference;
        trace.records.push(FbfRecord {
            k,
            gamma: step.gamma,
            trials: step.trials,
            residual,
            natural_residual: natural,
        });
        x = next;
        if residual <= stop.residual_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((x, trace))
}

/// Recovers `x̄` from `map(x̄)` by solving `0 ∈ map(x) - map(x̄) + N_C(x)`,
/// starting from the projected measurement.
pub fn invert_operator(
    map: Arc<dyn DifferentiableMap>,
    x_bar: &Tensor,
    c: &BoxConstraint,
    cfg: &ArmijoConfig,
    stop: &StopConfig,
) -> Result<(Tensor, FbfTrace)> {
    let y = map.forward(x_bar)?;
    if y.shape() != x_bar.shape() {
        return Err(Error::shape(x_bar.shape(), y.shape()));
    }
    let x0 = project_box(&y, c);
    let problem = MonotoneInclusion::new(map, y.scale(-1.0), *c)?.with_reference_norm(y.norm());
    fbf_solve(&problem, &x0, cfg, stop)
}
