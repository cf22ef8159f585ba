//! Levenberg-Marquardt on the sphere `‖θ‖² = c`.
//!
//! Each iteration minimizes the damped Gauss-Newton model in the tangent
//! plane `{θ : (θ − θ₀)ᵀθ₀ = 0}` and rescales the result back onto the
//! sphere. Frozen coordinates (mask `false`) are removed from the linear
//! system and never move; the projection rescales only the free part so
//! that the full vector keeps squared norm `c`.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cp::{gn_hessian, gradient_from_residual, residual_tensor, FactorTriple, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::matrix::Matrix;
use crate::rng::split_seed;
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// Largest acceptable condition estimate of the damped system.
pub const MAX_CONDITION: f64 = 1e14;
const MAX_DAMPING: f64 = 1e30;

/// How the Lagrange multiplier of the tangent-plane step is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepVariant {
    /// `λ = θ₀ᵀMg / θ₀ᵀMθ₀`, the exact tangent-plane minimizer.
    #[default]
    Tangent,
    /// `λ = θ₀ᵀMg / ‖θ₀‖²`; tangent only when `Mθ₀ ∥ θ₀`.
    NormDenominator,
    /// No constraint: `Δ = −Mg` and no projection.
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Squared radius of the constraint sphere.
    pub c: f64,
    pub max_iters: usize,
    /// Initial damping is `tau · max diag(H)`.
    pub tau: f64,
    /// Exact-fit threshold on `φ`.
    pub tol_cost: f64,
    /// Stationarity threshold on the tangent-projected gradient norm.
    pub tol_grad: f64,
    /// Relative step-size threshold.
    pub tol_step: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Standard deviation of random initial entries before projection.
    pub init_scale: f64,
    pub variant: StepVariant,
    pub record_trace: bool,
    /// Wall-clock budget for a multi-restart run; no new restarts start after it.
    pub budget_secs: Option<f64>,
    /// Stop a multi-restart run at the lowest-index exact fit, discarding later restarts.
    pub stop_at_first_exact: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 36.0,
            max_iters: 1000,
            tau: 1e-3,
            tol_cost: 1e-16,
            tol_grad: 1e-13,
            tol_step: 1e-13,
            seed: 0,
            restarts: 1,
            init_scale: 1.0,
            variant: StepVariant::Tangent,
            record_trace: true,
            budget_secs: None,
            stop_at_first_exact: false,
        }
    }
}

impl SolverConfig {
    /// Default sphere radius for a rank when none is given: `⌈6.5·R⌉`.
    pub fn default_c(rank: usize) -> f64 {
        (6.5 * rank as f64).ceil()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("tau", self.tau),
            ("tol_cost", self.tol_cost),
            ("tol_grad", self.tol_grad),
            ("tol_step", self.tol_step),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ExactFit,
    Stationary,
    IterationLimit,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::ExactFit => "exact_fit",
            Status::Stationary => "stationary",
            Status::IterationLimit => "iteration_limit",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub phi: f64,
    pub mu: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

/// Iterate of one descent.
#[derive(Clone, Debug)]
pub struct SolverState<F> {
    pub theta: ParamVector<F>,
    pub mu: F,
    pub nu: F,
    pub iter: usize,
    pub phi: F,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome<F> {
    pub best_theta: ParamVector<F>,
    pub best_phi: F,
    pub status: Status,
    pub restart_index: usize,
    pub seed: u64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

impl<F: Real> RunOutcome<F> {
    pub fn factors(&self) -> FactorTriple<F> {
        self.best_theta.to_factors()
    }
}

/// A proposed step.
#[derive(Clone, Debug)]
pub struct Step<F> {
    /// Tangent-plane step, zero on frozen coordinates.
    pub delta: Vec<F>,
    /// Candidate after projection.
    pub candidate: Vec<F>,
    /// `L(0) − L(Δ)` for the model `L(Δ) = φ + 2gᵀΔ + ΔᵀHΔ`.
    pub predicted_reduction: F,
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Damped, tangent-constrained step from `theta` followed by projection onto `‖θ‖² = c`.
pub fn constrained_step<F: Real>(
    theta: &ParamVector<F>,
    g: &[F],
    h: &Matrix<F>,
    mu: F,
    c: F,
    variant: StepVariant,
) -> Result<Step<F>> {
    let free = theta.free_indices();
    let nf = free.len();
    let n = theta.len();
    if g.len() != n || h.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "gradient/Hessian sizes {}/{:?} for {n} parameters",
            g.len(),
            h.shape()
        )));
    }
    let hf: Vec<F> = free
        .iter()
        .flat_map(|&i| free.iter().map(move |&j| (i, j)))
        .map(|(i, j)| h[(i, j)])
        .collect();
    let mut damped = hf.clone();
    for d in 0..nf {
        damped[d * nf + d] = damped[d * nf + d] + mu;
    }
    let chol = Cholesky::new(nf, &damped).ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let cond = chol.condition_estimate();
    if cond > F::lit(MAX_CONDITION) {
        return Err(Error::IllConditioned {
            cond: cond.to_f64().unwrap_or(f64::INFINITY),
        });
    }

    let gf: Vec<F> = free.iter().map(|&i| g[i]).collect();
    let t0: Vec<F> = free.iter().map(|&i| theta.theta[i]).collect();
    let mg = chol.solve(&gf);
    let mut df: Vec<F> = mg.iter().map(|&v| -v).collect();

    if variant != StepVariant::Unconstrained {
        let mt = chol.solve(&t0);
        let denom = match variant {
            StepVariant::Tangent => dot(&t0, &mt),
            _ => dot(&t0, &t0),
        };
        if denom > F::zero() {
            let lambda = dot(&t0, &mg) / denom;
            for (d, &m) in df.iter_mut().zip(&mt) {
                *d = *d + lambda * m;
            }
        }
    }

    // L(0) − L(Δ) = −(2gᵀΔ + ΔᵀHΔ)
    let mut quad = F::zero();
    for a in 0..nf {
        let row = &hf[a * nf..(a + 1) * nf];
        quad = quad + df[a] * dot(row, &df);
    }
    let predicted_reduction = -(F::lit(2.0) * dot(&gf, &df) + quad);

    let mut candidate = theta.theta.clone();
    let mut delta = vec![F::zero(); n];
    for (k, &i) in free.iter().enumerate() {
        delta[i] = df[k];
    }
    let moved: Vec<F> = t0.iter().zip(&df).map(|(&a, &b)| a + b).collect();
    let scale = if variant == StepVariant::Unconstrained {
        F::one()
    } else {
        let moved_norm = norm(&moved);
        let room = c - theta.frozen_norm_sq();
        if moved_norm < F::lit(1e-12) || !(room > F::zero()) {
            return Err(Error::DegenerateProjection);
        }
        room.sqrt() / moved_norm
    };
    for (k, &i) in free.iter().enumerate() {
        candidate[i] = moved[k] * scale;
    }
    Ok(Step {
        delta,
        candidate,
        predicted_reduction,
    })
}

/// Gain-ratio damping rule. Returns the new `(mu, nu)`.
pub fn damping_update<F: Real>(mu: F, nu: F, rho: F) -> (F, F) {
    let two = F::lit(2.0);
    if rho > F::zero() {
        let t = two * rho - F::one();
        let factor = (F::one() - t * t * t).max(F::lit(1.0 / 3.0));
        (mu * factor, two)
    } else {
        (mu * nu, two * nu)
    }
}

/// Rescales the free coordinates so that `‖θ‖² = c`.
fn project_free<F: Real>(theta: &mut ParamVector<F>, c: F) -> Result<()> {
    let free = theta.free_indices();
    let free_sq = free.iter().fold(F::zero(), |s, &i| s + theta.theta[i] * theta.theta[i]);
    let room = c - theta.frozen_norm_sq();
    if !(free_sq > F::zero()) || !(room > F::zero()) {
        return Err(Error::DegenerateProjection);
    }
    let s = (room / free_sq).sqrt();
    for &i in &free {
        theta.theta[i] = theta.theta[i] * s;
    }
    Ok(())
}

/// Random start: i.i.d. normal entries with standard deviation `init_scale`,
/// then projected onto the sphere when the step is constrained.
pub fn random_init<F: Real>(mode_sizes: [usize; 3], rank: usize, config: &SolverConfig) -> Result<ParamVector<F>> {
    let n = mode_sizes.iter().sum::<usize>() * rank;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let theta: Vec<F> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            F::lit(z * config.init_scale)
        })
        .collect();
    let mut p = ParamVector::new(theta, vec![true; n], mode_sizes, rank)?;
    if config.variant != StepVariant::Unconstrained {
        project_free(&mut p, F::lit(config.c))?;
    }
    Ok(p)
}

struct Evaluation<F> {
    phi: F,
    g: Vec<F>,
    h: Matrix<F>,
}

fn evaluate<F: Real>(theta: &ParamVector<F>, target: &Tensor3<F>) -> Result<Evaluation<F>> {
    let f = theta.to_factors();
    let resid = residual_tensor(&f, target)?;
    Ok(Evaluation {
        phi: resid.frobenius_sq(),
        g: gradient_from_residual(&f, &resid),
        h: gn_hessian(&f),
    })
}

fn cost<F: Real>(theta: &[F], like: &ParamVector<F>, target: &Tensor3<F>) -> Result<F> {
    let f = FactorTriple::from_theta(theta, like.mode_sizes(), like.rank())?;
    residual_tensor(&f, target).map(|r| r.frobenius_sq())
}

/// Norm of the free gradient, projected onto the tangent plane when constrained.
fn projected_gradient_norm<F: Real>(theta: &ParamVector<F>, g: &[F], variant: StepVariant) -> F {
    let free = theta.free_indices();
    let gf: Vec<F> = free.iter().map(|&i| g[i]).collect();
    if variant == StepVariant::Unconstrained {
        return norm(&gf);
    }
    let t0: Vec<F> = free.iter().map(|&i| theta.theta[i]).collect();
    let tt = dot(&t0, &t0);
    if !(tt > F::zero()) {
        return norm(&gf);
    }
    let coef = dot(&t0, &gf) / tt;
    let pg: Vec<F> = gf.iter().zip(&t0).map(|(&a, &b)| a - coef * b).collect();
    norm(&pg)
}

/// One damped descent from `init` (or a random start seeded by `config.seed`).
pub fn solve<F: Real>(
    target: &Tensor3<F>,
    rank: usize,
    config: &SolverConfig,
    init: Option<ParamVector<F>>,
) -> Result<RunOutcome<F>> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    config.validate()?;
    let constrained = config.variant != StepVariant::Unconstrained;
    let c = F::lit(config.c);
    let theta = match init {
        Some(mut p) => {
            if p.rank() != rank || p.mode_sizes() != target.dims() {
                return Err(Error::Shape(format!(
                    "initial point of rank {} and sizes {:?} for rank {rank} and dims {:?}",
                    p.rank(),
                    p.mode_sizes(),
                    target.dims()
                )));
            }
            if constrained {
                project_free(&mut p, c)?;
            }
            p
        }
        None => random_init(target.dims(), rank, config)?,
    };

    let mut eval = evaluate(&theta, target)?;
    let free = theta.free_indices();
    let max_diag = free.iter().fold(F::zero(), |m, &i| m.max(eval.h[(i, i)]));
    let tau = F::lit(config.tau);
    let mut state = SolverState {
        mu: if max_diag > F::zero() { tau * max_diag } else { tau },
        nu: F::lit(2.0),
        iter: 0,
        phi: eval.phi,
        trace: Vec::new(),
        theta,
    };
    let tol_cost = F::lit(config.tol_cost);
    let tol_grad = F::lit(config.tol_grad);
    let tol_step = F::lit(config.tol_step);
    let mut status = Status::IterationLimit;

    while state.iter < config.max_iters {
        if state.phi <= tol_cost {
            status = Status::ExactFit;
            break;
        }
        if projected_gradient_norm(&state.theta, &eval.g, config.variant) <= tol_grad {
            status = Status::Stationary;
            break;
        }
        state.iter += 1;
        let step = constrained_step(&state.theta, &eval.g, &eval.h, state.mu, c, config.variant);
        let mut accepted = false;
        let mut step_norm = F::zero();
        if let Ok(step) = step {
            let cand_phi = cost(&step.candidate, &state.theta, target)?;
            step_norm = step
                .candidate
                .iter()
                .zip(&state.theta.theta)
                .fold(F::zero(), |s, (&a, &b)| s + (a - b) * (a - b))
                .sqrt();
            let rho = if step.predicted_reduction > F::zero() {
                (state.phi - cand_phi) / step.predicted_reduction
            } else {
                -F::one()
            };
            if rho > F::zero() && cand_phi < state.phi {
                accepted = true;
                state.theta.theta = step.candidate;
                eval = evaluate(&state.theta, target)?;
                state.phi = eval.phi;
                let (mu, nu) = damping_update(state.mu, state.nu, rho);
                state.mu = mu;
                state.nu = nu;
            }
        }
        if !accepted {
            let (mu, nu) = damping_update(state.mu, state.nu, -F::one());
            state.mu = mu;
            state.nu = nu;
        }
        if config.record_trace {
            state.trace.push(TraceRow {
                iter: state.iter,
                phi: state.phi.to_f64_lossy(),
                mu: state.mu.to_f64_lossy(),
                step_norm: step_norm.to_f64_lossy(),
                accepted,
            });
        }
        if accepted {
            let scale = norm(&state.theta.theta) + tol_step;
            if step_norm <= tol_step * scale {
                status = Status::Stationary;
                break;
            }
        }
        if !(state.mu < F::lit(MAX_DAMPING)) {
            status = Status::Stationary;
            break;
        }
    }
    if state.phi <= tol_cost {
        status = Status::ExactFit;
    } else if status == Status::ExactFit {
        status = Status::Stationary;
    }
    Ok(RunOutcome {
        best_theta: state.theta,
        best_phi: state.phi,
        status,
        restart_index: 0,
        seed: config.seed,
        iterations: state.iter,
        trace: state.trace,
    })
}

#[derive(Clone, Debug)]
pub struct MultiRestart<F> {
    /// Index into `outcomes` of the minimum-`φ` run (lowest index on ties).
    pub best: usize,
    pub outcomes: Vec<RunOutcome<F>>,
    pub elapsed: Duration,
}

impl<F> MultiRestart<F> {
    pub fn best(&self) -> &RunOutcome<F> {
        &self.outcomes[self.best]
    }
}

/// Runs `config.restarts` independent descents with seeds `split_seed(config.seed, i)`.
///
/// Restarts execute in parallel batches; the selected outcome depends only on
/// the restart indices that ran, never on scheduling.
pub fn multi_restart<F: Real>(
    target: &Tensor3<F>,
    rank: usize,
    config: &SolverConfig,
) -> Result<MultiRestart<F>> {
    config.validate()?;
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let start = Instant::now();
    let budget = config.budget_secs.map(Duration::from_secs_f64);
    let batch = rayon::current_num_threads().max(1);
    let mut outcomes: Vec<RunOutcome<F>> = Vec::new();
    let mut next = 0;
    while next < config.restarts {
        if budget.is_some_and(|b| start.elapsed() >= b) && !outcomes.is_empty() {
            break;
        }
        let end = (next + batch).min(config.restarts);
        let results: Vec<Result<RunOutcome<F>>> = (next..end)
            .into_par_iter()
            .map(|i| {
                let mut cfg = config.clone();
                cfg.seed = split_seed(config.seed, i as u64);
                solve(target, rank, &cfg, None).map(|mut o| {
                    o.restart_index = i;
                    o
                })
            })
            .collect();
        for r in results {
            outcomes.push(r?);
        }
        next = end;
        if config.stop_at_first_exact {
            if let Some(first) = outcomes.iter().position(|o| o.status == Status::ExactFit) {
                outcomes.truncate(first + 1);
                break;
            }
        }
    }
    let best = select_best(&outcomes);
    Ok(MultiRestart {
        best,
        outcomes,
        elapsed: start.elapsed(),
    })
}

/// Minimum `φ`; the earliest restart wins ties.
fn select_best<F: Real>(outcomes: &[RunOutcome<F>]) -> usize {
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate().skip(1) {
        let b = &outcomes[best];
        if o.best_phi < b.best_phi || (o.best_phi == b.best_phi && o.restart_index < b.restart_index) {
            best = i;
        }
    }
    best
}
