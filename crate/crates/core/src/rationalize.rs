//! Snapping float decompositions to small rationals and exact verification.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::cp::{compose, residual_cost, FactorTriple, ParamVector};
use crate::error::{Error, Result};
use crate::lm::{solve, SolverConfig, StepVariant};
use crate::scalar::{ratio, Scalar};
use crate::tensor::{build_matmul_tensor, MatMulDims, Tensor3};
use crate::BigRational;

/// Order in which free parameters are offered for freezing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapOrder {
    /// Smallest distance to a target value first, ties by parameter index.
    #[default]
    NearestFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapPlan {
    /// Snap values, tried in escalation levels.
    #[serde(with = "rational_list")]
    pub target_set: Vec<BigRational>,
    /// Cumulative prefix lengths of `target_set` forming the escalation levels.
    pub levels: Vec<usize>,
    pub per_element_order: SnapOrder,
    /// LM iterations per refit.
    pub refit_budget: usize,
    /// Step used by refits. The default drops the sphere constraint so column
    /// scalings stay free while values are pinned.
    pub refit_variant: StepVariant,
    /// A refit is accepted when the residual drops to this value.
    pub accept_phi: f64,
    /// Free values this close to a target are frozen together before single freezes.
    pub batch_tol: f64,
    /// Failed single freezes tolerated per level before escalating.
    pub max_attempts: usize,
    /// Closeness for the final lift to denominators `≤ lift_max_den`.
    pub lift_tol: f64,
    pub lift_max_den: i64,
}

impl Default for SnapPlan {
    fn default() -> Self {
        Self {
            target_set: vec![ratio(0, 1), ratio(1, 1), ratio(-1, 1), ratio(2, 1), ratio(-2, 1), ratio(1, 2), ratio(-1, 2)],
            levels: vec![3, 5, 7],
            per_element_order: SnapOrder::NearestFirst,
            refit_budget: 200,
            refit_variant: StepVariant::Unconstrained,
            accept_phi: 1e-16,
            batch_tol: 1e-7,
            max_attempts: 40,
            lift_tol: 1e-6,
            lift_max_den: 4,
        }
    }
}

impl SnapPlan {
    pub fn validate(&self) -> Result<()> {
        if !self.target_set.iter().any(|v| v.is_zero()) {
            return Err(Error::InvalidArgument("snap target set must contain 0".into()));
        }
        let ok = !self.levels.is_empty()
            && self.levels.windows(2).all(|w| w[0] < w[1])
            && self.levels[0] > 0
            && *self.levels.last().unwrap() <= self.target_set.len();
        if !ok {
            return Err(Error::InvalidArgument(
                "snap levels must be increasing prefix lengths of the target set".into(),
            ));
        }
        Ok(())
    }

    /// Targets newly introduced at `level`.
    fn level_targets(&self, level: usize) -> &[BigRational] {
        let start = if level == 0 { 0 } else { self.levels[level - 1] };
        &self.target_set[start..self.levels[level]]
    }

    /// All targets up to and including `level`.
    fn cumulative_targets(&self, level: usize) -> &[BigRational] {
        &self.target_set[..self.levels[level]]
    }
}

mod rational_list {
    use crate::scalar::{parse_rational, rational_to_string};
    use crate::BigRational;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(rational_to_string))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| parse_rational(s).ok_or_else(|| D::Error::custom(format!("bad rational {s:?}"))))
            .collect()
    }
}

/// Result of exact verification.
#[derive(Clone, Debug, PartialEq)]
pub enum Verification {
    Certified(Certificate),
    Counterexample {
        /// 1-based tensor index of the first mismatch in storage order.
        index: [usize; 3],
        expected: BigRational,
        found: BigRational,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub dims: MatMulDims,
    pub rank: usize,
    /// Number of tensor entries compared.
    pub entries: usize,
}

impl Verification {
    pub fn is_certified(&self) -> bool {
        matches!(self, Verification::Certified(_))
    }
}

/// Compares `[[A, B, C]]` with `T_PQS` entrywise in rational arithmetic.
pub fn verify_exact(f: &FactorTriple<BigRational>, dims: MatMulDims) -> Result<Verification> {
    let target = build_matmul_tensor::<BigRational>(dims)?;
    if f.mode_sizes() != target.dims() {
        return Err(Error::Shape(format!(
            "factors of mode sizes {:?} for dims {dims}",
            f.mode_sizes()
        )));
    }
    let built = compose(f);
    let [n1, n2, _] = target.dims();
    for (lin, (want, got)) in target.values().iter().zip(built.values()).enumerate() {
        if want != got {
            let (i, j, k) = (lin % n1, (lin / n1) % n2, lin / (n1 * n2));
            return Ok(Verification::Counterexample {
                index: [i + 1, j + 1, k + 1],
                expected: want.clone(),
                found: got.clone(),
            });
        }
    }
    Ok(Verification::Certified(Certificate {
        dims,
        rank: f.rank(),
        entries: target.len(),
    }))
}

#[derive(Clone, Debug)]
pub struct SnapOutcome {
    /// Verified rational factors on success.
    pub exact: Option<FactorTriple<BigRational>>,
    /// Final float parameters (snapped values where frozen).
    pub theta: Vec<f64>,
    /// `true` marks parameters still free at the end.
    pub mask: Vec<bool>,
    /// Number of frozen parameters after each accepted freeze.
    pub frozen_counts: Vec<usize>,
    pub refits: usize,
    pub mode_sizes: [usize; 3],
    pub rank: usize,
}

impl SnapOutcome {
    pub fn is_success(&self) -> bool {
        self.exact.is_some()
    }

    /// Best partial assignment as float factors.
    pub fn partial(&self) -> FactorTriple<f64> {
        FactorTriple::from_theta(&self.theta, self.mode_sizes, self.rank).expect("consistent shapes")
    }
}

fn nearest<'a>(v: f64, targets: &'a [(BigRational, f64)]) -> (&'a BigRational, f64) {
    let mut best = (&targets[0].0, (v - targets[0].1).abs());
    for (r, t) in &targets[1..] {
        let d = (v - t).abs();
        if d < best.1 {
            best = (r, d);
        }
    }
    best
}

fn with_floats(ts: &[BigRational]) -> Vec<(BigRational, f64)> {
    ts.iter().map(|r| (r.clone(), r.to_f64_lossy())).collect()
}

struct Refitter<'a> {
    target: &'a Tensor3<f64>,
    rank: usize,
    mode_sizes: [usize; 3],
    config: SolverConfig,
    accept_phi: f64,
    refits: usize,
}

impl Refitter<'_> {
    /// Refits the free coordinates with the frozen ones held; `Some(theta)` on an exact fit.
    fn refit(&mut self, theta: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
        self.refits += 1;
        let p = ParamVector::new(theta.to_vec(), mask.to_vec(), self.mode_sizes, self.rank).ok()?;
        if !mask.iter().any(|&m| m) {
            let phi = residual_cost(&p.to_factors(), self.target).ok()?;
            return (phi <= self.accept_phi).then(|| theta.to_vec());
        }
        let mut config = self.config.clone();
        config.c = p.norm_sq();
        let out = solve(self.target, self.rank, &config, Some(p)).ok()?;
        (out.best_phi <= self.accept_phi).then_some(out.best_theta.theta)
    }
}

/// Greedy freeze-and-refit toward the plan's target values, followed by an
/// exact check.
///
/// Each round first freezes, as one batch, every free value already within
/// `batch_tol` of a target; otherwise the free values are tried one at a time
/// in plan order. A freeze is kept when the masked solver (with the plan's
/// step variant; constrained variants use `c` equal to the current squared
/// norm) refits to `accept_phi`. When no
/// single freeze succeeds at a level, the next level's targets are tried;
/// after any success the search returns to the first level. Leftover free
/// values within `lift_tol` of a fraction with small denominator are lifted
/// before verification.
pub fn snap_and_refit(
    f: &FactorTriple<f64>,
    dims: MatMulDims,
    plan: &SnapPlan,
    solver_config: &SolverConfig,
) -> Result<SnapOutcome> {
    plan.validate()?;
    let target = build_matmul_tensor::<f64>(dims)?;
    let phi = residual_cost(f, &target)?;
    if phi > 1e-12 {
        return Err(Error::NotExactFit { phi });
    }
    let mode_sizes = f.mode_sizes();
    let rank = f.rank();
    let mut config = solver_config.clone();
    config.max_iters = plan.refit_budget;
    config.record_trace = false;
    config.restarts = 1;
    config.variant = plan.refit_variant;
    config.tol_cost = config.tol_cost.min(plan.accept_phi);
    let mut fitter = Refitter {
        target: &target,
        rank,
        mode_sizes,
        config,
        accept_phi: plan.accept_phi,
        refits: 0,
    };

    let mut theta = f.to_theta();
    let n = theta.len();
    let mut mask = vec![true; n];
    let mut snapped: Vec<Option<BigRational>> = vec![None; n];
    let mut frozen_counts = Vec::new();
    let mut level = 0;

    loop {
        let free: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        if free.is_empty() {
            break;
        }
        let cumulative = with_floats(plan.cumulative_targets(level));
        let batch: Vec<(usize, BigRational)> = free
            .iter()
            .filter_map(|&i| {
                let (r, d) = nearest(theta[i], &cumulative);
                (d <= plan.batch_tol).then(|| (i, r.clone()))
            })
            .collect();
        if !batch.is_empty() {
            if let Some(next) = try_freeze(&mut fitter, &theta, &mask, &batch) {
                accept(&mut theta, &mut mask, &mut snapped, &batch, next);
                frozen_counts.push(n - mask.iter().filter(|&&m| m).count());
                level = 0;
                continue;
            }
        }

        let fresh = with_floats(plan.level_targets(level));
        let mut candidates: Vec<(f64, usize, BigRational)> = free
            .iter()
            .map(|&i| {
                let (r, d) = nearest(theta[i], &fresh);
                (d, i, r.clone())
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut success = false;
        for (_, i, r) in candidates.into_iter().take(plan.max_attempts) {
            let one = [(i, r)];
            if let Some(next) = try_freeze(&mut fitter, &theta, &mask, &one) {
                accept(&mut theta, &mut mask, &mut snapped, &one, next);
                frozen_counts.push(n - mask.iter().filter(|&&m| m).count());
                success = true;
                break;
            }
        }
        if success {
            level = 0;
        } else if level + 1 < plan.levels.len() {
            level += 1;
        } else {
            break;
        }
    }

    for i in 0..n {
        if mask[i] {
            if let Some(r) = lift(theta[i], plan.lift_tol, plan.lift_max_den) {
                snapped[i] = Some(r);
            }
        }
    }
    let exact = if snapped.iter().all(Option::is_some) {
        let values: Vec<BigRational> = snapped.into_iter().map(Option::unwrap).collect();
        let triple = FactorTriple::from_theta(&values, mode_sizes, rank)?;
        verify_exact(&triple, dims)?.is_certified().then_some(triple)
    } else {
        None
    };
    Ok(SnapOutcome {
        exact,
        theta,
        mask,
        frozen_counts,
        refits: fitter.refits,
        mode_sizes,
        rank,
    })
}

fn try_freeze(fitter: &mut Refitter<'_>, theta: &[f64], mask: &[bool], freeze: &[(usize, BigRational)]) -> Option<Vec<f64>> {
    let mut t = theta.to_vec();
    let mut m = mask.to_vec();
    for (i, r) in freeze {
        t[*i] = r.to_f64_lossy();
        m[*i] = false;
    }
    fitter.refit(&t, &m)
}

fn accept(
    theta: &mut Vec<f64>,
    mask: &mut [bool],
    snapped: &mut [Option<BigRational>],
    freeze: &[(usize, BigRational)],
    next: Vec<f64>,
) {
    *theta = next;
    for (i, r) in freeze {
        mask[*i] = false;
        theta[*i] = r.to_f64_lossy();
        snapped[*i] = Some(r.clone());
    }
}

/// Nearest fraction with denominator `≤ max_den` within `tol` of `v`.
fn lift(v: f64, tol: f64, max_den: i64) -> Option<BigRational> {
    (1..=max_den).find_map(|d| {
        let n = (v * d as f64).round();
        ((v - n / d as f64).abs() <= tol).then(|| ratio(n as i64, d))
    })
}

/// Largest absolute difference between two rational factor triples.
pub fn max_abs_difference(a: &FactorTriple<BigRational>, b: &FactorTriple<BigRational>) -> Option<BigRational> {
    if a.mode_sizes() != b.mode_sizes() || a.rank() != b.rank() {
        return None;
    }
    a.to_theta()
        .iter()
        .zip(b.to_theta())
        .map(|(x, y)| (x - y).abs())
        .max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn d(p: usize, q: usize, s: usize) -> MatMulDims {
        MatMulDims::new(p, q, s).unwrap()
    }

    #[test]
    fn certifies_strassen() {
        assert!(verify_exact(&fixtures::strassen(), d(2, 2, 2)).unwrap().is_certified());
    }

    #[test]
    fn certifies_t332() {
        let v = verify_exact(&fixtures::t332_rank15(), d(3, 3, 2)).unwrap();
        assert!(matches!(v, Verification::Certified(Certificate { rank: 15, entries: 324, .. })));
    }

    #[test]
    fn flipped_entry_gives_counterexample() {
        let [a, b, c] = fixtures::t332_rank15().into_factors();
        let mut a = a;
        assert_eq!(a[(0, 0)], ratio(-1, 1));
        a[(0, 0)] = ratio(1, 1);
        let f = FactorTriple::new(a, b, c).unwrap();
        match verify_exact(&f, d(3, 3, 2)).unwrap() {
            Verification::Counterexample { index, expected, found } => {
                assert!(index.iter().all(|&i| i >= 1));
                assert_ne!(expected, found);
            }
            other => panic!("expected counterexample, got {other:?}"),
        }
    }

    #[test]
    fn zero_rank_is_not_certified() {
        let f = FactorTriple::<BigRational>::zeros([1, 1, 1], 0);
        assert!(!verify_exact(&f, d(1, 1, 1)).unwrap().is_certified());
    }

    #[test]
    fn integer_input_is_frozen_in_one_pass() {
        let f = fixtures::strassen().map(|v| v.to_f64_lossy());
        let out = snap_and_refit(&f, d(2, 2, 2), &SnapPlan::default(), &SolverConfig::default()).unwrap();
        assert_eq!(out.frozen_counts, vec![84]);
        assert_eq!(out.exact.unwrap(), fixtures::strassen());
    }

    #[test]
    fn lift_prefers_small_denominators() {
        assert_eq!(lift(0.2000001, 1e-6, 4), None);
        assert_eq!(lift(0.3333334, 1e-6, 4), Some(ratio(1, 3)));
        assert_eq!(lift(0.2500000004, 1e-6, 4), Some(ratio(1, 4)));
        assert_eq!(lift(-1.9999999, 1e-6, 4), Some(ratio(-2, 1)));
        assert_eq!(lift(0.75, 1e-6, 4), Some(ratio(3, 4)));
    }

    #[test]
    fn plan_validation() {
        let mut plan = SnapPlan::default();
        assert!(plan.validate().is_ok());
        plan.target_set.remove(0);
        assert!(plan.validate().is_err());
        let plan = SnapPlan {
            levels: vec![3, 3],
            ..SnapPlan::default()
        };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_round_trips_through_json() {
        let plan = SnapPlan::default();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"-1/2\""));
        let back: SnapPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn refuses_inexact_input() {
        let f = fixtures::strassen().map(|v| v.to_f64_lossy() * 1.1);
        let err = snap_and_refit(&f, d(2, 2, 2), &SnapPlan::default(), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NotExactFit { .. }));
    }

    #[test]
    fn max_difference() {
        let s = fixtures::strassen();
        assert_eq!(max_abs_difference(&s, &s), Some(ratio(0, 1)));
        let t = s.map(|v| v * ratio(2, 1));
        assert_eq!(max_abs_difference(&s, &t), Some(ratio(1, 1)));
    }
}
