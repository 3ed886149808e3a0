//! Mini-batch couplings between source and target samples.
//!
//! A batch of `n` source vectors and `n` target vectors is paired through a
//! cost matrix under one of two metrics: squared Euclidean distance, or the
//! angle `arccos(<x0, x1> / (‖x0‖ ‖x1‖))`, which ignores magnitudes entirely.
//! From the cost matrix a coupling is obtained either as an entropic plan
//! (log-domain Sinkhorn with uniform marginals) that training pairs are drawn
//! from, or as the exact minimum-cost assignment (Hungarian method) when hard
//! pairing is requested or a small-instance oracle is needed.

use crate::geometry::{dot, norm, ZERO_NORM_THRESHOLD};
use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use thiserror::Error;

/// Hard cap on exact-assignment instance size; the solver is cubic and this
/// toolkit only pairs mini-batches.
pub const EXACT_ASSIGNMENT_CAP: usize = 256;

/// Default entropic regularization strength.
pub const DEFAULT_SINKHORN_EPSILON: f64 = 0.1;

/// Default iteration budget for Sinkhorn scaling.
pub const DEFAULT_SINKHORN_MAX_ITER: usize = 1000;

/// Default L1 marginal-violation threshold that counts as converged.
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-6;

/// Reduced costs within this slack of zero count as tight when enumerating
/// optimal assignments for tie-breaking. Scaled by the largest cost entry.
const TIE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CouplingError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("source and target batch sizes differ ({0} vs {1})")]
    BatchSizeMismatch(usize, usize),
    #[error("dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("angular cost is undefined for the near-zero vector at index {index} of the {side} batch")]
    ZeroVector { side: &'static str, index: usize },
    #[error("cost entries must be finite")]
    NonFiniteCost,
    #[error("cost entries must be nonnegative")]
    NegativeCost,
    #[error("angular costs must lie in [0, pi]")]
    AngularCostOutOfRange,
    #[error("cost matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("assignment instances are capped at {cap}, got n={n}")]
    TooLarge { n: usize, cap: usize },
    #[error("coupling plan carries no positive weight")]
    DegeneratePlan,
    #[error("plan weights must be nonnegative and finite")]
    InvalidPlan,
    #[error("permutation is not a bijection over 0..n")]
    NotBijective,
    #[error("{0}")]
    BadParameter(&'static str),
}

/// Ground cost used to compare a source sample against a target sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMetric {
    /// `‖x0 - x1‖^2`.
    EuclideanSq,
    /// `arccos(<x0, x1> / (‖x0‖ ‖x1‖))`, in `[0, pi]`.
    Angular,
}

/// Square matrix of pairwise costs; entry `(i, j)` costs pairing source `i`
/// with target `j`. Entries are finite and nonnegative, and at most `pi`
/// under the angular metric.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    entries: Array2<f64>,
    metric: CostMetric,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>, metric: CostMetric) -> Result<Self, CouplingError> {
        let (rows, cols) = entries.dim();
        if rows == 0 {
            return Err(CouplingError::EmptyBatch);
        }
        if rows != cols {
            return Err(CouplingError::NotSquare(rows, cols));
        }
        for &e in entries.iter() {
            if !e.is_finite() {
                return Err(CouplingError::NonFiniteCost);
            }
            if e < 0.0 {
                return Err(CouplingError::NegativeCost);
            }
            if metric == CostMetric::Angular && e > std::f64::consts::PI {
                return Err(CouplingError::AngularCostOutOfRange);
            }
        }
        Ok(CostMatrix { entries, metric })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn metric(&self) -> CostMetric {
        self.metric
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Transport cost `<C, plan>` of a coupling plan under this cost.
    pub fn transport_cost(&self, plan: &CouplingPlan) -> f64 {
        self.entries
            .iter()
            .zip(plan.weights.iter())
            .map(|(c, w)| c * w)
            .sum()
    }

    /// Total cost of a hard assignment, summed over its `n` pairs. Divide by
    /// `n` to compare with [`CostMatrix::transport_cost`] of a plan, whose
    /// mass is `1/n` per pair.
    pub fn assignment_cost(&self, assignment: &Assignment) -> f64 {
        assignment
            .permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| self.entries[[i, j]])
            .sum()
    }
}

/// A (possibly soft) coupling: nonnegative weights whose row and column sums
/// approximate the stated marginals. Sinkhorn reports how closely.
#[derive(Debug, Clone)]
pub struct CouplingPlan {
    weights: Array2<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl CouplingPlan {
    pub fn new(
        weights: Array2<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
    ) -> Result<Self, CouplingError> {
        let (rows, cols) = weights.dim();
        if rows == 0 {
            return Err(CouplingError::EmptyBatch);
        }
        if rows != cols {
            return Err(CouplingError::NotSquare(rows, cols));
        }
        if row_marginal.len() != rows || col_marginal.len() != cols {
            return Err(CouplingError::DimensionMismatch(row_marginal.len(), rows));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CouplingError::InvalidPlan);
        }
        Ok(CouplingPlan {
            weights,
            row_marginal,
            col_marginal,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Sum over rows and columns of the absolute deviation between realized
    /// sums and the stated marginals.
    pub fn marginal_violation_l1(&self) -> f64 {
        let n = self.n();
        let mut violation = 0.0;
        for i in 0..n {
            let s: f64 = self.weights.row(i).sum();
            violation += (s - self.row_marginal[i]).abs();
        }
        for j in 0..n {
            let s: f64 = self.weights.column(j).sum();
            violation += (s - self.col_marginal[j]).abs();
        }
        violation
    }
}

/// A hard pairing: source `i` goes to target `permutation[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    permutation: Vec<usize>,
}

impl Assignment {
    pub fn new(permutation: Vec<usize>) -> Result<Self, CouplingError> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &j in &permutation {
            if j >= n || seen[j] {
                return Err(CouplingError::NotBijective);
            }
            seen[j] = true;
        }
        Ok(Assignment { permutation })
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }
}

/// Result of a Sinkhorn run. A hit iteration budget is not an error: the
/// plan is returned with `converged = false` and the violation it achieved.
#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    pub plan: CouplingPlan,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_violation_l1: f64,
}

fn check_batches(src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Result<usize, CouplingError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(CouplingError::EmptyBatch);
    }
    if src.len() != tgt.len() {
        return Err(CouplingError::BatchSizeMismatch(src.len(), tgt.len()));
    }
    let d = src[0].len();
    for v in src.iter().chain(tgt.iter()) {
        if v.len() != d {
            return Err(CouplingError::DimensionMismatch(v.len(), d));
        }
    }
    Ok(d)
}

/// Pairwise costs between equal-sized batches under the chosen metric.
///
/// Angular entries use a clamped arccos, so rounding in the normalized inner
/// product cannot push them outside `[0, pi]`; zero vectors have no
/// direction and are rejected for that metric.
pub fn cost_matrix(
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    metric: CostMetric,
) -> Result<CostMatrix, CouplingError> {
    check_batches(src, tgt)?;
    let n = src.len();
    let mut entries = Array2::zeros((n, n));
    match metric {
        CostMetric::EuclideanSq => {
            for i in 0..n {
                for j in 0..n {
                    entries[[i, j]] = src[i]
                        .iter()
                        .zip(&tgt[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                }
            }
        }
        CostMetric::Angular => {
            let src_norms = angular_norms(src, "source")?;
            let tgt_norms = angular_norms(tgt, "target")?;
            for i in 0..n {
                for j in 0..n {
                    let cos = (dot(&src[i], &tgt[j]) / (src_norms[i] * tgt_norms[j]))
                        .clamp(-1.0, 1.0);
                    entries[[i, j]] = cos.acos();
                }
            }
        }
    }
    if entries.iter().any(|e| !e.is_finite()) {
        return Err(CouplingError::NonFiniteCost);
    }
    CostMatrix::new(entries, metric)
}

fn angular_norms(batch: &[Vec<f64>], side: &'static str) -> Result<Vec<f64>, CouplingError> {
    batch
        .iter()
        .enumerate()
        .map(|(index, v)| {
            let n = norm(v);
            if n <= ZERO_NORM_THRESHOLD {
                Err(CouplingError::ZeroVector { side, index })
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Entropic coupling with uniform `1/n` marginals by log-domain Sinkhorn
/// scaling.
///
/// Updates run in the log domain (one log-sum-exp per row and per column per
/// iteration), so small `eps` merely slows convergence instead of
/// underflowing the scaling vectors. Iteration stops once the total L1
/// marginal violation drops to `tol`; hitting `max_iter` first returns the
/// current plan flagged as unconverged. The run is deterministic.
pub fn sinkhorn(
    cost: &CostMatrix,
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutput, CouplingError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(CouplingError::BadParameter("eps must be positive"));
    }
    if max_iter == 0 {
        return Err(CouplingError::BadParameter("max_iter must be at least 1"));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CouplingError::BadParameter("tol must be positive"));
    }

    let n = cost.n();
    let marginal = 1.0 / n as f64;
    let log_marginal = -(n as f64).ln();
    // Scaled costs -C/eps appear in every log-sum-exp; hoist the division.
    let logits = cost.entries().mapv(|c| -c / eps);

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut hit_tol = false;

    while iterations < max_iter {
        // Column sums are exact after the previous g-update, so the row-side
        // deviation (measured with the same log-sum-exps the f-update needs)
        // is the whole violation of the current iterate.
        let mut row_violation = 0.0;
        let mut row_lse = vec![0.0; n];
        for i in 0..n {
            let lse = log_sum_exp((0..n).map(|j| g[j] + logits[[i, j]]));
            row_lse[i] = lse;
            row_violation += ((f[i] + lse).exp() - marginal).abs();
        }
        if iterations > 0 && row_violation <= tol {
            hit_tol = true;
            break;
        }
        iterations += 1;
        for i in 0..n {
            f[i] = log_marginal - row_lse[i];
        }
        for j in 0..n {
            let lse = log_sum_exp((0..n).map(|i| f[i] + logits[[i, j]]));
            g[j] = log_marginal - lse;
        }
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(CouplingError::NonFiniteCost);
        }
    }

    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            weights[[i, j]] = (f[i] + g[j] + logits[[i, j]]).exp();
        }
    }
    let plan = CouplingPlan::new(weights, vec![marginal; n], vec![marginal; n])?;
    let marginal_violation_l1 = plan.marginal_violation_l1();
    Ok(SinkhornOutput {
        plan,
        iterations,
        converged: hit_tol || marginal_violation_l1 <= tol,
        marginal_violation_l1,
    })
}

/// Minimum-cost perfect assignment by the Hungarian method with dual
/// potentials, cubic in `n`. Among cost-minimal permutations the
/// lexicographically smallest is returned, found by re-matching inside the
/// subgraph of tight edges (zero reduced cost), which by complementary
/// slackness contains exactly the optimal assignments.
pub fn exact_assignment(cost: &CostMatrix) -> Result<Assignment, CouplingError> {
    let n = cost.n();
    if n > EXACT_ASSIGNMENT_CAP {
        return Err(CouplingError::TooLarge {
            n,
            cap: EXACT_ASSIGNMENT_CAP,
        });
    }
    let c = cost.entries();

    // Dual-potential shortest augmenting paths; p[j] is the row matched to
    // column j, n standing for "none". Column n is a virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![n; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 0..n {
        p[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let cur = c[[i0, j]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    if p[j] < n {
                        u[p[j]] += delta;
                    } else if j == n {
                        u[i] += delta;
                    }
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == n {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }

    let mut row_match = vec![n; n];
    for j in 0..n {
        if p[j] < n {
            row_match[p[j]] = j;
        }
    }

    // Tight edges under the final potentials. The slack absorbs rounding from
    // the incremental potential updates.
    let max_cost = c.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let slack = TIE_SLACK * (1.0 + max_cost);
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| c[[i, j]] - u[i] - v[j] <= slack)
                .collect()
        })
        .collect();

    lexicographic_matching(&tight, row_match)
}

/// Rewrites a perfect matching of the tight-edge graph into the
/// lexicographically smallest one, fixing rows in order and re-matching the
/// displaced row through alternating paths when a smaller column is feasible.
fn lexicographic_matching(
    tight: &[Vec<usize>],
    mut row_match: Vec<usize>,
) -> Result<Assignment, CouplingError> {
    let n = tight.len();
    let mut col_match = vec![n; n];
    for i in 0..n {
        debug_assert!(row_match[i] < n, "input matching must be perfect");
        col_match[row_match[i]] = i;
    }
    let mut locked_col = vec![false; n];

    for i in 0..n {
        let current = row_match[i];
        for &j in &tight[i] {
            if j >= current {
                break;
            }
            if locked_col[j] {
                continue;
            }
            let displaced = col_match[j];
            debug_assert!(displaced != i && displaced < n);
            // Tentatively take (i, j); the displaced row must find another
            // unlocked column through tight edges, never moving rows < i.
            col_match[row_match[i]] = n;
            row_match[i] = j;
            col_match[j] = i;
            let mut visited = vec![false; n];
            visited[j] = true;
            if rematch(tight, &mut row_match, &mut col_match, &locked_col, &mut visited, displaced) {
                break;
            }
            col_match[j] = displaced;
            row_match[i] = current;
            col_match[current] = i;
        }
        locked_col[row_match[i]] = true;
    }

    Assignment::new(row_match)
}

fn rematch(
    tight: &[Vec<usize>],
    row_match: &mut [usize],
    col_match: &mut [usize],
    locked_col: &[bool],
    visited: &mut [bool],
    row: usize,
) -> bool {
    let n = tight.len();
    for &c in &tight[row] {
        if locked_col[c] || visited[c] {
            continue;
        }
        visited[c] = true;
        if col_match[c] == n
            || rematch(tight, row_match, col_match, locked_col, visited, col_match[c])
        {
            row_match[row] = c;
            col_match[c] = row;
            return true;
        }
    }
    false
}

/// Draws `k` index pairs i.i.d. from the plan, each pair with probability
/// proportional to its weight. Reproducible under a seeded generator.
pub fn sample_pairs<R: Rng + ?Sized>(
    plan: &CouplingPlan,
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, CouplingError> {
    let n = plan.n();
    let dist = WeightedIndex::new(plan.weights().iter().copied())
        .map_err(|_| CouplingError::DegeneratePlan)?;
    Ok((0..k)
        .map(|_| {
            let flat = dist.sample(rng);
            (flat / n, flat % n)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};
    use std::f64::consts::FRAC_PI_2;

    fn gaussian_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }

    fn random_cost(rng: &mut ChaCha8Rng, n: usize) -> CostMatrix {
        let u = Uniform::new(0.0, 1.0).unwrap();
        let entries = Array2::from_shape_fn((n, n), |_| u.sample(rng));
        CostMatrix::new(entries, CostMetric::EuclideanSq).unwrap()
    }

    /// Exhaustive lexicographic-minimal assignment; visits permutations in
    /// lexicographic order so the first strict improvement wins ties.
    fn brute_force(cost: &CostMatrix) -> Vec<usize> {
        fn rec(
            cost: &Array2<f64>,
            perm: &mut Vec<usize>,
            used: &mut Vec<bool>,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            let n = cost.nrows();
            if perm.len() == n {
                let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
                match best {
                    None => *best = Some((c, perm.clone())),
                    Some((bc, _)) if c < *bc - 1e-12 => *best = Some((c, perm.clone())),
                    _ => {}
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(cost, perm, used, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = None;
        rec(
            cost.entries(),
            &mut Vec::new(),
            &mut vec![false; cost.n()],
            &mut best,
        );
        best.unwrap().1
    }

    #[test]
    fn cost_matrix_hand_cases() {
        let a = cost_matrix(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], CostMetric::Angular).unwrap();
        assert!((a.entries()[[0, 0]] - FRAC_PI_2).abs() < 1e-15);

        let e = cost_matrix(&[vec![1.0, 0.0]], &[vec![2.0, 0.0]], CostMetric::EuclideanSq).unwrap();
        assert!((e.entries()[[0, 0]] - 1.0).abs() < 1e-15);
        let a = cost_matrix(&[vec![1.0, 0.0]], &[vec![2.0, 0.0]], CostMetric::Angular).unwrap();
        assert_eq!(a.entries()[[0, 0]], 0.0);
    }

    #[test]
    fn angular_cost_ignores_positive_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let src = gaussian_batch(&mut rng, 8, 16);
        let tgt = gaussian_batch(&mut rng, 8, 16);
        let scale = Uniform::new(0.1, 10.0).unwrap();
        let src_scaled: Vec<Vec<f64>> = src
            .iter()
            .map(|v| {
                let s = scale.sample(&mut rng);
                v.iter().map(|x| x * s).collect()
            })
            .collect();
        let tgt_scaled: Vec<Vec<f64>> = tgt
            .iter()
            .map(|v| {
                let s = scale.sample(&mut rng);
                v.iter().map(|x| x * s).collect()
            })
            .collect();
        let plain = cost_matrix(&src, &tgt, CostMetric::Angular).unwrap();
        let scaled = cost_matrix(&src_scaled, &tgt_scaled, CostMetric::Angular).unwrap();
        for (a, b) in plain.entries().iter().zip(scaled.entries().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(
            exact_assignment(&plain).unwrap(),
            exact_assignment(&scaled).unwrap()
        );
    }

    #[test]
    fn angular_rejects_zero_vectors() {
        let err = cost_matrix(
            &[vec![0.0, 0.0]],
            &[vec![1.0, 0.0]],
            CostMetric::Angular,
        )
        .unwrap_err();
        assert_eq!(
            err,
            CouplingError::ZeroVector {
                side: "source",
                index: 0
            }
        );
        // Euclidean cost has no such restriction.
        assert!(cost_matrix(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], CostMetric::EuclideanSq).is_ok());
    }

    #[test]
    fn batch_shape_errors() {
        assert_eq!(
            cost_matrix(&[], &[], CostMetric::EuclideanSq).unwrap_err(),
            CouplingError::EmptyBatch
        );
        assert_eq!(
            cost_matrix(
                &[vec![1.0], vec![2.0]],
                &[vec![1.0]],
                CostMetric::EuclideanSq
            )
            .unwrap_err(),
            CouplingError::BatchSizeMismatch(2, 1)
        );
        assert_eq!(
            cost_matrix(&[vec![1.0]], &[vec![1.0, 2.0]], CostMetric::EuclideanSq).unwrap_err(),
            CouplingError::DimensionMismatch(2, 1)
        );
    }

    #[test]
    fn sinkhorn_two_by_two_prefers_diagonal() {
        let cost = CostMatrix::new(
            Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            CostMetric::EuclideanSq,
        )
        .unwrap();
        let out = sinkhorn(&cost, 0.01, 1000, 1e-6).unwrap();
        assert!(out.converged);
        let w = out.plan.weights();
        assert!((w[[0, 0]] - 0.5).abs() < 1e-3);
        assert!((w[[1, 1]] - 0.5).abs() < 1e-3);
        assert!(w[[0, 1]] < 1e-3);
        assert!(w[[1, 0]] < 1e-3);
        for i in 0..2 {
            let s: f64 = w.row(i).sum();
            assert!((s - 0.5).abs() <= 1e-6);
        }
    }

    #[test]
    fn sinkhorn_satisfies_marginals_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cost = random_cost(&mut rng, 16);
        let a = sinkhorn(&cost, 0.1, 1000, 1e-6).unwrap();
        let b = sinkhorn(&cost, 0.1, 1000, 1e-6).unwrap();
        assert!(a.converged);
        assert!(a.marginal_violation_l1 <= 1e-6);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.plan.weights(), b.plan.weights());
    }

    #[test]
    fn sinkhorn_unconverged_run_still_returns_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cost = random_cost(&mut rng, 8);
        let out = sinkhorn(&cost, 1e-3, 2, 1e-12).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.marginal_violation_l1.is_finite());
        assert!(out.plan.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn sinkhorn_small_eps_approaches_exact_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let cost = random_cost(&mut rng, 4);
            // Per-pair normalization puts the hard assignment on the same
            // mass-1 scale as the plan.
            let exact = cost.assignment_cost(&exact_assignment(&cost).unwrap()) / 4.0;
            let out = sinkhorn(&cost, 1e-3, 20000, 1e-6).unwrap();
            let entropic = cost.transport_cost(&out.plan);
            // Residual marginal violation can push the plan's cost slightly
            // below the feasible optimum; bound that dip by the violation.
            assert!(entropic >= exact - out.marginal_violation_l1);
            assert!(
                entropic <= exact * 1.01,
                "entropic {entropic} vs exact {exact}"
            );
        }
    }

    #[test]
    fn sinkhorn_cost_decreases_with_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let cost = random_cost(&mut rng, 8);
            let exact = cost.assignment_cost(&exact_assignment(&cost).unwrap()) / 8.0;
            let runs: Vec<SinkhornOutput> = [0.1, 0.01, 0.001]
                .iter()
                .map(|&eps| sinkhorn(&cost, eps, 20000, 1e-6).unwrap())
                .collect();
            let costs: Vec<f64> = runs.iter().map(|o| cost.transport_cost(&o.plan)).collect();
            let slack: Vec<f64> = runs.iter().map(|o| o.marginal_violation_l1).collect();
            assert!(costs[0] >= costs[1] - slack[0] - slack[1]);
            assert!(costs[1] >= costs[2] - slack[1] - slack[2]);
            assert!(costs[2] >= exact - slack[2]);
            assert!(costs[2] <= exact * 1.01);
        }
    }

    #[test]
    fn sinkhorn_transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cost = random_cost(&mut rng, 6);
        let transposed = CostMatrix::new(cost.entries().t().to_owned(), cost.metric()).unwrap();
        // The alternating updates end row-exact on one orientation and
        // column-exact on the other, so agreement is limited by the stopping
        // tolerance rather than machine precision.
        let a = sinkhorn(&cost, 0.1, 2000, 1e-12).unwrap();
        let b = sinkhorn(&transposed, 0.1, 2000, 1e-12).unwrap();
        assert!(a.converged && b.converged);
        for i in 0..6 {
            for j in 0..6 {
                assert!((a.plan.weights()[[i, j]] - b.plan.weights()[[j, i]]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn assignment_hand_cases() {
        let c = |v: Vec<f64>, n| {
            CostMatrix::new(
                Array2::from_shape_vec((n, n), v).unwrap(),
                CostMetric::EuclideanSq,
            )
            .unwrap()
        };
        let id = exact_assignment(&c(vec![0.0, 1.0, 1.0, 0.0], 2)).unwrap();
        assert_eq!(id.permutation(), &[0, 1]);

        let tie = exact_assignment(&c(vec![1.0, 1.0, 1.0, 1.0], 2)).unwrap();
        assert_eq!(tie.permutation(), &[0, 1]);

        // Two zero-cost assignments exist ([0,1,2] and [1,2,0]); the
        // lexicographically smaller must win regardless of search order.
        let multi = exact_assignment(&c(
            vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            3,
        ))
        .unwrap();
        assert_eq!(multi.permutation(), &[0, 1, 2]);
    }

    #[test]
    fn assignment_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let cost = random_cost(&mut rng, 6);
            let fast = exact_assignment(&cost).unwrap();
            assert_eq!(fast.permutation(), brute_force(&cost).as_slice());
        }
    }

    #[test]
    fn assignment_breaks_ties_lexicographically() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let levels = [0.0, 0.5, 1.0];
        for _ in 0..20 {
            let entries =
                Array2::from_shape_fn((5, 5), |_| levels[rng.random_range(0..levels.len())]);
            let cost = CostMatrix::new(entries, CostMetric::EuclideanSq).unwrap();
            let fast = exact_assignment(&cost).unwrap();
            assert_eq!(
                fast.permutation(),
                brute_force(&cost).as_slice(),
                "cost {:?}",
                cost.entries()
            );
        }
    }

    #[test]
    fn assignment_respects_cap() {
        let n = EXACT_ASSIGNMENT_CAP + 1;
        let cost = CostMatrix::new(Array2::zeros((n, n)), CostMetric::EuclideanSq).unwrap();
        assert_eq!(
            exact_assignment(&cost).unwrap_err(),
            CouplingError::TooLarge { n, cap: EXACT_ASSIGNMENT_CAP }
        );
    }

    #[test]
    fn sample_pairs_follows_plan_support() {
        let mut weights = Array2::zeros((3, 3));
        for i in 0..3 {
            weights[[i, i]] = 1.0 / 3.0;
        }
        let plan = CouplingPlan::new(weights, vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sample_pairs(&plan, 100, &mut rng).unwrap();
        assert_eq!(pairs.len(), 100);
        assert!(pairs.iter().all(|&(i, j)| i == j));
    }

    #[test]
    fn sample_pairs_matches_uniform_frequencies() {
        let n = 2;
        let weights = Array2::from_elem((n, n), 0.25);
        let plan = CouplingPlan::new(weights, vec![0.5; n], vec![0.5; n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 100_000;
        let pairs = sample_pairs(&plan, k, &mut rng).unwrap();
        let mut counts = [[0usize; 2]; 2];
        for (i, j) in pairs {
            counts[i][j] += 1;
        }
        for row in counts {
            for c in row {
                let freq = c as f64 / k as f64;
                assert!((freq - 0.25).abs() <= 0.01, "freq {freq}");
            }
        }
    }

    #[test]
    fn sample_pairs_is_reproducible_and_rejects_zero_plans() {
        let weights = Array2::from_elem((2, 2), 0.25);
        let plan = CouplingPlan::new(weights, vec![0.5; 2], vec![0.5; 2]).unwrap();
        let a = sample_pairs(&plan, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_pairs(&plan, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);

        let zero = CouplingPlan::new(Array2::zeros((2, 2)), vec![0.5; 2], vec![0.5; 2]).unwrap();
        assert_eq!(
            sample_pairs(&zero, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap_err(),
            CouplingError::DegeneratePlan
        );
    }

    #[test]
    fn plan_validation() {
        let mut weights = Array2::zeros((2, 2));
        weights[[0, 0]] = -0.1;
        assert_eq!(
            CouplingPlan::new(weights, vec![0.5; 2], vec![0.5; 2]).unwrap_err(),
            CouplingError::InvalidPlan
        );
        assert_eq!(
            Assignment::new(vec![0, 0]).unwrap_err(),
            CouplingError::NotBijective
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn euclidean_cost_decomposes_into_norms_and_angle(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x1: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n0 = norm(&x0);
            let n1 = norm(&x1);
            prop_assume!(n0 > 1e-6 && n1 > 1e-6);
            let sq: f64 = x0.iter().zip(&x1).map(|(a, b)| (a - b) * (a - b)).sum();
            let cos = (dot(&x0, &x1) / (n0 * n1)).clamp(-1.0, 1.0);
            let theta = cos.acos();
            let decomposed = n0 * n0 + n1 * n1 - 2.0 * n0 * n1 * theta.cos();
            prop_assert!((sq - decomposed).abs() <= 1e-9 * sq.max(1.0));
        }

        #[test]
        fn sinkhorn_marginals_hold_on_random_instances(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed as usize % 7);
            let cost = random_cost(&mut rng, n);
            let out = sinkhorn(&cost, 0.1, 1000, 1e-6).unwrap();
            prop_assert!(out.converged);
            prop_assert!(out.marginal_violation_l1 <= 1e-6);
            let m = 1.0 / n as f64;
            for i in 0..n {
                let s: f64 = out.plan.weights().row(i).sum();
                prop_assert!((s - m).abs() <= 1e-6);
            }
        }
    }
}
