//! Exact (O(n²)) t-SNE from 2-D element centers to a 1-D embedding.
//!
//! Pairwise Gaussian affinities with per-point perplexity calibration,
//! symmetrized to a joint distribution, then KL-divergence gradient descent
//! with early exaggeration and momentum against a 1-D Student-t kernel.
//! Element counts per screen are small (hundreds), so no Barnes-Hut.
//!
//! Determinism: initialization is the first principal component of the
//! centered inputs (scaled to std 1e-4), so identical inputs, parameters,
//! and seed give identical embeddings on a platform. The seed is consumed
//! only to jitter exactly-duplicate input points.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsneError {
    #[error("invalid t-SNE parameter: {0}")]
    InvalidParams(&'static str),
    #[error("t-SNE needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate distance row: all pairwise distances are zero")]
    DegenerateRow,
    #[error("embedding diverged: non-finite values at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("non-finite input to gradient computation")]
    NonFinite,
}

/// Gradient-descent and affinity parameters.
///
/// The numeric defaults mirror the commonly documented defaults of exact
/// t-SNE implementations: perplexity 30, early exaggeration 12, learning
/// rate 200, 1000 iterations, momentum 0.5 switching to 0.8 at iteration
/// 250, exaggeration removed at iteration 250.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneParams {
    pub perplexity: f64,
    pub early_exaggeration: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub exaggeration_end_iter: usize,
    pub min_prob: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            early_exaggeration: 12.0,
            learning_rate: 200.0,
            iterations: 1000,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            exaggeration_end_iter: 250,
            min_prob: 1e-12,
        }
    }
}

impl TsneParams {
    pub fn validate(&self) -> Result<(), TsneError> {
        // NaN fails every comparison, so each check also rejects NaN
        if self.perplexity.is_nan() || self.perplexity < 1.0 {
            return Err(TsneError::InvalidParams("perplexity must be >= 1"));
        }
        if self.iterations < 1 {
            return Err(TsneError::InvalidParams("iterations must be >= 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(TsneError::InvalidParams("learning rate must be > 0"));
        }
        if self.min_prob.is_nan() || self.min_prob <= 0.0 {
            return Err(TsneError::InvalidParams("min_prob must be > 0"));
        }
        Ok(())
    }

    /// Perplexity is capped at (n-1)/3 (but at least 1) so the entropy
    /// target stays reachable for tiny inputs.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        let cap = ((n as f64 - 1.0) / 3.0).max(1.0);
        self.perplexity.min(cap)
    }
}

/// Symmetric joint affinities P over point pairs: zero diagonal, unit sum,
/// every off-diagonal entry at least `min_prob`.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    n: usize,
    p: Vec<f64>,
    min_prob: f64,
    /// Rows that fell back to uniform conditionals (all-zero distances).
    pub degenerate_rows: Vec<usize>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn min_prob(&self) -> f64 {
        self.min_prob
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
}

/// Precision growth limit, relative to a row's smallest positive squared
/// distance. Without a cap, an unreachable perplexity target (exactly or
/// nearly tied distances at the (n-1)/3 floor) doubles β for all 200
/// iterations and 1-ulp distance noise then decides the whole distribution;
/// capping keeps near-ties near-uniform while leaving every genuinely
/// separated row reachable.
const BETA_SCALE_CAP: f64 = 1e9;

/// Binary search for the Gaussian precision β = 1/(2σ²) whose conditional
/// distribution p(j|i) ∝ exp(−β·d_ij) over this row reaches the target
/// perplexity 2^H within 1e-5, in at most 200 halvings. Returns the last β
/// when the tolerance is not met.
///
/// `sq_distances_row` holds the squared distances to the other points
/// (self excluded).
pub fn perplexity_search(sq_distances_row: &[f64], target_perplexity: f64) -> Result<f64, TsneError> {
    debug_assert!(!sq_distances_row.is_empty());
    let scale = sq_distances_row
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !scale.is_finite() {
        return Err(TsneError::DegenerateRow);
    }
    let beta_cap = BETA_SCALE_CAP / scale;

    let mut beta = 1.0_f64.min(beta_cap);
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;

    for _ in 0..200 {
        let perp = row_perplexity(sq_distances_row, beta);
        let diff = perp - target_perplexity;
        if diff.abs() <= 1e-5 {
            break;
        }
        if diff > 0.0 {
            // too spread out: sharpen the kernel
            beta_min = beta;
            beta = if beta_max.is_finite() {
                (beta + beta_max) / 2.0
            } else {
                (beta * 2.0).min(beta_cap)
            };
            if beta == beta_min {
                break; // pinned at the cap
            }
        } else {
            beta_max = beta;
            beta = if beta_min.is_finite() {
                (beta + beta_min) / 2.0
            } else {
                beta / 2.0
            };
        }
    }
    Ok(beta)
}

/// Perplexity 2^H of the conditional row distribution at precision β,
/// computed via a shifted softmax for stability.
fn row_perplexity(sq_distances: &[f64], beta: f64) -> f64 {
    let d_min = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for &d in sq_distances {
        let e = (-beta * (d - d_min)).exp();
        sum += e;
        weighted += e * (d - d_min);
    }
    // H (nats) = ln Σe + β · E[d - d_min];  2^H_bits = e^H_nats
    let entropy = sum.ln() + beta * weighted / sum;
    entropy.exp()
}

/// Normalized conditional row p(j|i) at precision β (self entry excluded).
fn conditional_row(sq_distances: &[f64], beta: f64, out: &mut [f64]) {
    let d_min = sq_distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, &d) in out.iter_mut().zip(sq_distances) {
        let e = (-beta * (d - d_min)).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Jitters exact duplicates by up to ±1e-3 px so the perplexity search
/// always sees nonzero distances. Non-duplicate points pass through
/// untouched and the RNG is consumed only for duplicates.
pub fn jitter_duplicates(points: &[[f64; 2]], seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: std::collections::HashSet<(u64, u64)> = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(points.len());
    for &point in points {
        let mut p = point;
        while !seen.insert((p[0].to_bits(), p[1].to_bits())) {
            p = [
                point[0] + rng.random_range(-1e-3..=1e-3),
                point[1] + rng.random_range(-1e-3..=1e-3),
            ];
        }
        out.push(p);
    }
    out
}

/// Builds the symmetric joint affinity matrix P = (P_cond + P_condᵀ)/(2n)
/// with perplexity-calibrated conditionals. Callers jitter duplicate points
/// first; rows that are still degenerate fall back to uniform conditionals
/// and are reported in `degenerate_rows`.
pub fn pairwise_affinities(
    points: &[[f64; 2]],
    perplexity: f64,
    min_prob: f64,
) -> Result<AffinityMatrix, TsneError> {
    let n = points.len();
    if n < 3 {
        return Err(TsneError::TooFewPoints(n));
    }

    // symmetric squared-distance matrix, each pair computed once
    let mut d2 = vec![0.0_f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let d = dx * dx + dy * dy;
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }

    let mut cond = vec![0.0_f64; n * n];
    let mut degenerate_rows = Vec::new();
    let mut row_buf = vec![0.0_f64; n - 1];
    let mut out_buf = vec![0.0_f64; n - 1];
    for i in 0..n {
        let mut k = 0;
        for j in 0..n {
            if j != i {
                row_buf[k] = d2[i * n + j];
                k += 1;
            }
        }
        match perplexity_search(&row_buf, perplexity) {
            Ok(beta) => conditional_row(&row_buf, beta, &mut out_buf),
            Err(TsneError::DegenerateRow) => {
                degenerate_rows.push(i);
                out_buf.fill(1.0 / (n as f64 - 1.0));
            }
            Err(e) => return Err(e),
        }
        let mut k = 0;
        for j in 0..n {
            if j != i {
                cond[i * n + j] = out_buf[k];
                k += 1;
            }
        }
    }

    // symmetrize, floor off-diagonals, renormalize, floor once more; the
    // second floor restores entries the renormalization nudged below the
    // floor without measurably disturbing the unit sum
    let mut p = vec![0.0_f64; n * n];
    let scale = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((cond[i * n + j] + cond[j * n + i]) / scale).max(min_prob);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    let total: f64 = p.iter().sum();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = &mut p[i * n + j];
                *v = (*v / total).max(min_prob);
            }
        }
    }

    Ok(AffinityMatrix {
        n,
        p,
        min_prob,
        degenerate_rows,
    })
}

/// Student-t kernel weights w_ij = 1/(1 + (y_i − y_j)²) and their total.
fn student_t_weights(y: &[f64], w: &mut [f64]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = y[i] - y[j];
            let wij = 1.0 / (1.0 + d * d);
            w[i * n + j] = wij;
            w[j * n + i] = wij;
            z += 2.0 * wij;
        }
    }
    z
}

fn gradient_into(p: &[f64], n: usize, y: &[f64], min_prob: f64, grad: &mut [f64]) {
    let mut w = vec![0.0_f64; n * n];
    let z = student_t_weights(y, &mut w);
    for g in grad.iter_mut() {
        *g = 0.0;
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w[i * n + j];
            let qij = (wij / z).max(min_prob);
            grad[i] += 4.0 * (p[i * n + j] - qij) * wij * (y[i] - y[j]);
        }
    }
}

/// Analytic gradient of KL(P‖Q) with respect to the 1-D embedding, with Q
/// from the Student-t kernel floored at `min_prob`.
pub fn kl_gradient(p: &AffinityMatrix, y: &[f64]) -> Result<Vec<f64>, TsneError> {
    if y.len() != p.n {
        return Err(TsneError::InvalidParams("embedding length mismatch"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(TsneError::NonFinite);
    }
    let mut grad = vec![0.0_f64; p.n];
    gradient_into(p.as_slice(), p.n, y, p.min_prob, &mut grad);
    Ok(grad)
}

/// KL(P‖Q) of the embedding against the affinities (the optimized loss).
pub fn kl_divergence(p: &AffinityMatrix, y: &[f64]) -> f64 {
    kl_raw(p.as_slice(), p.n, y, p.min_prob)
}

fn kl_raw(p: &[f64], n: usize, y: &[f64], min_prob: f64) -> f64 {
    let mut w = vec![0.0_f64; n * n];
    let z = student_t_weights(y, &mut w);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p[i * n + j];
            if pij > 0.0 {
                let qij = (w[i * n + j] / z).max(min_prob);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

/// Largest per-iteration move, as a fraction of the embedding's current
/// span. Unclipped momentum steps leapfrog neighbors in one dimension and
/// settle into folded layouts.
const STEP_CLIP_FRACTION: f64 = 0.05;

/// Final embedding plus the per-iteration KL trace.
#[derive(Debug, Clone)]
pub struct TsneResult {
    pub embedding: Vec<f64>,
    pub kl_trace: Vec<f64>,
    pub degenerate_rows: Vec<usize>,
}

/// First principal component of the centered points, sign-canonicalized so
/// the result is independent of input order.
fn principal_axis(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in points {
        let dx = p[0] - mx;
        let dy = p[1] - my;
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    let lambda = (a + c) / 2.0 + (((a - c) / 2.0).powi(2) + b * b).sqrt();
    // pick the better-conditioned eigenvector formula
    let v = if b.abs() > 1e-12 {
        if (lambda - a).abs() > (lambda - c).abs() {
            [b, lambda - a]
        } else {
            [lambda - c, b]
        }
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let mut v = [v[0] / norm, v[1] / norm];
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    v
}

/// Runs the full embedding: jitter duplicates, calibrate affinities,
/// PCA-line initialization at std 1e-4, then gradient descent with early
/// exaggeration and momentum. The KL trace is evaluated against the
/// unexaggerated P after every update.
pub fn run_tsne(points: &[[f64; 2]], params: &TsneParams, seed: u64) -> Result<TsneResult, TsneError> {
    params.validate()?;
    let n = points.len();
    if n < 3 {
        return Err(TsneError::TooFewPoints(n));
    }

    let jittered = jitter_duplicates(points, seed);
    let perplexity = params.effective_perplexity(n);
    let affinities = pairwise_affinities(&jittered, perplexity, params.min_prob)?;

    // PCA-line init
    let axis = principal_axis(&jittered);
    let mx = jittered.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let my = jittered.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let mut y: Vec<f64> = jittered
        .iter()
        .map(|p| (p[0] - mx) * axis[0] + (p[1] - my) * axis[1])
        .collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var > 0.0 {
        let s = 1e-4 / var.sqrt();
        for v in y.iter_mut() {
            *v = (*v - mean) * s;
        }
    } else {
        for v in y.iter_mut() {
            *v = 0.0;
        }
    }

    let p = affinities.as_slice();
    let p_exag: Vec<f64> = p.iter().map(|v| v * params.early_exaggeration).collect();
    let mut velocity = vec![0.0_f64; n];
    let mut gains = vec![1.0_f64; n];
    let mut grad = vec![0.0_f64; n];
    let mut kl_trace = Vec::with_capacity(params.iterations);

    for iter in 0..params.iterations {
        let exaggerated = iter < params.exaggeration_end_iter;
        let p_now: &[f64] = if exaggerated { &p_exag } else { p };
        gradient_into(p_now, n, &y, params.min_prob, &mut grad);

        let momentum = if iter < params.momentum_switch_iter {
            params.momentum_initial
        } else {
            params.momentum_final
        };
        // reference-style adaptive gains: damp coordinates whose gradient
        // keeps flipping against the velocity, grow the ones moving steadily
        for i in 0..n {
            gains[i] = if grad[i].signum() != velocity[i].signum() {
                gains[i] + 0.2
            } else {
                (gains[i] * 0.8).max(0.01)
            };
            velocity[i] = momentum * velocity[i] - params.learning_rate * gains[i] * grad[i];
        }
        // trust-region clip: a 1-D embedding reorders only by moving points
        // through each other, so a step larger than a sliver of the current
        // span folds the layout instead of optimizing it
        let span = {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in &y {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (hi - lo).max(1e-4)
        };
        let max_step = velocity.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let limit = STEP_CLIP_FRACTION * span;
        if max_step > limit {
            let shrink = limit / max_step;
            for v in velocity.iter_mut() {
                *v *= shrink;
            }
        }
        for i in 0..n {
            y[i] += velocity[i];
        }
        // recenter; KL is translation invariant
        let mean = y.iter().sum::<f64>() / n as f64;
        for v in y.iter_mut() {
            *v -= mean;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(TsneError::Diverged { iteration: iter });
        }
        kl_trace.push(kl_raw(p, n, &y, params.min_prob));
    }

    Ok(TsneResult {
        embedding: y,
        kl_trace,
        degenerate_rows: affinities.degenerate_rows.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(iterations: usize) -> TsneParams {
        TsneParams {
            iterations,
            ..TsneParams::default()
        }
    }

    // Independent scalar oracle: bisect the entropy function itself, with a
    // much tighter tolerance than the implementation under test.
    fn oracle_beta(sq_distances: &[f64], target: f64) -> f64 {
        let (mut lo, mut hi) = (1e-12, 1e6);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if row_perplexity(sq_distances, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn perplexity_search_uniform_when_equidistant() {
        // all distances equal: conditional is uniform and 2^H = k exactly
        let row = [4.0, 4.0, 4.0, 4.0, 4.0];
        let beta = perplexity_search(&row, 5.0).unwrap();
        let mut p = [0.0; 5];
        conditional_row(&row, beta, &mut p);
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn perplexity_search_two_equal_neighbors() {
        let row = [7.0, 7.0];
        let beta = perplexity_search(&row, 2.0).unwrap();
        let mut p = [0.0; 2];
        conditional_row(&row, beta, &mut p);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perplexity_search_matches_root_finding_oracle() {
        let row = [1.0, 4.0, 9.0];
        let beta = perplexity_search(&row, 2.0).unwrap();
        assert!((row_perplexity(&row, beta) - 2.0).abs() <= 1e-5);
        let expected = oracle_beta(&row, 2.0);
        assert!(
            (beta - expected).abs() < 1e-3,
            "beta {beta} vs oracle {expected}"
        );
    }

    #[test]
    fn perplexity_search_degenerate_row() {
        assert!(matches!(
            perplexity_search(&[0.0, 0.0], 2.0),
            Err(TsneError::DegenerateRow { .. })
        ));
    }

    fn assert_affinity_invariants(p: &AffinityMatrix) {
        let n = p.n();
        let mut sum = 0.0;
        for i in 0..n {
            assert_eq!(p.get(i, i), 0.0, "nonzero diagonal at {i}");
            for j in 0..n {
                if i != j {
                    assert!(
                        (p.get(i, j) - p.get(j, i)).abs() <= 1e-12,
                        "asymmetry at ({i},{j})"
                    );
                    assert!(p.get(i, j) >= p.min_prob(), "entry below floor at ({i},{j})");
                }
                sum += p.get(i, j);
            }
        }
        assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
    }

    #[test]
    fn affinities_equilateral_triangle_all_equal() {
        // the side lengths agree only to 1 ulp (no exact equilateral exists
        // in binary floating point), so equality holds to the capped-β noise
        // level rather than machine precision
        let h = 3.0_f64.sqrt() / 2.0;
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, h]];
        let p = pairwise_affinities(&pts, 1.0, 1e-12).unwrap();
        assert_affinity_invariants(&p);
        let reference = p.get(0, 1);
        for (i, j) in [(0, 2), (1, 2)] {
            assert!(
                (p.get(i, j) - reference).abs() < 1e-6,
                "P({i},{j}) = {} vs {reference}",
                p.get(i, j)
            );
        }
    }

    #[test]
    fn affinities_collinear_symmetry() {
        // four evenly spaced collinear points: P_12 = P_34 by reflection and
        // adjacent pairs dominate skip pairs, at every reachable perplexity.
        // Verified against brute-force closed-form conditionals.
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let p = pairwise_affinities(&pts, 1.0, 1e-12).unwrap();
        assert_affinity_invariants(&p);
        assert!((p.get(0, 1) - p.get(2, 3)).abs() < 1e-12);
        assert!(p.get(1, 2) > p.get(0, 2));
        assert!(p.get(0, 2) >= p.get(0, 3));
        // end pairs absorb their endpoint's whole conditional, so they edge
        // out the middle pair
        assert!(p.get(0, 1) >= p.get(1, 2));

        // brute-force oracle: recompute the joint from scratch with the
        // closed-form conditional formula
        let n = 4;
        let betas: Vec<f64> = (0..n)
            .map(|i| {
                let row: Vec<f64> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let dx = pts[i][0] - pts[j][0];
                        let dy = pts[i][1] - pts[j][1];
                        dx * dx + dy * dy
                    })
                    .collect();
                oracle_beta(&row, 1.0)
            })
            .collect();
        let cond = |i: usize, j: usize| -> f64 {
            let d = |a: usize, b: usize| -> f64 {
                let dx = pts[a][0] - pts[b][0];
                let dy = pts[a][1] - pts[b][1];
                dx * dx + dy * dy
            };
            let d_min = (0..n)
                .filter(|&k| k != i)
                .map(|k| d(i, k))
                .fold(f64::INFINITY, f64::min);
            let num = (-betas[i] * (d(i, j) - d_min)).exp();
            let den: f64 = (0..n)
                .filter(|&k| k != i)
                .map(|k| (-betas[i] * (d(i, k) - d_min)).exp())
                .sum();
            num / den
        };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let expected = (cond(i, j) + cond(j, i)) / (2.0 * n as f64);
                    assert!(
                        (p.get(i, j) - expected).abs() < 1e-6,
                        "joint ({i},{j}): {} vs oracle {expected}",
                        p.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn affinities_unit_sum_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(3..20);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0)])
                .collect();
            let p = pairwise_affinities(&pts, 5.0, 1e-12).unwrap();
            assert_affinity_invariants(&p);
        }
    }

    #[test]
    fn gradient_antisymmetric_for_two_points() {
        // hand-built symmetric 2-point affinity matrix
        let p = AffinityMatrix {
            n: 2,
            p: vec![0.0, 0.5, 0.5, 0.0],
            min_prob: 1e-12,
            degenerate_rows: vec![],
        };
        let g = kl_gradient(&p, &[-0.3, 0.3]).unwrap();
        assert!((g[0] + g[1]).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let n = rng.random_range(3..=6);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)])
                .collect();
            let p = pairwise_affinities(&pts, 1.5, 1e-12).unwrap();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = kl_gradient(&p, &y).unwrap();
            let h = 1e-5;
            for k in 0..n {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += h;
                ym[k] -= h;
                let fd = (kl_divergence(&p, &yp) - kl_divergence(&p, &ym)) / (2.0 * h);
                let scale = g[k].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (g[k] - fd).abs() / scale <= 1e-4,
                    "component {k}: analytic {} vs fd {fd}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn gradient_rejects_non_finite() {
        let p = AffinityMatrix {
            n: 2,
            p: vec![0.0, 0.5, 0.5, 0.0],
            min_prob: 1e-12,
            degenerate_rows: vec![],
        };
        assert!(matches!(
            kl_gradient(&p, &[f64::NAN, 0.0]),
            Err(TsneError::NonFinite)
        ));
    }

    #[test]
    fn gradient_near_zero_at_converged_point() {
        // a uniform affinity matrix has a compact, well-conditioned optimum;
        // descend to stationarity and check the analytic gradient there.
        // near the optimum, KL differences drop below f64 resolution long
        // before the gradient does, so the line search accepts steps on
        // gradient-norm decrease instead of KL decrease
        let n = 4;
        let uniform = 1.0 / (n * (n - 1)) as f64;
        let mut entries = vec![uniform; n * n];
        for i in 0..n {
            entries[i * n + i] = 0.0;
        }
        let p = AffinityMatrix {
            n,
            p: entries,
            min_prob: 1e-12,
            degenerate_rows: vec![],
        };
        let norm_of = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut y = vec![-1.5, -0.5, 0.5, 1.5];

        // phase 1: backtracking descent on KL until float resolution
        let mut step = 0.5;
        let mut kl = kl_divergence(&p, &y);
        for _ in 0..50_000 {
            if step < 1e-16 {
                break;
            }
            let g = kl_gradient(&p, &y).unwrap();
            let trial: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| v - step * gi).collect();
            let trial_kl = kl_divergence(&p, &trial);
            if trial_kl < kl {
                y = trial;
                kl = trial_kl;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
        }

        // phase 2: polish on the gradient norm, which keeps full float
        // resolution where KL differences no longer do
        let mut step = 0.5;
        let mut g = kl_gradient(&p, &y).unwrap();
        let mut norm = norm_of(&g);
        for _ in 0..50_000 {
            if norm < 1e-9 || step < 1e-18 {
                break;
            }
            let trial: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| v - step * gi).collect();
            let trial_g = kl_gradient(&p, &trial).unwrap();
            let trial_norm = norm_of(&trial_g);
            if trial_norm < norm {
                y = trial;
                g = trial_g;
                norm = trial_norm;
                step *= 1.05;
            } else {
                step *= 0.5;
            }
        }
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn run_tsne_triangle_has_three_distinct_values() {
        let h = 3.0_f64.sqrt() / 2.0;
        let pts = [[0.0, 0.0], [100.0, 0.0], [50.0, 100.0 * h]];
        let result = run_tsne(&pts, &TsneParams::default(), 0).unwrap();
        let z = &result.embedding;
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(result.kl_trace.iter().all(|v| v.is_finite()));
        assert!((z[0] - z[1]).abs() > 1e-9);
        assert!((z[0] - z[2]).abs() > 1e-9);
        assert!((z[1] - z[2]).abs() > 1e-9);
    }

    #[test]
    fn kl_trace_improves_after_exaggeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..5 {
            let n = rng.random_range(5..15);
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)])
                .collect();
            let params = TsneParams::default();
            let result = run_tsne(&pts, &params, case).unwrap();
            let at_end = result.kl_trace[params.exaggeration_end_iter];
            let last = *result.kl_trace.last().unwrap();
            assert!(
                last < at_end,
                "case {case}: KL {last} at end vs {at_end} at exaggeration end"
            );
            assert!(result.kl_trace.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = [[0.0, 0.0], [30.0, 5.0], [70.0, 40.0], [200.0, 10.0], [35.0, 90.0]];
        let a = run_tsne(&pts, &TsneParams::default(), 42).unwrap();
        let b = run_tsne(&pts, &TsneParams::default(), 42).unwrap();
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.kl_trace, b.kl_trace);
    }

    #[test]
    fn duplicate_points_are_jittered() {
        let pts = [[5.0, 5.0], [5.0, 5.0], [50.0, 50.0]];
        let jittered = jitter_duplicates(&pts, 1);
        assert_eq!(jittered[0], [5.0, 5.0]);
        assert_ne!(jittered[1], [5.0, 5.0]);
        assert!((jittered[1][0] - 5.0).abs() <= 1e-3);
        assert!((jittered[1][1] - 5.0).abs() <= 1e-3);
        // and the full run succeeds
        run_tsne(&pts, &small_params(50), 1).unwrap();
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(matches!(
            run_tsne(&[[0.0, 0.0], [1.0, 1.0]], &TsneParams::default(), 0),
            Err(TsneError::TooFewPoints(2))
        ));
    }

    #[test]
    fn permutation_equivariance_of_ranks() {
        // well-separated points: the embedding's rank structure is far above
        // the floating-point noise that reordered summation introduces
        let pts = [
            [0.0, 0.0],
            [200.0, 0.0],
            [450.0, 80.0],
            [800.0, 300.0],
            [1500.0, 900.0],
        ];
        // gentle descent: strong enough to order the points, tame enough
        // that trajectories never cross from summation-order noise
        let params = TsneParams {
            iterations: 200,
            learning_rate: 30.0,
            ..TsneParams::default()
        };
        let forward = run_tsne(&pts, &params, 9).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let permuted: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
        let back = run_tsne(&permuted, &params, 9).unwrap();

        let ranks = |z: &[f64]| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..z.len()).collect();
            idx.sort_by(|&a, &b| z[a].partial_cmp(&z[b]).unwrap());
            let mut r = vec![0usize; z.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank;
            }
            r
        };
        let r_forward = ranks(&forward.embedding);
        let r_back = ranks(&back.embedding);
        for (pos, &orig) in perm.iter().enumerate() {
            assert_eq!(
                r_back[pos], r_forward[orig],
                "rank of original point {orig} changed under input permutation"
            );
        }
    }
}
