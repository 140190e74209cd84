//! K-Means over candidate embeddings and the Bayesian reweighting of
//! clusters by their scores.
//!
//! Each round, cluster `j` has a prior `P_j` and a likelihood `L_j` derived
//! from the mean score of its members. The posterior is
//! `P_j L_j / sum_k P_k L_k`, and the cluster with the highest posterior is
//! sampled from. Posteriors become the next round's priors after the new
//! clusters are aligned to the old ones by nearest centroid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Lower clamp applied to likelihoods.
pub const LIKELIHOOD_FLOOR: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;
const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("points have mismatched dimensions ({expected} vs {found})")]
    DimMismatch { expected: usize, found: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("total evidence is zero")]
    DegenerateEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub k_effective: usize,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_effective];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPosterior {
    pub priors: Vec<f64>,
    pub likelihoods: Vec<f64>,
    pub posteriors: Vec<f64>,
    pub best: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn mean_of(points: &[&[f64]], members: impl Iterator<Item = usize>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for i in members {
        for (s, x) in sum.iter_mut().zip(points[i]) {
            *s += x;
        }
        n += 1;
    }
    sum.iter().map(|s| s / n as f64).collect()
}

fn centroids_of(points: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| mean_of(points, (0..points.len()).filter(|&i| labels[i] == j), dim))
        .collect()
}

fn inertia_of(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| squared_distance(p, &centroids[l])).sum()
}

/// Indices of the first occurrence of each distinct point.
fn distinct_indices(points: &[&[f64]]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !out.iter().any(|&j| points[j] == *p) {
            out.push(i);
        }
    }
    out
}

fn validate<P: AsRef<[f64]>>(points: &[P]) -> Result<usize, ClusterError> {
    let Some(first) = points.first() else {
        return Err(ClusterError::Precondition("no points to cluster".into()));
    };
    let dim = first.as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(ClusterError::DimMismatch { expected: dim, found: p.len() });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::Precondition("non-finite coordinate".into()));
        }
    }
    Ok(dim)
}

/// k-means++ seeding over the distinct points.
fn seed_centroids(points: &[&[f64]], distinct: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[distinct[rng.random_range(0..distinct.len())]].to_vec()];
    while centroids.len() < k {
        let weights: Vec<f64> = distinct.iter().map(|&i| nearest(points[i], &centroids).1).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = None;
        for (w, &i) in weights.iter().zip(distinct) {
            if *w > 0.0 {
                chosen = Some(i);
                if target < *w {
                    break;
                }
                target -= w;
            }
        }
        centroids.push(points[chosen.expect("fewer centroids than distinct points")].to_vec());
    }
    centroids
}

/// Single-point moves that lower the total within-cluster sum of squares,
/// repeated until none remains.
fn refine_single_moves(points: &[&[f64]], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for _ in 0..points.len() * 10 + 10 {
        let mut moved = false;
        for i in 0..points.len() {
            let a = labels[i];
            if sizes[a] <= 1 {
                continue;
            }
            let na = sizes[a] as f64;
            let removal = na / (na - 1.0) * squared_distance(points[i], &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for (b, cb) in centroids.iter().enumerate() {
                if b == a {
                    continue;
                }
                let nb = sizes[b] as f64;
                let cost = nb / (nb + 1.0) * squared_distance(points[i], cb);
                if cost < removal - 1e-12 && best.is_none_or(|(_, c)| cost < c) {
                    best = Some((b, cost));
                }
            }
            if let Some((b, _)) = best {
                let x = points[i];
                let (na_f, nb_f) = (sizes[a] as f64, sizes[b] as f64);
                for d in 0..x.len() {
                    centroids[a][d] = (centroids[a][d] * na_f - x[d]) / (na_f - 1.0);
                    centroids[b][d] = (centroids[b][d] * nb_f + x[d]) / (nb_f + 1.0);
                }
                sizes[a] -= 1;
                sizes[b] += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Seeded K-Means with k-means++ initialisation, Lloyd iterations and a
/// final single-point refinement pass. `k` shrinks to the number of
/// distinct points.
pub fn kmeans_fit<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> Result<ClusterAssignment, ClusterError> {
    if k == 0 {
        return Err(ClusterError::Precondition("k must be at least 1".into()));
    }
    let dim = validate(points)?;
    let pts: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    let distinct = distinct_indices(&pts);
    let k = k.min(distinct.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&pts, &distinct, k, &mut rng);
    let mut labels = vec![0usize; pts.len()];
    for _ in 0..MAX_ITERATIONS {
        for (i, p) in pts.iter().enumerate() {
            labels[i] = nearest(p, &centroids).0;
        }
        let mut next = centroids.clone();
        for (j, c) in next.iter_mut().enumerate() {
            if labels.contains(&j) {
                *c = mean_of(&pts, (0..pts.len()).filter(|&i| labels[i] == j), dim);
            }
        }
        for j in 0..k {
            if !labels.contains(&j) {
                // Reseed from the point farthest from its own centroid.
                let far = (0..pts.len())
                    .filter(|&i| labels.iter().filter(|&&l| l == labels[i]).count() > 1)
                    .map(|i| (i, squared_distance(pts[i], &next[labels[i]])))
                    .fold(None::<(usize, f64)>, |acc, (i, d)| match acc {
                        Some((_, bd)) if bd >= d => acc,
                        _ => Some((i, d)),
                    });
                if let Some((i, _)) = far {
                    labels[i] = j;
                    next[j] = pts[i].to_vec();
                }
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift <= TOLERANCE {
            break;
        }
    }
    for (i, p) in pts.iter().enumerate() {
        labels[i] = nearest(p, &centroids).0;
    }
    // Any cluster emptied by the final assignment takes the farthest point
    // of a cluster with at least two members.
    for j in 0..k {
        if !labels.contains(&j) {
            let donors = centroids_of(&pts, &labels, k, dim);
            let far = (0..pts.len())
                .filter(|&i| labels.iter().filter(|&&l| l == labels[i]).count() > 1)
                .max_by(|&x, &y| {
                    squared_distance(pts[x], &donors[labels[x]])
                        .total_cmp(&squared_distance(pts[y], &donors[labels[y]]))
                        .then(y.cmp(&x))
                });
            if let Some(i) = far {
                labels[i] = j;
            }
        }
    }
    let mut centroids = centroids_of(&pts, &labels, k, dim);
    refine_single_moves(&pts, &mut labels, &mut centroids);
    let centroids = centroids_of(&pts, &labels, k, dim);
    let inertia = inertia_of(&pts, &labels, &centroids);
    Ok(ClusterAssignment { labels, centroids, inertia, k_effective: k })
}

/// `L_j = (mean score of cluster j - 1) / 4`, clamped to `[1e-6, 1]`.
pub fn compute_likelihoods(assignment: &ClusterAssignment, scores: &[f64]) -> Result<Vec<f64>, ClusterError> {
    if scores.len() != assignment.labels.len() {
        return Err(ClusterError::Precondition(format!(
            "{} scores for {} points",
            scores.len(),
            assignment.labels.len()
        )));
    }
    (0..assignment.k_effective)
        .map(|j| {
            let members: Vec<f64> =
                assignment.labels.iter().zip(scores).filter(|(l, _)| **l == j).map(|(_, s)| *s).collect();
            if members.is_empty() {
                return Err(ClusterError::EmptyCluster(j));
            }
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            Ok(((mean - 1.0) / 4.0).clamp(LIKELIHOOD_FLOOR, 1.0))
        })
        .collect()
}

pub fn uniform_prior(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Bayes' rule over clusters.
pub fn bayesian_update(priors: &[f64], likelihoods: &[f64]) -> Result<ClusterPosterior, ClusterError> {
    if priors.is_empty() || priors.len() != likelihoods.len() {
        return Err(ClusterError::Precondition(format!(
            "{} priors for {} likelihoods",
            priors.len(),
            likelihoods.len()
        )));
    }
    if priors.iter().any(|p| !p.is_finite() || *p < 0.0)
        || (priors.iter().sum::<f64>() - 1.0).abs() > NORMALIZATION_TOL
    {
        return Err(ClusterError::Precondition("priors must be non-negative and sum to 1".into()));
    }
    if likelihoods.iter().any(|l| !l.is_finite() || *l < 0.0) || likelihoods.iter().all(|l| *l == 0.0) {
        return Err(ClusterError::Precondition("likelihoods must be non-negative and not all zero".into()));
    }
    let joint: Vec<f64> = priors.iter().zip(likelihoods).map(|(p, l)| l * p).collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(ClusterError::DegenerateEvidence);
    }
    let posteriors: Vec<f64> = joint.iter().map(|j| j / evidence).collect();
    let best = argmax(&posteriors);
    Ok(ClusterPosterior { priors: priors.to_vec(), likelihoods: likelihoods.to_vec(), posteriors, best })
}

/// Priors for a new clustering from the previous round's posteriors. Each
/// new cluster inherits from its nearest previous centroid, sharing that
/// mass equally with other clusters that chose the same one; mass of
/// previous clusters nobody chose is spread uniformly.
pub fn carry_prior_forward(
    previous: &ClusterPosterior,
    previous_centroids: &[Vec<f64>],
    new_centroids: &[Vec<f64>],
) -> Result<Vec<f64>, ClusterError> {
    if new_centroids.is_empty() {
        return Err(ClusterError::Precondition("no new centroids".into()));
    }
    if previous_centroids.len() != previous.posteriors.len() {
        return Err(ClusterError::Precondition("one centroid per previous cluster required".into()));
    }
    let dim = validate(new_centroids)?;
    if let Some(c) = previous_centroids.iter().find(|c| c.len() != dim) {
        return Err(ClusterError::DimMismatch { expected: dim, found: c.len() });
    }
    let parents: Vec<usize> = new_centroids.iter().map(|c| nearest(c, previous_centroids).0).collect();
    let mut shares = vec![0usize; previous_centroids.len()];
    for &p in &parents {
        shares[p] += 1;
    }
    let orphaned: f64 =
        previous.posteriors.iter().zip(&shares).filter(|(_, s)| **s == 0).map(|(m, _)| m).sum();
    let k = new_centroids.len() as f64;
    let mut priors: Vec<f64> = parents
        .iter()
        .map(|&p| previous.posteriors[p] / shares[p] as f64 + orphaned / k)
        .collect();
    let total: f64 = priors.iter().sum();
    if total <= 0.0 {
        return Ok(uniform_prior(new_centroids.len()));
    }
    for p in &mut priors {
        *p /= total;
    }
    Ok(priors)
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        table[*x][*y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(p: &[f64], l: &[f64]) -> Vec<f64> {
        let z: f64 = p.iter().zip(l).map(|(a, b)| a * b).sum();
        p.iter().zip(l).map(|(a, b)| a * b / z).collect()
    }

    #[test]
    fn identical_points_collapse() {
        let pts = vec![vec![1.0, 2.0]; 5];
        let a = kmeans_fit(&pts, 5, 0).unwrap();
        assert_eq!(a.k_effective, 1);
        assert_eq!(a.inertia, 0.0);
        assert_eq!(a.labels, vec![0; 5]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 3.0]];
        let a = kmeans_fit(&pts, 1, 3).unwrap();
        assert_eq!(a.centroids, vec![vec![2.0, 1.0]]);
        let total: f64 = pts.iter().map(|p| squared_distance(p, &[2.0, 1.0])).sum();
        assert!((a.inertia - total).abs() < 1e-12);
    }

    /// Minimum SSE over every 2-partition, by enumeration.
    fn best_two_partition(pts: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let n = pts.len();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let mut best = (vec![], f64::INFINITY);
        for mask in 1..(1u32 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let c = centroids_of(&refs, &labels, 2, pts[0].len());
            let sse = inertia_of(&refs, &labels, &c);
            if sse < best.1 {
                best = (labels, sse);
            }
        }
        best
    }

    #[test]
    fn planted_blobs_recovered() {
        let pts = vec![
            vec![0.0, 0.1],
            vec![0.2, -0.1],
            vec![-0.1, 0.0],
            vec![10.0, 10.1],
            vec![10.2, 9.9],
            vec![9.9, 10.0],
        ];
        let (planted, sse) = best_two_partition(&pts);
        let a = kmeans_fit(&pts, 2, 11).unwrap();
        assert_eq!(adjusted_rand_index(&a.labels, &planted), 1.0);
        assert!((a.inertia - sse).abs() < 1e-9);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let pts = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(matches!(kmeans_fit(&pts, 2, 0), Err(ClusterError::DimMismatch { .. })));
    }

    #[test]
    fn likelihood_examples() {
        let a = ClusterAssignment { labels: vec![0, 0, 1, 1], centroids: vec![], inertia: 0.0, k_effective: 2 };
        assert_eq!(compute_likelihoods(&a, &[5.0, 5.0, 3.0, 3.0]).unwrap(), vec![1.0, 0.5]);
        assert_eq!(compute_likelihoods(&a, &[1.0; 4]).unwrap(), vec![LIKELIHOOD_FLOOR; 2]);
        assert_eq!(compute_likelihoods(&a, &[5.0; 4]).unwrap(), vec![1.0; 2]);
        let empty = ClusterAssignment { k_effective: 3, ..a };
        assert_eq!(compute_likelihoods(&empty, &[5.0; 4]), Err(ClusterError::EmptyCluster(2)));
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(uniform_prior(5), vec![0.2; 5]);
        let u = bayesian_update(&uniform_prior(4), &[0.3; 4]).unwrap();
        assert_eq!(u.best, 0);
        for p in &u.posteriors {
            assert!((p - 0.25).abs() < 1e-12);
        }
        let post = bayesian_update(&[0.6, 0.2, 0.2], &[0.1, 0.4, 0.5]).unwrap();
        let expected = [0.25, 1.0 / 3.0, 5.0 / 12.0];
        for (p, e) in post.posteriors.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        assert_eq!(post.best, 2);
        assert!(bayesian_update(&[0.5, 0.6], &[0.1, 0.1]).is_err());
    }

    #[test]
    fn prior_carryover_examples() {
        let prev = bayesian_update(&[0.5, 0.5], &[0.4, 0.6]).unwrap();
        let old = vec![vec![0.0, 0.0], vec![10.0, 0.0]];
        assert_eq!(carry_prior_forward(&prev, &old, &old).unwrap(), prev.posteriors);
        assert_eq!(carry_prior_forward(&prev, &old, &[vec![3.0, 3.0]]).unwrap(), vec![1.0]);
        let both_near_second = vec![vec![9.0, 0.0], vec![11.0, 0.0]];
        let p = carry_prior_forward(&prev, &old, &both_near_second).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn posterior_normalized_and_matches_oracle(
            (p, l) in (1usize..8).prop_flat_map(|k| (simplex(k), prop::collection::vec(1e-6f64..1.0, k)))
        ) {
            let post = bayesian_update(&p, &l).unwrap();
            prop_assert!((post.posteriors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in post.posteriors.iter().zip(oracle(&p, &l)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn scaling_likelihoods_keeps_best(
            (p, l) in (1usize..8).prop_flat_map(|k| (simplex(k), prop::collection::vec(1e-6f64..1.0, k))),
            c in 0.01f64..100.0,
        ) {
            let a = bayesian_update(&p, &l).unwrap();
            let scaled: Vec<f64> = l.iter().map(|x| x * c).collect();
            let b = bayesian_update(&p, &scaled).unwrap();
            prop_assert_eq!(a.best, b.best);
            for (x, y) in a.posteriors.iter().zip(&b.posteriors) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn raising_a_cluster_never_lowers_its_posterior(
            scores in prop::collection::vec(1.0f64..5.0, 6),
            bump in 0.0f64..2.0,
        ) {
            let a = ClusterAssignment { labels: vec![0, 0, 1, 1, 2, 2], centroids: vec![], inertia: 0.0, k_effective: 3 };
            let before = bayesian_update(&uniform_prior(3), &compute_likelihoods(&a, &scores).unwrap()).unwrap();
            let raised: Vec<f64> = scores.iter().enumerate()
                .map(|(i, s)| if i < 2 { (s + bump).min(5.0) } else { *s }).collect();
            let after = bayesian_update(&uniform_prior(3), &compute_likelihoods(&a, &raised).unwrap()).unwrap();
            prop_assert!(after.posteriors[0] >= before.posteriors[0] - 1e-12);
        }

        #[test]
        fn kmeans_is_deterministic_and_locally_optimal(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..25),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let a = kmeans_fit(&pts, k, seed).unwrap();
            prop_assert_eq!(&a, &kmeans_fit(&pts, k, seed).unwrap());
            prop_assert!(a.labels.iter().all(|&l| l < a.k_effective));
            prop_assert!(a.sizes().iter().all(|&s| s > 0));
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            for i in 0..pts.len() {
                for b in 0..a.k_effective {
                    let mut labels = a.labels.clone();
                    if labels[i] == b || a.sizes()[labels[i]] == 1 {
                        continue;
                    }
                    labels[i] = b;
                    let c = centroids_of(&refs, &labels, a.k_effective, 3);
                    prop_assert!(inertia_of(&refs, &labels, &c) >= a.inertia - 1e-9);
                }
            }
        }
    }
}
