//! Lloyd k-means with k-means++ seeding. Deterministic for a given RNG
//! stream; ties in assignment and seeding resolve to the lowest index.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vecmath::squared_distance;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyClusterPolicy {
    /// Abort the run; callers retry with a fresh stream.
    Fail,
    /// Reseed the empty cluster at the point farthest from its centroid.
    ReseedFarthest,
}

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Relative inertia improvement below which iteration stops.
    pub tol: f64,
    pub restarts: usize,
    pub empty_policy: EmptyClusterPolicy,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { max_iter: 300, tol: 1e-6, restarts: 1, empty_policy: EmptyClusterPolicy::ReseedFarthest }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub assignments: Vec<u32>,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
}

/// Default-configured k-means on its own stream; see [`kmeans_with`].
pub fn kmeans<T: Scalar>(points: &[Vec<T>], k: usize, seed: u64) -> Result<KMeansResult<T>> {
    let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::EvalKmeans);
    kmeans_with(points, k, &KMeansConfig::default(), &mut rng)
}

/// Runs `cfg.restarts` seeded k-means rounds and keeps the lowest-inertia one.
pub fn kmeans_with<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    cfg: &KMeansConfig,
    rng: &mut impl Rng,
) -> Result<KMeansResult<T>> {
    if points.is_empty() {
        return Err(Error::Parameter("k-means needs at least one point".into()));
    }
    if k < 1 {
        return Err(Error::Parameter("k-means needs k >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::Parameter(format!("k = {k} exceeds the number of points {}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points have mixed dimensions".into()));
    }
    if cfg.restarts < 1 {
        return Err(Error::Parameter("k-means needs at least one restart".into()));
    }
    let mut best: Option<KMeansResult<T>> = None;
    for _ in 0..cfg.restarts {
        let run = lloyd_once(points, k, cfg, rng)?;
        let better = match &best {
            None => true,
            Some(b) => run.inertia.as_f64() < b.inertia.as_f64(),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_once<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    cfg: &KMeansConfig,
    rng: &mut impl Rng,
) -> Result<KMeansResult<T>> {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![u32::MAX; n];
    let mut prev_inertia = f64::INFINITY;

    for _iter in 0..cfg.max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = nearest_centroid(p, &centroids);
            if assignments[i] != c as u32 {
                assignments[i] = c as u32;
                changed = true;
            }
        }
        fix_empty_clusters(points, &mut assignments, &centroids, k, cfg.empty_policy)?;
        // Update step.
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i] as usize;
            counts[c] += 1;
            for j in 0..dim {
                sums[c][j] += p[j];
            }
        }
        for c in 0..k {
            debug_assert!(counts[c] > 0);
            let inv = T::one() / T::from_usize_near(counts[c]);
            for j in 0..dim {
                centroids[c][j] = sums[c][j] * inv;
            }
        }
        let inertia = total_inertia(points, &assignments, &centroids).as_f64();
        if !changed {
            break;
        }
        if prev_inertia.is_finite() {
            let drop = prev_inertia - inertia;
            if drop.abs() <= cfg.tol * prev_inertia.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        prev_inertia = inertia;
    }
    let inertia = total_inertia(points, &assignments, &centroids);
    Ok(KMeansResult { assignments, centroids, inertia })
}

fn nearest_centroid<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> usize {
    let mut best = 0usize;
    let mut best_d = squared_distance(p, &centroids[0]);
    for (c, cent) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(p, cent);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn total_inertia<T: Scalar>(points: &[Vec<T>], assignments: &[u32], centroids: &[Vec<T>]) -> T {
    let mut acc = T::zero();
    for (i, p) in points.iter().enumerate() {
        acc += squared_distance(p, &centroids[assignments[i] as usize]);
    }
    acc
}

fn plus_plus_init<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut impl Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids: Vec<Vec<T>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<T> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: T = dist2.iter().copied().sum();
        let pick = if total > T::zero() {
            let mut target = T::uniform_01(rng) * total;
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target = target - d;
            }
            chosen
        } else {
            // All mass at the chosen centers (duplicate points): fall back to a
            // uniform draw, keeping the run deterministic.
            rng.gen_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, centroids.last().unwrap());
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }
    centroids
}

fn fix_empty_clusters<T: Scalar>(
    points: &[Vec<T>],
    assignments: &mut [u32],
    centroids: &[Vec<T>],
    k: usize,
    policy: EmptyClusterPolicy,
) -> Result<()> {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a as usize] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        if policy == EmptyClusterPolicy::Fail {
            return Err(Error::EmptyCluster);
        }
        // Move the point farthest from its centroid, skipping singletons so no
        // new empty cluster appears.
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i] as usize;
            if counts[c] <= 1 {
                continue;
            }
            let d = squared_distance(p, &centroids[c]).as_f64();
            if far.map(|(_, fd)| d > fd).unwrap_or(true) {
                far = Some((i, d));
            }
        }
        let (idx, _) = far.ok_or(Error::EmptyCluster)?;
        counts[assignments[idx] as usize] -= 1;
        assignments[idx] = empty as u32;
        counts[empty] += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0f64, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let r = kmeans(&pts, 1, 0).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 0]);
        assert!((r.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = vec![vec![0.0f64, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]];
        let r = kmeans(&pts, 4, 3).unwrap();
        assert!(r.inertia.abs() < 1e-15);
        let mut sorted = r.assignments.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn two_tight_pairs_separate() {
        let pts = vec![
            vec![0.0f64, 0.01],
            vec![0.01, 0.0],
            vec![10.0, 10.01],
            vec![10.01, 10.0],
        ];
        let r = kmeans(&pts, 2, 1).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, (i % 5) as f64 * 0.5, (i % 3) as f64 * 2.0])
            .collect();
        let a = kmeans(&pts, 4, 9).unwrap();
        let b = kmeans(&pts, 4, 9).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn identical_points_fail_policy_errors() {
        let pts = vec![vec![1.0f64, 2.0]; 5];
        let cfg = KMeansConfig { empty_policy: EmptyClusterPolicy::Fail, ..KMeansConfig::default() };
        let mut rng = crate::rng::stream_rng(0, crate::rng::Stream::EvalKmeans);
        let err = kmeans_with(&pts, 2, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyCluster));
    }

    #[test]
    fn identical_points_reseed_policy_returns_nonempty_clusters() {
        let pts = vec![vec![1.0f64, 2.0]; 5];
        let r = kmeans(&pts, 2, 0).unwrap();
        let mut counts = [0usize; 2];
        for &a in &r.assignments {
            counts[a as usize] += 1;
        }
        assert!(counts[0] > 0 && counts[1] > 0);
        assert!(r.inertia.abs() < 1e-15);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        let pts = vec![vec![0.0f64], vec![1.0]];
        assert!(kmeans(&pts, 3, 0).is_err());
    }

    #[test]
    fn restarts_never_worsen_inertia() {
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![((i * 37) % 11) as f64, ((i * 17) % 7) as f64])
            .collect();
        let mut rng1 = crate::rng::stream_rng(4, crate::rng::Stream::EvalKmeans);
        let mut rng8 = crate::rng::stream_rng(4, crate::rng::Stream::EvalKmeans);
        let one = kmeans_with(&pts, 3, &KMeansConfig::default(), &mut rng1).unwrap();
        let cfg8 = KMeansConfig { restarts: 8, ..KMeansConfig::default() };
        let eight = kmeans_with(&pts, 3, &cfg8, &mut rng8).unwrap();
        assert!(eight.inertia <= one.inertia + 1e-12);
    }
}
