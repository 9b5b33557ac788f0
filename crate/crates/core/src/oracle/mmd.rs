//! Unbiased squared maximum mean discrepancy with an RBF kernel, plus a
//! permutation null for two-sample testing.

use rand::seq::SliceRandom;

use crate::par;
use crate::rng::stream_rng;

const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Result of a permutation two-sample test.
#[derive(Clone, Copy, Debug)]
pub struct MmdTest {
    pub statistic: f64,
    /// 99th percentile of the permutation null.
    pub threshold: f64,
}

impl MmdTest {
    pub fn rejects(&self) -> bool {
        self.statistic > self.threshold
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance of the pooled set, floored for
/// degenerate (all-identical) samples.
fn median_bandwidth(sq: &[f64], n: usize) -> f64 {
    let mut dists: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| sq[i * n + j].sqrt())
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    median.max(BANDWIDTH_FLOOR)
}

struct PooledKernel {
    k: Vec<f64>,
    n: usize,
}

impl PooledKernel {
    fn new(pool: &[&[f64]]) -> Self {
        let n = pool.len();
        let mut sq = vec![0.0; n * n];
        let rows = par::map_indexed(n, |i| {
            let mut row = vec![0.0; n];
            for j in 0..n {
                row[j] = sq_dist(pool[i], pool[j]);
            }
            row
        });
        for (i, row) in rows.into_iter().enumerate() {
            sq[i * n..(i + 1) * n].copy_from_slice(&row);
        }
        let h = median_bandwidth(&sq, n);
        let scale = -1.0 / (2.0 * h * h);
        for v in sq.iter_mut() {
            *v = (*v * scale).exp();
        }
        Self { k: sq, n }
    }

    /// Unbiased MMD^2 for the partition (first `m` indices of `order` vs
    /// the rest).
    fn statistic(&self, order: &[usize], m: usize) -> f64 {
        let n = self.n - m;
        let (xs, ys) = order.split_at(m);
        let mut kxx = 0.0;
        let mut kyy = 0.0;
        let mut kxy = 0.0;
        for (a, &i) in xs.iter().enumerate() {
            for &j in &xs[a + 1..] {
                kxx += self.k[i * self.n + j];
            }
        }
        for (a, &i) in ys.iter().enumerate() {
            for &j in &ys[a + 1..] {
                kyy += self.k[i * self.n + j];
            }
        }
        for &i in xs {
            for &j in ys {
                kxy += self.k[i * self.n + j];
            }
        }
        2.0 * kxx / (m as f64 * (m as f64 - 1.0)) + 2.0 * kyy / (n as f64 * (n as f64 - 1.0))
            - 2.0 * kxy / (m as f64 * n as f64)
    }
}

/// Unbiased squared-MMD estimate between two sample sets. Bandwidth is the
/// median pairwise distance of the pooled set. Can be negative for close
/// distributions; that is the unbiased estimator, not a bug.
pub fn mmd(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let pool: Vec<&[f64]> = xs.iter().chain(ys.iter()).map(|v| v.as_slice()).collect();
    let kernel = PooledKernel::new(&pool);
    let order: Vec<usize> = (0..pool.len()).collect();
    kernel.statistic(&order, xs.len())
}

/// MMD statistic plus the 99th-percentile threshold of its permutation
/// null (`n_perms` label shuffles of the pooled set, seeded).
pub fn permutation_test(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    n_perms: usize,
    seed: u64,
) -> MmdTest {
    assert!(xs.len() >= 2 && ys.len() >= 2);
    let pool: Vec<&[f64]> = xs.iter().chain(ys.iter()).map(|v| v.as_slice()).collect();
    let kernel = PooledKernel::new(&pool);
    let m = xs.len();
    let order: Vec<usize> = (0..pool.len()).collect();
    let statistic = kernel.statistic(&order, m);

    let mut null = par::map_indexed(n_perms, |p| {
        let mut rng = stream_rng(seed, p as u64);
        let mut shuffled = order.clone();
        shuffled.shuffle(&mut rng);
        kernel.statistic(&shuffled, m)
    });
    null.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.99 * n_perms as f64).ceil() as usize).clamp(1, n_perms) - 1;
    MmdTest { statistic, threshold: null[idx] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn gaussian_set(n: usize, mean: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seed_rng(seed);
        (0..n).map(|_| vec![mean + rng::normal(&mut r)]).collect()
    }

    #[test]
    fn identical_sets_are_nonpositive() {
        let xs = gaussian_set(60, 0.0, 1);
        let stat = mmd(&xs, &xs);
        assert!(stat <= 1e-12, "identical-set unbiased MMD {stat}");
    }

    #[test]
    fn same_distribution_stays_below_threshold() {
        let xs = gaussian_set(150, 0.0, 2);
        let ys = gaussian_set(150, 0.0, 3);
        let test = permutation_test(&xs, &ys, 200, 42);
        assert!(!test.rejects(), "stat {} thr {}", test.statistic, test.threshold);
    }

    #[test]
    fn separated_means_reject() {
        let xs = gaussian_set(500, 0.0, 4);
        let ys = gaussian_set(500, 3.0, 5);
        let test = permutation_test(&xs, &ys, 200, 43);
        assert!(test.rejects(), "stat {} thr {}", test.statistic, test.threshold);
    }

    #[test]
    fn degenerate_samples_hit_bandwidth_floor() {
        let xs = vec![vec![1.0, 1.0]; 50];
        let ys = vec![vec![1.0, 1.0]; 50];
        // All distances are zero: the floor keeps the kernel finite.
        let stat = mmd(&xs, &ys);
        assert!(stat.is_finite());
        assert!(stat.abs() < 1e-9);
    }
}
