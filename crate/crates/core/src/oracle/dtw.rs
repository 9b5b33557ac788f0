//! Dynamic time warping with Euclidean local cost, full band.

/// Classic O(nm) DTW between two sequences of equal-dimension feature
/// vectors. Panics on empty input or dimension mismatch.
pub fn dtw_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "dtw_distance on empty sequence");
    let dim = a[0].len();
    assert!(
        a.iter().chain(b.iter()).all(|v| v.len() == dim),
        "dtw_distance feature dimension mismatch"
    );

    let cost = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };

    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for ai in a {
        curr[0] = f64::INFINITY;
        for (j, bj) in b.iter().enumerate() {
            let c = cost(ai, bj);
            curr[j + 1] = c + prev[j + 1].min(curr[j]).min(prev[j]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Mean pairwise DTW distance over all unordered pairs.
pub fn mean_pairwise_dtw(seqs: &[Vec<Vec<f64>>]) -> f64 {
    assert!(seqs.len() >= 2, "need at least two sequences");
    let pairs: Vec<(usize, usize)> = (0..seqs.len())
        .flat_map(|i| (i + 1..seqs.len()).map(move |j| (i, j)))
        .collect();
    let dists = crate::par::map_slice(&pairs, |&(i, j)| dtw_distance(&seqs[i], &seqs[j]));
    dists.iter().sum::<f64>() / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    /// Exhaustive minimum over all monotone warping paths; exponential, for
    /// tiny sequences only.
    fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        fn go(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize) -> f64 {
            let c = a[i]
                .iter()
                .zip(&b[j])
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            if i == 0 && j == 0 {
                return c;
            }
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(go(a, b, i - 1, j));
            }
            if j > 0 {
                best = best.min(go(a, b, i, j - 1));
            }
            if i > 0 && j > 0 {
                best = best.min(go(a, b, i - 1, j - 1));
            }
            c + best
        }
        go(a, b, a.len() - 1, b.len() - 1)
    }

    #[test]
    fn identical_sequences_cost_zero() {
        let a = seq(&[0.3, 1.2, -0.5, 2.0]);
        assert_eq!(dtw_distance(&a, &a), 0.0);
    }

    #[test]
    fn single_elements() {
        assert!((dtw_distance(&seq(&[1.5]), &seq(&[-0.5])) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let a = seq(&[0.0, 0.0, 1.0]);
        let b = seq(&[0.0, 1.0]);
        let got = dtw_distance(&a, &b);
        let want = brute_force(&a, &b);
        assert!((got - want).abs() < 1e-12, "dp {got} vs brute {want}");
        assert_eq!(got, 0.0);

        let c = seq(&[0.5, -1.0, 2.0, 0.25]);
        let d = seq(&[0.4, 1.9, 0.3]);
        let got = dtw_distance(&c, &d);
        let want = brute_force(&c, &d);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded_by_padded_cost() {
        let a = seq(&[0.1, 0.9, -0.2]);
        let b = seq(&[0.0, 1.0, 0.5, -0.1, 0.3]);
        assert!((dtw_distance(&a, &b) - dtw_distance(&b, &a)).abs() < 1e-12);

        // Pad the shorter sequence by repeating its last element; that
        // alignment is one valid warping path, so DTW can't exceed it.
        let mut padded: f64 = 0.0;
        for k in 0..b.len() {
            let ai = &a[k.min(a.len() - 1)];
            padded += ai.iter().zip(&b[k]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
        assert!(dtw_distance(&a, &b) <= padded + 1e-12);
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn empty_input_is_rejected() {
        dtw_distance(&[], &seq(&[1.0]));
    }
}
