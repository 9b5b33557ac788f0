//! The prefix / masked-middle / suffix masking scheme.

use rand::Rng;

/// A contiguous masked span of a speech token sequence. Full masks cover
/// the entire sequence (start 0, len == n_speech); every mask has length
/// at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub start: usize,
    pub len: usize,
    pub n_speech: usize,
}

impl MaskSpec {
    pub fn full(n_speech: usize) -> Self {
        assert!(n_speech >= 1);
        Self { start: 0, len: n_speech, n_speech }
    }

    pub fn middle(start: usize, len: usize, n_speech: usize) -> Self {
        assert!(len >= 1, "mask length must be at least 1");
        assert!(start + len <= n_speech, "mask {start}+{len} exceeds {n_speech}");
        Self { start, len, n_speech }
    }

    pub fn is_full(&self) -> bool {
        self.start == 0 && self.len == self.n_speech
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, pos: usize) -> bool {
        (self.start..self.end()).contains(&pos)
    }
}

/// Probability of masking the whole sequence.
pub const FULL_MASK_PROB: f64 = 0.10;

/// With 10% probability mask everything; otherwise draw the middle length
/// uniformly from 1..=n_speech, then the start uniformly over the valid
/// positions.
pub fn sample_mask(n_speech: usize, rng: &mut impl Rng) -> MaskSpec {
    assert!(n_speech >= 1);
    if rng.gen::<f64>() < FULL_MASK_PROB {
        return MaskSpec::full(n_speech);
    }
    let len = rng.gen_range(1..=n_speech);
    let start = rng.gen_range(0..=n_speech - len);
    MaskSpec { start, len, n_speech }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    #[test]
    fn length_one_sequences_are_always_fully_masked() {
        let mut r = seed_rng(1);
        for _ in 0..200 {
            let m = sample_mask(1, &mut r);
            assert_eq!(m, MaskSpec::full(1));
        }
    }

    #[test]
    fn full_mask_rate_matches_spec() {
        // The middle branch also covers everything when it draws
        // len == n_speech (probability 0.9/n), so the observable
        // full-coverage rate is 0.1 + 0.9/n.
        let mut r = seed_rng(2);
        let n = 100_000;
        let mut full = 0usize;
        for _ in 0..n {
            if sample_mask(40, &mut r).is_full() {
                full += 1;
            }
        }
        let rate = full as f64 / n as f64;
        let expected = 0.1 + 0.9 / 40.0;
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!(
            (rate - expected).abs() < 4.0 * sigma,
            "full-mask rate {rate}, expected {expected}"
        );
    }

    #[test]
    fn start_is_uniform_given_length() {
        let mut r = seed_rng(3);
        let n_speech = 12;
        let want_len = 5;
        let positions = n_speech - want_len + 1; // 8 possible starts
        let mut counts = vec![0usize; positions];
        let mut total = 0usize;
        for _ in 0..400_000 {
            let m = sample_mask(n_speech, &mut r);
            if m.len == want_len {
                counts[m.start] += 1;
                total += 1;
            }
        }
        let expected = total as f64 / positions as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // df = 7, p = 0.01 threshold 18.48.
        assert!(chi2 < 18.48, "chi2 {chi2} counts {counts:?}");
    }
}
