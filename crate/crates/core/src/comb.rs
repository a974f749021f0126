//! Enumeration and sampling of fixed-weight binary treatment vectors.
//!
//! A stratum `(n, s)` is the set of all length-`n` binary vectors with
//! exactly `s` ones; it has `C(n, s)` members. Vectors are addressed by a
//! colexicographic rank in `[0, C(n, s))` so a stratum never has to be
//! materialized: exhaustive mode walks every rank, sub-sampled mode draws
//! `k` distinct ranks without replacement (Floyd's algorithm) and unranks
//! only those.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};

/// Largest supported cluster size. `C(120, 60)` still fits in `u128` with
/// headroom for the unranking intermediates.
pub const MAX_SIZE: usize = 120;

/// Exact binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> Result<u128> {
    if n > MAX_SIZE {
        return Err(Error::config(alloc::format!(
            "cluster size {n} exceeds the supported maximum {MAX_SIZE}"
        )));
    }
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        // c stays an exact binomial after each divide.
        c = c * (n - k + i) as u128 / i as u128;
    }
    Ok(c)
}

/// `C(n, k)` as f64 (exact integer up to 2^53, correctly rounded beyond).
pub fn binomial_f64(n: usize, k: usize) -> Result<f64> {
    Ok(binomial(n, k)? as f64)
}

/// Positions of the ones for the colex rank `r` within stratum `(n, s)`,
/// returned in ascending order.
pub fn unrank(n: usize, s: usize, mut r: u128) -> Result<Vec<u32>> {
    debug_assert!(r < binomial(n, s)?);
    let mut out = Vec::with_capacity(s);
    let mut c = n;
    for i in (1..=s).rev() {
        // Largest c with C(c, i) <= r.
        loop {
            c -= 1;
            if binomial(c, i)? <= r {
                break;
            }
        }
        r -= binomial(c, i)?;
        out.push(c as u32);
    }
    out.reverse();
    Ok(out)
}

/// Draws `k` distinct ranks from `[0, size)` without replacement, returned
/// sorted ascending. When `k >= size` this is simply `0..size`.
pub fn sample_ranks<R: Rng>(size: u128, k: usize, rng: &mut R) -> Vec<u128> {
    if (k as u128) >= size {
        return (0..size).collect();
    }
    // Floyd's algorithm: uniform over k-subsets.
    let mut chosen: Vec<u128> = Vec::with_capacity(k);
    for j in (size - k as u128)..size {
        let t = rng.gen_range(0..=j);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Iterator over every vector of a stratum in colex rank order.
pub fn enumerate_stratum(n: usize, s: usize) -> Result<impl Iterator<Item = Vec<u32>>> {
    let total = binomial(n, s)?;
    Ok((0..total).map(move |r| unrank(n, s, r).expect("rank within stratum")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(0, 0).unwrap(), 1);
        assert_eq!(binomial(5, 2).unwrap(), 10);
        assert_eq!(binomial(40, 20).unwrap(), 137_846_528_820);
        assert_eq!(binomial(60, 30).unwrap(), 118_264_581_564_861_424);
        assert_eq!(binomial(3, 7).unwrap(), 0);
        assert!(binomial(121, 2).is_err());
    }

    #[test]
    fn unrank_is_a_bijection() {
        let n = 7;
        let s = 3;
        let total = binomial(n, s).unwrap();
        let mut seen = BTreeSet::new();
        for r in 0..total {
            let v = unrank(n, s, r).unwrap();
            assert_eq!(v.len(), s);
            assert!(v.windows(2).all(|w| w[0] < w[1]));
            assert!(v.iter().all(|&i| (i as usize) < n));
            seen.insert(v);
        }
        assert_eq!(seen.len() as u128, total);
    }

    #[test]
    fn unrank_edge_strata() {
        assert_eq!(unrank(5, 0, 0).unwrap(), Vec::<u32>::new());
        assert_eq!(unrank(5, 5, 0).unwrap(), alloc::vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sample_ranks_distinct_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let size = binomial(40, 17).unwrap();
        let ranks = sample_ranks(size, 25, &mut rng);
        assert_eq!(ranks.len(), 25);
        assert!(ranks.windows(2).all(|w| w[0] < w[1]));
        assert!(ranks.iter().all(|&r| r < size));
    }

    #[test]
    fn sample_ranks_saturates_to_full_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ranks = sample_ranks(6, 10, &mut rng);
        assert_eq!(ranks, alloc::vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn sampling_is_close_to_uniform() {
        // Each of the C(5,2)=10 vectors should appear with probability k/10.
        let size = 10u128;
        let mut counts = [0u32; 10];
        for seed in 0..4000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for r in sample_ranks(size, 3, &mut rng) {
                counts[r as usize] += 1;
            }
        }
        for &c in &counts {
            let p = f64::from(c) / 4000.0;
            assert!((p - 0.3).abs() < 0.03, "empirical inclusion {p}");
        }
    }
}
