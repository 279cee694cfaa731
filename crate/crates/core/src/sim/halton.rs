//! Halton low-discrepancy points.

use ndarray::Array2;

/// Radical inverse of `index` in `base`, correctly rounded.
pub fn halton(index: u64, base: u64) -> f64 {
    assert!(base >= 2, "base must be at least 2");
    let (mut num, mut den, mut i) = (0u64, 1u64, index);
    while i > 0 {
        num = num * base + i % base;
        den *= base;
        i /= base;
    }
    num as f64 / den as f64
}

pub fn first_primes(d: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(d);
    let mut c = 2u64;
    while primes.len() < d {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// `n` points in `[-1, 1]^d`; row `i` uses sequence index `i + 1` in the
/// first `d` prime bases.
pub fn halton_points(n: usize, d: usize) -> Array2<f64> {
    let primes = first_primes(d);
    Array2::from_shape_fn((n, d), |(i, j)| 2.0 * halton(i as u64 + 1, primes[j]) - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_terms() {
        assert_eq!([1, 2, 3].map(|i| halton(i, 2)), [0.5, 0.25, 0.75]);
        assert_eq!([1, 2, 3].map(|i| halton(i, 3)), [1.0 / 3.0, 2.0 / 3.0, 1.0 / 9.0]);
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
        assert_eq!(first_primes(40)[39], 173);
    }

    #[test]
    fn points_lie_in_the_open_cube() {
        let p = halton_points(4096, 40);
        assert!(p.iter().all(|&v| v > -1.0 && v < 1.0));
        assert_eq!(p[[0, 0]], 0.0);
    }
}
