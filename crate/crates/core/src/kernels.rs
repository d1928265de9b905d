//! Scalar distance kernels shared by quantization, hashing and search.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x - y;
            t * t
        })
        .sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance `||a - b||`.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_l2(a, b).sqrt()
}

/// Angular distance `1 - cos(a, b)`.
///
/// Two zero vectors are at distance 0; exactly one zero vector gives 1.
/// The cosine is clamped to `[-1, 1]` and `a == b` short-circuits to 0 so
/// that `d(x, x) = 0` holds exactly.
pub fn angular(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a == b {
        return 0.0;
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
            1.0 - cos
        }
    }
}

/// Number of differing bits between two equally long packed bit rows.
///
/// Rows of at least [`AVX2_MIN_WORDS`] words use a nibble-lookup AVX2 kernel
/// when available, shorter rows use scalar POPCNT.
#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if a.len() >= AVX2_MIN_WORDS && std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: avx2 was detected at runtime.
            return unsafe { hamming_avx2(a, b) };
        }
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the popcnt feature was detected at runtime.
            return unsafe { hamming_popcnt(a, b) };
        }
    }
    hamming_portable(a, b)
}

/// Below this many words the vector kernel's reduction overhead dominates.
pub const AVX2_MIN_WORDS: usize = 16;

#[inline]
fn hamming_portable(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn hamming_popcnt(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn hamming_avx2(a: &[u64], b: &[u64]) -> u32 {
    use std::arch::x86_64::*;
    let n = a.len().min(b.len());
    let lut = _mm256_setr_epi8(
        0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4, //
        0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3, 3, 4,
    );
    let low = _mm256_set1_epi8(0x0f);
    // per-byte popcount of a ^ b, each lane at most 8
    let count = |i: usize| {
        // SAFETY: callers keep i + 4 <= n, so four words are in bounds.
        let x = unsafe { _mm256_loadu_si256(a.as_ptr().add(i).cast()) };
        let y = unsafe { _mm256_loadu_si256(b.as_ptr().add(i).cast()) };
        let v = _mm256_xor_si256(x, y);
        let lo = _mm256_shuffle_epi8(lut, _mm256_and_si256(v, low));
        let hi = _mm256_shuffle_epi8(lut, _mm256_and_si256(_mm256_srli_epi16(v, 4), low));
        _mm256_add_epi8(lo, hi)
    };
    let zero = _mm256_setzero_si256();
    let mut acc = zero;
    let mut i = 0;
    // four vectors per step: byte lanes reach at most 32 before widening
    while i + 16 <= n {
        let bytes = _mm256_add_epi8(
            _mm256_add_epi8(count(i), count(i + 4)),
            _mm256_add_epi8(count(i + 8), count(i + 12)),
        );
        acc = _mm256_add_epi64(acc, _mm256_sad_epu8(bytes, zero));
        i += 16;
    }
    while i + 4 <= n {
        acc = _mm256_add_epi64(acc, _mm256_sad_epu8(count(i), zero));
        i += 4;
    }
    let mut lanes = [0u64; 4];
    // SAFETY: lanes holds exactly one 256-bit vector.
    unsafe { _mm256_storeu_si256(lanes.as_mut_ptr().cast(), acc) };
    let tail: u32 = a[i..n].iter().zip(&b[i..n]).map(|(x, y)| (x ^ y).count_ones()).sum();
    lanes.iter().sum::<u64>() as u32 + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_pythagorean() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn angular_scale_invariant() {
        let v = [0.3, -1.2, 2.5];
        let w = [0.6, -2.4, 5.0];
        assert!(angular(&v, &w).abs() < 1e-15);
        assert_eq!(angular(&v, &v), 0.0);
    }

    #[test]
    fn angular_zero_vectors() {
        assert_eq!(angular(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(angular(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(angular(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn angular_opposite_is_two() {
        assert_eq!(angular(&[1.0, 0.0], &[-1.0, 0.0]), 2.0);
    }

    #[test]
    fn hamming_matches_portable() {
        let a = [0xdead_beef_u64, u64::MAX, 0];
        let b = [0x0123_4567_u64, 0, 0];
        assert_eq!(hamming(&a, &b), hamming_portable(&a, &b));
        assert_eq!(hamming(&a, &a), 0);
        assert_eq!(hamming(&[u64::MAX], &[0]), 64);
    }

    #[test]
    fn hamming_vector_path_matches_portable() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for len in [16, 17, 19, 64, 95, 2045] {
            let a: Vec<u64> = (0..len).map(|_| rng.random()).collect();
            let b: Vec<u64> = (0..len).map(|_| rng.random()).collect();
            assert_eq!(hamming(&a, &b), hamming_portable(&a, &b), "len {len}");
            let ones = vec![u64::MAX; len];
            assert_eq!(hamming(&ones, &vec![0; len]), 64 * len as u32);
        }
    }
}
