use rand::Rng;

use crate::{Error, Result};

/// Number of arrangements of `m` source and `m` target segments,
/// `(2m)! / (m!)^2`.
pub fn permutation_count(m: usize) -> u64 {
    binomial(2 * m as u64, m as u64)
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    // exact at every step: the running product is always C(n - k + i, i)
    (1..=k).fold(1u64, |acc, i| acc * (n - k + i) / i)
}

/// Domain order of shuffled segments (`0` source, `1` target) and its class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PermutationLabel {
    pub domain_seq: Vec<u8>,
    pub class_index: usize,
}

impl PermutationLabel {
    pub fn from_sequence(domain_seq: Vec<u8>) -> Result<Self> {
        let class_index = encode_permutation(&domain_seq)?;
        Ok(PermutationLabel {
            domain_seq,
            class_index,
        })
    }

    pub fn from_index(class_index: usize, m: usize) -> Result<Self> {
        let domain_seq = decode_permutation(class_index, m)?;
        Ok(PermutationLabel {
            domain_seq,
            class_index,
        })
    }
}

/// Lexicographic rank of a balanced binary sequence among all sequences of
/// the same length with equally many zeros and ones.
pub fn encode_permutation(seq: &[u8]) -> Result<usize> {
    if seq.is_empty() || !seq.len().is_multiple_of(2) || seq.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArgument(format!(
            "{seq:?} is not an even-length binary sequence"
        )));
    }
    let mut zeros = seq.iter().filter(|&&b| b == 0).count() as u64;
    let mut ones = seq.len() as u64 - zeros;
    if zeros != ones {
        return Err(Error::InvalidArgument(format!("{seq:?} is not balanced")));
    }
    let mut rank = 0u64;
    for &bit in seq {
        if bit == 1 {
            if zeros > 0 {
                // every completion with a zero here sorts first
                rank += binomial(zeros - 1 + ones, zeros - 1);
            }
            ones -= 1;
        } else {
            zeros -= 1;
        }
    }
    Ok(rank as usize)
}

/// Inverse of [`encode_permutation`] for sequences of length `2m`.
pub fn decode_permutation(index: usize, m: usize) -> Result<Vec<u8>> {
    if m == 0 {
        return Err(Error::InvalidArgument("segment count must be positive".into()));
    }
    let total = permutation_count(m);
    let mut rank = index as u64;
    if rank >= total {
        return Err(Error::InvalidArgument(format!(
            "permutation index {index} out of range for {total} classes"
        )));
    }
    let (mut zeros, mut ones) = (m as u64, m as u64);
    let mut seq = Vec::with_capacity(2 * m);
    while zeros + ones > 0 {
        let with_zero = if zeros > 0 {
            binomial(zeros - 1 + ones, zeros - 1)
        } else {
            0
        };
        if rank < with_zero {
            seq.push(0);
            zeros -= 1;
        } else {
            rank -= with_zero;
            seq.push(1);
            ones -= 1;
        }
    }
    Ok(seq)
}

/// Interleaves `source` and `target` in a uniformly random order that keeps
/// the relative order within each domain, returning the arrangement and its
/// permutation label.
pub fn shuffle_and_label<T: Clone, R: Rng + ?Sized>(
    source: &[T],
    target: &[T],
    rng: &mut R,
) -> Result<(Vec<T>, PermutationLabel)> {
    if source.len() != target.len() || source.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equally many source and target segments, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    let m = source.len();
    let index = rng.random_range(0..permutation_count(m)) as usize;
    let label = PermutationLabel::from_index(index, m)?;
    Ok((interleave(source, target, &label.domain_seq), label))
}

/// Places segments according to `domain_seq`, each domain in original order.
pub fn interleave<T: Clone>(source: &[T], target: &[T], domain_seq: &[u8]) -> Vec<T> {
    let (mut s, mut t) = (source.iter(), target.iter());
    domain_seq
        .iter()
        .filter_map(|&d| if d == 0 { s.next() } else { t.next() })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: all balanced strings in lexicographic order.
    fn enumerate(m: usize) -> Vec<Vec<u8>> {
        let n = 2 * m;
        (0u32..(1 << n))
            .map(|bits| (0..n).map(|i| ((bits >> (n - 1 - i)) & 1) as u8).collect::<Vec<u8>>())
            .filter(|s| s.iter().filter(|&&b| b == 1).count() == m)
            .collect()
    }

    #[test]
    fn counts() {
        assert_eq!(permutation_count(1), 2);
        assert_eq!(permutation_count(2), 6);
        assert_eq!(permutation_count(3), 20);
        assert_eq!(permutation_count(4), 70);
        assert_eq!(permutation_count(16), 601_080_390);
    }

    #[test]
    fn worked_examples() {
        assert_eq!(encode_permutation(&[0, 0, 1, 1]).unwrap(), 0);
        assert_eq!(encode_permutation(&[0, 1, 1, 0]).unwrap(), 2);
        assert_eq!(encode_permutation(&[1, 1, 0, 0]).unwrap(), 5);
        assert_eq!(encode_permutation(&[0, 1]).unwrap(), 0);
        assert_eq!(encode_permutation(&[1, 0]).unwrap(), 1);
    }

    #[test]
    fn bijection_matches_enumeration() {
        for m in 1..=4 {
            let all = enumerate(m);
            assert_eq!(all.len() as u64, permutation_count(m));
            for (i, s) in all.iter().enumerate() {
                assert_eq!(encode_permutation(s).unwrap(), i);
                assert_eq!(&decode_permutation(i, m).unwrap(), s);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(encode_permutation(&[0, 0, 0, 1]).is_err());
        assert!(encode_permutation(&[0, 2]).is_err());
        assert!(encode_permutation(&[]).is_err());
        assert!(decode_permutation(6, 2).is_err());
        assert!(decode_permutation(0, 0).is_err());
    }

    #[test]
    fn interleave_keeps_domain_order() {
        let out = interleave(&["sa", "sb"], &["ta", "tb"], &[0, 1, 1, 0]);
        assert_eq!(out, vec!["sa", "ta", "tb", "sb"]);
    }

    #[test]
    fn shuffle_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 6];
        let draws = 10_000;
        for _ in 0..draws {
            let (arr, label) = shuffle_and_label(&[0, 1], &[10, 11], &mut rng).unwrap();
            counts[label.class_index] += 1;
            let src: Vec<_> = arr.iter().filter(|&&v| v < 10).collect();
            assert_eq!(src, vec![&0, &1]);
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.02, "{counts:?}");
        }
        assert!(shuffle_and_label(&[1], &[1, 2], &mut rng).is_err());
    }
}
