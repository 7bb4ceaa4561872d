//! Shamir secret sharing with Lagrange reconstruction at zero.
//!
//! Summing shared values needs nothing beyond index-wise share addition, so
//! no degree reduction lives here.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::field::{Fp, MODULUS};

/// Evaluation of a sharing polynomial at `index` (never 0, which holds the secret).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Share<const P: u64 = MODULUS> {
    pub index: u32,
    pub value: Fp<P>,
}

impl<const P: u64> Share<P> {
    pub fn new(index: u32, value: Fp<P>) -> Self {
        Share { index, value }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SharingError {
    #[error("invalid threshold t={t} for n={n}: need 1 <= t < n")]
    InvalidThreshold { n: usize, t: usize },
    #[error("participant count {0} does not fit below the field modulus")]
    TooManyParticipants(usize),
    #[error("need at least {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("share index {0} appears more than once")]
    DuplicateIndex(u32),
    #[error("share index 0 is reserved for the secret")]
    ZeroIndex,
    #[error("share vectors cover different index sets")]
    IndexMismatch,
}

/// Splits `secret` into `n` shares at indices `1..=n` of a uniformly random
/// polynomial of degree `t`.
pub fn share_secret<const P: u64, R: RngCore + ?Sized>(
    secret: Fp<P>,
    n: usize,
    t: usize,
    rng: &mut R,
) -> Result<Vec<Share<P>>, SharingError> {
    if t < 1 || t >= n {
        return Err(SharingError::InvalidThreshold { n, t });
    }
    if n as u64 >= P || n > u32::MAX as usize {
        return Err(SharingError::TooManyParticipants(n));
    }
    let mut coeffs = Vec::with_capacity(t + 1);
    coeffs.push(secret);
    coeffs.extend((0..t).map(|_| Fp::random(rng)));

    Ok((1..=n as u32)
        .map(|i| Share::new(i, eval_poly(&coeffs, Fp::new(i as u64))))
        .collect())
}

/// Horner evaluation, coefficients in ascending degree.
pub fn eval_poly<const P: u64>(coeffs: &[Fp<P>], x: Fp<P>) -> Fp<P> {
    coeffs.iter().rev().fold(Fp::ZERO, |acc, &c| acc * x + c)
}

/// Evaluates at `x` the unique polynomial of degree `< points.len()` through
/// `points`. Indices must be distinct and nonzero.
pub fn lagrange_eval<const P: u64>(points: &[Share<P>], x: Fp<P>) -> Result<Fp<P>, SharingError> {
    check_indices(points)?;
    let xs: Vec<Fp<P>> = points.iter().map(|s| Fp::new(s.index as u64)).collect();
    let mut acc = Fp::ZERO;
    for (i, share) in points.iter().enumerate() {
        let mut num = Fp::ONE;
        let mut den = Fp::ONE;
        for (j, &xj) in xs.iter().enumerate() {
            if i != j {
                num *= x - xj;
                den *= xs[i] - xj;
            }
        }
        // Distinct indices below P give a nonzero denominator.
        let den_inv = den.inv().ok_or(SharingError::DuplicateIndex(share.index))?;
        acc += share.value * num * den_inv;
    }
    Ok(acc)
}

/// Recovers the secret from at least `t + 1` shares.
pub fn reconstruct<const P: u64>(shares: &[Share<P>], t: usize) -> Result<Fp<P>, SharingError> {
    check_indices(shares)?;
    if shares.len() < t + 1 {
        return Err(SharingError::InsufficientShares {
            needed: t + 1,
            got: shares.len(),
        });
    }
    lagrange_eval(shares, Fp::ZERO)
}

/// Index-wise sum of two sharings over the same index set.
pub fn add_share_vectors<const P: u64>(
    a: &[Share<P>],
    b: &[Share<P>],
) -> Result<Vec<Share<P>>, SharingError> {
    check_indices(a)?;
    check_indices(b)?;
    let rhs: BTreeMap<u32, Fp<P>> = b.iter().map(|s| (s.index, s.value)).collect();
    if a.len() != rhs.len() {
        return Err(SharingError::IndexMismatch);
    }
    a.iter()
        .map(|s| {
            rhs.get(&s.index)
                .map(|&v| Share::new(s.index, s.value + v))
                .ok_or(SharingError::IndexMismatch)
        })
        .collect()
}

fn check_indices<const P: u64>(shares: &[Share<P>]) -> Result<(), SharingError> {
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.index == 0 || s.index as u64 % P == 0 {
            return Err(SharingError::ZeroIndex);
        }
        if !seen.insert(s.index) {
            return Err(SharingError::DuplicateIndex(s.index));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldElement;
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fe(v: u64) -> FieldElement {
        FieldElement::new(v)
    }

    fn pairs(shares: &[Share]) -> Vec<(u32, u64)> {
        shares.iter().map(|s| (s.index, s.value.value())).collect()
    }

    /// Direct evaluation oracle: q(x) = sum c_k x^k with plain u128 powers.
    fn naive_eval(coeffs: &[u64], x: u64) -> u64 {
        let p = MODULUS as u128;
        let mut acc = 0u128;
        let mut pow = 1u128;
        for &c in coeffs {
            acc = (acc + c as u128 * pow) % p;
            pow = pow * x as u128 % p;
        }
        acc as u64
    }

    #[test]
    fn zero_polynomial_shares() {
        let mut rng = StepRng::new(0, 0);
        let shares = share_secret(fe(0), 3, 1, &mut rng).unwrap();
        assert_eq!(pairs(&shares), vec![(1, 0), (2, 0), (3, 0)]);
        assert_eq!(reconstruct(&shares[..2], 1).unwrap(), fe(0));
    }

    #[test]
    fn linear_polynomial_by_hand() {
        // q(x) = 7 + x
        let mut rng = StepRng::new(1, 0);
        let shares = share_secret(fe(7), 4, 1, &mut rng).unwrap();
        assert_eq!(pairs(&shares), vec![(1, 8), (2, 9), (3, 10), (4, 11)]);
        let two = [Share::new(1, fe(8)), Share::new(2, fe(9))];
        assert_eq!(reconstruct(&two, 1).unwrap(), fe(7));
    }

    #[test]
    fn shares_match_direct_evaluation() {
        // Re-derive the coefficients the sharing drew and evaluate naively.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let shares = share_secret(fe(42), 5, 2, &mut rng).unwrap();
        let mut replay = ChaCha20Rng::seed_from_u64(3);
        let c1 = FieldElement::random(&mut replay).value();
        let c2 = FieldElement::random(&mut replay).value();
        for s in &shares {
            assert_eq!(s.value.value(), naive_eval(&[42, c1, c2], s.index as u64));
        }
        let subset = [shares[0], shares[2], shares[4]];
        assert_eq!(reconstruct(&subset, 2).unwrap(), fe(42));
    }

    #[test]
    fn every_three_subset_of_five_reconstructs() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let shares = share_secret(fe(42), 5, 2, &mut rng).unwrap();
        for a in 0..5 {
            for b in a + 1..5 {
                for c in b + 1..5 {
                    let subset = [shares[a], shares[b], shares[c]];
                    assert_eq!(reconstruct(&subset, 2).unwrap(), fe(42));
                }
            }
        }
    }

    #[test]
    fn threshold_errors() {
        let mut rng = StepRng::new(0, 1);
        assert_eq!(
            share_secret(fe(1), 3, 3, &mut rng),
            Err(SharingError::InvalidThreshold { n: 3, t: 3 })
        );
        assert_eq!(
            share_secret(fe(1), 3, 0, &mut rng),
            Err(SharingError::InvalidThreshold { n: 3, t: 0 })
        );
        assert!(matches!(
            share_secret(Fp::<101>::new(1), 101, 2, &mut rng),
            Err(SharingError::TooManyParticipants(101))
        ));
    }

    #[test]
    fn reconstruct_errors() {
        let one = [Share::new(1, fe(3))];
        assert_eq!(
            reconstruct(&one, 1),
            Err(SharingError::InsufficientShares { needed: 2, got: 1 })
        );
        let dup = [Share::new(2, fe(3)), Share::new(2, fe(4))];
        assert_eq!(reconstruct(&dup, 1), Err(SharingError::DuplicateIndex(2)));
        let zero = [Share::new(0, fe(3)), Share::new(1, fe(4))];
        assert_eq!(reconstruct(&zero, 1), Err(SharingError::ZeroIndex));
    }

    #[test]
    fn share_addition_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = share_secret(fe(20), 5, 2, &mut rng).unwrap();
        let b = share_secret(fe(22), 5, 2, &mut rng).unwrap();
        let sum = add_share_vectors(&a, &b).unwrap();
        assert_eq!(reconstruct(&sum[1..4], 2).unwrap(), fe(42));

        let zero = share_secret(fe(0), 5, 2, &mut rng).unwrap();
        let s = share_secret(fe(999), 5, 2, &mut rng).unwrap();
        assert_eq!(reconstruct(&add_share_vectors(&zero, &s).unwrap(), 2).unwrap(), fe(999));

        let top = share_secret(fe(MODULUS - 1), 5, 2, &mut rng).unwrap();
        let one = share_secret(fe(1), 5, 2, &mut rng).unwrap();
        assert_eq!(reconstruct(&add_share_vectors(&top, &one).unwrap(), 2).unwrap(), fe(0));
    }

    #[test]
    fn share_addition_requires_same_indices() {
        let a = [Share::new(1, fe(1)), Share::new(2, fe(2))];
        let b = [Share::new(1, fe(1)), Share::new(3, fe(2))];
        assert_eq!(add_share_vectors(&a, &b), Err(SharingError::IndexMismatch));
        let short = [Share::new(1, fe(1))];
        assert_eq!(add_share_vectors(&a, &short), Err(SharingError::IndexMismatch));
        // Order does not matter, only the index set.
        let swapped = [Share::new(2, fe(5)), Share::new(1, fe(6))];
        let out = add_share_vectors(&a, &swapped).unwrap();
        assert_eq!(out, vec![Share::new(1, fe(7)), Share::new(2, fe(7))]);
    }

    #[test]
    fn additive_homomorphism_random() {
        let mut rng = ChaCha20Rng::seed_from_u64(1234);
        for _ in 0..1000 {
            let a = FieldElement::random(&mut rng);
            let b = FieldElement::random(&mut rng);
            let sa = share_secret(a, 7, 3, &mut rng).unwrap();
            let sb = share_secret(b, 7, 3, &mut rng).unwrap();
            let sum = add_share_vectors(&sa, &sb).unwrap();
            let expect = ((a.value() as u128 + b.value() as u128) % MODULUS as u128) as u64;
            assert_eq!(reconstruct(&sum[3..], 3).unwrap().value(), expect);
        }
    }

    #[test]
    fn wire_form() {
        let json = serde_json::to_value(Share::new(3, fe(12345))).unwrap();
        assert_eq!(json, serde_json::json!({"index": 3, "value": "12345"}));
    }
}
