#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// `q_k` at `delta = num / den`, in exact rational arithmetic.
pub fn exact_q(k: u64, num: i64, den: i64) -> BigRational {
    let r = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
    let delta = r(num, den);
    let half = r(1, 2);
    let success = &half + &delta / BigInt::from(2);
    let failure = BigRational::one() - &success;
    let tie_weight = &half + &delta;
    let mut binom = BigInt::one();
    let mut total = BigRational::zero();
    for i in 0..=k {
        if i > 0 {
            binom = binom * BigInt::from(k - i + 1) / BigInt::from(i);
        }
        let weight = match (2 * i).cmp(&k) {
            std::cmp::Ordering::Greater => BigRational::one(),
            std::cmp::Ordering::Equal => tie_weight.clone(),
            std::cmp::Ordering::Less => continue,
        };
        let term = BigRational::from_integer(binom.clone())
            * pow(&success, i)
            * pow(&failure, k - i)
            * weight;
        total += term;
    }
    total
}

fn pow(x: &BigRational, e: u64) -> BigRational {
    num_traits::pow(x.clone(), e as usize)
}

pub fn exact_q_f64(k: u64, num: i64, den: i64) -> f64 {
    exact_q(k, num, den).to_f64().expect("finite")
}
