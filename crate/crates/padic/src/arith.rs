//! Arithmetic substrate: residues mod p^K, exact rationals with p-unit
//! denominators, pseudo-valuations for composite bases, CRT decomposition.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;
use thiserror::Error;

/// Exact rational; plays the role of an element of Q ∩ Z_p once the
/// denominator has been checked coprime to p.
pub type PRat = BigRational;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArithError {
    #[error("denominator {0} is not coprime to base {1}")]
    DenominatorNotCoprime(BigInt, u64),
    #[error("{0} is not a prime factor of {1}")]
    NotAPrimeFactor(u64, u64),
}

/// p^k as an arbitrary-precision integer.
pub fn pow_u(p: u64, k: u32) -> BigUint {
    BigUint::from(p).pow(k)
}

/// Canonical representative of x mod m in [0, m). The `%` of the paper is
/// this nonnegative remainder, not Rust's sign-following `%`.
pub fn rem_euclid_big(x: &BigInt, m: &BigUint) -> BigUint {
    let m = BigInt::from(m.clone());
    let mut r = x % &m;
    if r.sign() == Sign::Minus {
        r += &m;
    }
    r.to_biguint().unwrap()
}

/// Inverse of b mod m when gcd(b,m)=1.
pub fn mod_inverse(b: &BigInt, m: &BigUint) -> Option<BigUint> {
    if m.is_one() {
        return Some(BigUint::zero());
    }
    let m_int = BigInt::from(m.clone());
    let mut r0 = m_int.clone();
    let mut r1 = BigInt::from(rem_euclid_big(b, m));
    let mut t0 = BigInt::zero();
    let mut t1 = BigInt::one();
    while !r1.is_zero() {
        let q = &r0 / &r1;
        let r2 = &r0 - &q * &r1;
        let t2 = &t0 - &q * &t1;
        r0 = r1;
        r1 = r2;
        t0 = t1;
        t1 = t2;
    }
    if !r0.is_one() {
        return None;
    }
    Some(rem_euclid_big(&t0, m))
}

/// Convenience constructor for small rationals.
pub fn prat(num: i64, den: i64) -> PRat {
    PRat::new(BigInt::from(num), BigInt::from(den))
}

/// True if x has no factor of any prime of p in its denominator.
pub fn is_p_integral(x: &PRat, p: u64) -> bool {
    x.denom().gcd(&BigInt::from(p)).is_one()
}

/// An element of Z_p known modulo p^K.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Residue {
    p: u64,
    k: u32,
    v: BigUint,
}

impl Residue {
    pub fn new(p: u64, k: u32, v: BigUint) -> Self {
        assert!(p >= 2, "base must be at least 2");
        let v = v % pow_u(p, k);
        Residue { p, k, v }
    }

    pub fn from_int(p: u64, k: u32, v: &BigInt) -> Self {
        assert!(p >= 2, "base must be at least 2");
        Residue { p, k, v: rem_euclid_big(v, &pow_u(p, k)) }
    }

    pub fn from_u64(p: u64, k: u32, v: u64) -> Self {
        Residue::new(p, k, BigUint::from(v))
    }

    pub fn base(&self) -> u64 {
        self.p
    }

    pub fn precision(&self) -> u32 {
        self.k
    }

    pub fn value(&self) -> &BigUint {
        &self.v
    }

    pub fn modulus(&self) -> BigUint {
        pow_u(self.p, self.k)
    }

    /// Drop precision to k' ≤ K.
    pub fn reduce(&self, k_new: u32) -> Residue {
        assert!(k_new <= self.k, "cannot raise precision by reduction");
        Residue { p: self.p, k: k_new, v: &self.v % pow_u(self.p, k_new) }
    }

    /// Lowest base-p digit.
    pub fn low_digit(&self) -> u64 {
        assert!(self.k >= 1, "no digits at precision 0");
        (&self.v % self.p).to_u64().unwrap()
    }

    /// (x − x%p)/p, losing one unit of precision.
    pub fn shift_down(&self) -> Residue {
        assert!(self.k >= 1, "no precision left to shift");
        Residue { p: self.p, k: self.k - 1, v: &self.v / self.p }
    }

    fn check_compatible(&self, other: &Residue) {
        assert_eq!(self.p, other.p, "mixed bases");
        assert_eq!(self.k, other.k, "mixed precisions");
    }

    pub fn add(&self, other: &Residue) -> Residue {
        self.check_compatible(other);
        Residue::new(self.p, self.k, &self.v + &other.v)
    }

    pub fn sub(&self, other: &Residue) -> Residue {
        self.check_compatible(other);
        let m = self.modulus();
        Residue { p: self.p, k: self.k, v: (&self.v + &m - &other.v) % m }
    }

    pub fn mul(&self, other: &Residue) -> Residue {
        self.check_compatible(other);
        Residue::new(self.p, self.k, &self.v * &other.v)
    }
}

impl fmt::Display for Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.v)
    }
}

/// Residue of a/b mod p^K, via the modular inverse of b.
pub fn embed_rational(a: &BigInt, b: &BigInt, p: u64, k: u32) -> Result<Residue, ArithError> {
    if b.is_zero() || !b.gcd(&BigInt::from(p)).is_one() {
        return Err(ArithError::DenominatorNotCoprime(b.clone(), p));
    }
    let m = pow_u(p, k);
    let inv = mod_inverse(b, &m).expect("coprime denominator must be invertible");
    let v = rem_euclid_big(a, &m) * inv % &m;
    Ok(Residue { p, k, v })
}

/// Residue of an exact rational mod p^K.
pub fn embed_prat(x: &PRat, p: u64, k: u32) -> Result<Residue, ArithError> {
    embed_rational(x.numer(), x.denom(), p, k)
}

/// A valuation, possibly +∞ (only for zero).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Val {
    Finite(i64),
    Infinite,
}

impl Val {
    pub fn finite(self) -> Option<i64> {
        match self {
            Val::Finite(n) => Some(n),
            Val::Infinite => None,
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Finite(n) => write!(f, "{n}"),
            Val::Infinite => write!(f, "∞"),
        }
    }
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Prime factorization of the base, by trial division.
pub fn factorize(p: u64) -> Vec<(u64, u32)> {
    assert!(p >= 2);
    let mut n = p;
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            let mut e = 0u32;
            while n % d == 0 {
                n /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += 1;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

fn nu_q_int(x: &BigInt, q: u64) -> Val {
    if x.is_zero() {
        return Val::Infinite;
    }
    let q_big = BigInt::from(q);
    let mut v = 0i64;
    let mut n = x.abs();
    loop {
        let (d, r) = n.div_rem(&q_big);
        if !r.is_zero() {
            return Val::Finite(v);
        }
        v += 1;
        n = d;
    }
}

/// q-adic valuation of a rational (numerator minus denominator count).
pub fn nu_q_rat(x: &PRat, q: u64) -> Val {
    match (nu_q_int(x.numer(), q), nu_q_int(x.denom(), q)) {
        (Val::Infinite, _) => Val::Infinite,
        (Val::Finite(a), Val::Finite(b)) => Val::Finite(a - b),
        (_, Val::Infinite) => unreachable!("zero denominator"),
    }
}

/// q-adic valuation of x, where q must be a prime factor of p.
pub fn nu_q(x: &PRat, p: u64, q: u64) -> Result<Val, ArithError> {
    if p % q != 0 || !is_prime_u64(q) {
        return Err(ArithError::NotAPrimeFactor(q, p));
    }
    Ok(nu_q_rat(x, q))
}

/// Pseudo-valuation for a possibly composite base: the infimum over prime
/// factors q of floor(ν_q(x)/ν_q(p)). Coincides with the usual valuation
/// for prime p; can be negative for rationals outside Z_p.
pub fn nu_p(x: &PRat, p: u64) -> Val {
    if x.is_zero() {
        return Val::Infinite;
    }
    factorize(p)
        .iter()
        .map(|&(q, e)| match nu_q_rat(x, q) {
            Val::Finite(v) => Val::Finite(v.div_euclid(e as i64)),
            Val::Infinite => unreachable!("nonzero x"),
        })
        .min()
        .expect("base has at least one prime factor")
}

/// Pseudo-valuation of an integer.
pub fn nu_p_int(x: &BigInt, p: u64) -> Val {
    nu_p(&PRat::from_integer(x.clone()), p)
}

/// Per-prime valuations of x together with the induced ν_p.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValExt {
    pub per_prime: Vec<(u64, Val)>,
    pub nu_p: Val,
}

pub fn val_ext(x: &PRat, p: u64) -> ValExt {
    let per_prime = factorize(p).iter().map(|&(q, _)| (q, nu_q_rat(x, q))).collect();
    ValExt { per_prime, nu_p: nu_p(x, p) }
}

/// x ∈ p^k·Z_p, i.e. ν_q(x) ≥ k·ν_q(p) for every prime factor q of p.
pub fn in_pk_zp(x: &PRat, p: u64, k: u32) -> bool {
    if x.is_zero() {
        return true;
    }
    factorize(p).iter().all(|&(q, e)| match nu_q_rat(x, q) {
        Val::Finite(v) => v >= (e as i64) * (k as i64),
        Val::Infinite => true,
    })
}

/// Split a residue mod p^K into residues mod q^(e·K), one per prime power
/// q^e in p. CRT recombination restores the input.
pub fn crt_split(x: &Residue) -> Vec<Residue> {
    factorize(x.p)
        .iter()
        .map(|&(q, e)| {
            let k = e * x.k;
            Residue { p: q, k, v: &x.v % pow_u(q, k) }
        })
        .collect()
}

/// Recombine coprime-modulus residues into a value mod the product.
pub fn crt_combine(parts: &[Residue]) -> BigUint {
    let mut m = BigUint::one();
    let mut r = BigUint::zero();
    for part in parts {
        let m2 = part.modulus();
        let inv = mod_inverse(&BigInt::from(m.clone()), &m2)
            .expect("crt moduli must be pairwise coprime");
        let r_int = BigInt::from(r.clone());
        let diff = rem_euclid_big(&(BigInt::from(part.v.clone()) - &r_int), &m2);
        r += &m * (diff * inv % &m2);
        m *= m2;
    }
    r
}
