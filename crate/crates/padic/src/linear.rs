//! Closed forms for linear systems F = (a_0+b_0x, …, a_{p−1}+b_{p−1}x):
//! word coefficients (α, β), periodic points and prefix residues, recovery of
//! a branch constant from a prescribed digit expansion (single solutions and
//! parametrized families), contractive/expansive classification, exact orbit
//! periodicity detection over Q ∩ Z_p, and the (m_I, m_P) experiment scan.

use crate::arith::{is_p_integral, mod_inverse, pow_u, PRat};
use crate::seq::UPSeq;
use crate::systems::{low_digit_prat, prat_mod_pk, Branch, FibredSystem};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinError {
    #[error("branch {0} breaks the block property: gcd(p, b mod p) != 1")]
    BlockViolation(usize),
    #[error("branch {0} has a coefficient outside Z_p")]
    NonIntegralCoefficients(usize),
    #[error("periodic word is degenerate: beta equals p^len")]
    DegeneratePeriod,
    #[error("family has no integer members")]
    NoIntegerSolutions,
    #[error("value leaves Q ∩ Z_p: {0}")]
    LeftRationals(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("closed form disagrees with recomputed digits; coefficient data is inconsistent")]
    Inconsistent,
}

fn big(p: u64) -> BigInt {
    BigInt::from(p)
}

fn ppow(p: u64, k: usize) -> BigInt {
    BigInt::from(pow_u(p, k as u32))
}

fn int_rat(x: BigInt) -> PRat {
    PRat::from_integer(x)
}

/// A p-fibred system whose branches are all linear polynomials over Q ∩ Z_p.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinSystem {
    p: u64,
    pairs: Vec<(PRat, PRat)>,
    weak_canonical: bool,
}

impl LinSystem {
    /// Build from (a_r, b_r) pairs. Every coefficient must lie in Z_p and
    /// every slope must have a unit low digit; by the linear suitability
    /// criterion that check alone certifies the block property.
    pub fn new(p: u64, pairs: Vec<(PRat, PRat)>) -> Result<Self, LinError> {
        if p < 2 {
            return Err(LinError::BadInput("base must be at least 2".into()));
        }
        if pairs.len() != p as usize {
            return Err(LinError::BadInput(format!(
                "expected {} branch pairs, got {}",
                p,
                pairs.len()
            )));
        }
        for (r, (a, b)) in pairs.iter().enumerate() {
            if !is_p_integral(a, p) || !is_p_integral(b, p) {
                return Err(LinError::NonIntegralCoefficients(r));
            }
            let b0 = prat_mod_pk(b, p, 1)
                .map_err(|_| LinError::NonIntegralCoefficients(r))?
                .to_u64()
                .unwrap();
            if b0.gcd(&p) != 1 {
                return Err(LinError::BlockViolation(r));
            }
        }
        let weak_canonical = pairs.iter().enumerate().all(|(r, (a, b))| {
            let v = a + b * int_rat(BigInt::from(r));
            prat_mod_pk(&v, p, 1).map(|d| d.is_zero()).unwrap_or(false)
        });
        Ok(LinSystem {
            p,
            pairs,
            weak_canonical,
        })
    }

    pub fn from_int_pairs(p: u64, pairs: &[(i64, i64)]) -> Result<Self, LinError> {
        LinSystem::new(
            p,
            pairs
                .iter()
                .map(|&(a, b)| (int_rat(BigInt::from(a)), int_rat(BigInt::from(b))))
                .collect(),
        )
    }

    pub fn base(&self) -> u64 {
        self.p
    }

    pub fn pairs(&self) -> &[(PRat, PRat)] {
        &self.pairs
    }

    pub fn pair(&self, r: u64) -> &(PRat, PRat) {
        &self.pairs[r as usize]
    }

    /// True when a_r + b_r·r ≡ 0 (mod p) for every branch, so each branch
    /// value is exactly divisible by p on its own residue class.
    pub fn is_weak_canonical(&self) -> bool {
        self.weak_canonical
    }

    /// The weak canonical companion: each constant is shifted down by the
    /// (class-constant) low digit of its branch values. The fibred map, and
    /// hence every digit expansion, is unchanged; only the closed forms need
    /// the shifted coefficients.
    pub fn weak_canonical(&self) -> LinSystem {
        if self.weak_canonical {
            return self.clone();
        }
        let pairs = self
            .pairs
            .iter()
            .enumerate()
            .map(|(r, (a, b))| {
                let v = a + b * int_rat(BigInt::from(r));
                let c = prat_mod_pk(&v, self.p, 1).expect("coefficients are in Z_p");
                (a - int_rat(BigInt::from(c)), b.clone())
            })
            .collect();
        LinSystem {
            p: self.p,
            pairs,
            weak_canonical: true,
        }
    }

    /// One application of the fibred map: n ↦ (F_r(n) − F_r(n) mod p)/p with
    /// r the low digit of n.
    pub fn apply(&self, n: &PRat) -> Result<PRat, LinError> {
        let r = self.low_digit(n)?;
        let (a, b) = &self.pairs[r as usize];
        let v = a + b * n;
        let d = self.low_digit(&v)?;
        Ok((v - int_rat(BigInt::from(d))) / int_rat(big(self.p)))
    }

    fn low_digit(&self, x: &PRat) -> Result<u64, LinError> {
        low_digit_prat(x, self.p)
            .map(|d| d.to_u64().unwrap())
            .map_err(|_| LinError::LeftRationals(format!("{} has no digit base {}", x, self.p)))
    }

    /// First k digits of n's expansion under this system.
    pub fn digit_prefix(&self, n: &PRat, k: usize) -> Result<Vec<u64>, LinError> {
        let mut x = n.clone();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            out.push(self.low_digit(&x)?);
            x = self.apply(&x)?;
        }
        Ok(out)
    }

    /// The first k orbit values n, F(n), …, F^{k−1}(n).
    pub fn orbit_prefix(&self, n: &PRat, k: usize) -> Result<Vec<PRat>, LinError> {
        let mut x = n.clone();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            out.push(x.clone());
            x = self.apply(&x)?;
        }
        Ok(out)
    }

    pub fn to_fibred(&self) -> FibredSystem {
        let branches = self
            .pairs
            .iter()
            .map(|(a, b)| Branch::Poly(vec![a.clone(), b.clone()]))
            .collect();
        FibredSystem::new(self.p, branches).expect("linear branches always form a valid system")
    }

    /// Extract the (a, b) pairs from a fibred system whose branches are all
    /// polynomials of degree at most one.
    pub fn from_fibred(f: &FibredSystem) -> Result<Self, LinError> {
        let mut pairs = Vec::with_capacity(f.base() as usize);
        for r in 0..f.base() {
            match f.branch(r) {
                Branch::Poly(cs) => {
                    if cs.iter().skip(2).any(|c| !c.is_zero()) {
                        return Err(LinError::BadInput(format!("branch {} is not linear", r)));
                    }
                    let a = cs.first().cloned().unwrap_or_else(PRat::zero);
                    let b = cs.get(1).cloned().unwrap_or_else(PRat::zero);
                    pairs.push((a, b));
                }
                _ => return Err(LinError::BadInput(format!("branch {} is not a polynomial", r))),
            }
        }
        LinSystem::new(f.base(), pairs)
    }
}

// ---------------------------------------------------------------------------
// word coefficients

/// Suffix slope products over a word: suf[i] = Π_{j≥i} b_{D[j]}, suf[len]=1.
fn suffix_products(f: &LinSystem, d: &[u64]) -> Result<Vec<PRat>, LinError> {
    let mut suf = vec![PRat::one(); d.len() + 1];
    for i in (0..d.len()).rev() {
        let di = d[i];
        if di >= f.p {
            return Err(LinError::BadInput(format!("digit {} out of range", di)));
        }
        suf[i] = &f.pairs[di as usize].1 * &suf[i + 1];
    }
    Ok(suf)
}

/// The word coefficients of D: α = Σ_{i<|D|} a_{D[i]} p^i Π_{j>i} b_{D[j]}
/// and β = Π_i b_{D[i]}, so that applying the branch word D by exact
/// division sends n to (α + nβ)/p^{|D|}.
pub fn alpha_beta(f: &LinSystem, d: &[u64]) -> Result<(PRat, PRat), LinError> {
    let suf = suffix_products(f, d)?;
    let mut alpha = PRat::zero();
    let mut p_pow = BigInt::one();
    for (i, &di) in d.iter().enumerate() {
        alpha += &f.pairs[di as usize].0 * int_rat(p_pow.clone()) * &suf[i + 1];
        p_pow *= big(f.p);
    }
    Ok((alpha, suf[0].clone()))
}

/// Apply the branch word D to n step by step: x ↦ (a_{D[i]} + b_{D[i]}x)/p,
/// dividing exactly. This coincides with the fibred orbit exactly when the
/// system is weak-canonical and D is the digit word of n; on mismatched
/// words it is the formal affine composition that the closed form computes.
pub fn word_apply(f: &LinSystem, d: &[u64], n: &PRat) -> Result<PRat, LinError> {
    let p = int_rat(big(f.p));
    let mut x = n.clone();
    for &di in d {
        if di >= f.p {
            return Err(LinError::BadInput(format!("digit {} out of range", di)));
        }
        let (a, b) = &f.pairs[di as usize];
        x = (a + b * x) / &p;
    }
    Ok(x)
}

/// Closed form for `word_apply`: (α + nβ)/p^{|D|}.
pub fn word_value(f: &LinSystem, d: &[u64], n: &PRat) -> Result<PRat, LinError> {
    let (alpha, beta) = alpha_beta(f, d)?;
    Ok((alpha + n * beta) / int_rat(ppow(f.p, d.len())))
}

// ---------------------------------------------------------------------------
// periodic points and prefix residues

fn require_weak_canonical(f: &LinSystem) -> Result<(), LinError> {
    if f.weak_canonical {
        Ok(())
    } else {
        Err(LinError::BadInput(
            "system must be weak-canonical; use weak_canonical() first".into(),
        ))
    }
}

/// The unique point whose digit expansion is D_I·(D_P)^∞: the fixed point of
/// the D_P word map, pulled back through the D_I word map,
/// n = (α_P/(p^{|D_P|}−β_P)·p^{|D_I|} − α_I)/β_I.
pub fn periodic_point(f: &LinSystem, d_i: &[u64], d_p: &[u64]) -> Result<PRat, LinError> {
    require_weak_canonical(f)?;
    let (alpha_p, beta_p) = alpha_beta(f, d_p)?;
    let denom = int_rat(ppow(f.p, d_p.len())) - beta_p;
    if denom.is_zero() {
        // empty periods land here too: p^0 = 1 = β
        return Err(LinError::DegeneratePeriod);
    }
    let m = alpha_p / denom;
    let (alpha_i, beta_i) = alpha_beta(f, d_i)?;
    let n = (m * int_rat(ppow(f.p, d_i.len())) - alpha_i) / beta_i;
    // recompute the expansion far enough to catch any inconsistency
    let want: Vec<u64> = d_i
        .iter()
        .chain(d_p.iter().cycle().take(3 * d_p.len()))
        .copied()
        .collect();
    if f.digit_prefix(&n, want.len())? != want {
        return Err(LinError::Inconsistent);
    }
    Ok(n)
}

/// The unique residue n in [0, p^{|D|}) whose first |D| digits are D:
/// n ≡ −α/β (mod p^{|D|}), the inverse taken by extended Euclid.
pub fn prefix_residue(f: &LinSystem, d: &[u64]) -> Result<BigUint, LinError> {
    require_weak_canonical(f)?;
    let (alpha, beta) = alpha_beta(f, d)?;
    let k = d.len();
    let pk = pow_u(f.p, k as u32);
    let beta_res = prat_mod_pk(&beta, f.p, k as u32).expect("beta is a p-unit");
    let inv = mod_inverse(&BigInt::from(beta_res), &pk).expect("beta is a p-unit");
    let alpha_res = prat_mod_pk(&alpha, f.p, k as u32).expect("alpha is in Z_p");
    let n = (&pk - inv) * alpha_res % &pk;
    if f.digit_prefix(&int_rat(n.clone().into()), k)? != d {
        return Err(LinError::Inconsistent);
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// inverse systems: recover a_r from a prescribed expansion

/// Per-branch word coefficients: w_s = Σ_{i ∈ pos(D,s)} p^i Π_{j>i} b_{D[j]},
/// so that α = Σ_s a_s w_s. Returned together with β = Π b_{D[i]}.
fn branch_split(f: &LinSystem, d: &[u64]) -> Result<(Vec<PRat>, PRat), LinError> {
    let suf = suffix_products(f, d)?;
    let mut w = vec![PRat::zero(); f.p as usize];
    let mut p_pow = BigInt::one();
    for (i, &di) in d.iter().enumerate() {
        w[di as usize] += int_rat(p_pow.clone()) * &suf[i + 1];
        p_pow *= big(f.p);
    }
    Ok((w, suf[0].clone()))
}

/// The coefficients t_s = d_s·p^k/(p^ℓ−d) − c_s of the inversion identity
/// c·n = Σ_s a_s t_s, where (c_s, c) split the initial word and (d_s, d) the
/// periodic word. Shared by both inversion entry points.
fn inversion_data(f: &LinSystem, d: &UPSeq) -> Result<(Vec<PRat>, PRat), LinError> {
    if d.rho.is_empty() {
        return Err(LinError::DegeneratePeriod);
    }
    let (c_s, c) = branch_split(f, &d.lambda)?;
    let (d_s, dd) = branch_split(f, &d.rho)?;
    let denom = int_rat(ppow(f.p, d.rho.len())) - dd;
    if denom.is_zero() {
        return Err(LinError::DegeneratePeriod);
    }
    let pk = int_rat(ppow(f.p, d.lambda.len()));
    let t: Vec<PRat> = c_s
        .iter()
        .zip(d_s.iter())
        .map(|(cs, ds)| ds * &pk / &denom - cs)
        .collect();
    Ok((t, c))
}

/// Recover the unique constant a_r making D(F)[n] = D, all other
/// coefficients fixed. The a_r stored in `f` is ignored; other constants are
/// shifted to their weak canonical representatives first (which leaves the
/// fibred map untouched), and the result comes back in that normalization,
/// a_r ≡ −r·b_r (mod p).
pub fn invert_for_system(f: &LinSystem, r: u64, n: &PRat, d: &UPSeq) -> Result<PRat, LinError> {
    if r >= f.p {
        return Err(LinError::BadInput(format!("branch {} out of range", r)));
    }
    let g = f.weak_canonical();
    let d0 = d
        .digit(0)
        .ok_or_else(|| LinError::BadInput("empty digit sequence".into()))?;
    if d0 != r || g.low_digit(n)? != r {
        return Err(LinError::BadInput(
            "need n ≡ D[0] ≡ r (mod p) to invert for branch r".into(),
        ));
    }
    let (t, c) = inversion_data(&g, d)?;
    if t[r as usize].is_zero() {
        return Err(LinError::BadInput("digit r never occurs in D".into()));
    }
    let mut rhs = c * n;
    for s in 0..g.p as usize {
        if s as u64 != r {
            rhs -= &g.pairs[s].0 * &t[s];
        }
    }
    let a_r = rhs / &t[r as usize];

    let mut pairs = g.pairs.clone();
    pairs[r as usize].0 = a_r.clone();
    let full = LinSystem::new(g.p, pairs)?;
    let depth = d.lambda.len() + 3 * d.rho.len();
    if full.digit_prefix(n, depth)? != d.prefix(depth) {
        return Err(LinError::Inconsistent);
    }
    Ok(a_r)
}

/// The solution family of pairs (a_r, n) with D(F)[n] = D when both the
/// branch constant and the start are unknown. Two presentations of the same
/// set over Z_p:
///
///   {(A₁ + mp, B₁ + m·C₁·p^K)}  =  {(A₂ + m·C₂·p, B₂ + m·p^K)},  m ∈ Z_p,
///
/// where K−1 is the first position of digit r in D (when r never occurs the
/// n-component is constant and `k` is None, encoded below as p^K = 0).
#[derive(Clone, Debug)]
pub struct PairFamily {
    pub p: u64,
    pub r: u64,
    /// K, or None when digit r does not occur in D.
    pub k: Option<u32>,
    pub a1: PRat,
    pub b1: PRat,
    pub c1: PRat,
    pub a2: PRat,
    pub b2: PRat,
    pub c2: PRat,
    /// p^K, or zero in the None case so the member formulas stay uniform.
    pk: BigInt,
}

impl PairFamily {
    /// p^K, or zero when digit r never occurs.
    pub fn p_pow_k(&self) -> &BigInt {
        &self.pk
    }

    /// Member (A₁ + mp, B₁ + m·C₁·p^K) of the first presentation.
    pub fn member_first(&self, m: &BigInt) -> (PRat, PRat) {
        let m = int_rat(m.clone());
        (
            &self.a1 + &m * int_rat(big(self.p)),
            &self.b1 + &m * &self.c1 * int_rat(self.pk.clone()),
        )
    }

    /// Member (A₂ + m·C₂·p, B₂ + m·p^K) of the second presentation.
    pub fn member_second(&self, m: &BigInt) -> (PRat, PRat) {
        let m = int_rat(m.clone());
        (
            &self.a2 + &m * &self.c2 * int_rat(big(self.p)),
            &self.b2 + &m * int_rat(self.pk.clone()),
        )
    }

    /// Restrict to integer pairs. With K₁, L₁ the denominators of B₁, C₁ the
    /// family contains integer pairs iff K₁ | L₁; the members are then
    ///
    ///   (A₁ + (S₁B₁+m)L₁p, B₁ + (S₁B₁+m)L₁C₁p^K)
    ///   = (A₂ + (S₂A₂+m)L₂C₂p, B₂ + (S₂A₂+m)L₂p^K),  m ∈ Z,
    ///
    /// with R, S the Bézout data of L₁R₁ − L₁C₁p^K·S₁ = 1 and
    /// L₂R₂ − L₂C₂p·S₂ = 1.
    pub fn integer_family(&self) -> Result<IntegerFamily, LinError> {
        let k1 = self.b1.denom().clone();
        let l1 = self.c1.denom().clone();
        if !(&l1 % &k1).is_zero() {
            return Err(LinError::NoIntegerSolutions);
        }
        let l1c1 = (&self.c1 * int_rat(l1.clone())).to_integer();
        let (r1, s1) = bezout_unit(&l1, &(&l1c1 * &self.pk));
        let base1_a = &self.a1 + &self.b1 * int_rat(&s1 * &l1 * big(self.p));
        let base1_n = &self.b1 * int_rat(&l1 * &r1);
        let step1 = (&l1 * big(self.p), &l1c1 * &self.pk);

        let k2 = self.a2.denom().clone();
        let l2 = self.c2.denom().clone();
        debug_assert!((&l2 % &k2).is_zero() && self.b2.is_integer());
        let l2c2 = (&self.c2 * int_rat(l2.clone())).to_integer();
        let (r2, s2) = bezout_unit(&l2, &(&l2c2 * big(self.p)));
        let base2_a = &self.a2 * int_rat(&l2 * &r2);
        let base2_n = &self.b2 + &self.a2 * int_rat(&s2 * &l2 * &self.pk);
        let step2 = (&l2c2 * big(self.p), &l2 * &self.pk);

        let as_int = |x: &PRat| -> Result<BigInt, LinError> {
            if x.is_integer() {
                Ok(x.to_integer())
            } else {
                Err(LinError::Inconsistent)
            }
        };
        Ok(IntegerFamily {
            l1,
            r1,
            s1,
            l2,
            r2,
            s2,
            base1: (as_int(&base1_a)?, as_int(&base1_n)?),
            step1,
            base2: (as_int(&base2_a)?, as_int(&base2_n)?),
            step2,
        })
    }
}

/// Solve m·r − y·s = 1 for (r, s) given coprime m > 0 and y; used for the
/// integer restriction of a pair family.
fn bezout_unit(m: &BigInt, y: &BigInt) -> (BigInt, BigInt) {
    let e = m.extended_gcd(y);
    debug_assert!(e.gcd.is_one());
    (e.x, -e.y)
}

/// Integer members of a pair family, in both presentations:
/// {base1 + m·step1} = {base2 + m·step2}, componentwise over m ∈ Z.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerFamily {
    pub l1: BigInt,
    pub r1: BigInt,
    pub s1: BigInt,
    pub l2: BigInt,
    pub r2: BigInt,
    pub s2: BigInt,
    pub base1: (BigInt, BigInt),
    pub step1: (BigInt, BigInt),
    pub base2: (BigInt, BigInt),
    pub step2: (BigInt, BigInt),
}

impl IntegerFamily {
    pub fn member_first(&self, m: &BigInt) -> (BigInt, BigInt) {
        (&self.base1.0 + m * &self.step1.0, &self.base1.1 + m * &self.step1.1)
    }

    pub fn member_second(&self, m: &BigInt) -> (BigInt, BigInt) {
        (&self.base2.0 + m * &self.step2.0, &self.base2.1 + m * &self.step2.1)
    }
}

/// All pairs (a_r, n) with D(F)[n] = D, parametrized as in `PairFamily`.
/// Other constants are normalized weak-canonically as in `invert_for_system`,
/// and the a_r-component runs over the weak canonical class
/// A₁ = (−r·b_r) mod p.
pub fn invert_for_pairs(f: &LinSystem, r: u64, d: &UPSeq) -> Result<PairFamily, LinError> {
    if r >= f.p {
        return Err(LinError::BadInput(format!("branch {} out of range", r)));
    }
    let g = f.weak_canonical();
    let (t, c) = inversion_data(&g, d)?;

    let b_r = &g.pairs[r as usize].1;
    let a1_res = prat_mod_pk(&(-int_rat(BigInt::from(r)) * b_r), g.p, 1).expect("b_r is in Z_p");
    let a1 = int_rat(BigInt::from(a1_res));

    let mut b1 = &a1 * &t[r as usize];
    for s in 0..g.p as usize {
        if s as u64 != r {
            b1 += &g.pairs[s].0 * &t[s];
        }
    }
    b1 /= &c;

    // first occurrence of digit r in λ·ρ^∞
    let first = d
        .lambda
        .iter()
        .position(|&x| x == r)
        .or_else(|| d.rho.iter().position(|&x| x == r).map(|q| d.lambda.len() + q));

    let (k, pk, c1, a2, b2, c2) = match first {
        None => (None, BigInt::zero(), PRat::one(), a1.clone(), b1.clone(), PRat::one()),
        Some(pos) => {
            let kk = (pos + 1) as u32;
            let pk = ppow(g.p, kk as usize);
            let c1 = &t[r as usize] / (&c * int_rat(ppow(g.p, pos)));
            let b2 = int_rat(BigInt::from(
                prat_mod_pk(&b1, g.p, kk).expect("B1 lies in Z_p"),
            ));
            let a2 = &a1 - (&b1 - &b2) / (&c1 * int_rat(ppow(g.p, pos)));
            let c2 = c1.recip();
            (Some(kk), pk, c1, a2, b2, c2)
        }
    };
    debug_assert!(!(prat_mod_pk(&c1, g.p, 1).expect("C1 is a p-unit").is_zero()));

    let fam = PairFamily {
        p: g.p,
        r,
        k,
        a1,
        b1,
        c1,
        a2,
        b2,
        c2,
        pk,
    };

    // spot-check a few members against the digit oracle before handing out
    let depth = d.lambda.len() + 3 * d.rho.len();
    for m in -3i64..=3 {
        let (a_r, n) = fam.member_first(&BigInt::from(m));
        let mut pairs = g.pairs.clone();
        pairs[r as usize].0 = a_r;
        let full = LinSystem::new(g.p, pairs)?;
        if full.digit_prefix(&n, depth)? != d.prefix(depth) {
            return Err(LinError::Inconsistent);
        }
    }
    Ok(fam)
}

/// The constant-inversion family for the Collatz shape (x, 3x+a₁) or
/// (x+a₀, 3x+1) and a purely periodic target word P: members are
/// (scale_a, scale_n)·(2m+1) + offset with
///
///   U₀ = Σ 2^q 3^{#ones after q} over zeros q of P,   U₁ likewise over ones,
///   V  = 2^{|P|} − 3^{#ones},   g = gcd(U_r, V),
///
/// scale = (V/g, U₁/g), offset 0 for r = 1, and scale = (V/g, U₀/g),
/// offset −1 for r = 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollatzConstFamily {
    pub r: u64,
    pub u0: BigInt,
    pub u1: BigInt,
    pub v: BigInt,
    pub scale_a: BigInt,
    pub scale_n: BigInt,
    pub offset: BigInt,
}

impl CollatzConstFamily {
    pub fn member(&self, m: &BigInt) -> (BigInt, BigInt) {
        let odd = BigInt::from(2) * m + 1;
        (
            &self.scale_a * &odd + &self.offset,
            &self.scale_n * &odd + &self.offset,
        )
    }
}

pub fn collatz_constant_family(period: &[u64], r: u64) -> Result<CollatzConstFamily, LinError> {
    if period.is_empty() || period.iter().any(|&d| d > 1) {
        return Err(LinError::BadInput("period must be a nonempty binary word".into()));
    }
    if r > 1 {
        return Err(LinError::BadInput("branch must be 0 or 1".into()));
    }
    let ones = period.iter().filter(|&&d| d == 1).count();
    if (r == 1 && ones == 0) || (r == 0 && ones == period.len()) {
        return Err(LinError::BadInput(
            "period must use the branch being inverted".into(),
        ));
    }
    let mut u0 = BigInt::zero();
    let mut u1 = BigInt::zero();
    let mut ones_after = vec![0usize; period.len()];
    let mut seen = 0;
    for q in (0..period.len()).rev() {
        ones_after[q] = seen;
        if period[q] == 1 {
            seen += 1;
        }
    }
    for (q, &dq) in period.iter().enumerate() {
        let term = BigInt::from(pow_u(2, q as u32)) * BigInt::from(pow_u(3, ones_after[q] as u32));
        if dq == 0 {
            u0 += term;
        } else {
            u1 += term;
        }
    }
    let v = BigInt::from(pow_u(2, period.len() as u32)) - BigInt::from(pow_u(3, ones as u32));
    debug_assert_eq!(&u0 - &u1, v.clone());
    let u_r = if r == 1 { &u1 } else { &u0 };
    let g = u_r.gcd(&v);
    Ok(CollatzConstFamily {
        r,
        scale_a: &v / &g,
        scale_n: u_r / &g,
        offset: if r == 1 { BigInt::zero() } else { -BigInt::one() },
        u0,
        u1,
        v,
    })
}

// ---------------------------------------------------------------------------
// digit-preserving transfer between systems with matched slopes (p = 2)

/// For weak-canonical F, G over Z_2 with the same slopes b₀, b₁, the map
/// sending each point of F to the G-point with the identical digit word:
///
///   π(n) = (a₀′a₁″ − a₁′a₀″ + n((b₀−2)a₁″ − (b₁−2)a₀″))
///          / ((b₀−2)a₁′ − (b₁−2)a₀′),
///
/// primes marking F's constants, double primes G's.
pub fn shared_slope_transfer(f: &LinSystem, g: &LinSystem, n: &PRat) -> Result<PRat, LinError> {
    if f.p != 2 || g.p != 2 {
        return Err(LinError::BadInput("transfer maps are defined for p = 2".into()));
    }
    require_weak_canonical(f)?;
    require_weak_canonical(g)?;
    if f.pairs[0].1 != g.pairs[0].1 || f.pairs[1].1 != g.pairs[1].1 {
        return Err(LinError::BadInput("slopes must agree branchwise".into()));
    }
    let two = int_rat(BigInt::from(2));
    let (af0, b0) = &f.pairs[0];
    let (af1, b1) = &f.pairs[1];
    let ag0 = &g.pairs[0].0;
    let ag1 = &g.pairs[1].0;
    let num = af0 * ag1 - af1 * ag0 + n * ((b0 - &two) * ag1 - (b1 - &two) * ag0);
    let den = (b0 - &two) * af1 - (b1 - &two) * af0;
    // weak-canonical constants make the denominator odd, hence nonzero
    Ok(num / den)
}

/// For F = (b₀x, 1+b₁x) and G = (b₁x, 1+b₀x) over Z_2, the map sending each
/// point of F to the G-point whose digit word is the bitwise complement:
/// π(n) = (1 + n(b₁−2))/(2−b₀).
pub fn swapped_slope_transfer(f: &LinSystem, g: &LinSystem, n: &PRat) -> Result<PRat, LinError> {
    if f.p != 2 || g.p != 2 {
        return Err(LinError::BadInput("transfer maps are defined for p = 2".into()));
    }
    let one = PRat::one();
    let shape_ok = f.pairs[0].0.is_zero()
        && g.pairs[0].0.is_zero()
        && f.pairs[1].0 == one
        && g.pairs[1].0 == one
        && f.pairs[0].1 == g.pairs[1].1
        && f.pairs[1].1 == g.pairs[0].1;
    if !shape_ok {
        return Err(LinError::BadInput(
            "need F = (b0·x, 1 + b1·x) and G = (b1·x, 1 + b0·x)".into(),
        ));
    }
    let two = int_rat(BigInt::from(2));
    let b0 = &f.pairs[0].1;
    let b1 = &f.pairs[1].1;
    Ok((&one + n * (b1 - &two)) / (&two - b0))
}

// ---------------------------------------------------------------------------
// contractive/expansive classification

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Growth {
    Contractive,
    Expansive,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenGrowth {
    DContractive,
    DMixed,
    /// Unreachable for linear systems: denominators never strictly grow
    /// along every branch.
    DExpansive,
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub growth: Growth,
    pub den_growth: DenGrowth,
    /// For purely contractive or expansive systems, the radius
    /// M = max_r |(|a_r| + p − 1)/(|b_r| − p)| beyond which |F(n)| moves
    /// strictly toward (resp. away from) zero.
    pub radius: Option<PRat>,
}

pub fn classify(f: &LinSystem) -> Classification {
    let p_rat = int_rat(big(f.p));
    let mut smaller = 0usize;
    let mut larger = 0usize;
    for (_, b) in &f.pairs {
        if b.abs() < p_rat {
            smaller += 1;
        } else {
            // |b| = p would force b = ±p, whose low digit is 0
            larger += 1;
        }
    }
    let growth = if larger == 0 {
        Growth::Contractive
    } else if smaller == 0 {
        Growth::Expansive
    } else {
        Growth::Mixed
    };
    let den_growth = if f.pairs.iter().all(|(a, b)| a.is_integer() && b.is_integer()) {
        DenGrowth::DContractive
    } else {
        DenGrowth::DMixed
    };
    let radius = match growth {
        Growth::Mixed => None,
        _ => {
            let pm1 = int_rat(big(f.p) - 1);
            f.pairs
                .iter()
                .map(|(a, b)| ((a.abs() + &pm1) / (b.abs() - &p_rat)).abs())
                .max()
        }
    };
    Classification {
        growth,
        den_growth,
        radius,
    }
}

// ---------------------------------------------------------------------------
// rational orbits

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrbitStatus {
    /// The start lies on the cycle itself.
    Periodic,
    UltimatelyPeriodic,
    /// Budget exhausted: steps, denominator size, or an aborted checkpoint
    /// callback. Never a claim of aperiodicity.
    Timeout,
}

/// Outcome of orbit periodicity detection. For ultimately periodic orbits
/// the reported tail is anchored at the cycle element of least absolute
/// value (ties to the smaller number), which makes (|λ|, ρ-digits) agree for
/// every start falling into the same cycle; a purely periodic start reports
/// initial_length 0 with the period read from the start itself.
#[derive(Clone, Debug)]
pub struct OrbitRecord {
    pub start: PRat,
    pub status: OrbitStatus,
    pub initial_length: u64,
    pub period_length: u64,
    /// Digits around the cycle from the anchor; empty on timeout.
    pub period_digits: Vec<u64>,
    /// Total fibred applications spent, verification passes included.
    pub steps_used: u64,
    /// Largest denominator among visited states.
    pub max_denominator: BigUint,
}

impl OrbitRecord {
    /// One CSV row: start, |λ|, |ρ|, decimal digits of the largest
    /// denominator.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.start,
            self.initial_length,
            self.period_length,
            self.max_denominator.to_string().len()
        )
    }
}

pub struct OrbitParams {
    pub max_steps: u64,
    /// Timeout once a denominator needs more decimal digits than this.
    pub max_digits: u32,
    /// Visited states kept for exact entry detection before switching to
    /// Brent's method plus a replay pass.
    pub memory_cap: usize,
    /// How often the observer callback fires (in absolute step numbers);
    /// 0 disables it.
    pub checkpoint_every: u64,
}

impl Default for OrbitParams {
    fn default() -> Self {
        OrbitParams {
            max_steps: 1_000_000,
            max_digits: 10_000,
            memory_cap: 1_000_000,
            checkpoint_every: 1_000_000,
        }
    }
}

/// Detect whether the orbit of n is (ultimately) periodic by exact-value
/// hashing of the visited states.
pub fn rational_orbit(
    f: &LinSystem,
    n: &PRat,
    max_steps: u64,
    max_digits: u32,
) -> Result<OrbitRecord, LinError> {
    let params = OrbitParams {
        max_steps,
        max_digits,
        ..OrbitParams::default()
    };
    rational_orbit_full(f, n, &params, None, &mut |_, _| true)
}

/// Full-control variant: `resume` takes a previously checkpointed
/// (state, step) pair with state = F^step(start), and `observe` fires every
/// `checkpoint_every` steps (return false to stop with a Timeout record).
/// Exact entry lengths are recovered by replaying from the true start, so
/// resumed runs lose no precision.
pub fn rational_orbit_full(
    f: &LinSystem,
    start: &PRat,
    params: &OrbitParams,
    resume: Option<(PRat, u64)>,
    observe: &mut dyn FnMut(u64, &PRat) -> bool,
) -> Result<OrbitRecord, LinError> {
    if !is_p_integral(start, f.p) {
        return Err(LinError::LeftRationals(format!(
            "start {} is outside Z_{}",
            start, f.p
        )));
    }
    let resumed = resume.is_some();
    let (mut x, step0) = match resume {
        Some((state, step)) => {
            if !is_p_integral(&state, f.p) {
                return Err(LinError::LeftRationals(format!(
                    "resume state {} is outside Z_{}",
                    state, f.p
                )));
            }
            (state, step)
        }
        None => (start.clone(), 0),
    };

    let mut max_den = start.denom().magnitude().max(x.denom().magnitude()).clone();
    let mut steps_used: u64 = 0;
    let timeout = |steps_used, max_den: &BigUint| OrbitRecord {
        start: start.clone(),
        status: OrbitStatus::Timeout,
        initial_length: 0,
        period_length: 0,
        period_digits: Vec::new(),
        steps_used,
        max_denominator: max_den.clone(),
    };

    // phase 1: walk forward, hashing states, until a value repeats
    let mut seen: HashMap<PRat, u64> = HashMap::new();
    let mut path: Vec<PRat> = Vec::new();
    let mut idx = step0;
    let mut brent_needed = false;
    let (entry_hint, rho) = loop {
        if let Some(&first) = seen.get(&x) {
            break (first, idx - first);
        }
        if seen.len() >= params.memory_cap {
            brent_needed = true;
            break (0, 0);
        }
        seen.insert(x.clone(), idx);
        path.push(x.clone());
        if steps_used >= params.max_steps {
            return Ok(timeout(steps_used, &max_den));
        }
        x = f.apply(&x)?;
        steps_used += 1;
        idx += 1;
        if x.denom().magnitude() > &max_den {
            max_den = x.denom().magnitude().clone();
            if decimal_digits_exceed(&max_den, params.max_digits) {
                return Ok(timeout(steps_used, &max_den));
            }
        }
        if params.checkpoint_every > 0 && idx % params.checkpoint_every == 0 && !observe(idx, &x) {
            return Ok(timeout(steps_used, &max_den));
        }
    };

    let pre_brent = steps_used;
    let rho = if brent_needed {
        let budget = params.max_steps.saturating_sub(steps_used);
        match brent_period(f, &x, budget, params.max_digits, &mut steps_used, &mut max_den)? {
            Some(r) => r,
            None => return Ok(timeout(steps_used, &max_den)),
        }
    } else {
        rho
    };
    // a cycle member is certainly reached this many steps from the start
    let entry_bound = idx + (steps_used - pre_brent);

    // phase 2: exact entry point. The hash pass gives it directly when it
    // started from the true start; otherwise replay two cursors ρ apart.
    let (entry, cycle_head) = if !brent_needed && !resumed {
        (entry_hint, path[(entry_hint - step0) as usize].clone())
    } else {
        let mut ahead = start.clone();
        for _ in 0..rho {
            ahead = f.apply(&ahead)?;
            steps_used += 1;
        }
        let mut base = start.clone();
        let mut e = 0u64;
        while base != ahead {
            if e > entry_bound {
                return Err(LinError::BadInput(
                    "resume state does not lie on the orbit of the start".into(),
                ));
            }
            base = f.apply(&base)?;
            ahead = f.apply(&ahead)?;
            steps_used += 2;
            e += 1;
        }
        (e, base)
    };

    // phase 3: anchor the cycle at its least-|·| element and read digits
    let mut cycle = Vec::with_capacity(rho as usize);
    let mut v = cycle_head.clone();
    for _ in 0..rho {
        cycle.push(v.clone());
        v = f.apply(&v)?;
        steps_used += 1;
    }
    let (anchor_off, _) = cycle
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.abs().cmp(&b.abs()).then_with(|| a.cmp(b)))
        .expect("cycle is nonempty");
    let (initial_length, anchor_val) = if entry == 0 {
        (0, cycle_head)
    } else {
        (entry + anchor_off as u64, cycle[anchor_off].clone())
    };
    let mut period_digits = Vec::with_capacity(rho as usize);
    let mut v = anchor_val;
    for _ in 0..rho {
        period_digits.push(f.low_digit(&v)?);
        v = f.apply(&v)?;
        steps_used += 1;
    }

    Ok(OrbitRecord {
        start: start.clone(),
        status: if entry == 0 {
            OrbitStatus::Periodic
        } else {
            OrbitStatus::UltimatelyPeriodic
        },
        initial_length,
        period_length: rho,
        period_digits,
        steps_used,
        max_denominator: max_den,
    })
}

/// Brent's cycle-length search from a point already past the memory cap.
/// Returns None on budget exhaustion.
fn brent_period(
    f: &LinSystem,
    from: &PRat,
    budget: u64,
    max_digits: u32,
    steps_used: &mut u64,
    max_den: &mut BigUint,
) -> Result<Option<u64>, LinError> {
    let mut spent = 0u64;
    let mut power: u64 = 1;
    let mut lam: u64 = 0;
    let mut tortoise = from.clone();
    let mut hare = from.clone();
    loop {
        if spent >= budget {
            return Ok(None);
        }
        if lam == power {
            tortoise = hare.clone();
            power = power.saturating_mul(2);
            lam = 0;
        }
        hare = f.apply(&hare)?;
        spent += 1;
        *steps_used += 1;
        lam += 1;
        if hare.denom().magnitude() > max_den {
            *max_den = hare.denom().magnitude().clone();
            if decimal_digits_exceed(max_den, max_digits) {
                return Ok(None);
            }
        }
        if hare == tortoise {
            return Ok(Some(lam));
        }
    }
}

/// Does x need more than `cap` decimal digits? Cheap bit-length bounds
/// first, exact count only in the ambiguous window.
fn decimal_digits_exceed(x: &BigUint, cap: u32) -> bool {
    const LOG10_2: f64 = 0.301029995663981;
    let bits = x.bits();
    if bits == 0 {
        return false;
    }
    let lower = ((bits - 1) as f64 * LOG10_2).floor() as u64 + 1;
    let upper = (bits as f64 * LOG10_2).floor() as u64 + 1;
    if lower > cap as u64 {
        return true;
    }
    if upper <= cap as u64 {
        return false;
    }
    x.to_string().len() > cap as usize
}

// ---------------------------------------------------------------------------
// the (m_I, m_P) experiment scan

/// One maximizing pair of the scan: the slope vector, the start, and the
/// slope product B (the conjectured-relevant quantity, reported with no
/// conclusion drawn).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanWitness {
    pub slopes: Vec<i64>,
    pub start: u64,
    pub slope_product: i64,
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    pub p: u64,
    pub n_max: u64,
    pub systems_scanned: u64,
    /// m_I: the largest pre-period length |λ| seen.
    pub max_initial: u64,
    pub initial_witnesses: Vec<ScanWitness>,
    /// m_P: the largest cycle length |ρ| seen.
    pub max_period: u64,
    pub period_witnesses: Vec<ScanWitness>,
}

/// Scan every system (b_0·x, …, b_{p−1}·x) with nonzero integer slopes,
/// unit low digits and |Π b_r| < p^p, over starts n ∈ [1, n_max], for the
/// maxima of |λ| (first entry into the cycle) and |ρ|. `accept` filters the
/// slope vectors on top of the family constraints. Systems run in parallel;
/// per-system caches make orbit tails shared across starts free.
pub fn scan_mi_mp<P>(p: u64, n_max: u64, accept: P) -> ScanReport
where
    P: Fn(&[i64]) -> bool + Sync,
{
    let systems: Vec<Vec<i64>> = enumerate_slopes(p)
        .into_iter()
        .filter(|s| accept(s))
        .collect();
    let per_system: Vec<SystemExtremes> = systems
        .par_iter()
        .map(|slopes| system_extremes(p, slopes, n_max))
        .collect();

    let mut report = ScanReport {
        p,
        n_max,
        systems_scanned: systems.len() as u64,
        max_initial: 0,
        initial_witnesses: Vec::new(),
        max_period: 0,
        period_witnesses: Vec::new(),
    };
    for (slopes, ex) in systems.iter().zip(per_system) {
        let product: i64 = slopes.iter().product();
        let fold = |best: &mut u64, wits: &mut Vec<ScanWitness>, cand: u64, starts: &[u64]| {
            if cand > *best {
                *best = cand;
                wits.clear();
            }
            if cand == *best {
                wits.extend(starts.iter().map(|&n| ScanWitness {
                    slopes: slopes.clone(),
                    start: n,
                    slope_product: product,
                }));
            }
        };
        fold(
            &mut report.max_initial,
            &mut report.initial_witnesses,
            ex.best_initial,
            &ex.initial_starts,
        );
        fold(
            &mut report.max_period,
            &mut report.period_witnesses,
            ex.best_period,
            &ex.period_starts,
        );
    }
    report
}

/// All slope vectors of the scan family for base p, in a fixed order
/// (positions left to right, magnitudes ascending, + before −).
pub fn enumerate_slopes(p: u64) -> Vec<Vec<i64>> {
    let bound = pow_u(p, p as u32)
        .to_i128()
        .expect("family bound fits in i128");
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(p as usize);
    fn rec(p: u64, bound: i128, prod: i128, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == p as usize {
            out.push(prefix.clone());
            return;
        }
        let cap = (bound - 1) / prod.abs();
        for w in 1..=cap {
            for b in [w, -w] {
                if (b.rem_euclid(p as i128) as u64).gcd(&p) != 1 {
                    continue;
                }
                prefix.push(b as i64);
                rec(p, bound, prod * w, prefix, out);
                prefix.pop();
            }
        }
    }
    rec(p, bound, 1, &mut prefix, &mut out);
    out
}

struct SystemExtremes {
    best_initial: u64,
    initial_starts: Vec<u64>,
    best_period: u64,
    period_starts: Vec<u64>,
}

// Orbits of the zero-constant family stay in Z, so the scan runs on machine
// integers with a per-value overflow escape into BigInt.
fn system_extremes(p: u64, slopes: &[i64], n_max: u64) -> SystemExtremes {
    let mut cache: HashMap<i128, (u64, u64)> = HashMap::new();
    let mut ex = SystemExtremes {
        best_initial: 0,
        initial_starts: Vec::new(),
        best_period: 0,
        period_starts: Vec::new(),
    };
    for n in 1..=n_max {
        let (lam, rho) = orbit_entry_period(p, slopes, n, &mut cache);
        if lam > ex.best_initial {
            ex.best_initial = lam;
            ex.initial_starts.clear();
        }
        if lam == ex.best_initial {
            ex.initial_starts.push(n);
        }
        if rho > ex.best_period {
            ex.best_period = rho;
            ex.period_starts.clear();
        }
        if rho == ex.best_period {
            ex.period_starts.push(n);
        }
    }
    ex
}

fn step_i128(p: u64, slopes: &[i64], x: i128) -> Option<i128> {
    let r = x.rem_euclid(p as i128) as usize;
    let v = x.checked_mul(slopes[r] as i128)?;
    Some((v - v.rem_euclid(p as i128)) / p as i128)
}

fn step_big(p: u64, slopes: &[i64], x: &BigInt) -> BigInt {
    let r = x.mod_floor(&big(p)).to_usize().unwrap();
    let v = x * slopes[r];
    (&v - v.mod_floor(&big(p))) / big(p)
}

/// Entry index and cycle length of the integer orbit of n, reusing the
/// per-system cache of already-resolved tails.
fn orbit_entry_period(
    p: u64,
    slopes: &[i64],
    n: u64,
    cache: &mut HashMap<i128, (u64, u64)>,
) -> (u64, u64) {
    let mut path: Vec<i128> = Vec::new();
    let mut local: HashMap<i128, u64> = HashMap::new();
    let mut x = n as i128;
    loop {
        if let Some(&(dist, rho)) = cache.get(&x) {
            let lam = path.len() as u64 + dist;
            for (j, &v) in path.iter().enumerate() {
                cache.insert(v, (lam - j as u64, rho));
            }
            return (lam, rho);
        }
        if let Some(&first) = local.get(&x) {
            let rho = path.len() as u64 - first;
            for (j, &v) in path.iter().enumerate() {
                let dist = first.saturating_sub(j as u64);
                cache.insert(v, (dist, rho));
            }
            return (first, rho);
        }
        local.insert(x, path.len() as u64);
        path.push(x);
        match step_i128(p, slopes, x) {
            Some(next) => x = next,
            None => return orbit_entry_period_big(p, slopes, n),
        }
    }
}

fn orbit_entry_period_big(p: u64, slopes: &[i64], n: u64) -> (u64, u64) {
    let mut local: HashMap<BigInt, u64> = HashMap::new();
    let mut x = BigInt::from(n);
    let mut i = 0u64;
    loop {
        if let Some(&first) = local.get(&x) {
            return (first, i - first);
        }
        local.insert(x.clone(), i);
        x = step_big(p, slopes, &x);
        i += 1;
    }
}
