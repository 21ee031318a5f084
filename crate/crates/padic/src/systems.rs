//! p-fibred systems F = (F[0], …, F[p−1]): branch evaluation, the fibred
//! application n ↦ (F[n%p](n) − F[n%p](n)%p)/p, digit expansions with
//! precision-safe reduction, canonical and weak canonical forms, brute-force
//! block checks, degree reduction, and text/JSON formats.

use crate::arith::{
    embed_prat, is_p_integral, mod_inverse, nu_p, pow_u, prat, rem_euclid_big, PRat, Residue,
};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SystemsError {
    #[error("no precision left for another application")]
    PrecisionExhausted,
    #[error("value leaves Z_p: {0}")]
    NonIntegralValue(String),
    #[error("weak block property not verified to the requested depth")]
    WeakBlockUnverified,
    #[error("branch coefficients are not p-integral")]
    NonIntegralCoefficients,
    #[error("low digit not constant on the residue class; no weak canonical form of this kind")]
    NonConstantLowDigit,
    #[error("cannot parse system: {0}")]
    Parse(String),
    #[error("bad system shape: {0}")]
    Shape(String),
}

/// One branch of a p-fibred system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Polynomial with exact rational coefficients, ascending degree.
    Poly(Vec<PRat>),
    /// Quotient g/h of two integer-coefficient polynomials; h must be a
    /// p-unit wherever the branch is evaluated (checked at evaluation).
    RatFn { num: Vec<BigInt>, den: Vec<BigInt> },
    /// Finite residue map mod p^K, interpreted as the total function
    /// x ↦ map[x % p^K].
    Table { k: u32, map: Vec<BigUint> },
}

fn eval_int_poly(coeffs: &[BigInt], x: &PRat) -> PRat {
    let mut acc = PRat::zero();
    for c in coeffs.iter().rev() {
        acc = acc * x + PRat::from_integer(c.clone());
    }
    acc
}

fn eval_int_poly_residue(coeffs: &[BigInt], x: &Residue) -> Residue {
    let p = x.base();
    let k = x.precision();
    let mut acc = Residue::from_u64(p, k, 0);
    for c in coeffs.iter().rev() {
        acc = acc.mul(x).add(&Residue::from_int(p, k, c));
    }
    acc
}

impl Branch {
    pub fn poly_i64(coeffs: &[i64]) -> Branch {
        Branch::Poly(coeffs.iter().map(|&c| prat(c, 1)).collect())
    }

    /// Exact value at a rational point.
    pub fn eval_prat(&self, x: &PRat, p: u64) -> Result<PRat, SystemsError> {
        match self {
            Branch::Poly(coeffs) => {
                let mut acc = PRat::zero();
                for c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                Ok(acc)
            }
            Branch::RatFn { num, den } => {
                let d = eval_int_poly(den, x);
                if d.is_zero() {
                    return Err(SystemsError::NonIntegralValue(
                        "denominator vanishes".into(),
                    ));
                }
                Ok(eval_int_poly(num, x) / d)
            }
            Branch::Table { k, map } => {
                let idx = embed_prat(x, p, *k)
                    .map_err(|e| SystemsError::NonIntegralValue(e.to_string()))?;
                let idx = idx.value().to_usize().ok_or_else(|| {
                    SystemsError::Shape("table index out of range".into())
                })?;
                Ok(PRat::from_integer(BigInt::from(map[idx].clone())))
            }
        }
    }

    /// Value mod p^K at a residue point; precision is preserved.
    pub fn eval_residue(&self, x: &Residue) -> Result<Residue, SystemsError> {
        let p = x.base();
        let k = x.precision();
        match self {
            Branch::Poly(coeffs) => {
                let mut acc = Residue::from_u64(p, k, 0);
                for c in coeffs.iter().rev() {
                    let c_res = embed_prat(c, p, k)
                        .map_err(|e| SystemsError::NonIntegralValue(e.to_string()))?;
                    acc = acc.mul(x).add(&c_res);
                }
                Ok(acc)
            }
            Branch::RatFn { num, den } => {
                let n = eval_int_poly_residue(num, x);
                let d = eval_int_poly_residue(den, x);
                let inv = mod_inverse(&BigInt::from(d.value().clone()), &x.modulus())
                    .ok_or_else(|| {
                        SystemsError::NonIntegralValue("denominator is not a p-unit".into())
                    })?;
                Ok(n.mul(&Residue::new(p, k, inv)))
            }
            Branch::Table { k: kt, map } => {
                let idx = (x.value() % pow_u(p, *kt)).to_usize().ok_or_else(|| {
                    SystemsError::Shape("table index out of range".into())
                })?;
                Ok(Residue::new(p, k, map[idx].clone()))
            }
        }
    }

    /// True for polynomial branches with all coefficients in Z_p.
    pub fn is_zp_poly(&self, p: u64) -> bool {
        match self {
            Branch::Poly(coeffs) => coeffs.iter().all(|c| is_p_integral(c, p)),
            _ => false,
        }
    }

    /// Precision shift a rational-coefficient polynomial needs:
    /// K = −min(0, ν_p of the coefficients).
    pub fn k_shift(&self, p: u64) -> u32 {
        match self {
            Branch::Poly(coeffs) => coeffs
                .iter()
                .filter_map(|c| nu_p(c, p).finite())
                .map(|v| if v < 0 { (-v) as u32 } else { 0 })
                .max()
                .unwrap_or(0),
            _ => 0,
        }
    }
}

#[derive(Debug, Default)]
struct Flags {
    weak_canonical: AtomicBool,
    block_level: AtomicU32,
    weak_block_level: AtomicU32,
}

impl Clone for Flags {
    fn clone(&self) -> Self {
        Flags {
            weak_canonical: AtomicBool::new(self.weak_canonical.load(Ordering::Relaxed)),
            block_level: AtomicU32::new(self.block_level.load(Ordering::Relaxed)),
            weak_block_level: AtomicU32::new(self.weak_block_level.load(Ordering::Relaxed)),
        }
    }
}

/// A p-fibred system: base p and one branch per residue class mod p.
/// Verified properties are cached write-once and shared by clones made
/// after verification.
#[derive(Clone, Debug)]
pub struct FibredSystem {
    p: u64,
    branches: Vec<Branch>,
    flags: Flags,
}

impl PartialEq for FibredSystem {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.branches == other.branches
    }
}
impl Eq for FibredSystem {}

impl FibredSystem {
    pub fn new(p: u64, branches: Vec<Branch>) -> Result<Self, SystemsError> {
        if p < 2 {
            return Err(SystemsError::Shape("base must be at least 2".into()));
        }
        if branches.len() != p as usize {
            return Err(SystemsError::Shape(format!(
                "need exactly {p} branches, got {}",
                branches.len()
            )));
        }
        for b in &branches {
            if let Branch::Table { k, map } = b {
                let want = pow_u(p, *k).to_usize().ok_or_else(|| {
                    SystemsError::Shape("table too large".into())
                })?;
                if map.len() != want {
                    return Err(SystemsError::Shape(format!(
                        "table must have {want} entries, got {}",
                        map.len()
                    )));
                }
                let m = pow_u(p, *k);
                if map.iter().any(|v| v >= &m) {
                    return Err(SystemsError::Shape("table entry out of range".into()));
                }
            }
        }
        Ok(FibredSystem { p, branches, flags: Flags::default() })
    }

    /// Shorthand for a system of integer-coefficient polynomial branches.
    pub fn from_int_polys(p: u64, polys: &[&[i64]]) -> Result<Self, SystemsError> {
        FibredSystem::new(p, polys.iter().map(|c| Branch::poly_i64(c)).collect())
    }

    pub fn base(&self) -> u64 {
        self.p
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, r: u64) -> &Branch {
        &self.branches[r as usize]
    }

    pub fn all_zp_poly(&self) -> bool {
        self.branches.iter().all(|b| b.is_zp_poly(self.p))
    }

    /// Largest k with the block property verified, 0 if never checked.
    pub fn verified_block_level(&self) -> u32 {
        self.flags.block_level.load(Ordering::Relaxed)
    }

    pub fn verified_weak_block_level(&self) -> u32 {
        self.flags.weak_block_level.load(Ordering::Relaxed)
    }

    pub fn is_flagged_weak_canonical(&self) -> bool {
        self.flags.weak_canonical.load(Ordering::Relaxed)
    }

    pub(crate) fn note_block_level(&self, k: u32) {
        self.flags.block_level.fetch_max(k, Ordering::Relaxed);
        self.flags.weak_block_level.fetch_max(k, Ordering::Relaxed);
    }

    pub(crate) fn note_weak_block_level(&self, k: u32) {
        self.flags.weak_block_level.fetch_max(k, Ordering::Relaxed);
    }

    fn note_weak_canonical(&self) {
        self.flags.weak_canonical.store(true, Ordering::Relaxed);
    }
}

fn prat_low_digit(x: &PRat, p: u64) -> Result<u64, SystemsError> {
    let r = embed_prat(x, p, 1).map_err(|e| SystemsError::NonIntegralValue(e.to_string()))?;
    Ok(r.value().to_u64().expect("digit fits"))
}

/// One fibred application on an exact rational in Z_p.
pub fn apply_prat(f: &FibredSystem, n: &PRat) -> Result<PRat, SystemsError> {
    let p = f.p;
    if !is_p_integral(n, p) {
        return Err(SystemsError::NonIntegralValue(format!("{n} is outside Z_{p}")));
    }
    let r = prat_low_digit(n, p)?;
    let v = f.branch(r).eval_prat(n, p)?;
    if !is_p_integral(&v, p) {
        return Err(SystemsError::NonIntegralValue(format!(
            "branch {r} maps {n} to {v}, outside Z_{p}"
        )));
    }
    let d = prat_low_digit(&v, p)?;
    Ok((v - prat(d as i64, 1)) / PRat::from_integer(BigInt::from(p)))
}

/// One fibred application on a residue; costs one unit of precision.
pub fn apply_residue(f: &FibredSystem, n: &Residue) -> Result<Residue, SystemsError> {
    if n.precision() == 0 {
        return Err(SystemsError::PrecisionExhausted);
    }
    let r = n.low_digit();
    let v = f.branch(r).eval_residue(n)?;
    Ok(v.shift_down())
}

/// First k digits of the F-expansion of n, all arithmetic reduced mod p^k:
/// each branch value is reduced mod p^k before the shift, so every iterate
/// after the first lies below p^(k−1). Valid whenever F has the weak block
/// property up to level k, which holds automatically for Z_p-polynomial
/// branches and is otherwise required as a verified flag.
pub fn digit_expansion(f: &FibredSystem, n: &Residue, k: u32) -> Result<Vec<u64>, SystemsError> {
    digit_expansion_with_iterates(f, n, k).map(|(d, _)| d)
}

/// Same as digit_expansion but also returns the reduced iterates
/// x_0, …, x_{k−1} the digits were read from.
pub fn digit_expansion_with_iterates(
    f: &FibredSystem,
    n: &Residue,
    k: u32,
) -> Result<(Vec<u64>, Vec<BigUint>), SystemsError> {
    if n.base() != f.p {
        return Err(SystemsError::Shape("residue base differs from system base".into()));
    }
    if n.precision() < k {
        return Err(SystemsError::PrecisionExhausted);
    }
    if !f.all_zp_poly() && f.verified_weak_block_level() < k {
        return Err(SystemsError::WeakBlockUnverified);
    }
    let p = f.p;
    let mut x = n.reduce(k);
    let mut digits = Vec::with_capacity(k as usize);
    let mut iterates = Vec::with_capacity(k as usize);
    for i in 0..k {
        iterates.push(x.value().clone());
        let d = x.low_digit();
        digits.push(d);
        if i + 1 < k {
            let v = f.branch(d).eval_residue(&x)?;
            x = Residue::new(p, k, (v.value() - v.value() % p) / p);
        }
    }
    Ok((digits, iterates))
}

/// First k digits by exact rational iteration; no block property needed.
pub fn digit_expansion_exact(
    f: &FibredSystem,
    n: &PRat,
    k: u32,
) -> Result<Vec<u64>, SystemsError> {
    let mut x = n.clone();
    let mut digits = Vec::with_capacity(k as usize);
    for _ in 0..k {
        digits.push(prat_low_digit(&x, f.p)?);
        x = apply_prat(f, &x)?;
    }
    Ok(digits)
}

// Domain on which the weak half of a block check is a proof rather than a
// sample: Z_p-polynomial branches need none (congruence preservation is a
// theorem), tables have finite memory p^K, anything else has no finite
// certificate here.
fn weak_check_domain(f: &FibredSystem, k: u32) -> Option<Option<u32>> {
    if f.all_zp_poly() {
        return Some(None);
    }
    let mut depth = k;
    for b in &f.branches {
        match b {
            Branch::Table { k: kt, .. } => depth = depth.max(*kt),
            Branch::Poly(_) if b.is_zp_poly(f.p) => {}
            _ => return None,
        }
    }
    Some(Some(depth))
}

fn exact_digit_rows(f: &FibredSystem, count: usize, k: u32) -> Option<Vec<Vec<u64>>> {
    let mut rows = Vec::with_capacity(count);
    for n in 0..count {
        match digit_expansion_exact(f, &prat(n as i64, 1), k) {
            Ok(d) => rows.push(d),
            Err(_) => return None,
        }
    }
    Some(rows)
}

// equal residues mod p^j must give equal j-digit prefixes; adjacent class
// members n, n+p^j cover every pair by transitivity
fn weak_pairs_hold(rows: &[Vec<u64>], p: u64, k: u32) -> bool {
    for j in 1..=k {
        let span = match pow_u(p, j).to_usize() {
            Some(s) if s < rows.len() => s,
            _ => continue,
        };
        for n in 0..rows.len() - span {
            if rows[n][..j as usize] != rows[n + span][..j as usize] {
                return false;
            }
        }
    }
    true
}

/// True iff the block property holds at every level ≤ k: distinct residues
/// mod p^j get distinct j-digit prefixes (checked on [0, p^j)) and equal
/// residues get equal prefixes. For Z_p-polynomial and table branches the
/// verdict is exact and recorded on the system's flags; for other branch
/// kinds the weak half is sampled on [0, p^(k+1)) and no flag is set.
pub fn block_check_bruteforce(f: &FibredSystem, k: u32) -> bool {
    let total = match pow_u(f.p, k).to_usize() {
        Some(t) => t,
        None => return false,
    };
    let rows = match exact_digit_rows(f, total, k) {
        Some(r) => r,
        None => return false,
    };
    for j in 1..=k {
        let span = pow_u(f.p, j).to_usize().expect("within total");
        let mut seen = std::collections::HashSet::new();
        for row in rows.iter().take(span) {
            if !seen.insert(&row[..j as usize]) {
                return false;
            }
        }
    }
    match weak_check_domain(f, k) {
        Some(None) => {
            f.note_block_level(k);
            true
        }
        Some(Some(depth)) => {
            let count = match pow_u(f.p, depth).to_usize() {
                Some(c) => c,
                None => return false,
            };
            let deep_rows = match exact_digit_rows(f, count, k) {
                Some(r) => r,
                None => return false,
            };
            if weak_pairs_hold(&deep_rows, f.p, k) {
                f.note_block_level(k);
                true
            } else {
                false
            }
        }
        None => {
            let count = match pow_u(f.p, k + 1).to_usize() {
                Some(c) => c,
                None => return false,
            };
            exact_digit_rows(f, count, k)
                .map(|r| weak_pairs_hold(&r, f.p, k))
                .unwrap_or(false)
        }
    }
}

/// Weak half of the block check alone: equal residues mod p^j give equal
/// j-digit prefixes for all j ≤ k. Exact (and flag-setting) for
/// Z_p-polynomial and table branches, sampled otherwise.
pub fn weak_block_check_bruteforce(f: &FibredSystem, k: u32) -> bool {
    match weak_check_domain(f, k) {
        Some(None) => {
            f.note_weak_block_level(k);
            true
        }
        Some(Some(depth)) => {
            let count = match pow_u(f.p, depth).to_usize() {
                Some(c) => c,
                None => return false,
            };
            let rows = match exact_digit_rows(f, count, k) {
                Some(r) => r,
                None => return false,
            };
            if weak_pairs_hold(&rows, f.p, k) {
                f.note_weak_block_level(k);
                true
            } else {
                false
            }
        }
        None => {
            let count = match pow_u(f.p, k + 1).to_usize() {
                Some(c) => c,
                None => return false,
            };
            exact_digit_rows(f, count, k)
                .map(|r| weak_pairs_hold(&r, f.p, k))
                .unwrap_or(false)
        }
    }
}

/// The canonical form tabulated mod p^K: branch r maps its own class by
/// x ↦ F[r](x) − F[r](x)%p and everything else to 0.
pub fn canonical_form(f: &FibredSystem, k_target: u32) -> Result<FibredSystem, SystemsError> {
    let p = f.p;
    let size = pow_u(p, k_target)
        .to_usize()
        .ok_or_else(|| SystemsError::Shape("target precision too large".into()))?;
    let mut branches = Vec::with_capacity(p as usize);
    for r in 0..p {
        let mut map = vec![BigUint::zero(); size];
        let mut v = r as usize;
        while v < size {
            let val = f.branch(r).eval_prat(&prat(v as i64, 1), p)?;
            if !is_p_integral(&val, p) {
                return Err(SystemsError::NonIntegralValue(format!(
                    "branch {r} at {v} gives {val}"
                )));
            }
            let d = prat_low_digit(&val, p)?;
            let shifted = val - prat(d as i64, 1);
            let res = embed_prat(&shifted, p, k_target)
                .map_err(|e| SystemsError::NonIntegralValue(e.to_string()))?;
            map[v] = res.value().clone();
            v += p as usize;
        }
        branches.push(Branch::Table { k: k_target, map });
    }
    let out = FibredSystem::new(p, branches)?;
    out.note_weak_canonical();
    Ok(out)
}

fn branch_low_digit_on_class(
    b: &Branch,
    p: u64,
    r: u64,
) -> Result<u64, SystemsError> {
    // witness depth: one more digit than the coefficient denominators consume
    let k_shift = b.k_shift(p);
    let reps = pow_u(p, k_shift).to_usize().ok_or_else(|| {
        SystemsError::Shape("witness set too large".into())
    })?;
    let mut digit = None;
    for i in 0..reps {
        let x = prat(r as i64 + (i as i64) * p as i64, 1);
        let val = b.eval_prat(&x, p)?;
        if !is_p_integral(&val, p) {
            return Err(SystemsError::NonIntegralValue(format!(
                "value {val} at {x} is outside Z_{p}"
            )));
        }
        let d = prat_low_digit(&val, p)?;
        match digit {
            None => digit = Some(d),
            Some(d0) if d0 != d => return Err(SystemsError::NonConstantLowDigit),
            _ => {}
        }
    }
    Ok(digit.expect("at least one representative"))
}

/// Weak canonical form: shift each branch so values on its own class are
/// divisible by p, preserving the digit expansion and the branch kind.
/// Table branches are adjusted pointwise; polynomial and rational branches
/// lose the constant low digit of their class, which must be constant.
pub fn weak_canonicalize(f: &FibredSystem) -> Result<FibredSystem, SystemsError> {
    let p = f.p;
    let mut branches = Vec::with_capacity(p as usize);
    for r in 0..p {
        let adjusted = match f.branch(r) {
            Branch::Table { k, map } => {
                let map = map.iter().map(|v| v - v % p).collect();
                Branch::Table { k: *k, map }
            }
            Branch::Poly(coeffs) => {
                let c = branch_low_digit_on_class(f.branch(r), p, r)?;
                let mut coeffs = coeffs.clone();
                if coeffs.is_empty() {
                    coeffs.push(PRat::zero());
                }
                coeffs[0] -= prat(c as i64, 1);
                Branch::Poly(coeffs)
            }
            Branch::RatFn { num, den } => {
                let c = branch_low_digit_on_class(f.branch(r), p, r)?;
                let c = BigInt::from(c);
                let mut new_num = num.clone();
                new_num.resize(new_num.len().max(den.len()), BigInt::zero());
                for (i, d) in den.iter().enumerate() {
                    new_num[i] -= &c * d;
                }
                while new_num.len() > 1 && new_num.last() == Some(&BigInt::zero()) {
                    new_num.pop();
                }
                Branch::RatFn { num: new_num, den: den.clone() }
            }
        };
        branches.push(adjusted);
    }
    let out = FibredSystem::new(p, branches)?;
    out.note_weak_canonical();
    out.flags
        .block_level
        .store(f.verified_block_level(), Ordering::Relaxed);
    out.flags
        .weak_block_level
        .store(f.verified_weak_block_level(), Ordering::Relaxed);
    Ok(out)
}

/// Replace every Z_p-polynomial branch by the degree-(k−1) polynomial with
/// coefficients in [0, p^k) interpolating it on r, r+p, …, r+(k−1)p; the
/// first k digit columns are unchanged. The interpolation system is solved
/// exactly over the rationals and reduced afterwards.
pub fn reduce_degree(f: &FibredSystem, k: u32) -> Result<FibredSystem, SystemsError> {
    if k == 0 {
        return Err(SystemsError::Shape("need at least one digit".into()));
    }
    let p = f.p;
    let mut branches = Vec::with_capacity(p as usize);
    for r in 0..p {
        let coeffs = match f.branch(r) {
            Branch::Poly(c) if f.branch(r).is_zp_poly(p) => c,
            _ => return Err(SystemsError::NonIntegralCoefficients),
        };
        let n = k as usize;
        // vandermonde rows at the class representatives r + ip
        let mut a: Vec<Vec<PRat>> = Vec::with_capacity(n);
        let mut b: Vec<PRat> = Vec::with_capacity(n);
        for i in 0..n {
            let node = prat(r as i64 + i as i64 * p as i64, 1);
            let mut row = Vec::with_capacity(n);
            let mut pw = PRat::one();
            for _ in 0..n {
                row.push(pw.clone());
                pw *= &node;
            }
            a.push(row);
            let mut acc = PRat::zero();
            for c in coeffs.iter().rev() {
                acc = acc * &node + c;
            }
            b.push(acc);
        }
        let sol = solve_exact(&mut a, &mut b)?;
        let mut new_coeffs = Vec::with_capacity(n);
        for c in &sol {
            let res = embed_prat(c, p, k).map_err(|_| SystemsError::NonIntegralCoefficients)?;
            new_coeffs.push(PRat::from_integer(BigInt::from(res.value().clone())));
        }
        while new_coeffs.len() > 1 && new_coeffs.last().map(|c| c.is_zero()) == Some(true) {
            new_coeffs.pop();
        }
        branches.push(Branch::Poly(new_coeffs));
    }
    FibredSystem::new(p, branches)
}

fn solve_exact(a: &mut [Vec<PRat>], b: &mut [PRat]) -> Result<Vec<PRat>, SystemsError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&row| !a[row][col].is_zero())
            .ok_or_else(|| SystemsError::Shape("singular interpolation matrix".into()))?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = a[col][col].recip();
        for j in col..n {
            a[col][j] *= &inv;
        }
        b[col] *= &inv;
        for row in 0..n {
            if row != col && !a[row][col].is_zero() {
                let factor = a[row][col].clone();
                for j in col..n {
                    let t = &factor * &a[col][j];
                    a[row][j] -= t;
                }
                let t = &factor * &b[col];
                b[row] -= t;
            }
        }
    }
    Ok(b.to_vec())
}

// ---- text format ----

fn format_prat(c: &PRat) -> String {
    if c.denom().is_one() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

fn format_poly(coeffs: &[PRat]) -> String {
    let mut out = String::new();
    for (e, c) in coeffs.iter().enumerate().rev() {
        if c.is_zero() {
            continue;
        }
        let mag = c.abs();
        let sign_neg = c.is_negative();
        if out.is_empty() {
            if sign_neg {
                out.push('-');
            }
        } else {
            out.push(if sign_neg { '-' } else { '+' });
        }
        let coeff_txt = format_prat(&mag);
        if e == 0 {
            out.push_str(&coeff_txt);
        } else {
            if !mag.is_one() {
                out.push_str(&coeff_txt);
            }
            out.push('x');
            if e > 1 {
                out.push_str(&format!("^{e}"));
            }
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

fn format_int_poly(coeffs: &[BigInt]) -> String {
    let as_prat: Vec<PRat> = coeffs.iter().map(|c| PRat::from_integer(c.clone())).collect();
    format_poly(&as_prat)
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Poly(c) => write!(f, "{}", format_poly(c)),
            Branch::RatFn { num, den } => {
                write!(f, "({})/({})", format_int_poly(num), format_int_poly(den))
            }
            Branch::Table { k, map } => {
                let entries: Vec<String> = map.iter().map(|v| v.to_string()).collect();
                write!(f, "table^{}[{}]", k, entries.join(","))
            }
        }
    }
}

impl fmt::Display for FibredSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.branches.iter().map(|b| b.to_string()).collect();
        write!(f, "({})@{}", parts.join(", "), self.p)
    }
}

fn parse_prat_coeff(text: &str) -> Result<PRat, SystemsError> {
    let t = text.trim();
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (t, "1"),
    };
    let n: BigInt = num.parse().map_err(|_| SystemsError::Parse(format!("bad number {t:?}")))?;
    let d: BigInt = den.parse().map_err(|_| SystemsError::Parse(format!("bad number {t:?}")))?;
    if d.is_zero() {
        return Err(SystemsError::Parse("zero denominator".into()));
    }
    Ok(PRat::new(n, d))
}

/// Parse one polynomial like "7x^3-4x^2+x-6" or "21/5x" into ascending
/// coefficients.
pub fn parse_poly(text: &str) -> Result<Vec<PRat>, SystemsError> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(SystemsError::Parse("empty polynomial".into()));
    }
    // split into signed terms
    let mut terms = Vec::new();
    let chars: Vec<char> = compact.chars().collect();
    let mut start = 0usize;
    for i in 1..chars.len() {
        if (chars[i] == '+' || chars[i] == '-') && chars[i - 1] != '^' && chars[i - 1] != '/' {
            terms.push(compact[start..i].to_string());
            start = i;
        }
    }
    terms.push(compact[start..].to_string());

    let mut coeffs: Vec<PRat> = Vec::new();
    for term in terms {
        let (sign, body) = match term.strip_prefix('-') {
            Some(rest) => (-1i64, rest),
            None => (1, term.strip_prefix('+').unwrap_or(&term)),
        };
        if body.is_empty() {
            return Err(SystemsError::Parse(format!("dangling sign in {text:?}")));
        }
        let (coeff_txt, exp) = match body.find('x') {
            Some(pos) => {
                let after = &body[pos + 1..];
                let e: usize = if after.is_empty() {
                    1
                } else if let Some(e_txt) = after.strip_prefix('^') {
                    e_txt.parse().map_err(|_| {
                        SystemsError::Parse(format!("bad exponent in {body:?}"))
                    })?
                } else {
                    return Err(SystemsError::Parse(format!("unexpected {after:?} after x")));
                };
                (&body[..pos], e)
            }
            None => (body, 0usize),
        };
        let coeff = if coeff_txt.is_empty() {
            PRat::one()
        } else {
            parse_prat_coeff(coeff_txt)?
        };
        let coeff = coeff * prat(sign, 1);
        if coeffs.len() <= exp {
            coeffs.resize(exp + 1, PRat::zero());
        }
        coeffs[exp] += coeff;
    }
    while coeffs.len() > 1 && coeffs.last().map(|c| c.is_zero()) == Some(true) {
        coeffs.pop();
    }
    Ok(coeffs)
}

fn prat_coeffs_to_int(coeffs: Vec<PRat>) -> Result<Vec<BigInt>, SystemsError> {
    coeffs
        .into_iter()
        .map(|c| {
            if c.denom().is_one() {
                Ok(c.numer().clone())
            } else {
                Err(SystemsError::Parse(
                    "rational coefficients are not allowed in a quotient branch".into(),
                ))
            }
        })
        .collect()
}

fn parse_branch(text: &str, p: u64) -> Result<Branch, SystemsError> {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("table^") {
        let open = rest
            .find('[')
            .ok_or_else(|| SystemsError::Parse("table needs [entries]".into()))?;
        let k: u32 = rest[..open]
            .trim()
            .parse()
            .map_err(|_| SystemsError::Parse("bad table precision".into()))?;
        let inner = rest[open + 1..]
            .strip_suffix(']')
            .ok_or_else(|| SystemsError::Parse("unclosed table".into()))?;
        let map = inner
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<BigUint>()
                    .map_err(|_| SystemsError::Parse(format!("bad table entry {v:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Branch::Table { k, map });
    }
    if t.starts_with('(') {
        // quotient of two parenthesized integer polynomials
        let close = matching_paren(t, 0)?;
        let num_txt = &t[1..close];
        let rest = t[close + 1..].trim_start();
        let rest = rest
            .strip_prefix('/')
            .ok_or_else(|| SystemsError::Parse("expected / after (numerator)".into()))?
            .trim_start();
        if !rest.starts_with('(') || !rest.ends_with(')') {
            return Err(SystemsError::Parse("expected (denominator)".into()));
        }
        let den_txt = &rest[1..rest.len() - 1];
        let num = prat_coeffs_to_int(parse_poly(num_txt)?)?;
        let den = prat_coeffs_to_int(parse_poly(den_txt)?)?;
        let _ = p;
        return Ok(Branch::RatFn { num, den });
    }
    Ok(Branch::Poly(parse_poly(t)?))
}

fn matching_paren(s: &str, open: usize) -> Result<usize, SystemsError> {
    let bytes = s.as_bytes();
    let mut depth = 0i32;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        match b {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(i);
                }
            }
            _ => {}
        }
    }
    Err(SystemsError::Parse("unbalanced parentheses".into()))
}

/// Parse "(x, 3x+1)@2" and friends.
pub fn parse_system(text: &str) -> Result<FibredSystem, SystemsError> {
    let t = text.trim();
    let at = t
        .rfind('@')
        .ok_or_else(|| SystemsError::Parse("missing @p suffix".into()))?;
    let p: u64 = t[at + 1..]
        .trim()
        .parse()
        .map_err(|_| SystemsError::Parse("bad base after @".into()))?;
    let body = t[..at].trim();
    if !body.starts_with('(') || !body.ends_with(')') {
        return Err(SystemsError::Parse("system must be parenthesized".into()));
    }
    let inner = &body[1..body.len() - 1];
    // split on commas at depth zero (branches may contain parens and
    // table entries their own commas, so track both)
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut bracket = 0i32;
    let mut start = 0usize;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            '[' => bracket += 1,
            ']' => bracket -= 1,
            ',' if depth == 0 && bracket == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    let branches = parts
        .iter()
        .map(|part| parse_branch(part, p))
        .collect::<Result<Vec<_>, _>>()?;
    FibredSystem::new(p, branches)
}

impl std::str::FromStr for FibredSystem {
    type Err = SystemsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_system(s)
    }
}

// ---- json format ----

#[derive(Serialize, Deserialize)]
struct SystemJson {
    p: u64,
    branches: Vec<BranchJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BranchJson {
    Poly { coeffs: Vec<String> },
    RatFn { num: Vec<String>, den: Vec<String> },
    Table { k: u32, map: Vec<String> },
}

impl FibredSystem {
    pub fn to_json(&self) -> String {
        let branches = self
            .branches
            .iter()
            .map(|b| match b {
                Branch::Poly(c) => BranchJson::Poly {
                    coeffs: c.iter().map(format_prat).collect(),
                },
                Branch::RatFn { num, den } => BranchJson::RatFn {
                    num: num.iter().map(|v| v.to_string()).collect(),
                    den: den.iter().map(|v| v.to_string()).collect(),
                },
                Branch::Table { k, map } => BranchJson::Table {
                    k: *k,
                    map: map.iter().map(|v| v.to_string()).collect(),
                },
            })
            .collect();
        serde_json::to_string(&SystemJson { p: self.p, branches })
            .expect("system serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SystemsError> {
        let raw: SystemJson =
            serde_json::from_str(text).map_err(|e| SystemsError::Parse(e.to_string()))?;
        let branches = raw
            .branches
            .into_iter()
            .map(|b| match b {
                BranchJson::Poly { coeffs } => coeffs
                    .iter()
                    .map(|c| parse_prat_coeff(c))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Branch::Poly),
                BranchJson::RatFn { num, den } => {
                    let parse_ints = |v: Vec<String>| {
                        v.iter()
                            .map(|c| {
                                c.parse::<BigInt>().map_err(|_| {
                                    SystemsError::Parse(format!("bad integer {c:?}"))
                                })
                            })
                            .collect::<Result<Vec<_>, _>>()
                    };
                    Ok(Branch::RatFn { num: parse_ints(num)?, den: parse_ints(den)? })
                }
                BranchJson::Table { k, map } => map
                    .iter()
                    .map(|v| {
                        v.parse::<BigUint>()
                            .map_err(|_| SystemsError::Parse(format!("bad entry {v:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(|map| Branch::Table { k, map }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        FibredSystem::new(raw.p, branches)
    }
}

// small helpers shared with other modules

/// Residue class representative n % p for an exact rational (low digit).
pub fn low_digit_prat(x: &PRat, p: u64) -> Result<u64, SystemsError> {
    prat_low_digit(x, p)
}

/// n % p^k for an exact rational in Z_p.
pub fn prat_mod_pk(x: &PRat, p: u64, k: u32) -> Result<BigUint, SystemsError> {
    embed_prat(x, p, k)
        .map(|r| r.value().clone())
        .map_err(|e| SystemsError::NonIntegralValue(e.to_string()))
}

/// Evaluate an integer-coefficient polynomial exactly at an integer.
pub fn eval_int_poly_at_int(coeffs: &[BigInt], x: &BigInt) -> BigInt {
    let mut acc = BigInt::zero();
    for c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Nonnegative representative helper reused by the scan code.
pub fn mod_pk_int(x: &BigInt, p: u64, k: u32) -> BigUint {
    rem_euclid_big(x, &pow_u(p, k))
}
