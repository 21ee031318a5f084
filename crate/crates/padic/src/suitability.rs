//! Congruence tests on residue classes: suitability, integrality and
//! avoidance of branch functions, and the block property of whole systems.
//!
//! A branch f is weakly suitable at level k on the class r + pZ_p when
//! congruence mod p^k of arguments forces congruence mod p^k of the shifted
//! values (f - f%p), and suitable when the implication is an equivalence.
//! Systems built from branches that are suitable at every level are exactly
//! the ones whose digit tables have the block property.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::arith::{
    factorize, in_pk_zp, is_p_integral, mod_inverse, nu_p, nu_p_int, nu_q_rat, pow_u, PRat,
};
use crate::systems::{eval_int_poly_at_int, mod_pk_int, prat_mod_pk, Branch, FibredSystem};

/// Failures from the suitability and avoidance tests.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SuitError {
    /// The function takes values outside Z_p somewhere on the residue class.
    #[error("function is not integral on the residue class")]
    NotIntegral,
    /// The denominator vanishes, or cannot be bounded away from zero, on the
    /// residue class, so no finite witness set exists.
    #[error("denominator is degenerate on the residue class: {0}")]
    DenominatorNotUnit(String),
    /// Branch kind for which no finite suitability certificate is known.
    #[error("unsupported branch kind: {0}")]
    UnsupportedBranch(String),
}

/// A boolean verdict tagged with its epistemic status. Verdicts that rest on
/// the unproven witness-set fallback for nonunit denominators are
/// conjectural; everything else is proven.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Proven(bool),
    Conjectural(bool),
}

impl Verdict {
    pub fn value(self) -> bool {
        match self {
            Verdict::Proven(v) | Verdict::Conjectural(v) => v,
        }
    }

    pub fn is_conjectural(self) -> bool {
        matches!(self, Verdict::Conjectural(_))
    }
}

/// Verdicts for one level k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelVerdict {
    pub level: u32,
    pub weak: bool,
    pub suitable: bool,
}

/// A concrete pair of class members violating suitability at `level`:
/// either m ≡ n mod p^level with incongruent shifted values, or congruent
/// shifted values with m ≢ n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuitWitness {
    pub m: BigUint,
    pub n: BigUint,
    pub level: u32,
}

/// Outcome of a suitability analysis. `levels` lists the checked range,
/// which by the closure rules decides every higher level as well, so `weak`
/// and `full` are verdicts over all levels at once. `witness` holds a
/// violating pair when full suitability fails and a pair is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuitReport {
    pub p: u64,
    /// Residue class the report is about; None for a whole-system report.
    pub branch: Option<u64>,
    pub levels: Vec<LevelVerdict>,
    pub weak: bool,
    pub full: bool,
    /// True when any contributing verdict used the conjectural fallback.
    pub conjectural: bool,
    pub witness: Option<SuitWitness>,
    /// Per-branch reports for whole-system queries, indexed by class.
    pub branch_reports: Vec<SuitReport>,
}

/// Which half of the block property a system query asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    Weak,
    Full,
}

/// Suitability at level k for a polynomial whose coefficients all lie in
/// Z_p. The weak variant holds unconditionally for such polynomials; the
/// full verdict is independent of k once k ≥ 2 and reduces to a unit test
/// on the derivative at r.
pub fn suit_poly_zp(coeffs: &[PRat], p: u64, r: u64, k: u32) -> bool {
    assert!(p >= 2 && r < p, "base and residue out of range");
    assert!(
        coeffs.iter().all(|c| is_p_integral(c, p)),
        "coefficients must be p-integral"
    );
    if k <= 1 {
        return true;
    }
    p.gcd(&deriv_unit_part(coeffs, p, r)) == 1
}

/// f'(r) mod p, with each coefficient reduced mod p first.
fn deriv_unit_part(coeffs: &[PRat], p: u64, r: u64) -> u64 {
    let pp = p as u128;
    let mut t: u128 = 0;
    let mut rpow: u128 = 1 % pp;
    for (i, a) in coeffs.iter().enumerate().skip(1) {
        let ai = prat_mod_pk(a, p, 1)
            .expect("coefficient is p-integral")
            .to_u64()
            .expect("residue mod p fits") as u128;
        t = (t + ai * (i as u128 % pp) % pp * rpow) % pp;
        rpow = rpow * (r as u128) % pp;
    }
    t as u64
}

/// Precision shift of a coefficient vector: K = −min(0, ν_p of coeffs).
pub(crate) fn poly_shift(coeffs: &[PRat], p: u64) -> u32 {
    coeffs
        .iter()
        .filter_map(|c| nu_p(c, p).finite())
        .map(|v| if v < 0 { (-v) as u32 } else { 0 })
        .max()
        .unwrap_or(0)
}

fn eval_prat_poly(coeffs: &[PRat], x: &PRat) -> PRat {
    let mut acc = PRat::zero();
    for c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// True when the polynomial maps the whole class r + pZ_p into Z_p.
/// Decided on the finite witness set [0, p^K) ∩ (r + pZ), where K absorbs
/// the p-part of the coefficient denominators.
pub fn integral_qp_poly(coeffs: &[PRat], p: u64, r: u64) -> bool {
    assert!(p >= 2 && r < p, "base and residue out of range");
    let kk = poly_shift(coeffs, p);
    if kk == 0 {
        return true;
    }
    let bound = pow_u(p, kk);
    let step = BigUint::from(p);
    let mut w = BigUint::from(r);
    while w < bound {
        let value = eval_prat_poly(coeffs, &PRat::from_integer(w.clone().into()));
        if !is_p_integral(&value, p) {
            return false;
        }
        w += &step;
    }
    true
}

/// Suitability report for a rational-coefficient polynomial on the class
/// r + pZ_p. Levels 1..=K+3 are decided on the witness sets
/// [0, p^{K+k}) ∩ (r + pZ); weak suitability at levels 1..=K+1 settles all
/// higher levels, full suitability needs 1..=K+3.
pub fn suit_poly_qp(coeffs: &[PRat], p: u64, r: u64) -> Result<SuitReport, SuitError> {
    assert!(p >= 2 && r < p, "base and residue out of range");
    if !integral_qp_poly(coeffs, p, r) {
        return Err(SuitError::NotIntegral);
    }
    let kk = poly_shift(coeffs, p);
    let mut levels = Vec::new();
    let mut witness = None;
    for ell in 1..=kk + 3 {
        let values = poly_class_values(coeffs, p, r, kk, ell)?;
        let (weak, suitable, pair) = match &values {
            ClassValues::Small(v) => scan_class_values(p, r, ell, v),
            ClassValues::Big(v) => scan_class_values(p, r, ell, v),
        };
        if witness.is_none() {
            witness = pair;
        }
        levels.push(LevelVerdict {
            level: ell,
            weak,
            suitable,
        });
    }
    Ok(assemble_report(p, Some(r), kk, levels, witness, false))
}

/// Full suitability at level k for a branch given as a quotient g/h of
/// integer polynomials on the class r + pZ_p.
///
/// When h(r) is a unit mod p the question reduces to a proven polynomial
/// criterion. Otherwise the verdict comes from a witness set whose
/// sufficiency is conjectural and is tagged accordingly.
pub fn suit_ratfn(
    num: &[BigInt],
    den: &[BigInt],
    p: u64,
    r: u64,
    k: u32,
) -> Result<Verdict, SuitError> {
    ratfn_suit_at(num, den, p, r, k, false)
}

/// Weak variant of `suit_ratfn`; proven to hold whenever h(r) is a unit.
pub fn weak_suit_ratfn(
    num: &[BigInt],
    den: &[BigInt],
    p: u64,
    r: u64,
    k: u32,
) -> Result<Verdict, SuitError> {
    ratfn_suit_at(num, den, p, r, k, true)
}

fn ratfn_suit_at(
    num: &[BigInt],
    den: &[BigInt],
    p: u64,
    r: u64,
    k: u32,
    weak_only: bool,
) -> Result<Verdict, SuitError> {
    assert!(p >= 2 && r < p, "base and residue out of range");
    if den.iter().all(Zero::is_zero) {
        return Err(SuitError::DenominatorNotUnit(
            "denominator is the zero polynomial".into(),
        ));
    }
    if k <= 1 {
        return Ok(Verdict::Proven(true));
    }
    let hr = mod_pk_int(&eval_int_poly_at_int(den, &BigInt::from(r)), p, 1)
        .to_u64()
        .expect("residue mod p fits");
    if p.gcd(&hr) == 1 {
        if weak_only {
            return Ok(Verdict::Proven(true));
        }
        let reduced: Vec<PRat> = reduction_poly(num, den, p, r)
            .into_iter()
            .map(PRat::from_integer)
            .collect();
        return Ok(Verdict::Proven(suit_poly_zp(&reduced, p, r, k)));
    }
    let kk = denominator_shift(den, p, r)?;
    let values = ratfn_class_values(num, den, p, r, kk, k)?;
    let (weak, suitable, _) = scan_class_values(p, r, k, &values);
    Ok(Verdict::Conjectural(if weak_only { weak } else { suitable }))
}

/// g − (f(r) mod p)·h, the integer polynomial whose suitability matches
/// that of g/h when h(r) is a unit mod p.
fn reduction_poly(num: &[BigInt], den: &[BigInt], p: u64, r: u64) -> Vec<BigInt> {
    let rr = BigInt::from(r);
    let modulus = BigUint::from(p);
    let hinv = mod_inverse(&eval_int_poly_at_int(den, &rr), &modulus)
        .expect("denominator is a unit mod p");
    let c = BigInt::from(mod_pk_int(&eval_int_poly_at_int(num, &rr), p, 1) * hinv % &modulus);
    let len = num.len().max(den.len());
    (0..len)
        .map(|i| {
            let g = num.get(i).cloned().unwrap_or_default();
            let h = den.get(i).cloned().unwrap_or_default();
            g - &c * h
        })
        .collect()
}

/// True when f maps every point of Q_p outside the class r + pZ_p to a
/// value outside pZ_p. Decided on a finite witness set: the integer
/// residues other than r together with all fractions a/p^k whose depth k
/// stays within the bound derived from the coefficient valuations.
pub fn avoiding_poly(coeffs: &[PRat], p: u64, r: u64) -> bool {
    assert!(p >= 2 && r < p, "base and residue out of range");
    assert!(
        coeffs.iter().all(|c| is_p_integral(c, p)),
        "coefficients must be p-integral"
    );
    let mut trimmed = coeffs.to_vec();
    while trimmed.last().map_or(false, Zero::is_zero) {
        trimmed.pop();
    }
    let d = trimmed.len().saturating_sub(1) as u32;
    for w in 0..p {
        if w == r {
            continue;
        }
        let value = eval_prat_poly(&trimmed, &PRat::from_integer(w.into()));
        if in_pk_zp(&value, p, 1) {
            return false;
        }
    }
    for k in 1..=avoidance_depth(&trimmed, p) {
        let den = pow_u(p, k);
        let bound = pow_u(p, d * k + 1);
        // a ≡ r·p^k mod p^{k+1} puts a/p^k back into the class; skip those
        let class_marker = BigUint::from(r) * &den;
        let split = &den * BigUint::from(p);
        let mut a = BigUint::zero();
        while a < bound {
            if &a % &split != class_marker {
                let w = PRat::new(BigInt::from(a.clone()), BigInt::from(den.clone()));
                let value = eval_prat_poly(&trimmed, &w);
                if in_pk_zp(&value, p, 1) {
                    return false;
                }
            }
            a += 1u32;
        }
    }
    true
}

/// Depth bound for the avoidance witness set, from the valuation slopes of
/// consecutive nonzero coefficients at each prime factor of p. Never less
/// than 1.
fn avoidance_depth(coeffs: &[PRat], p: u64) -> u32 {
    let idx: Vec<usize> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(i, _)| i)
        .collect();
    let mut kk: i64 = 1;
    for (q, e) in factorize(p) {
        let e = e as i64;
        let vals: Vec<i64> = idx
            .iter()
            .map(|&i| nu_q_rat(&coeffs[i], q).finite().expect("coefficient is nonzero"))
            .collect();
        for j in 1..idx.len() {
            let (i0, i1) = (idx[j - 1] as i64, idx[j] as i64);
            kk = kk.max(ceil_div(vals[j] - vals[j - 1] + i1 * (e - 1), (i1 - i0) * e));
        }
        if let Some(&last) = idx.last() {
            if last >= 1 {
                let vt = *vals.last().expect("index list is nonempty");
                kk = kk.max(ceil_div(vt - e + last as i64 * (e - 1), last as i64 * e));
            }
        }
    }
    kk as u32
}

fn ceil_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    a.div_euclid(b) + i64::from(a.rem_euclid(b) != 0)
}

/// Block-property verdict for a whole system, as the conjunction of the
/// per-branch suitability reports. Full mode is equivalent to the block
/// property; weak mode is sufficient for the weak block property. A clean
/// (non-conjectural) verdict is recorded on the system's verified flags.
pub fn system_block(f: &FibredSystem, mode: BlockMode) -> Result<SuitReport, SuitError> {
    let p = f.base();
    let mut reports = Vec::with_capacity(p as usize);
    for r in 0..p {
        reports.push(branch_suit_report(f.branch(r), p, r)?);
    }
    let weak = reports.iter().all(|b| b.weak);
    let full = reports.iter().all(|b| b.full);
    let conjectural = reports.iter().any(|b| b.conjectural);
    let witness = reports.iter().find_map(|b| b.witness.clone());
    if !conjectural {
        match mode {
            BlockMode::Full if full => f.note_block_level(u32::MAX),
            BlockMode::Weak if weak => f.note_weak_block_level(u32::MAX),
            _ => {}
        }
    }
    Ok(SuitReport {
        p,
        branch: None,
        levels: vec![],
        weak,
        full,
        conjectural,
        witness,
        branch_reports: reports,
    })
}

fn branch_suit_report(b: &Branch, p: u64, r: u64) -> Result<SuitReport, SuitError> {
    match b {
        Branch::Poly(coeffs) if b.is_zp_poly(p) => Ok(zp_poly_report(coeffs, p, r)),
        Branch::Poly(coeffs) => suit_poly_qp(coeffs, p, r),
        Branch::RatFn { num, den } => ratfn_report(num, den, p, r),
        Branch::Table { .. } => Err(SuitError::UnsupportedBranch(
            "table branches carry no finite suitability certificate; \
             use the brute-force block check"
                .into(),
        )),
    }
}

fn zp_poly_report(coeffs: &[PRat], p: u64, r: u64) -> SuitReport {
    let s2 = suit_poly_zp(coeffs, p, r, 2);
    let witness = if s2 {
        None
    } else {
        // r and r + p^2/g collide mod p^2 whenever g = gcd(p, f'(r)) > 1
        let g = p.gcd(&deriv_unit_part(coeffs, p, r));
        Some(SuitWitness {
            m: BigUint::from(r),
            n: BigUint::from(p) * BigUint::from(p / g) + BigUint::from(r),
            level: 2,
        })
    };
    SuitReport {
        p,
        branch: Some(r),
        levels: vec![
            LevelVerdict {
                level: 1,
                weak: true,
                suitable: true,
            },
            LevelVerdict {
                level: 2,
                weak: true,
                suitable: s2,
            },
        ],
        weak: true,
        full: s2,
        conjectural: false,
        witness,
        branch_reports: vec![],
    }
}

fn ratfn_report(num: &[BigInt], den: &[BigInt], p: u64, r: u64) -> Result<SuitReport, SuitError> {
    if den.iter().all(Zero::is_zero) {
        return Err(SuitError::DenominatorNotUnit(
            "denominator is the zero polynomial".into(),
        ));
    }
    let hr = mod_pk_int(&eval_int_poly_at_int(den, &BigInt::from(r)), p, 1)
        .to_u64()
        .expect("residue mod p fits");
    if p.gcd(&hr) == 1 {
        let s2 = suit_ratfn(num, den, p, r, 2)?.value();
        let witness = if s2 {
            None
        } else {
            ratfn_level2_witness(num, den, p, r)
        };
        return Ok(SuitReport {
            p,
            branch: Some(r),
            levels: vec![
                LevelVerdict {
                    level: 1,
                    weak: true,
                    suitable: true,
                },
                LevelVerdict {
                    level: 2,
                    weak: true,
                    suitable: s2,
                },
            ],
            weak: true,
            full: s2,
            conjectural: false,
            witness,
            branch_reports: vec![],
        });
    }
    let kk = denominator_shift(den, p, r)?;
    let mut levels = Vec::new();
    let mut witness = None;
    for ell in 1..=kk + 3 {
        let values = ratfn_class_values(num, den, p, r, kk, ell)?;
        let (weak, suitable, pair) = scan_class_values(p, r, ell, &values);
        if witness.is_none() {
            witness = pair;
        }
        levels.push(LevelVerdict {
            level: ell,
            weak,
            suitable,
        });
    }
    Ok(assemble_report(p, Some(r), kk, levels, witness, true))
}

/// Scans the p members of [0, p^2) ∩ (r + pZ) for a pair with congruent
/// shifted values; such a pair certifies failure at level 2.
fn ratfn_level2_witness(num: &[BigInt], den: &[BigInt], p: u64, r: u64) -> Option<SuitWitness> {
    let mut seen: HashMap<BigUint, BigUint> = HashMap::new();
    for j in 0..p {
        let w = BigInt::from(r) + BigInt::from(p) * BigInt::from(j);
        let hv = eval_int_poly_at_int(den, &w);
        if hv.is_zero() {
            return None;
        }
        let fv = PRat::new(eval_int_poly_at_int(num, &w), hv);
        let f2 = prat_mod_pk(&fv, p, 2).ok()?;
        let v = &f2 - &f2 % BigUint::from(p);
        let wu = w.to_biguint().expect("witness is nonnegative");
        if let Some(prev) = seen.get(&v) {
            return Some(SuitWitness {
                m: prev.clone(),
                n: wu,
                level: 2,
            });
        }
        seen.insert(v, wu);
    }
    None
}

fn assemble_report(
    p: u64,
    branch: Option<u64>,
    kk: u32,
    levels: Vec<LevelVerdict>,
    witness: Option<SuitWitness>,
    conjectural: bool,
) -> SuitReport {
    let weak = levels
        .iter()
        .filter(|lv| lv.level <= kk + 1)
        .all(|lv| lv.weak);
    let full = levels.iter().all(|lv| lv.suitable);
    SuitReport {
        p,
        branch,
        levels,
        weak,
        full,
        conjectural,
        witness,
        branch_reports: vec![],
    }
}

enum ClassValues {
    Small(Vec<u64>),
    Big(Vec<BigUint>),
}

/// Shifted values (f − f%p)(w) mod p^ell of a polynomial over the witness
/// set w = r + p·j, j < p^{K+ell−1}, computed through the integer
/// polynomial p^K·f reduced mod p^{K+ell}.
fn poly_class_values(
    coeffs: &[PRat],
    p: u64,
    r: u64,
    kk: u32,
    ell: u32,
) -> Result<ClassValues, SuitError> {
    let prec = kk + ell;
    let modulus = pow_u(p, prec);
    let count = pow_u(p, prec - 1)
        .to_usize()
        .expect("witness set fits in memory");
    let shift = pow_u(p, kk);
    let scaled = coeffs
        .iter()
        .map(|a| {
            let sa = PRat::from_integer(BigInt::from(shift.clone())) * a;
            prat_mod_pk(&sa, p, prec).map_err(|_| SuitError::NotIntegral)
        })
        .collect::<Result<Vec<BigUint>, SuitError>>()?;
    if let Some(m) = modulus.to_u64() {
        let m = m as u128;
        let ps = shift.to_u64().expect("divides the modulus") as u128;
        let cs: Vec<u128> = scaled
            .iter()
            .map(|c| c.to_u64().expect("reduced below the modulus") as u128)
            .collect();
        let vals = (0..count)
            .into_par_iter()
            .map(|j| {
                let w = r as u128 + p as u128 * j as u128;
                let mut acc: u128 = 0;
                for c in cs.iter().rev() {
                    acc = (acc * w + c) % m;
                }
                if acc % ps != 0 {
                    return Err(SuitError::NotIntegral);
                }
                let f = acc / ps;
                Ok((f - f % p as u128) as u64)
            })
            .collect::<Result<Vec<u64>, SuitError>>()?;
        return Ok(ClassValues::Small(vals));
    }
    let vals = (0..count)
        .into_par_iter()
        .map(|j| {
            let w = BigUint::from(r) + BigUint::from(p) * BigUint::from(j);
            let mut acc = BigUint::zero();
            for c in scaled.iter().rev() {
                acc = (acc * &w + c) % &modulus;
            }
            let (f, rem) = acc.div_rem(&shift);
            if !rem.is_zero() {
                return Err(SuitError::NotIntegral);
            }
            let low = &f % BigUint::from(p);
            Ok(f - low)
        })
        .collect::<Result<Vec<BigUint>, SuitError>>()?;
    Ok(ClassValues::Big(vals))
}

/// Shifted values of g/h over the witness set, by exact rational evaluation.
fn ratfn_class_values(
    num: &[BigInt],
    den: &[BigInt],
    p: u64,
    r: u64,
    kk: u32,
    ell: u32,
) -> Result<Vec<BigUint>, SuitError> {
    let count = pow_u(p, kk + ell - 1)
        .to_usize()
        .expect("witness set fits in memory");
    (0..count)
        .into_par_iter()
        .map(|j| {
            let w = BigInt::from(r) + BigInt::from(p) * BigInt::from(j);
            let hv = eval_int_poly_at_int(den, &w);
            if hv.is_zero() {
                return Err(SuitError::DenominatorNotUnit(format!(
                    "denominator vanishes at {w}"
                )));
            }
            let fv = PRat::new(eval_int_poly_at_int(num, &w), hv);
            let f = prat_mod_pk(&fv, p, ell).map_err(|_| SuitError::NotIntegral)?;
            let low = &f % BigUint::from(p);
            Ok(f - low)
        })
        .collect()
}

/// Largest valuation the denominator attains on the class, found by
/// refining residue classes until the valuation is pinned down. Errors out
/// when the valuation keeps growing, which means h vanishes somewhere on
/// the class.
fn denominator_shift(den: &[BigInt], p: u64, r: u64) -> Result<u32, SuitError> {
    const DEPTH_CAP: u32 = 64;
    let mut best = 0u32;
    let mut stack = vec![(BigInt::from(r), 1u32)];
    while let Some((n, j)) = stack.pop() {
        match nu_p_int(&eval_int_poly_at_int(den, &n), p).finite() {
            Some(v) if (v as u32) < j => best = best.max(v as u32),
            _ => {
                if j >= DEPTH_CAP {
                    return Err(SuitError::DenominatorNotUnit(
                        "denominator valuation is unbounded on the residue class".into(),
                    ));
                }
                let step = BigInt::from(pow_u(p, j));
                for i in 0..p {
                    stack.push((&n + &step * BigInt::from(i), j + 1));
                }
            }
        }
    }
    Ok(best)
}

/// Groups witness values by argument class mod p^ell and decides both
/// halves of suitability at that level, returning a violating pair when one
/// exists. `values[j]` must belong to the witness w = r + p·j.
fn scan_class_values<V: Eq + std::hash::Hash>(
    p: u64,
    r: u64,
    ell: u32,
    values: &[V],
) -> (bool, bool, Option<SuitWitness>) {
    let groups = pow_u(p, ell - 1)
        .to_usize()
        .expect("class count fits in memory");
    let witness_at = |j: usize| BigUint::from(r) + BigUint::from(p) * BigUint::from(j);
    let mut rep: Vec<Option<(usize, &V)>> = vec![None; groups];
    for (j, v) in values.iter().enumerate() {
        let g = j % groups;
        match rep[g] {
            None => rep[g] = Some((j, v)),
            Some((j0, v0)) => {
                if v0 != v {
                    let w = SuitWitness {
                        m: witness_at(j0),
                        n: witness_at(j),
                        level: ell,
                    };
                    return (false, false, Some(w));
                }
            }
        }
    }
    // values are constant on classes; distinct classes must now disagree
    let mut seen: HashMap<&V, usize> = HashMap::with_capacity(groups);
    for slot in &rep {
        let (j, v) = slot.expect("every class has a witness");
        if let Some(&j0) = seen.get(v) {
            let w = SuitWitness {
                m: witness_at(j0),
                n: witness_at(j),
                level: ell,
            };
            return (true, false, Some(w));
        }
        seen.insert(v, j);
    }
    (true, true, None)
}
