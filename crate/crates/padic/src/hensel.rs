//! Digit-by-digit root lifting and fixed points of digit-word compositions.
//!
//! The classical statement lifts a simple root of a polynomial mod a prime
//! to arbitrary precision. Here the same scan works for any branch that is
//! suitable on its residue class and maps the class into pZ_p, including
//! composite bases and finite table branches. A second construction finds,
//! for a word D of digits, the unique p-adic integer whose digit expansion
//! is D repeated forever.

use crate::arith::{mod_inverse, pow_u, Residue, PRat};
use crate::suitability::{
    avoiding_poly, integral_qp_poly, poly_shift, suit_poly_qp, suit_poly_zp, suit_ratfn,
    system_block, BlockMode, Verdict,
};
use crate::systems::{
    apply_residue, digit_expansion, eval_int_poly_at_int, prat_mod_pk, Branch, FibredSystem,
};
use num_bigint::{BigInt, BigUint};
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HenselError {
    #[error("branch is not provably suitable on its class: {0}")]
    NotSuitable(String),
    #[error("no root in the class: {0}")]
    NoRootAtBase(String),
    #[error("digit lift not unique at level {level}: {candidates} candidates extend")]
    AmbiguousLift { level: u32, candidates: usize },
    #[error("branch {0} has no avoidance certificate: {1}")]
    NotAvoiding(u64, String),
    #[error("digit word is empty")]
    EmptyWord,
    #[error("evaluation failed at step {step}: {detail}")]
    NonUnitDenominatorOnPath { step: usize, detail: String },
}

/// One level of the lift: the digit that extended the root and the
/// candidates that did not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftCert {
    pub level: u32,
    pub digit: u64,
    pub rejected: Vec<u64>,
}

/// A root of a branch in the class r + pZ_p, known mod p^K. The certificate
/// records, for each level from 2 upward, which digit was the only one to
/// extend the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedRoot {
    pub class: u64,
    pub root: Residue,
    pub certificate: Vec<LiftCert>,
}

/// f(x) mod p^ell for x given as an ordinary integer. All branch kinds
/// funnel through here during the lift.
fn branch_value_mod(
    f: &Branch,
    p: u64,
    x: &BigUint,
    ell: u32,
) -> Result<BigUint, HenselError> {
    match f {
        Branch::Poly(coeffs) => {
            let xr = PRat::from_integer(BigInt::from(x.clone()));
            let mut acc = PRat::zero();
            for c in coeffs.iter().rev() {
                acc = acc * &xr + c;
            }
            prat_mod_pk(&acc, p, ell)
                .map_err(|e| HenselError::NotSuitable(format!("value left Z_p: {e}")))
        }
        Branch::RatFn { num, den } => {
            let xi = BigInt::from(x.clone());
            let m = pow_u(p, ell);
            let g = eval_int_poly_at_int(num, &xi);
            let h = eval_int_poly_at_int(den, &xi);
            let hinv = mod_inverse(&h, &m).ok_or_else(|| {
                HenselError::NotSuitable(format!("denominator {h} is not a unit mod {m}"))
            })?;
            let g = ((g % BigInt::from(m.clone())) + BigInt::from(m.clone()))
                .to_biguint()
                .unwrap();
            Ok(g * hinv % m)
        }
        Branch::Table { k, map } => {
            let idx = (x % pow_u(p, *k)).to_usize().ok_or_else(|| {
                HenselError::NotSuitable("table index out of range".into())
            })?;
            Ok(&map[idx] % pow_u(p, ell))
        }
    }
}

/// Establishes the two hypotheses of the lifting theorem for one branch:
/// the branch is suitable on r + pZ_p at every level up to `cap`, and it
/// maps the class into pZ_p.
fn check_liftable(f: &Branch, p: u64, r: u64, cap: u32) -> Result<(), HenselError> {
    match f {
        Branch::Poly(coeffs) if f.is_zp_poly(p) => {
            if !suit_poly_zp(coeffs, p, r, 2) {
                return Err(HenselError::NotSuitable(format!(
                    "derivative at {r} shares a factor with {p}"
                )));
            }
            let fr = branch_value_mod(f, p, &BigUint::from(r), 1)?;
            if !fr.is_zero() {
                return Err(HenselError::NoRootAtBase(format!(
                    "f({r}) ≡ {fr} (mod {p})"
                )));
            }
            Ok(())
        }
        Branch::Poly(coeffs) => {
            if !integral_qp_poly(coeffs, p, r) {
                return Err(HenselError::NotSuitable(
                    "branch is not integral on the class".into(),
                ));
            }
            let rep = suit_poly_qp(coeffs, p, r)
                .map_err(|e| HenselError::NotSuitable(e.to_string()))?;
            if !rep.full {
                return Err(HenselError::NotSuitable(
                    "branch fails suitability at some level".into(),
                ));
            }
            // the low digit of a shifted-coefficient polynomial is constant
            // on classes mod p^{K+1}, so this finite scan settles whether
            // the whole class lands in pZ_p
            let kk = poly_shift(coeffs, p);
            let count = pow_u(p, kk).to_u64().unwrap();
            for j in 0..count {
                let w = BigUint::from(r + p * j);
                let fw = branch_value_mod(f, p, &w, 1)?;
                if !fw.is_zero() {
                    return Err(HenselError::NoRootAtBase(format!(
                        "f({w}) ≡ {fw} (mod {p}) on the class"
                    )));
                }
            }
            Ok(())
        }
        Branch::RatFn { num, den } => {
            match suit_ratfn(num, den, p, r, 2)
                .map_err(|e| HenselError::NotSuitable(e.to_string()))?
            {
                Verdict::Proven(true) => {}
                Verdict::Proven(false) => {
                    return Err(HenselError::NotSuitable(
                        "quotient fails suitability at level 2".into(),
                    ))
                }
                Verdict::Conjectural(_) => {
                    return Err(HenselError::NotSuitable(
                        "nonunit denominator: suitability is only conjectural".into(),
                    ))
                }
            }
            let fr = branch_value_mod(f, p, &BigUint::from(r), 1)?;
            if !fr.is_zero() {
                return Err(HenselError::NoRootAtBase(format!(
                    "f({r}) ≡ {fr} (mod {p})"
                )));
            }
            Ok(())
        }
        Branch::Table { k, .. } => {
            if cap > *k {
                return Err(HenselError::NotSuitable(format!(
                    "table precision {k} cannot certify uniqueness at level {cap}"
                )));
            }
            // the table fixes the function on all of Z_p, so a pairwise scan
            // of the class mod p^k is exact for every level up to k
            let count = pow_u(p, *k - 1).to_u64().unwrap();
            for ell in 1..=cap {
                let pb = BigUint::from(p);
                let groups = pow_u(p, ell - 1).to_u64().unwrap();
                let mut reps: Vec<Option<BigUint>> = vec![None; groups as usize];
                let mut seen: Vec<BigUint> = Vec::new();
                for j in 0..count {
                    let w = BigUint::from(r + p * j);
                    let fv = branch_value_mod(f, p, &w, ell)?;
                    let v = &fv - &fv % &pb;
                    match &reps[(j % groups) as usize] {
                        Some(prev) if *prev != v => {
                            return Err(HenselError::NotSuitable(format!(
                                "table values split the class at level {ell}"
                            )))
                        }
                        Some(_) => {}
                        None => {
                            if seen.contains(&v) {
                                return Err(HenselError::NotSuitable(format!(
                                    "table values collide across classes at level {ell}"
                                )));
                            }
                            seen.push(v.clone());
                            reps[(j % groups) as usize] = Some(v);
                        }
                    }
                }
            }
            let fr = branch_value_mod(f, p, &BigUint::from(r), 1)?;
            if !fr.is_zero() {
                return Err(HenselError::NoRootAtBase(format!(
                    "f({r}) ≡ {fr} (mod {p})"
                )));
            }
            Ok(())
        }
    }
}

/// Unique root of `f` in r + pZ_p, lifted digit by digit to precision K.
///
/// At each level all p candidate digits are scanned; suitability guarantees
/// exactly one of them keeps f ≡ 0 at the next power. No derivative is used,
/// so composite bases and table branches work the same way.
pub fn hensel_root(f: &Branch, p: u64, r: u64, cap: u32) -> Result<LiftedRoot, HenselError> {
    assert!(p >= 2 && r < p && cap >= 1);
    check_liftable(f, p, r, cap)?;
    let mut root = BigUint::from(r);
    let mut certificate = Vec::new();
    for j in 1..cap {
        let step = pow_u(p, j);
        let mut chosen = None;
        let mut rejected = Vec::new();
        for c in 0..p {
            let cand = &root + BigUint::from(c) * &step;
            if branch_value_mod(f, p, &cand, j + 1)?.is_zero() {
                if chosen.is_some() {
                    return Err(HenselError::AmbiguousLift {
                        level: j + 1,
                        candidates: 2,
                    });
                }
                chosen = Some(c);
            } else {
                rejected.push(c);
            }
        }
        match chosen {
            Some(c) => {
                root += BigUint::from(c) * &step;
                certificate.push(LiftCert {
                    level: j + 1,
                    digit: c,
                    rejected,
                });
            }
            None => {
                return Err(HenselError::AmbiguousLift {
                    level: j + 1,
                    candidates: 0,
                })
            }
        }
    }
    Ok(LiftedRoot {
        class: r,
        root: Residue::new(p, cap, root),
        certificate,
    })
}

/// The unique n mod p^K whose digit expansion is D repeated forever.
///
/// Every branch must carry an avoidance certificate and be suitable with
/// values in pZ_p on its own class; under these hypotheses n is also the
/// unique fixed point of the digit-word composition R_D on Z_p. The lift
/// extends the digit prefix one level at a time and verifies the result by
/// applying the system |D| times.
pub fn word_fixed_point(
    f: &FibredSystem,
    d: &[u64],
    cap: u32,
) -> Result<Residue, HenselError> {
    if d.is_empty() {
        return Err(HenselError::EmptyWord);
    }
    let p = f.base();
    assert!(d.iter().all(|&x| x < p), "digits must lie in [0, p)");
    assert!(cap >= 1);
    for r in 0..p {
        let b = f.branch(r);
        let coeffs = match b {
            Branch::Poly(c) if b.is_zp_poly(p) => c,
            _ => {
                return Err(HenselError::NotAvoiding(
                    r,
                    "avoidance is only decidable for integer-coefficient polynomial branches"
                        .into(),
                ))
            }
        };
        if !avoiding_poly(coeffs, p, r) {
            return Err(HenselError::NotAvoiding(
                r,
                "a point outside the class maps into pZ_p".into(),
            ));
        }
        let fr = branch_value_mod(b, p, &BigUint::from(r), 1)?;
        if !fr.is_zero() {
            return Err(HenselError::NotSuitable(format!(
                "branch {r} does not map its class into pZ_p"
            )));
        }
    }
    let rep = system_block(f, BlockMode::Full)
        .map_err(|e| HenselError::NotSuitable(e.to_string()))?;
    if !rep.full || rep.conjectural {
        return Err(HenselError::NotSuitable(
            "system does not have a proven block property".into(),
        ));
    }

    let target = |i: usize| d[i % d.len()];
    let mut n = BigUint::from(target(0));
    for j in 1..cap {
        let step = pow_u(p, j);
        let mut chosen = None;
        for c in 0..p {
            let cand = &n + BigUint::from(c) * &step;
            let digits = digit_expansion(f, &Residue::new(p, j + 1, cand.clone()), j + 1)
                .map_err(|e| HenselError::NotSuitable(e.to_string()))?;
            if (0..=j as usize).all(|i| digits[i] == target(i)) {
                if chosen.is_some() {
                    return Err(HenselError::AmbiguousLift {
                        level: j + 1,
                        candidates: 2,
                    });
                }
                chosen = Some(cand);
            }
        }
        n = chosen.ok_or(HenselError::AmbiguousLift {
            level: j + 1,
            candidates: 0,
        })?;
    }

    let out = Residue::new(p, cap, n);
    // closing the loop: |D| applications must return to the start
    if cap > d.len() as u32 {
        let mut it = out.clone();
        for _ in 0..d.len() {
            it = apply_residue(f, &it)
                .map_err(|e| HenselError::NotSuitable(e.to_string()))?;
        }
        if it != out.reduce(cap - d.len() as u32) {
            return Err(HenselError::AmbiguousLift {
                level: cap,
                candidates: 0,
            });
        }
    }
    Ok(out)
}

/// Exact value of the |D|-fold composition R_D: apply the branch named by
/// each digit in order, dividing by p after every step.
pub fn word_apply(f: &FibredSystem, d: &[u64], x: &PRat) -> Result<PRat, HenselError> {
    let p = f.base();
    assert!(d.iter().all(|&x| x < p), "digits must lie in [0, p)");
    let mut cur = x.clone();
    let pr = PRat::from_integer(BigInt::from(p));
    for (step, &dig) in d.iter().enumerate() {
        let v = f
            .branch(dig)
            .eval_prat(&cur, p)
            .map_err(|e| HenselError::NonUnitDenominatorOnPath {
                step,
                detail: e.to_string(),
            })?;
        cur = v / &pr;
    }
    Ok(cur)
}
