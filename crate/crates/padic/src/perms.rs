//! p-adic permutations and their cycle structure.
//!
//! A pair of systems F, G over the same base induces the permutation
//! π_{F,G} = ψ_G^{-1} ∘ ψ_F of Z_p: read n's F-expansion, then find the
//! point whose G-expansion is that word. Every such π respects congruence
//! mod p^k in both directions, so it drops to a permutation π_k of
//! [0, p^k) for every k; this module computes those finite layers, the
//! group structure over a fixed base system, permutation polynomials, the
//! layered tree formed by the cycles of the π_k, and the reverse
//! direction: synthesizing a system from a prescribed cycle tree.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use num_bigint::{BigInt, BigUint};
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::arith::{pow_u, PRat, Residue};
use crate::linear::{periodic_point, rational_orbit, LinError, LinSystem, OrbitStatus};
use crate::suitability::{system_block, BlockMode, SuitError};
use crate::systems::{
    apply_residue, block_check_bruteforce, digit_expansion, eval_int_poly_at_int, mod_pk_int,
    Branch, FibredSystem, SystemsError,
};

#[derive(Debug, Error)]
pub enum PermsError {
    #[error("unsupported base {0}: this check is specific to base 2")]
    UnsupportedBase(u64),
    #[error("precision {0} exceeds what can be materialized or is verified")]
    PrecisionExhausted(u32),
    #[error("invalid cycle tree: {0}")]
    InvalidCycleTree(String),
    #[error("not ultimately periodic: {0}")]
    NotUltimatelyPeriodic(String),
    #[error("digit prefixes collide, the system does not define a permutation: {0}")]
    NotBlockSystem(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Sys(SystemsError),
    #[error(transparent)]
    Lin(#[from] LinError),
    #[error(transparent)]
    Suit(#[from] SuitError),
}

impl From<SystemsError> for PermsError {
    fn from(e: SystemsError) -> Self {
        match e {
            SystemsError::PrecisionExhausted => PermsError::PrecisionExhausted(0),
            SystemsError::WeakBlockUnverified => PermsError::PrecisionExhausted(0),
            other => PermsError::Sys(other),
        }
    }
}

/// Largest layer that is materialized as a full array; deeper queries go
/// through the pointwise digit-lifting path instead.
const MAX_TABLE_ENTRIES: u64 = 1 << 22;

fn table_size(p: u64, k: u32) -> Option<usize> {
    let n = (p as u128).checked_pow(k)?;
    if n <= MAX_TABLE_ENTRIES as u128 {
        usize::try_from(n).ok()
    } else {
        None
    }
}

/// The base-p system whose digit expansion is the standard one:
/// branch r is x − r, so each step subtracts the low digit and divides.
pub fn standard_system(p: u64) -> FibredSystem {
    let branches = (0..p)
        .map(|r| Branch::poly_i64(&[-(r as i64), 1]))
        .collect();
    let f = FibredSystem::new(p, branches).expect("standard branches are well formed");
    let rep = system_block(&f, BlockMode::Full).expect("polynomial branches have certificates");
    debug_assert!(rep.full);
    f
}

// ---------------------------------------------------------------------------
// the permutation object

enum PermSource {
    SystemPair(FibredSystem, FibredSystem),
    PermPoly(Vec<BigInt>),
    Composite(Vec<PadicPerm>),
    /// Layer-wise inverse of a permutation whose source has no swap form.
    Inverse(PadicPerm),
}

struct PermInner {
    p: u64,
    source: PermSource,
    layers: Mutex<Vec<Option<Arc<Vec<u64>>>>>,
}

/// A p-adic permutation with cached finite layers π_k over [0, p^k).
///
/// Cloning is cheap (the layer cache is shared). Layers are computed on
/// demand: for a system pair by tabulating both digit expansions and
/// inverting the second, for a permutation polynomial by direct
/// evaluation, and for composites by composing the constituent arrays.
#[derive(Clone)]
pub struct PadicPerm {
    inner: Arc<PermInner>,
}

fn ensure_block_verified(sys: &FibredSystem) -> Result<(), PermsError> {
    if sys.verified_block_level() >= 1 {
        return Ok(());
    }
    match system_block(sys, BlockMode::Full) {
        Ok(rep) if rep.full => Ok(()),
        Ok(_) => Err(PermsError::NotBlockSystem(
            "system fails the block criterion".into(),
        )),
        Err(SuitError::UnsupportedBranch(_)) => Err(PermsError::NotBlockSystem(
            "no finite certificate for this branch kind; run block_check_bruteforce \
             to the needed level first"
                .into(),
        )),
        Err(e) => Err(e.into()),
    }
}

/// Digit expansions of [0, p^k) packed as values: n ↦ Σ_j D(F)[n][j] p^j.
/// This is a bijection of [0, p^k) exactly when F has the block property.
fn std_value_table(sys: &FibredSystem, k: u32) -> Result<Vec<u64>, PermsError> {
    let p = sys.base();
    let size = table_size(p, k).ok_or(PermsError::PrecisionExhausted(k))?;
    (0..size)
        .into_par_iter()
        .map(|n| {
            let d = digit_expansion(sys, &Residue::from_u64(p, k, n as u64), k)?;
            let mut v = 0u64;
            for j in (0..k as usize).rev() {
                v = v * p + d[j];
            }
            Ok(v)
        })
        .collect()
}

fn invert_table(t: &[u64], what: &str) -> Result<Vec<u64>, PermsError> {
    let mut inv = vec![u64::MAX; t.len()];
    for (n, &v) in t.iter().enumerate() {
        let slot = &mut inv[v as usize];
        if *slot != u64::MAX {
            return Err(PermsError::NotBlockSystem(format!(
                "{what}: {} and {n} share an image",
                *slot
            )));
        }
        *slot = n as u64;
    }
    Ok(inv)
}

impl PadicPerm {
    fn from_source(p: u64, source: PermSource) -> PadicPerm {
        PadicPerm {
            inner: Arc::new(PermInner {
                p,
                source,
                layers: Mutex::new(Vec::new()),
            }),
        }
    }

    /// π_{F,G}: read F-expansions as G-expansions. Both systems must be
    /// block-verified (polynomial systems are certified here; table
    /// systems need a prior brute-force check).
    pub fn from_pair(f: &FibredSystem, g: &FibredSystem) -> Result<PadicPerm, PermsError> {
        if f.base() != g.base() {
            return Err(PermsError::BadInput(format!(
                "mixed bases {} and {}",
                f.base(),
                g.base()
            )));
        }
        ensure_block_verified(f)?;
        ensure_block_verified(g)?;
        Ok(PadicPerm::from_source(
            f.base(),
            PermSource::SystemPair(f.clone(), g.clone()),
        ))
    }

    /// The permutation induced by a p-permutation polynomial.
    pub fn from_poly(coeffs: &[BigInt], p: u64) -> Result<PadicPerm, PermsError> {
        if !is_perm_poly(coeffs, p) {
            return Err(PermsError::BadInput(
                "polynomial is not a p-permutation polynomial".into(),
            ));
        }
        Ok(PadicPerm::from_source(p, PermSource::PermPoly(coeffs.to_vec())))
    }

    pub fn identity(p: u64) -> PadicPerm {
        PadicPerm::from_source(p, PermSource::PermPoly(vec![BigInt::zero(), BigInt::from(1)]))
    }

    /// first, then second, as one permutation.
    pub fn compose(first: &PadicPerm, then: &PadicPerm) -> Result<PadicPerm, PermsError> {
        if first.base() != then.base() {
            return Err(PermsError::BadInput("mixed bases in composition".into()));
        }
        Ok(PadicPerm::from_source(
            first.base(),
            PermSource::Composite(vec![first.clone(), then.clone()]),
        ))
    }

    /// The inverse permutation. A system pair swaps its systems (the
    /// inverse of reading F-words as G-words is reading G-words as
    /// F-words); other sources invert layer by layer.
    pub fn inverse(&self) -> PadicPerm {
        match &self.inner.source {
            PermSource::SystemPair(f, g) => {
                PadicPerm::from_source(self.inner.p, PermSource::SystemPair(g.clone(), f.clone()))
            }
            PermSource::Inverse(q) => q.clone(),
            _ => PadicPerm::from_source(self.inner.p, PermSource::Inverse(self.clone())),
        }
    }

    pub fn base(&self) -> u64 {
        self.inner.p
    }

    fn compute_layer(&self, k: u32) -> Result<Vec<u64>, PermsError> {
        let p = self.inner.p;
        let size = table_size(p, k).ok_or(PermsError::PrecisionExhausted(k))?;
        match &self.inner.source {
            PermSource::SystemPair(f, g) => {
                let sf = std_value_table(f, k)?;
                let sg = std_value_table(g, k)?;
                let inv = invert_table(&sg, "second system of the pair")?;
                Ok(sf.iter().map(|&v| inv[v as usize]).collect())
            }
            PermSource::PermPoly(coeffs) => Ok((0..size)
                .into_par_iter()
                .map(|n| {
                    let v = eval_int_poly_at_int(coeffs, &BigInt::from(n));
                    mod_pk_int(&v, p, k).to_u64().expect("below p^k, p^k fits")
                })
                .collect()),
            PermSource::Composite(parts) => {
                let mut arr: Vec<u64> = (0..size as u64).collect();
                for part in parts {
                    let t = part.layer(k)?;
                    for slot in arr.iter_mut() {
                        *slot = t[*slot as usize];
                    }
                }
                Ok(arr)
            }
            PermSource::Inverse(q) => {
                let t = q.layer(k)?;
                invert_table(&t, "permutation being inverted")
            }
        }
    }

    /// The array of π_k over [0, p^k), cached after first computation.
    pub fn layer(&self, k: u32) -> Result<Arc<Vec<u64>>, PermsError> {
        {
            let cache = self.inner.layers.lock().unwrap();
            if let Some(Some(t)) = cache.get(k as usize) {
                return Ok(t.clone());
            }
        }
        let t = Arc::new(self.compute_layer(k)?);
        let mut cache = self.inner.layers.lock().unwrap();
        if cache.len() <= k as usize {
            cache.resize(k as usize + 1, None);
        }
        cache[k as usize] = Some(t.clone());
        Ok(t)
    }

    /// π(n) mod p^k for small k via the layer array, pointwise beyond the
    /// materialization limit.
    pub fn image_u64(&self, k: u32, n: u64) -> Result<u64, PermsError> {
        if k == 0 {
            return Ok(0);
        }
        match self.layer(k) {
            Ok(t) => Ok(t[(n as usize) % t.len()]),
            Err(PermsError::PrecisionExhausted(_)) => {
                let m = BigUint::from(n) % pow_u(self.inner.p, k);
                self.pointwise_image(&m, k)?
                    .to_u64()
                    .ok_or(PermsError::PrecisionExhausted(k))
            }
            Err(e) => Err(e),
        }
    }

    fn pointwise_image(&self, n: &BigUint, k: u32) -> Result<BigUint, PermsError> {
        let p = self.inner.p;
        match &self.inner.source {
            PermSource::SystemPair(f, g) => {
                let d = digit_expansion(f, &Residue::new(p, k, n.clone()), k)?;
                invert_digits_through(g, &d)
            }
            PermSource::PermPoly(coeffs) => {
                let v = eval_int_poly_at_int(coeffs, &BigInt::from(n.clone()));
                Ok(mod_pk_int(&v, p, k))
            }
            PermSource::Composite(parts) => {
                let mut x = n.clone();
                for part in parts {
                    x = part.pointwise_image(&x, k)?;
                }
                Ok(x)
            }
            PermSource::Inverse(q) => {
                // lift digit by digit: exactly one of the p candidates at
                // each level maps onto n to that precision
                let mut x = BigUint::zero();
                for j in 1..=k {
                    let step = pow_u(p, j - 1);
                    let target = n % pow_u(p, j);
                    let mut next = None;
                    for t in 0..p {
                        let cand = &x + BigUint::from(t) * &step;
                        if q.pointwise_image(&cand, j)? == target {
                            next = Some(cand);
                            break;
                        }
                    }
                    x = next.ok_or_else(|| {
                        PermsError::NotBlockSystem("no preimage at some level".into())
                    })?;
                }
                Ok(x)
            }
        }
    }
}

/// Unique m whose G-expansion starts with the given digits, found by
/// lifting one base-p digit per level.
fn invert_digits_through(g: &FibredSystem, digits: &[u64]) -> Result<BigUint, PermsError> {
    let p = g.base();
    let mut x = BigUint::zero();
    for j in 1..=digits.len() {
        let step = pow_u(p, j as u32 - 1);
        let mut next = None;
        for t in 0..p {
            let cand = &x + BigUint::from(t) * &step;
            let dg = digit_expansion(g, &Residue::new(p, j as u32, cand.clone()), j as u32)?;
            if dg[j - 1] == digits[j - 1] {
                next = Some(cand);
                break;
            }
        }
        x = next.ok_or_else(|| {
            PermsError::NotBlockSystem("no digit lift matches the target word".into())
        })?;
    }
    Ok(x)
}

/// π(n) at the residue's own precision.
pub fn perm_image(pi: &PadicPerm, n: &Residue) -> Result<Residue, PermsError> {
    if n.base() != pi.base() {
        return Err(PermsError::BadInput("residue base differs from permutation".into()));
    }
    let k = n.precision();
    if k == 0 {
        return Ok(n.clone());
    }
    match pi.layer(k) {
        Ok(t) => {
            let idx = n.value().to_usize().expect("value below table size");
            Ok(Residue::from_u64(pi.base(), k, t[idx]))
        }
        Err(PermsError::PrecisionExhausted(_)) => {
            let v = pi.pointwise_image(n.value(), k)?;
            Ok(Residue::new(pi.base(), k, v))
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// exact evaluation on rationals

fn up_word(
    f: &LinSystem,
    n: &PRat,
    max_steps: u64,
    max_digits: u32,
) -> Result<(Vec<u64>, Vec<u64>), PermsError> {
    let record = rational_orbit(f, n, max_steps, max_digits)?;
    match record.status {
        OrbitStatus::Periodic | OrbitStatus::UltimatelyPeriodic => {
            let init = f.digit_prefix(n, record.initial_length as usize)?;
            Ok((init, record.period_digits))
        }
        OrbitStatus::Timeout => Err(PermsError::NotUltimatelyPeriodic(format!(
            "orbit of {n} ran {} steps without settling",
            record.steps_used
        ))),
    }
}

/// π_{F,G}(n) exactly: n's F-expansion is ultimately periodic, and the
/// point with that G-expansion comes out of the periodic-point closed
/// form of G's weak canonical companion.
pub fn perm_exact(f: &LinSystem, g: &LinSystem, n: &PRat) -> Result<PRat, PermsError> {
    perm_exact_with(f, g, n, 100_000, 5_000)
}

/// Like [`perm_exact`] with explicit orbit-detection budgets: the step
/// count and the decimal size the denominators may reach before the
/// search gives up.
pub fn perm_exact_with(
    f: &LinSystem,
    g: &LinSystem,
    n: &PRat,
    max_steps: u64,
    max_digits: u32,
) -> Result<PRat, PermsError> {
    if f.base() != g.base() {
        return Err(PermsError::BadInput("mixed bases".into()));
    }
    let (init, period) = up_word(f, n, max_steps, max_digits)?;
    let gw = g.weak_canonical();
    Ok(periodic_point(&gw, &init, &period)?)
}

/// The composite system's action (F2 ∘_G F1)(n) = π_{G,F1}(F2(π_{F1,G}(n))),
/// evaluated exactly.
pub fn compose_exact(
    f1: &LinSystem,
    f2: &LinSystem,
    g: &LinSystem,
    n: &PRat,
) -> Result<PRat, PermsError> {
    let q1 = perm_exact(f1, g, n)?;
    let q2 = f2.apply(&q1)?;
    perm_exact(g, f1, &q2)
}

// ---------------------------------------------------------------------------
// the group over a fixed base system

/// π_{F2·F1, G} = π_{F2,G} ∘ π_{F1,G}: composing the permutations realizes
/// the group product of the two systems over the base G.
pub fn group_compose(
    f1: &FibredSystem,
    f2: &FibredSystem,
    g: &FibredSystem,
) -> Result<PadicPerm, PermsError> {
    let p1 = PadicPerm::from_pair(f1, g)?;
    let p2 = PadicPerm::from_pair(f2, g)?;
    PadicPerm::compose(&p1, &p2)
}

/// A group element presented as its permutation over the base system G,
/// together with the evaluator of the system it stands for:
/// n ↦ π^{-1}(G(π(n))).
pub struct GroupElement {
    perm: PadicPerm,
    perm_inv: PadicPerm,
    g: FibredSystem,
}

impl GroupElement {
    pub fn perm(&self) -> &PadicPerm {
        &self.perm
    }

    /// One application of the represented system, at one unit of precision
    /// less than the input (the base system consumes a digit).
    pub fn eval_residue(&self, n: &Residue) -> Result<Residue, PermsError> {
        let fwd = perm_image(&self.perm, n)?;
        let mid = apply_residue(&self.g, &fwd)?;
        perm_image(&self.perm_inv, &mid)
    }
}

/// Wrap a permutation as the group element it represents over G.
pub fn ungroup(pi: &PadicPerm, g: &FibredSystem) -> Result<GroupElement, PermsError> {
    if pi.base() != g.base() {
        return Err(PermsError::BadInput("mixed bases".into()));
    }
    Ok(GroupElement {
        perm: pi.clone(),
        perm_inv: pi.inverse(),
        g: g.clone(),
    })
}

/// The inverse element: its permutation is π^{-1}, its evaluator is
/// n ↦ π(G(π^{-1}(n))).
pub fn group_inverse(pi: &PadicPerm, g: &FibredSystem) -> Result<GroupElement, PermsError> {
    ungroup(&pi.inverse(), g)
}

// ---------------------------------------------------------------------------
// permutation polynomials

/// Integer-coefficient f is a p-permutation polynomial iff it fixes every
/// residue mod p and permutes the residues mod p²; both halves are finite
/// checks and together they certify bijectivity at every level.
pub fn is_perm_poly(coeffs: &[BigInt], p: u64) -> bool {
    for x in 0..p {
        let v = eval_int_poly_at_int(coeffs, &BigInt::from(x));
        if mod_pk_int(&v, p, 1) != BigUint::from(x) {
            return false;
        }
    }
    let p2 = (p * p) as usize;
    let mut seen = vec![false; p2];
    for x in 0..p2 {
        let v = eval_int_poly_at_int(coeffs, &BigInt::from(x));
        let r = mod_pk_int(&v, p, 2).to_usize().expect("below p^2");
        if seen[r] {
            return false;
        }
        seen[r] = true;
    }
    true
}

// ---------------------------------------------------------------------------
// trees of cycles

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeVertex {
    pub layer: u32,
    /// The cycle of π_layer this vertex stands for, rotated so its
    /// smallest element comes first.
    pub cycle: Vec<u64>,
    /// Incoming edge label |cycle| / |parent cycle|; 1 at the root.
    pub label: u32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// The layered tree of cycles: layer k holds the cycles of π_k, the parent
/// of a cycle is its reduction mod p^{k−1}, and edge labels record the
/// length ratio. The labels of any vertex's children always sum to p.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleTree {
    p: u64,
    depth: u32,
    vertices: Vec<TreeVertex>,
}

impl CycleTree {
    pub fn base(&self) -> u64 {
        self.p
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn vertices(&self) -> &[TreeVertex] {
        &self.vertices
    }

    /// The cycles at one layer, in order of smallest element.
    pub fn layer_cycles(&self, k: u32) -> Vec<&[u64]> {
        self.vertices
            .iter()
            .filter(|v| v.layer == k)
            .map(|v| v.cycle.as_slice())
            .collect()
    }

    /// Shape rules: root (0, [0]) with p children, labels per parent sum
    /// to p, out-degrees in [1, p] above the leaf layer, cycle lengths
    /// consistent with the labels.
    pub fn validate(&self) -> Result<(), PermsError> {
        let bad = |m: String| Err(PermsError::InvalidCycleTree(m));
        let root = match self.vertices.first() {
            Some(r) => r,
            None => return bad("empty tree".into()),
        };
        if root.layer != 0 || root.cycle != vec![0] || root.label != 1 || root.parent.is_some() {
            return bad("root must be the trivial cycle (0, [0])".into());
        }
        if self.depth >= 1 && root.children.len() != self.p as usize {
            return bad(format!(
                "root must have exactly {} children, got {}",
                self.p,
                root.children.len()
            ));
        }
        for (idx, v) in self.vertices.iter().enumerate() {
            if v.layer > self.depth {
                return bad(format!("vertex {idx} sits beyond the depth"));
            }
            if v.layer < self.depth {
                if v.children.is_empty() {
                    return bad(format!("vertex {idx} at layer {} has no children", v.layer));
                }
                if v.children.len() > self.p as usize {
                    return bad(format!("vertex {idx} has out-degree above {}", self.p));
                }
                let mut label_sum = 0u64;
                for &c in &v.children {
                    let child = &self.vertices[c];
                    if child.parent != Some(idx) || child.layer != v.layer + 1 {
                        return bad(format!("edge {idx} -> {c} is inconsistent"));
                    }
                    if child.label == 0 {
                        return bad(format!("vertex {c} has label 0"));
                    }
                    if child.cycle.len() != child.label as usize * v.cycle.len() {
                        return bad(format!(
                            "vertex {c} has cycle length {} under label {}",
                            child.cycle.len(),
                            child.label
                        ));
                    }
                    label_sum += child.label as u64;
                }
                if label_sum != self.p {
                    return bad(format!(
                        "labels under vertex {idx} sum to {label_sum}, need {}",
                        self.p
                    ));
                }
            } else if !v.children.is_empty() {
                return bad(format!("leaf {idx} at the bottom layer has children"));
            }
        }
        Ok(())
    }

    /// Canonical code of the whole tree: children sorted by (label, code)
    /// recursively, so label-preserving isomorphic trees compare equal.
    pub fn iso_code(&self) -> String {
        self.code_below(0, self.depth)
    }

    fn code_below(&self, v: usize, remaining: u32) -> String {
        if remaining == 0 {
            return String::new();
        }
        let mut parts: Vec<(u32, String)> = self.vertices[v]
            .children
            .iter()
            .map(|&c| (self.vertices[c].label, self.code_below(c, remaining - 1)))
            .collect();
        parts.sort();
        let mut out = String::from("(");
        for (label, code) in parts {
            let _ = write!(out, "{label}{code}");
        }
        out.push(')');
        out
    }

    /// DOT rendering: vertices named by their smallest cycle element,
    /// edges by their label.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cycles {\n");
        for (idx, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(out, "  v{idx} [label=\"{}\"];", v.cycle[0]);
        }
        for (idx, v) in self.vertices.iter().enumerate() {
            for &c in &v.children {
                let _ = writeln!(out, "  v{idx} -> v{c} [label=\"{}\"];", self.vertices[c].label);
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct VertexJson<'a> {
            layer: u32,
            cycle: &'a [u64],
        }
        #[derive(Serialize)]
        struct TreeJson<'a> {
            p: u64,
            depth: u32,
            vertices: Vec<VertexJson<'a>>,
            edges: Vec<(usize, usize, u32)>,
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| VertexJson {
                layer: v.layer,
                cycle: &v.cycle,
            })
            .collect();
        let mut edges = Vec::new();
        for (idx, v) in self.vertices.iter().enumerate() {
            for &c in &v.children {
                edges.push((idx, c, self.vertices[c].label));
            }
        }
        serde_json::to_string(&TreeJson {
            p: self.p,
            depth: self.depth,
            vertices,
            edges,
        })
        .expect("tree serialization cannot fail")
    }
}

/// Decompose the layers of π into the tree of cycles down to the given
/// depth. Traced cycles start at their smallest element, and children are
/// discovered in ascending order of that element.
pub fn cycle_tree(pi: &PadicPerm, depth: u32) -> Result<CycleTree, PermsError> {
    let p = pi.base();
    let mut vertices = vec![TreeVertex {
        layer: 0,
        cycle: vec![0],
        label: 1,
        parent: None,
        children: Vec::new(),
    }];
    let mut prev_owner: Vec<usize> = vec![0];
    for k in 1..=depth {
        let arr = pi.layer(k)?;
        let size = arr.len();
        let mut owner = vec![usize::MAX; size];
        for start in 0..size {
            if owner[start] != usize::MAX {
                continue;
            }
            let mut cyc = Vec::new();
            let mut x = start;
            loop {
                cyc.push(x as u64);
                x = arr[x] as usize;
                if x == start {
                    break;
                }
                if cyc.len() > size {
                    return Err(PermsError::NotBlockSystem(
                        "layer array is not a permutation".into(),
                    ));
                }
            }
            let parent_idx = prev_owner[start % (size / p as usize).max(1)];
            let parent_len = vertices[parent_idx].cycle.len();
            if cyc.len() % parent_len != 0 {
                return Err(PermsError::NotBlockSystem(
                    "cycle length does not divide into its parent".into(),
                ));
            }
            let vidx = vertices.len();
            for &e in &cyc {
                owner[e as usize] = vidx;
            }
            vertices.push(TreeVertex {
                layer: k,
                cycle: cyc.clone(),
                label: (cyc.len() / parent_len) as u32,
                parent: Some(parent_idx),
                children: Vec::new(),
            });
            vertices[parent_idx].children.push(vidx);
        }
        prev_owner = owner;
    }
    Ok(CycleTree { p, depth, vertices })
}

// ---------------------------------------------------------------------------
// building trees by shape, and synthesizing systems from trees

/// A tree shape for hand-built or generated cycle trees: the label of the
/// incoming edge and the shapes below. Labels of the children of any node
/// must sum to p.
#[derive(Clone, Debug)]
pub struct ShapeNode {
    pub label: u32,
    pub children: Vec<ShapeNode>,
}

impl ShapeNode {
    pub fn leaf(label: u32) -> ShapeNode {
        ShapeNode {
            label,
            children: Vec::new(),
        }
    }

    pub fn with(label: u32, children: Vec<ShapeNode>) -> ShapeNode {
        ShapeNode { label, children }
    }
}

/// Realize a shape as a concrete cycle tree: vertices get the canonical
/// cycles of the synthesis construction (each child's cycle concatenates
/// shifted copies of its parent's). The shape's leaves must all sit at
/// the same depth, and the roots must be p label-1 nodes.
pub fn tree_from_shape(p: u64, roots: &[ShapeNode]) -> Result<CycleTree, PermsError> {
    let mut vertices = vec![TreeVertex {
        layer: 0,
        cycle: vec![0],
        label: 1,
        parent: None,
        children: Vec::new(),
    }];
    let mut depth = None;
    let mut queue: std::collections::VecDeque<(usize, &ShapeNode, u32, u64)> =
        std::collections::VecDeque::new();
    let mut offset = 0u64;
    for node in roots {
        queue.push_back((0, node, 1, offset));
        offset += node.label as u64;
    }
    // each entry: (parent index, shape, layer, digit offset o(v)); breadth
    // first, so siblings get consecutive indices in their given order
    while let Some((parent_idx, node, layer, o)) = queue.pop_front() {
        let step = (p as u128).checked_pow(layer - 1).ok_or_else(|| {
            PermsError::InvalidCycleTree("tree too deep to realize".into())
        })?;
        if step > MAX_TABLE_ENTRIES as u128 {
            return Err(PermsError::InvalidCycleTree("tree too deep to realize".into()));
        }
        let step = step as u64;
        let parent_cycle = vertices[parent_idx].cycle.clone();
        let mut cycle = Vec::with_capacity(node.label as usize * parent_cycle.len());
        for i in 0..node.label as u64 {
            for &e in &parent_cycle {
                cycle.push(e + (o + i) * step);
            }
        }
        let vidx = vertices.len();
        vertices.push(TreeVertex {
            layer,
            cycle,
            label: node.label,
            parent: Some(parent_idx),
            children: Vec::new(),
        });
        vertices[parent_idx].children.push(vidx);
        if node.children.is_empty() {
            match depth {
                None => depth = Some(layer),
                Some(d) if d == layer => {}
                Some(d) => {
                    return Err(PermsError::InvalidCycleTree(format!(
                        "leaves at mixed depths {d} and {layer}"
                    )))
                }
            }
        }
        let mut child_offset = 0u64;
        for child in node.children.iter() {
            queue.push_back((vidx, child, layer + 1, child_offset));
            child_offset += child.label as u64;
        }
    }
    let tree = CycleTree {
        p,
        depth: depth.unwrap_or(0),
        vertices,
    };
    tree.validate()?;
    Ok(tree)
}

/// Digit columns of the synthesized table: cols[j][n mod p^(j+1)] is the
/// j-th digit of n's expansion. The construction walks the tree writing
/// each vertex's elements and digits.
fn tree_columns(t: &CycleTree, depth: u32) -> Result<Vec<Vec<u64>>, PermsError> {
    let p = t.p;
    let mut cols: Vec<Vec<u64>> = (0..depth)
        .map(|j| {
            table_size(p, j + 1)
                .map(|s| vec![u64::MAX; s])
                .ok_or(PermsError::PrecisionExhausted(j + 1))
        })
        .collect::<Result<_, _>>()?;
    // P-values per vertex, rebuilt canonically from the shape alone
    let mut pvals: Vec<Vec<u64>> = vec![Vec::new(); t.vertices.len()];
    pvals[0] = vec![0];
    let mut order: Vec<usize> = (0..t.vertices.len()).collect();
    order.sort_by_key(|&i| t.vertices[i].layer);
    for &vi in order.iter().skip(1) {
        let v = &t.vertices[vi];
        if v.layer > depth {
            continue;
        }
        let parent = v.parent.expect("non-root vertices have parents");
        let mut o = 0u64;
        for &sib in &t.vertices[parent].children {
            if sib == vi {
                break;
            }
            o += t.vertices[sib].label as u64;
        }
        let step = pow_u(p, v.layer - 1).to_u64().expect("bounded by table cap");
        let parent_p = std::mem::take(&mut pvals[parent]);
        let ell = parent_p.len();
        let c = v.label as u64;
        let mut pv = Vec::with_capacity(c as usize * ell);
        let col = &mut cols[v.layer as usize - 1];
        for i in 0..c {
            for (t_idx, &e) in parent_p.iter().enumerate() {
                let elem = e + (o + i) * step;
                let digit = if t_idx + 1 == ell {
                    o + (i + 1) % c
                } else {
                    o + i
                };
                col[elem as usize] = digit;
                pv.push(elem);
            }
        }
        pvals[parent] = parent_p;
        pvals[vi] = pv;
    }
    for (j, col) in cols.iter().enumerate() {
        if col.iter().any(|&d| d == u64::MAX) {
            return Err(PermsError::InvalidCycleTree(format!(
                "layer {} does not cover all residues",
                j + 1
            )));
        }
    }
    Ok(cols)
}

fn layer_from_cols(cols: &[Vec<u64>], p: u64, k: u32) -> Vec<u64> {
    let size = pow_u(p, k).to_usize().expect("bounded by table cap");
    (0..size)
        .map(|n| {
            let mut v = 0u64;
            for j in (0..k as usize).rev() {
                v = v * p + cols[j][n % cols[j].len()];
            }
            v
        })
        .collect()
}

/// Synthesize a system whose tree of cycles is the given tree (up to
/// relabeling of the vertices' cycles): the tree dictates a digit table,
/// the table dictates the canonical system carrying it, and the returned
/// permutation reads that system's expansions as standard ones.
pub fn tree_to_system(
    t: &CycleTree,
    depth: u32,
) -> Result<(FibredSystem, PadicPerm), PermsError> {
    t.validate()?;
    if depth == 0 || depth > t.depth {
        return Err(PermsError::InvalidCycleTree(format!(
            "requested depth {depth} outside the tree's 1..={}",
            t.depth
        )));
    }
    let p = t.p;
    let cols = tree_columns(t, depth)?;
    let size = table_size(p, depth).ok_or(PermsError::PrecisionExhausted(depth))?;
    // the iterate of x is the unique m < p^(depth-1) whose digit prefix is
    // x's prefix shifted one place, found through the value permutation;
    // the branch entry stores p m + d so the shift lands on m
    let map: Vec<BigUint> = if depth == 1 {
        (0..size).map(|x| BigUint::from(x as u64 % p)).collect()
    } else {
        let inv = invert_table(
            &layer_from_cols(&cols, p, depth - 1),
            "synthesized digit table",
        )?;
        (0..size)
            .map(|x| {
                let mut key = 0u64;
                for j in (1..depth as usize).rev() {
                    key = key * p + cols[j][x % cols[j].len()];
                }
                BigUint::from(inv[key as usize] * p + x as u64 % p)
            })
            .collect()
    };
    let branches = (0..p)
        .map(|_| Branch::Table {
            k: depth,
            map: map.clone(),
        })
        .collect();
    let f = FibredSystem::new(p, branches)?;
    if !block_check_bruteforce(&f, depth) {
        return Err(PermsError::InvalidCycleTree(
            "synthesized table fails the block check".into(),
        ));
    }
    let pi = PadicPerm::from_pair(&f, &standard_system(p))?;
    Ok((f, pi))
}

// ---------------------------------------------------------------------------
// subtree classification

/// Isomorphism classes of all full rooted subtrees spanning the given
/// number of edge layers, as a code → count map. Children are encoded
/// sorted by (label, code), so the codes are canonical.
pub fn subtree_classes(
    t: &CycleTree,
    layers: u32,
) -> Result<BTreeMap<String, usize>, PermsError> {
    if layers == 0 || layers > t.depth {
        return Err(PermsError::BadInput(format!(
            "layer count {layers} outside the tree's 1..={}",
            t.depth
        )));
    }
    let mut classes = BTreeMap::new();
    for (idx, v) in t.vertices.iter().enumerate() {
        if v.layer + layers <= t.depth {
            *classes.entry(t.code_below(idx, layers)).or_insert(0) += 1;
        }
    }
    Ok(classes)
}

/// True unless some chain of 4 or more out-degree-1 vertices feeds a
/// vertex that splits. Leaf-layer vertices have no visible out-degree and
/// never end a chain.
pub fn no_y_check(t: &CycleTree) -> bool {
    // straight[v]: length of the maximal out-degree-1 chain ending at v's
    // parent, walking top-down
    let mut straight = vec![0u32; t.vertices.len()];
    for (idx, v) in t.vertices.iter().enumerate() {
        for &c in &v.children {
            straight[c] = if v.children.len() == 1 && idx != 0 {
                straight[idx] + 1
            } else {
                0
            };
        }
        if v.children.len() >= 2 && straight[idx] >= 4 {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// digit-parity relations

/// The k-th base-2 digit of π(n).
fn phi(pi: &PadicPerm, k: u32, n: u64) -> Result<u64, PermsError> {
    let v = pi.image_u64(k + 1, n)?;
    Ok((v >> k) & 1)
}

/// One of the four digit-parity relations every permutation from a pair
/// of Z_2-polynomial systems (relation 1) or every 2-permutation
/// polynomial (relations 2 through 4) satisfies. Returns whether the
/// relation holds at (k, n); relations 3 and 4 need k ≥ 1.
pub fn relation_check(pi: &PadicPerm, rel: u8, k: u32, n: u64) -> Result<bool, PermsError> {
    if pi.base() != 2 {
        return Err(PermsError::UnsupportedBase(pi.base()));
    }
    if matches!(rel, 3 | 4) && k == 0 {
        return Err(PermsError::BadInput(format!("relation {rel} needs k >= 1")));
    }
    // n_{abc} = n + a 2^k + b 2^(k+1) + c 2^(k+2), subscripts low bit first
    let at = |a: u64, b: u64, c: u64| n + (a << k) + (b << (k + 1)) + (c << (k + 2));
    let ph = |j: u32, m: u64| phi(pi, j, m);
    match rel {
        1 => {
            let lhs = ph(k + 2, at(0, 0, 0))?
                + ph(k + 2, at(0, 1, 0))?
                + ph(k + 3, at(1, 0, 0))?
                + ph(k + 3, at(1, 1, 0))?
                + ph(k + 3, at(1, 0, 1))?
                + ph(k + 3, at(1, 1, 1))?;
            let rhs = ph(k + 1, at(0, 0, 0))? + ph(k + 1, at(1, 0, 0))?;
            Ok((lhs + rhs) % 2 == 0)
        }
        2 => {
            let s = ph(k + 2, at(0, 0, 0))?
                + ph(k + 2, at(0, 1, 0))?
                + ph(k + 3, at(0, 0, 0))?
                + ph(k + 3, at(0, 1, 0))?
                + ph(k + 3, at(0, 0, 1))?
                + ph(k + 3, at(0, 1, 1))?;
            Ok(s % 2 == 0)
        }
        3 => {
            let s = ph(k + 1, at(0, 0, 0))?
                + ph(k + 2, at(0, 0, 0))?
                + ph(k + 3, at(0, 1, 0))?
                + ph(k + 3, at(0, 1, 1))?;
            Ok(s % 2 == 0)
        }
        4 => {
            let gate =
                ph(k + 1, at(0, 0, 0))? + ph(k + 2, at(0, 1, 0))? + ph(k + 3, at(0, 0, 0))?;
            let lhs = if gate == 0 || gate == 3 { 0 } else { 1 };
            let rhs = ph(k, at(0, 0, 0))?
                + ph(k + 1, at(1, 0, 0))?
                + ph(k + 2, at(0, 0, 0))?
                + ph(k + 3, at(0, 1, 0))?
                + ph(k + 4, at(0, 0, 0))?
                + ph(k + 4, at(0, 0, 1))?;
            Ok((lhs + rhs) % 2 == 0)
        }
        _ => Err(PermsError::BadInput(format!("no relation {rel}, use 1..=4"))),
    }
}

/// All four relations at (k, n); k must be at least 1 so that every
/// relation applies.
pub fn relation_checks(pi: &PadicPerm, k: u32, n: u64) -> Result<[bool; 4], PermsError> {
    Ok([
        relation_check(pi, 1, k, n)?,
        relation_check(pi, 2, k, n)?,
        relation_check(pi, 3, k, n)?,
        relation_check(pi, 4, k, n)?,
    ])
}
