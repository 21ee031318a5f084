//! Command line front end: digit tables, block checks, root lifting, orbit
//! detection with resumable checkpoints, slope scans, permutation values and
//! cycle trees, all printed exactly (decimal integers or "num/den", never
//! floats) so that repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_bigint::{BigInt, BigUint};
use num_traits::{ToPrimitive, Zero};
use serde_json::{json, Value};

use padic::arith::{embed_prat, pow_u, ArithError, PRat, Residue};
use padic::hensel::{hensel_root, word_fixed_point, HenselError};
use padic::linear::{
    classify, collatz_constant_family, invert_for_pairs, invert_for_system, rational_orbit_full,
    scan_mi_mp, DenGrowth, Growth, LinError, LinSystem, OrbitParams, OrbitRecord, OrbitStatus,
    ScanWitness,
};
use padic::perms::{
    compose_exact, cycle_tree, group_compose, no_y_check, perm_exact_with, perm_image,
    relation_check, relation_checks, standard_system, subtree_classes, ungroup, PadicPerm,
    PermsError,
};
use padic::seq::{parse_up, table_to_seq, SeqError};
use padic::suitability::{system_block, BlockMode, SuitError, SuitReport};
use padic::systems::{
    block_check_bruteforce, digit_expansion_exact, parse_poly, parse_system, Branch, FibredSystem,
    SystemsError,
};

// ---------------------------------------------------------------------------
// errors and exit codes

/// 1 for ordinary failures, 2 when the block property is the thing that
/// failed (scripts distinguish "not a p-adic system" from everything else).
struct CliError {
    code: i32,
    msg: String,
}

fn fail(msg: impl Into<String>) -> CliError {
    CliError { code: 1, msg: msg.into() }
}

fn block_fail(msg: impl Into<String>) -> CliError {
    CliError { code: 2, msg: msg.into() }
}

macro_rules! plain_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                fail(e.to_string())
            }
        }
    )*};
}
plain_errors!(SystemsError, LinError, HenselError, SeqError, SuitError, ArithError, std::io::Error);

impl From<PermsError> for CliError {
    fn from(e: PermsError) -> Self {
        match e {
            PermsError::NotBlockSystem(_) => block_fail(e.to_string()),
            other => fail(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// argument grammar

#[derive(Parser)]
#[command(
    name = "padic",
    version,
    about = "Exact experiments with p-adic systems",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Digit expansion of one number, optionally with the full table as CSV
    Digits {
        /// System text, e.g. "(x,3x+1)@2"; "@p" may be omitted when the
        /// branch count determines p or --p is given
        system: String,
        /// Point to expand, an integer or "num/den" inside Z_p
        #[arg(long, allow_hyphen_values = true)]
        n: String,
        /// Number of digits
        #[arg(long)]
        k: u32,
        /// Base override when the system text has no "@p" suffix
        #[arg(long)]
        p: Option<u64>,
        /// Brute-force certification level for table-branch systems
        #[arg(long, default_value_t = 8)]
        level: u32,
        /// Also write the table for n in [0, p^k) to this CSV file
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Digit table for all n in [0, p^k) as CSV
    Table {
        system: String,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: Option<u64>,
        #[arg(long, default_value_t = 8)]
        level: u32,
        /// Write to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Block-property report for a system (exit 2 when the check fails)
    Check {
        system: String,
        #[arg(long)]
        p: Option<u64>,
        /// Which half to demand: "full" (default) or "weak"
        #[arg(long, default_value = "full")]
        mode: String,
        /// Brute-force level for branch kinds without a criterion
        #[arg(long, default_value_t = 8)]
        level: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hensel-lift a root of a polynomial in the class r + pZ_p
    Root {
        /// Polynomial, e.g. "x^2+1"
        poly: String,
        #[arg(long)]
        p: u64,
        /// Residue class of the root
        #[arg(long)]
        r: u64,
        /// Lift precision (digits)
        #[arg(long)]
        k: u32,
    },
    /// Fixed point of a digit-word composition of branches
    Fixpoint {
        system: String,
        /// Digit word, comma separated: "2,1"
        #[arg(long)]
        word: String,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: Option<u64>,
    },
    /// Orbit periodicity of a rational under a linear system
    Orbit {
        system: String,
        #[arg(long, allow_hyphen_values = true)]
        n: String,
        #[arg(long)]
        p: Option<u64>,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
        /// Give up once a denominator needs this many decimal digits
        #[arg(long, default_value_t = 10_000)]
        max_digits: u32,
        /// States kept for exact entry detection before Brent + replay
        #[arg(long, default_value_t = 1_000_000)]
        memory_cap: usize,
        /// Write a checkpoint every this many steps (0 = never); files go
        /// to $PADIC_CHECKPOINT_DIR
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
        /// Continue from the checkpoint of an interrupted identical run
        #[arg(long)]
        resume: bool,
        /// Append the record to this CSV file
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan linear slope systems for maximal pre-period and period lengths
    Scan {
        #[arg(long)]
        p: u64,
        /// Largest start tested (starts run over [1, n_max])
        #[arg(long)]
        n_max: u64,
        /// Worker threads (default: available parallelism)
        #[arg(long)]
        jobs: Option<usize>,
        /// Confirm scans that run for hours (required for p >= 4)
        #[arg(long)]
        long: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Constants making a linear system realize a prescribed digit word
    Invert {
        system: String,
        /// Branch whose constant is solved for
        #[arg(long)]
        r: u64,
        /// Target word: "(1,0,0)(0,1)^inf", "(1,0)^inf" or a finite "(1,0)"
        #[arg(long)]
        word: String,
        /// Solve for the single constant sending this start to the word
        #[arg(long, allow_hyphen_values = true)]
        n: Option<String>,
        /// Family shape when --n is absent: "pairs" (default) or "collatz"
        #[arg(long, default_value = "pairs")]
        family: String,
        #[arg(long)]
        p: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Value of the conjugacy permutation between two systems
    Perm {
        /// Composite expression "F2∘_G F1" evaluated over the standard base
        expr: Option<String>,
        #[arg(long)]
        f: Option<String>,
        /// Base system (default: the standard system of the same base)
        #[arg(long)]
        g: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        n: String,
        /// Evaluate on residues mod p^k instead of exactly
        #[arg(long)]
        k: Option<u32>,
        /// Exact rational value (the default unless --k is given)
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        p: Option<u64>,
        #[arg(long, default_value_t = 100_000)]
        max_steps: u64,
        #[arg(long, default_value_t = 5_000)]
        max_digits: u32,
    },
    /// Action of the composite system F2 ∘_G F1
    Compose {
        #[arg(long)]
        f1: String,
        #[arg(long)]
        f2: String,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        n: String,
        /// Act on residues mod p^k through the permutation group instead
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        p: Option<u64>,
    },
    /// Tree of cycles of a permutation, as JSON or DOT
    Tree {
        /// Pair of systems "F,G" inducing the permutation
        #[arg(long)]
        pi: Option<String>,
        /// Permutation polynomial with integer coefficients
        #[arg(long)]
        poly: Option<String>,
        #[arg(long)]
        depth: u32,
        #[arg(long)]
        p: Option<u64>,
        /// Write DOT here
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Write JSON here (default: stdout when --dot is absent)
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Census of two-layer (and deeper) subtree shapes in a cycle tree
    Subtrees {
        #[arg(long)]
        pi: Option<String>,
        #[arg(long)]
        poly: Option<String>,
        #[arg(long)]
        depth: u32,
        /// Subtree height counted in layers below each vertex
        #[arg(long, default_value_t = 2)]
        layers: u32,
        #[arg(long)]
        p: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Digit relations of 2-adic permutations at a window position
    Relations {
        #[arg(long)]
        pi: Option<String>,
        #[arg(long)]
        poly: Option<String>,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        n: u64,
        /// Single relation 1..=4 (default: all four, needs k >= 1)
        #[arg(long)]
        rel: Option<u8>,
        #[arg(long)]
        p: Option<u64>,
    },
    /// The modified Thue-Morse sequence read off its defining system
    ThueMorse {
        /// Digits per row; the table has 2^k rows
        #[arg(long, default_value_t = 4)]
        k: u32,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {}", e.msg);
        std::process::exit(e.code);
    }
}

// ---------------------------------------------------------------------------
// shared parsing and printing

fn parse_rat(text: &str) -> Result<PRat, CliError> {
    let t = text.trim();
    let (n, d) = match t.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (t, "1"),
    };
    let num: BigInt = n.parse().map_err(|_| fail(format!("bad rational {t:?}")))?;
    let den: BigInt = d.parse().map_err(|_| fail(format!("bad rational {t:?}")))?;
    if den.is_zero() {
        return Err(fail(format!("zero denominator in {t:?}")));
    }
    Ok(PRat::new(num, den))
}

fn rat_str(x: &PRat) -> String {
    x.to_string()
}

/// Base of a bare "(b_0, ..., b_{p-1})" from its branch count.
fn infer_base(text: &str) -> Result<u64, CliError> {
    let t = text.trim();
    if !t.starts_with('(') || !t.ends_with(')') {
        return Err(fail(format!("system must be parenthesized: {t:?}")));
    }
    let mut depth = 0i64;
    let mut bracket = 0i64;
    let mut branches = 1u64;
    for c in t.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            '[' => bracket += 1,
            ']' => bracket -= 1,
            ',' if depth == 1 && bracket == 0 => branches += 1,
            _ => {}
        }
    }
    Ok(branches)
}

/// One grammar everywhere: "@p" wins, then --p, then the branch count.
fn parse_sys(text: &str, p: Option<u64>) -> Result<FibredSystem, CliError> {
    let t = text.trim();
    if t.contains('@') {
        return Ok(parse_system(t)?);
    }
    let p = match p {
        Some(p) => p,
        None => infer_base(t)?,
    };
    Ok(parse_system(&format!("{t}@{p}"))?)
}

/// Split "F,G" at the comma between the two parenthesized systems.
fn split_pair(text: &str) -> Result<(&str, &str), CliError> {
    let mut depth = 0i64;
    for (i, c) in text.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => return Ok((&text[..i], &text[i + 1..])),
            _ => {}
        }
    }
    Err(fail("expected two systems separated by a top-level comma"))
}

fn parse_digit_word(text: &str, p: u64) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in text.split([',', ' ']).filter(|s| !s.is_empty()) {
        let d: u64 = part.trim().parse().map_err(|_| fail(format!("bad digit {part:?}")))?;
        if d >= p {
            return Err(fail(format!("digit {d} is outside [0, {p})")));
        }
        out.push(d);
    }
    if out.is_empty() {
        return Err(fail("empty digit word"));
    }
    Ok(out)
}

fn emit(content: &str, path: Option<&Path>) -> Result<(), CliError> {
    let mut text = content.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn residue_digits(r: &Residue) -> Vec<u64> {
    let p = BigUint::from(r.base());
    let mut v = r.value().clone();
    let mut out = Vec::with_capacity(r.precision() as usize);
    for _ in 0..r.precision() {
        out.push((&v % &p).to_u64().expect("digit fits"));
        v /= &p;
    }
    out
}

fn join_digits(d: &[u64]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Demand the full block property, brute-forcing branch kinds (tables) the
/// criteria cannot certify. Failure is the exit-code-2 kind.
fn ensure_block(f: &FibredSystem, level: u32) -> Result<(), CliError> {
    if f.verified_block_level() >= 1 {
        return Ok(());
    }
    match system_block(f, BlockMode::Full) {
        Ok(rep) if rep.full => Ok(()),
        Ok(rep) => {
            let detail = match &rep.witness {
                Some(w) => format!(
                    "block property fails at level {}: classes of {} and {} collide",
                    w.level, w.m, w.n
                ),
                None => "block property fails".into(),
            };
            Err(block_fail(detail))
        }
        Err(SuitError::UnsupportedBranch(_)) => {
            if block_check_bruteforce(f, level) {
                Ok(())
            } else {
                Err(block_fail(format!(
                    "block property fails by brute force at level {level}"
                )))
            }
        }
        Err(e) => Err(fail(e.to_string())),
    }
}

fn as_lin(f: &FibredSystem) -> Result<LinSystem, CliError> {
    LinSystem::from_fibred(f).map_err(|e| fail(format!("system is not linear: {e}")))
}

fn standard_lin(p: u64) -> LinSystem {
    let pairs: Vec<(i64, i64)> = (0..p as i64).map(|r| (-r, 1)).collect();
    LinSystem::from_int_pairs(p, &pairs).expect("standard system is linear")
}

/// The permutation named by --pi "F,G" or --poly; returns it with its base.
fn build_perm(
    pi: Option<&str>,
    poly: Option<&str>,
    p: Option<u64>,
) -> Result<(PadicPerm, u64), CliError> {
    match (pi, poly) {
        (Some(text), None) => {
            let (a, b) = split_pair(text)?;
            let f = parse_sys(a, p)?;
            let g = parse_sys(b, Some(f.base()))?;
            let perm = PadicPerm::from_pair(&f, &g)?;
            let base = perm.base();
            Ok((perm, base))
        }
        (None, Some(text)) => {
            let p = p.ok_or_else(|| fail("--p is required with --poly"))?;
            let coeffs = int_coeffs(text)?;
            let perm = PadicPerm::from_poly(&coeffs, p)?;
            Ok((perm, p))
        }
        _ => Err(fail("pass exactly one of --pi or --poly")),
    }
}

fn int_coeffs(text: &str) -> Result<Vec<BigInt>, CliError> {
    let coeffs = parse_poly(text)?;
    coeffs
        .iter()
        .map(|c| {
            if c.is_integer() {
                Ok(c.to_integer())
            } else {
                Err(fail("permutation polynomials need integer coefficients"))
            }
        })
        .collect()
}

fn table_rows_csv(f: &FibredSystem, k: u32) -> Result<String, CliError> {
    let p = f.base();
    let rows = pow_u(p, k)
        .to_u64()
        .filter(|&m| m <= 1 << 20)
        .ok_or_else(|| fail(format!("table for p^{k} rows is beyond the 2^20 cap")))?;
    let mut out = String::from("n");
    for j in 0..k {
        out.push_str(&format!(",d{j}"));
    }
    out.push('\n');
    for n in 0..rows {
        let digits = digit_expansion_exact(f, &PRat::from_integer(BigInt::from(n)), k)?;
        out.push_str(&n.to_string());
        for d in digits {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// dispatch

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Digits { system, n, k, p, level, csv } => {
            let f = parse_sys(&system, p)?;
            ensure_block(&f, level.max(k))?;
            let x = parse_rat(&n)?;
            let digits = digit_expansion_exact(&f, &x, k)?;
            println!("{}", join_digits(&digits));
            if let Some(path) = csv {
                emit(&table_rows_csv(&f, k)?, Some(&path))?;
            }
            Ok(())
        }
        Cmd::Table { system, k, p, level, out } => {
            let f = parse_sys(&system, p)?;
            ensure_block(&f, level.max(k))?;
            emit(&table_rows_csv(&f, k)?, out.as_deref())
        }
        Cmd::Check { system, p, mode, level, out } => cmd_check(&system, p, &mode, level, out),
        Cmd::Root { poly, p, r, k } => {
            let coeffs = parse_poly(&poly)?;
            let lifted = hensel_root(&Branch::Poly(coeffs), p, r, k)?;
            let doc = json!({
                "class": lifted.class,
                "digits": residue_digits(&lifted.root),
                "precision": lifted.root.precision(),
                "residue": lifted.root.value().to_string(),
                "certified_levels": lifted.certificate.len(),
            });
            emit(&doc.to_string(), None)
        }
        Cmd::Fixpoint { system, word, k, p } => {
            let f = parse_sys(&system, p)?;
            let d = parse_digit_word(&word, f.base())?;
            let res = word_fixed_point(&f, &d, k)?;
            let doc = json!({
                "digits": residue_digits(&res),
                "precision": res.precision(),
                "residue": res.value().to_string(),
            });
            emit(&doc.to_string(), None)
        }
        Cmd::Orbit {
            system,
            n,
            p,
            max_steps,
            max_digits,
            memory_cap,
            checkpoint_every,
            resume,
            csv,
            out,
        } => cmd_orbit(
            &system,
            &n,
            p,
            OrbitParams { max_steps, max_digits, memory_cap, checkpoint_every },
            resume,
            csv,
            out,
        ),
        Cmd::Scan { p, n_max, jobs, long, out } => cmd_scan(p, n_max, jobs, long, out),
        Cmd::Invert { system, r, word, n, family, p, out } => {
            cmd_invert(&system, r, &word, n.as_deref(), &family, p, out)
        }
        Cmd::Perm { expr, f, g, n, k, exact, p, max_steps, max_digits } => {
            cmd_perm(expr, f, g, &n, k, exact, p, max_steps, max_digits)
        }
        Cmd::Compose { f1, f2, g, n, k, p } => cmd_compose(&f1, &f2, g.as_deref(), &n, k, p),
        Cmd::Tree { pi, poly, depth, p, dot, json } => {
            let (perm, _) = build_perm(pi.as_deref(), poly.as_deref(), p)?;
            let t = cycle_tree(&perm, depth)?;
            if let Some(path) = &dot {
                emit(&t.to_dot(), Some(path))?;
            }
            if let Some(path) = &json {
                emit(&t.to_json(), Some(path))?;
            }
            if dot.is_none() && json.is_none() {
                emit(&t.to_json(), None)?;
            }
            Ok(())
        }
        Cmd::Subtrees { pi, poly, depth, layers, p, out } => {
            let (perm, _) = build_perm(pi.as_deref(), poly.as_deref(), p)?;
            let t = cycle_tree(&perm, depth)?;
            let classes = subtree_classes(&t, layers)?;
            let doc = json!({
                "classes": classes.into_iter().collect::<BTreeMap<String, usize>>(),
                "depth": depth,
                "layers": layers,
                "no_y": no_y_check(&t),
                "vertices": t.vertices().len(),
            });
            emit(&doc.to_string(), out.as_deref())
        }
        Cmd::Relations { pi, poly, k, n, rel, p } => {
            let (perm, _) = build_perm(pi.as_deref(), poly.as_deref(), p)?;
            let doc = match rel {
                Some(r) => {
                    json!({"holds": relation_check(&perm, r, k, n)?, "k": k, "n": n, "rel": r})
                }
                None => {
                    if k == 0 {
                        return Err(fail(
                            "relations 3 and 4 need --k at least 1; pass --rel to check one",
                        ));
                    }
                    let all = relation_checks(&perm, k, n)?;
                    let list: Vec<Value> = all
                        .iter()
                        .enumerate()
                        .map(|(i, &h)| json!({"holds": h, "rel": i + 1}))
                        .collect();
                    json!({"k": k, "n": n, "relations": list})
                }
            };
            emit(&doc.to_string(), None)
        }
        Cmd::ThueMorse { k } => cmd_thue_morse(k),
    }
}

// ---------------------------------------------------------------------------
// check

fn cmd_check(
    system: &str,
    p: Option<u64>,
    mode: &str,
    level: u32,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let want_full = match mode {
        "full" => true,
        "weak" => false,
        other => return Err(fail(format!("--mode must be weak or full, got {other:?}"))),
    };
    let f = parse_sys(system, p)?;
    let (doc, weak, full) = match system_block(&f, BlockMode::Full) {
        Ok(rep) => (criteria_json(&f, &rep), rep.weak, rep.full),
        Err(SuitError::UnsupportedBranch(_)) => {
            let weak = padic::systems::weak_block_check_bruteforce(&f, level);
            let full = block_check_bruteforce(&f, level);
            let doc = json!({
                "p": f.base(),
                "method": "bruteforce",
                "checked_level": level,
                "weak": weak,
                "full": full,
                "conjectural": false,
                "witness": Value::Null,
                "branches": Vec::<Value>::new(),
                "classification": Value::Null,
            });
            (doc, weak, full)
        }
        Err(e) => return Err(fail(e.to_string())),
    };
    emit(&doc.to_string(), out.as_deref())?;
    let ok = if want_full { full } else { weak };
    if ok {
        Ok(())
    } else {
        Err(block_fail(format!(
            "{} block property does not hold",
            if want_full { "full" } else { "weak" }
        )))
    }
}

fn criteria_json(f: &FibredSystem, rep: &SuitReport) -> Value {
    let witness = match &rep.witness {
        Some(w) => json!({"level": w.level, "m": w.m.to_string(), "n": w.n.to_string()}),
        None => Value::Null,
    };
    let branches: Vec<Value> = rep
        .branch_reports
        .iter()
        .map(|b| {
            json!({
                "branch": b.branch,
                "weak": b.weak,
                "full": b.full,
                "conjectural": b.conjectural,
            })
        })
        .collect();
    let classification = match LinSystem::from_fibred(f) {
        Ok(lin) => {
            let c = classify(&lin);
            json!({
                "growth": match c.growth {
                    Growth::Contractive => "contractive",
                    Growth::Expansive => "expansive",
                    Growth::Mixed => "mixed",
                },
                "denominator_growth": match c.den_growth {
                    DenGrowth::DContractive => "contractive",
                    DenGrowth::DMixed => "mixed",
                    DenGrowth::DExpansive => "expansive",
                },
                "radius": c.radius.as_ref().map(rat_str),
            })
        }
        Err(_) => Value::Null,
    };
    json!({
        "p": rep.p,
        "method": "criteria",
        "weak": rep.weak,
        "full": rep.full,
        "conjectural": rep.conjectural,
        "witness": witness,
        "branches": branches,
        "classification": classification,
    })
}

// ---------------------------------------------------------------------------
// orbit with resumable checkpoints

fn checkpoint_path(system: &str, n: &str) -> Option<PathBuf> {
    let dir = std::env::var_os("PADIC_CHECKPOINT_DIR")?;
    if dir.is_empty() {
        return None;
    }
    // FNV-1a over both texts keeps the name short even for huge starts
    let mut h: u64 = 0xcbf29ce484222325;
    for b in system.bytes().chain([0u8]).chain(n.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    Some(PathBuf::from(dir).join(format!("orbit-{h:016x}.json")))
}

fn read_checkpoint(path: &Path) -> Result<(PRat, u64), CliError> {
    let text = fs::read_to_string(path)?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| fail(format!("bad checkpoint: {e}")))?;
    let step = doc["step"]
        .as_u64()
        .ok_or_else(|| fail("checkpoint lacks a step"))?;
    let value = doc["value"]
        .as_str()
        .ok_or_else(|| fail("checkpoint lacks a value"))?;
    Ok((parse_rat(value)?, step))
}

fn orbit_json(rec: &OrbitRecord) -> Value {
    json!({
        "start": rat_str(&rec.start),
        "status": match rec.status {
            OrbitStatus::Periodic => "periodic",
            OrbitStatus::UltimatelyPeriodic => "ultimately-periodic",
            OrbitStatus::Timeout => "timeout",
        },
        "initial": rec.initial_length,
        "period": rec.period_length,
        "period_digits": rec.period_digits,
        "steps_used": rec.steps_used,
        "max_denominator_digits": rec.max_denominator.to_string().len(),
    })
}

fn cmd_orbit(
    system: &str,
    n: &str,
    p: Option<u64>,
    params: OrbitParams,
    resume: bool,
    csv: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let f = parse_sys(system, p)?;
    let lin = as_lin(&f)?;
    let start = parse_rat(n)?;

    let ckpt = checkpoint_path(system, n);
    let resume_state = match (&ckpt, resume) {
        (Some(path), true) if path.exists() => Some(read_checkpoint(path)?),
        (None, true) => return Err(fail("--resume needs PADIC_CHECKPOINT_DIR")),
        _ => None,
    };
    if let Some(path) = &ckpt {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
    }

    let mut observe = |step: u64, x: &PRat| {
        if let Some(path) = &ckpt {
            let doc = json!({"step": step, "value": rat_str(x)}).to_string();
            if let Err(e) = fs::write(path, doc) {
                eprintln!("warning: checkpoint write failed: {e}");
            }
        }
        true
    };
    let rec = rational_orbit_full(&lin, &start, &params, resume_state, &mut observe)?;

    if rec.status != OrbitStatus::Timeout {
        if let Some(path) = &ckpt {
            let _ = fs::remove_file(path);
        }
    }
    emit(&orbit_json(&rec).to_string(), out.as_deref())?;
    if let Some(path) = csv {
        let mut text = String::new();
        if !path.exists() {
            text.push_str("start,initial,period,max_denominator_digits\n");
        }
        text.push_str(&rec.csv_row());
        text.push('\n');
        use std::io::Write;
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        file.write_all(text.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// scan

fn witness_json(w: &ScanWitness) -> Value {
    json!({
        "slopes": w.slopes,
        "slope_product": w.slope_product,
        "start": w.start,
    })
}

fn cmd_scan(
    p: u64,
    n_max: u64,
    jobs: Option<usize>,
    long: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if p >= 4 && !long {
        return Err(fail(format!(
            "a base-{p} scan runs for hours; pass --long to confirm"
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| fail(e.to_string()))?;
    let mut rep = pool.install(|| scan_mi_mp(p, n_max, |_| true));
    // witness order is a race between worker threads; sort for stable output
    let order = |a: &ScanWitness, b: &ScanWitness| {
        a.slopes.cmp(&b.slopes).then(a.start.cmp(&b.start))
    };
    rep.initial_witnesses.sort_by(order);
    rep.period_witnesses.sort_by(order);
    let doc = json!({
        "p": rep.p,
        "n_max": rep.n_max,
        "systems_scanned": rep.systems_scanned,
        "max_initial": rep.max_initial,
        "initial_witnesses": rep.initial_witnesses.iter().map(witness_json).collect::<Vec<_>>(),
        "max_period": rep.max_period,
        "period_witnesses": rep.period_witnesses.iter().map(witness_json).collect::<Vec<_>>(),
    });
    emit(&doc.to_string(), out.as_deref())
}

// ---------------------------------------------------------------------------
// invert

fn cmd_invert(
    system: &str,
    r: u64,
    word: &str,
    n: Option<&str>,
    family: &str,
    p: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let f = parse_sys(system, p)?;
    let lin = as_lin(&f)?;
    let d = parse_up(word)?;
    if let Some(n) = n {
        let start = parse_rat(n)?;
        let a = invert_for_system(&lin, r, &start, &d)?;
        println!("{}", rat_str(&a));
        return Ok(());
    }
    let doc = match family {
        "pairs" => {
            let fam = invert_for_pairs(&lin, r, &d)?;
            let integer = match fam.integer_family() {
                Ok(int) => json!({
                    "base_first": [int.base1.0.to_string(), int.base1.1.to_string()],
                    "step_first": [int.step1.0.to_string(), int.step1.1.to_string()],
                    "base_second": [int.base2.0.to_string(), int.base2.1.to_string()],
                    "step_second": [int.step2.0.to_string(), int.step2.1.to_string()],
                }),
                Err(_) => Value::Null,
            };
            json!({
                "family": "pairs",
                "p": fam.p,
                "r": fam.r,
                "k": fam.k,
                "p_pow_k": fam.p_pow_k().to_string(),
                "first": {
                    "a": rat_str(&fam.a1), "b": rat_str(&fam.b1), "c": rat_str(&fam.c1),
                    "member": "(a + m*p, b + m*c*p^K)",
                },
                "second": {
                    "a": rat_str(&fam.a2), "b": rat_str(&fam.b2), "c": rat_str(&fam.c2),
                    "member": "(a + m*c*p, b + m*p^K)",
                },
                "integer": integer,
            })
        }
        "collatz" => {
            let period: Vec<u64> = if d.rho.is_empty() { d.lambda.clone() } else { d.rho.clone() };
            let fam = collatz_constant_family(&period, r)?;
            let members: Vec<Value> = (0..3)
                .map(|m| {
                    let (a, n) = fam.member(&BigInt::from(m));
                    json!([a.to_string(), n.to_string()])
                })
                .collect();
            json!({
                "family": "collatz",
                "r": fam.r,
                "u0": fam.u0.to_string(),
                "u1": fam.u1.to_string(),
                "v": fam.v.to_string(),
                "scale_a": fam.scale_a.to_string(),
                "scale_n": fam.scale_n.to_string(),
                "offset": fam.offset.to_string(),
                "members": members,
            })
        }
        other => return Err(fail(format!("--family must be pairs or collatz, got {other:?}"))),
    };
    emit(&doc.to_string(), out.as_deref())
}

// ---------------------------------------------------------------------------
// perm and compose

fn split_compose(expr: &str) -> Option<(&str, &str)> {
    for sep in ["∘_G", "o_G"] {
        if let Some(i) = expr.find(sep) {
            return Some((&expr[..i], &expr[i + sep.len()..]));
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn cmd_perm(
    expr: Option<String>,
    f: Option<String>,
    g: Option<String>,
    n: &str,
    k: Option<u32>,
    _exact: bool,
    p: Option<u64>,
    max_steps: u64,
    max_digits: u32,
) -> Result<(), CliError> {
    if let Some(expr) = expr {
        let (f2_text, f1_text) = split_compose(&expr)
            .ok_or_else(|| fail("expected a composite expression F2∘_GF1"))?;
        let f1 = parse_sys(f1_text, p)?;
        let f2 = parse_sys(f2_text, Some(f1.base()))?;
        let g = standard_lin(f1.base());
        let x = parse_rat(n)?;
        let v = compose_exact(&as_lin(&f1)?, &as_lin(&f2)?, &g, &x)?;
        println!("{}", rat_str(&v));
        return Ok(());
    }
    let f_text = f.ok_or_else(|| fail("pass a composite expression or --f"))?;
    let f_sys = parse_sys(&f_text, p)?;
    let base = f_sys.base();
    match k {
        None => {
            let g_lin = match &g {
                Some(t) => as_lin(&parse_sys(t, Some(base))?)?,
                None => standard_lin(base),
            };
            let x = parse_rat(n)?;
            let v = perm_exact_with(&as_lin(&f_sys)?, &g_lin, &x, max_steps, max_digits)?;
            println!("{}", rat_str(&v));
        }
        Some(k) => {
            let g_sys = match &g {
                Some(t) => parse_sys(t, Some(base))?,
                None => standard_system(base),
            };
            let pi = PadicPerm::from_pair(&f_sys, &g_sys)?;
            let x = embed_prat(&parse_rat(n)?, base, k)?;
            let image = perm_image(&pi, &x)?;
            println!("{}", image.value());
        }
    }
    Ok(())
}

fn cmd_compose(
    f1_text: &str,
    f2_text: &str,
    g_text: Option<&str>,
    n: &str,
    k: Option<u32>,
    p: Option<u64>,
) -> Result<(), CliError> {
    let f1 = parse_sys(f1_text, p)?;
    let base = f1.base();
    let f2 = parse_sys(f2_text, Some(base))?;
    match k {
        None => {
            let g = match g_text {
                Some(t) => as_lin(&parse_sys(t, Some(base))?)?,
                None => standard_lin(base),
            };
            let x = parse_rat(n)?;
            let v = compose_exact(&as_lin(&f1)?, &as_lin(&f2)?, &g, &x)?;
            println!("{}", rat_str(&v));
        }
        Some(k) => {
            let g = match g_text {
                Some(t) => parse_sys(t, Some(base))?,
                None => standard_system(base),
            };
            let pi = group_compose(&f1, &f2, &g)?;
            let elt = ungroup(&pi, &g)?;
            let x = embed_prat(&parse_rat(n)?, base, k)?;
            let image = elt.eval_residue(&x)?;
            println!("{}", image.value());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// the modified Thue-Morse system

/// Its branches use the residue offsets x%8 and x%4, which the polynomial
/// grammar cannot express, so the table is produced by direct iteration.
fn cmd_thue_morse(k: u32) -> Result<(), CliError> {
    if k == 0 || k > 20 {
        return Err(fail("--k must lie in [1, 20]"));
    }
    let rows: Vec<Vec<u64>> = (0..(1i64 << k))
        .map(|n| {
            let mut x = n;
            let mut row = Vec::with_capacity(k as usize);
            for _ in 0..k {
                let d = x.rem_euclid(2);
                row.push(d as u64);
                let v = if d == 0 {
                    x + 6 - 2 * x.rem_euclid(8)
                } else {
                    x + 3 - 2 * x.rem_euclid(8) + 2 * x.rem_euclid(4)
                };
                x = (v - v.rem_euclid(2)) / 2;
            }
            row
        })
        .collect();
    let seq = table_to_seq(&rows, 2)?;
    println!("{}", join_digits(&seq));
    Ok(())
}
