//! Digit sequences: eventually periodic decompositions, cyclic shifts, the
//! sequence form of the block property, and the bijection between digit
//! tables and their column-concatenated sequences.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeqError {
    #[error("sequence length {got} does not match required {want}")]
    LengthMismatch { want: usize, got: usize },
    #[error("sequence or table shape invalid: {0}")]
    ShapeMismatch(String),
    #[error("cannot parse sequence: {0}")]
    Parse(String),
}

/// An ultimately periodic digit stream λ·ρ^∞. An empty ρ represents a plain
/// finite word.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct UPSeq {
    pub lambda: Vec<u64>,
    pub rho: Vec<u64>,
}

impl UPSeq {
    pub fn finite(word: Vec<u64>) -> Self {
        UPSeq { lambda: word, rho: Vec::new() }
    }

    /// Digit at position i; None past the end of a finite word.
    pub fn digit(&self, i: usize) -> Option<u64> {
        if i < self.lambda.len() {
            Some(self.lambda[i])
        } else if self.rho.is_empty() {
            None
        } else {
            Some(self.rho[(i - self.lambda.len()) % self.rho.len()])
        }
    }

    pub fn prefix(&self, n: usize) -> Vec<u64> {
        (0..n).map(|i| self.digit(i).expect("prefix past end of finite word")).collect()
    }
}

impl fmt::Display for UPSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |w: &[u64]| w.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        if self.rho.is_empty() {
            write!(f, "({})", join(&self.lambda))
        } else if self.lambda.is_empty() {
            write!(f, "({})^∞", join(&self.rho))
        } else {
            write!(f, "({})({})^∞", join(&self.lambda), join(&self.rho))
        }
    }
}

/// Shortest period of a word (failure-function construction).
fn primitive_root(word: &[u64]) -> &[u64] {
    let n = word.len();
    if n == 0 {
        return word;
    }
    let mut fail = vec![0usize; n];
    let mut k = 0usize;
    for i in 1..n {
        while k > 0 && word[i] != word[k] {
            k = fail[k - 1];
        }
        if word[i] == word[k] {
            k += 1;
        }
        fail[i] = k;
    }
    let d = n - fail[n - 1];
    if n % d == 0 {
        &word[..d]
    } else {
        word
    }
}

/// Minimal (λ, ρ) for the stream initial·period^∞: the period is replaced by
/// its primitive root and whole trailing copies of it are absorbed out of λ.
pub fn normalize_up(initial: &[u64], period: &[u64]) -> UPSeq {
    assert!(!period.is_empty(), "period must be nonempty");
    let rho = primitive_root(period).to_vec();
    let mut lambda = initial.to_vec();
    while lambda.len() >= rho.len() && lambda[lambda.len() - rho.len()..] == rho[..] {
        lambda.truncate(lambda.len() - rho.len());
    }
    UPSeq { lambda, rho }
}

/// σ(S,s): rotate so entry i of the result is S[(i+s) mod |S|].
pub fn cyclic_shift(s: &[u64], shift: i64) -> Vec<u64> {
    if s.is_empty() {
        return Vec::new();
    }
    let n = s.len() as i64;
    let off = shift.rem_euclid(n) as usize;
    (0..s.len()).map(|i| s[(i + off) % s.len()]).collect()
}

/// Indices at which digit a occurs, increasing.
pub fn positions(s: &[u64], a: u64) -> Vec<usize> {
    s.iter().enumerate().filter(|&(_, &d)| d == a).map(|(i, _)| i).collect()
}

/// Number of occurrences of digit a.
pub fn count(s: &[u64], a: u64) -> usize {
    s.iter().filter(|&&d| d == a).count()
}

/// Length of the sequence holding columns 0..k of a digit table:
/// p + p² + … + p^k.
pub fn seq_len(p: u64, k: u32) -> Option<usize> {
    let mut total: u128 = 0;
    let mut pw: u128 = 1;
    for _ in 0..k {
        pw = pw.checked_mul(p as u128)?;
        total = total.checked_add(pw)?;
    }
    usize::try_from(total).ok()
}

fn column_start(p: u64, l: u32) -> usize {
    seq_len(p, l).expect("column offset overflow")
}

/// True iff S starts with (0,…,p−1) and, within each column block ℓ, every
/// stride-p^ℓ set {S[n+i·p^ℓ]} is a full residue set. This is the sequence
/// form of the block property: it holds exactly when the table the sequence
/// encodes assigns distinct digit prefixes to distinct residues.
pub fn seq_block_property(s: &[u64], p: u64, k: u32) -> Result<bool, SeqError> {
    let want = seq_len(p, k).ok_or(SeqError::LengthMismatch { want: usize::MAX, got: s.len() })?;
    if s.len() != want {
        return Err(SeqError::LengthMismatch { want, got: s.len() });
    }
    if s.iter().any(|&d| d >= p) {
        return Ok(false);
    }
    for (i, &d) in s.iter().take(p as usize).enumerate() {
        if d != i as u64 {
            return Ok(false);
        }
    }
    for l in 0..k {
        let start = column_start(p, l);
        let stride = (p as usize).pow(l);
        for n in start..start + stride {
            let mut seen = vec![false; p as usize];
            for i in 0..p as usize {
                seen[s[n + i * stride] as usize] = true;
            }
            if seen.iter().any(|&b| !b) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Concatenate column ℓ of the table over rows 0..p^(ℓ+1), for ℓ = 0..k.
/// Rows must repeat with period p^(ℓ+1) in column ℓ (the weak block shape),
/// so the dropped rows are redundant.
pub fn table_to_seq(rows: &[Vec<u64>], p: u64) -> Result<Vec<u64>, SeqError> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(SeqError::ShapeMismatch("ragged rows".into()));
    }
    let expected_rows = (p as usize).checked_pow(k as u32)
        .ok_or_else(|| SeqError::ShapeMismatch("row count overflow".into()))?;
    if rows.len() != expected_rows {
        return Err(SeqError::ShapeMismatch(format!(
            "expected {expected_rows} rows, got {}", rows.len()
        )));
    }
    if rows.iter().any(|r| r.iter().any(|&d| d >= p)) {
        return Err(SeqError::ShapeMismatch("digit out of range".into()));
    }
    let mut out = Vec::with_capacity(seq_len(p, k as u32).unwrap_or(0));
    for l in 0..k {
        let span = (p as usize).pow(l as u32 + 1);
        for n in 0..expected_rows {
            if rows[n][l] != rows[n % span][l] {
                return Err(SeqError::ShapeMismatch(format!(
                    "column {l} is not periodic mod {span}"
                )));
            }
        }
        for row in rows.iter().take(span) {
            out.push(row[l]);
        }
    }
    Ok(out)
}

/// Rebuild the table rows for [0, p^k): row n, column ℓ is the sequence
/// entry at offset n mod p^(ℓ+1) into column block ℓ.
pub fn seq_to_table(s: &[u64], p: u64, k: u32) -> Result<Vec<Vec<u64>>, SeqError> {
    let want = seq_len(p, k).ok_or(SeqError::ShapeMismatch("length overflow".into()))?;
    if s.len() != want {
        return Err(SeqError::LengthMismatch { want, got: s.len() });
    }
    if s.iter().any(|&d| d >= p) {
        return Err(SeqError::ShapeMismatch("digit out of range".into()));
    }
    for (i, &d) in s.iter().take(p as usize).enumerate() {
        if d != i as u64 {
            return Err(SeqError::ShapeMismatch("missing (0,…,p−1) prefix".into()));
        }
    }
    let n_rows = (p as usize).checked_pow(k)
        .ok_or_else(|| SeqError::ShapeMismatch("row count overflow".into()))?;
    let mut rows = Vec::with_capacity(n_rows);
    for n in 0..n_rows {
        let mut row = Vec::with_capacity(k as usize);
        for l in 0..k {
            let span = (p as usize).pow(l + 1);
            row.push(s[column_start(p, l) + n % span]);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn parse_word(text: &str) -> Result<Vec<u64>, SeqError> {
    let inner = text.trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| SeqError::Parse(format!("bad digit: {e}"))))
        .collect()
}

/// Parse "(1,0,0)(0,1)^∞", "(0,1)^∞" or a plain finite "(1,0,1)".
/// "^inf" is accepted as an ASCII spelling of "^∞".
pub fn parse_up(text: &str) -> Result<UPSeq, SeqError> {
    let t = text.trim();
    let stripped = t.strip_suffix("^∞").or_else(|| t.strip_suffix("^inf"));
    let (words_part, periodic) = match stripped {
        Some(rest) => (rest, true),
        None => (t, false),
    };
    let mut words = Vec::new();
    let mut rest = words_part.trim();
    while !rest.is_empty() {
        if !rest.starts_with('(') {
            return Err(SeqError::Parse(format!("expected '(' at {rest:?}")));
        }
        let close = rest.find(')').ok_or_else(|| SeqError::Parse("unclosed '('".into()))?;
        words.push(parse_word(&rest[1..close])?);
        rest = rest[close + 1..].trim_start();
    }
    match (words.len(), periodic) {
        (1, false) => Ok(UPSeq::finite(words.pop().unwrap())),
        (1, true) | (2, true) => {
            let rho = words.pop().unwrap();
            let lambda = words.pop().unwrap_or_default();
            if rho.is_empty() {
                return Err(SeqError::Parse("empty period".into()));
            }
            Ok(normalize_up(&lambda, &rho))
        }
        _ => Err(SeqError::Parse("expected (λ)(ρ)^∞, (ρ)^∞ or (word)".into())),
    }
}
