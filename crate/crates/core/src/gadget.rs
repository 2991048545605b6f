//! The generalized inner product over GF(2^N) and its truncation to `n0`
//! output bits.
//!
//! A gadget input is `p` rows of `r` field elements. Packed form puts
//! element `(i, j)` at bit offset `(i * r + j) * N`, little-endian, so the
//! packed word of an input doubles as its enumeration index.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2n::{FieldElement, FieldError, FieldSpec};
use crate::seed;

/// Upper bound on exhaustive enumeration domains.
pub const ENUMERATION_LIMIT: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GadgetError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid gadget parameters: {0}")]
    InvalidSpec(String),
    #[error("input shape mismatch: expected {expected_rows}x{expected_cols}, got {rows} rows")]
    Shape {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
    },
    #[error("input needs {0} bits, more than fit one packed word")]
    TooWide(u64),
    #[error("domain of {0} points exceeds the enumeration limit")]
    DomainTooLarge(u128),
    #[error("cylinder intersection of size {size} is below the premise q^(rp-1) = {premise}")]
    PremiseViolation { size: f64, premise: f64 },
    #[error("sampled cylinder intersection is empty")]
    EmptyCylinder,
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: u64, got: u64 },
    #[error("invalid sampler: {0}")]
    Sampler(String),
}

/// Parameters of `GIP: (F_q^r)^p -> F_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GipSpec {
    p: usize,
    field: FieldSpec,
    r: usize,
}

impl GipSpec {
    pub fn new(p: usize, field: FieldSpec, r: usize) -> Result<Self, GadgetError> {
        if p == 0 {
            return Err(GadgetError::InvalidSpec("p must be at least 1".into()));
        }
        if r == 0 {
            return Err(GadgetError::InvalidSpec("r must be at least 1".into()));
        }
        Ok(GipSpec { p, field, r })
    }

    pub fn with_degree(p: usize, degree: u32, r: usize) -> Result<Self, GadgetError> {
        Self::new(p, FieldSpec::with_degree(degree)?, r)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn degree(&self) -> u32 {
        self.field.degree()
    }

    pub fn row_bits(&self) -> u64 {
        self.r as u64 * self.field.degree() as u64
    }

    pub fn input_bits(&self) -> u64 {
        self.p as u64 * self.row_bits()
    }

    /// `q^(r p)`, the number of inputs (saturating).
    pub fn domain_size(&self) -> u128 {
        if self.input_bits() >= 128 {
            u128::MAX
        } else {
            1u128 << self.input_bits()
        }
    }

    /// Mask selecting row `i` in a packed input.
    pub fn row_mask(&self, i: usize) -> u64 {
        let bits = self.row_bits();
        let ones = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        ones.checked_shl((i as u64 * bits) as u32).unwrap_or(0)
    }

    pub fn enumeration_domain(&self) -> Result<u64, GadgetError> {
        let size = self.domain_size();
        if size > ENUMERATION_LIMIT as u128 {
            return Err(GadgetError::DomainTooLarge(size));
        }
        Ok(size as u64)
    }
}

/// Parameters of the truncated GIP gadget.
///
/// `p` is the number of GIP arguments (players `1..=p` each carry one row on
/// their forehead), `r` the number of blocks and `n0` the number of output
/// bits kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GadgetSpec {
    gip: GipSpec,
    n0: u32,
}

impl std::ops::Deref for GadgetSpec {
    type Target = GipSpec;

    fn deref(&self) -> &GipSpec {
        &self.gip
    }
}

impl AsRef<GipSpec> for GipSpec {
    fn as_ref(&self) -> &GipSpec {
        self
    }
}

impl AsRef<GipSpec> for GadgetSpec {
    fn as_ref(&self) -> &GipSpec {
        &self.gip
    }
}

#[derive(Serialize, Deserialize)]
struct RawGadgetSpec {
    p: usize,
    degree: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modulus: Option<u64>,
    r: usize,
    n0: u32,
}

impl Serialize for GadgetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawGadgetSpec {
            p: self.p(),
            degree: self.degree(),
            modulus: Some(self.field().modulus()),
            r: self.r(),
            n0: self.n0,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GadgetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawGadgetSpec::deserialize(d)?;
        let field = match raw.modulus {
            Some(m) => FieldSpec::new(raw.degree, m),
            None => FieldSpec::with_degree(raw.degree),
        }
        .map_err(serde::de::Error::custom)?;
        GadgetSpec::new(raw.p, field, raw.r, raw.n0).map_err(serde::de::Error::custom)
    }
}

impl GadgetSpec {
    pub fn new(p: usize, field: FieldSpec, r: usize, n0: u32) -> Result<Self, GadgetError> {
        let gip = GipSpec::new(p, field, r)?;
        if n0 < 2 || n0 > field.degree() {
            return Err(GadgetError::InvalidSpec(format!(
                "n0 = {n0} must lie in 2..={}",
                field.degree()
            )));
        }
        if !n0.is_multiple_of(2) {
            return Err(GadgetError::InvalidSpec(format!("n0 = {n0} must be even")));
        }
        Ok(GadgetSpec { gip, n0 })
    }

    /// Convenience constructor using the canonical modulus of `degree`.
    pub fn with_degree(p: usize, degree: u32, r: usize, n0: u32) -> Result<Self, GadgetError> {
        Self::new(p, FieldSpec::with_degree(degree)?, r, n0)
    }

    pub fn gip(&self) -> &GipSpec {
        &self.gip
    }

    pub fn n0(&self) -> u32 {
        self.n0
    }

    pub fn output_mask(&self) -> u64 {
        (1u64 << self.n0) - 1
    }

    /// Number of matchings, `n0 / 2`.
    pub fn m(&self) -> usize {
        self.n0 as usize / 2
    }

    /// Total players: the matching-index holder plus one per gadget row.
    pub fn players(&self) -> usize {
        self.p() + 1
    }

    /// Soft parameter warnings. The extractor argument assumes
    /// k <= (log n) / 2 with k = p + 1 players and n = N 2^k, which reduces
    /// to k <= log2 N.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.players() as f64;
        let log_n = (self.degree() as f64).log2();
        if k > log_n {
            out.push(format!(
                "k = {} players exceeds log2(N) = {log_n:.3}; the extractor regime k <= (log n)/2 does not hold",
                self.players()
            ));
        }
        out
    }
}

/// Player inputs `x_{i,j}` for `i < p`, `j < r`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GadgetInput {
    rows: Vec<Vec<FieldElement>>,
}

impl GadgetInput {
    pub fn from_rows(spec: &GipSpec, rows: Vec<Vec<FieldElement>>) -> Result<Self, GadgetError> {
        let input = GadgetInput { rows };
        input.check_shape(spec)?;
        Ok(input)
    }

    pub fn zeros(spec: &GipSpec) -> Self {
        GadgetInput {
            rows: vec![vec![FieldElement::ZERO; spec.r]; spec.p],
        }
    }

    pub fn rows(&self) -> &[Vec<FieldElement>] {
        &self.rows
    }

    pub fn check_shape(&self, spec: &GipSpec) -> Result<(), GadgetError> {
        let shape_err = || GadgetError::Shape {
            expected_rows: spec.p,
            expected_cols: spec.r,
            rows: self.rows.len(),
        };
        if self.rows.len() != spec.p || self.rows.iter().any(|row| row.len() != spec.r) {
            return Err(shape_err());
        }
        for &x in self.rows.iter().flatten() {
            spec.field.element(x.0)?;
        }
        Ok(())
    }

    pub fn from_packed(spec: &GipSpec, packed: u64) -> Result<Self, GadgetError> {
        if spec.input_bits() > 64 {
            return Err(GadgetError::TooWide(spec.input_bits()));
        }
        let n = spec.degree() as u64;
        let mask = spec.field.mask();
        let rows = (0..spec.p)
            .map(|i| {
                (0..spec.r)
                    .map(|j| FieldElement((packed >> ((i * spec.r + j) as u64 * n)) & mask))
                    .collect()
            })
            .collect();
        Ok(GadgetInput { rows })
    }

    pub fn to_packed(&self, spec: &GipSpec) -> Result<u64, GadgetError> {
        self.check_shape(spec)?;
        if spec.input_bits() > 64 {
            return Err(GadgetError::TooWide(spec.input_bits()));
        }
        let n = spec.degree() as u64;
        let mut packed = 0u64;
        for (i, row) in self.rows.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                packed |= x.0 << ((i * spec.r + j) as u64 * n);
            }
        }
        Ok(packed)
    }
}

/// Fast GIP evaluation. Fields of degree <= 8 use a full product table.
#[derive(Debug, Clone)]
pub struct GipEvaluator {
    spec: GipSpec,
    table: Option<Vec<u8>>,
}

impl GipEvaluator {
    pub fn new(spec: GipSpec) -> Self {
        let table = (spec.degree() <= 8).then(|| {
            let q = spec.field.order();
            let mut t = vec![0u8; (q * q) as usize];
            for a in 0..q {
                for b in 0..q {
                    t[(a * q + b) as usize] =
                        spec.field.mul_unchecked(FieldElement(a), FieldElement(b)).0 as u8;
                }
            }
            t
        });
        GipEvaluator { spec, table }
    }

    pub fn spec(&self) -> &GipSpec {
        &self.spec
    }

    #[inline]
    fn mul(&self, a: u64, b: u64) -> u64 {
        match &self.table {
            Some(t) => t[((a << self.spec.degree()) | b) as usize] as u64,
            None => self.spec.field.mul_unchecked(FieldElement(a), FieldElement(b)).0,
        }
    }

    /// GIP of an input given as one packed word per row (`r * N <= 64`).
    #[inline]
    pub fn eval_row_words(&self, rows: &[u64]) -> u64 {
        let n = self.spec.degree();
        let mask = self.spec.field.mask();
        let mut acc = 0u64;
        for j in 0..self.spec.r {
            let shift = j as u32 * n;
            let mut prod = (rows[0] >> shift) & mask;
            for row in &rows[1..] {
                if prod == 0 {
                    break;
                }
                prod = self.mul(prod, (row >> shift) & mask);
            }
            acc ^= prod;
        }
        acc
    }

    /// GIP of a packed input (`p * r * N <= 64`).
    #[inline]
    pub fn eval_packed(&self, packed: u64) -> u64 {
        let mut rows = [0u64; 64];
        let p = self.spec.p;
        let bits = self.spec.row_bits();
        for (i, row) in rows.iter_mut().enumerate().take(p) {
            *row = (packed & self.spec.row_mask(i)) >> (i as u64 * bits);
        }
        self.eval_row_words(&rows[..p])
    }

    pub fn eval_input(&self, input: &GadgetInput) -> FieldElement {
        let mut acc = 0u64;
        for j in 0..self.spec.r {
            let mut prod = input.rows[0][j].0;
            for row in &input.rows[1..] {
                prod = self.mul(prod, row[j].0);
            }
            acc ^= prod;
        }
        FieldElement(acc)
    }
}

/// `sum_j prod_i x_{i,j}` over the gadget's field.
pub fn eval_gip(input: &GadgetInput, spec: &GipSpec) -> Result<FieldElement, GadgetError> {
    input.check_shape(spec)?;
    let f = spec.field;
    let mut acc = FieldElement::ZERO;
    for j in 0..spec.r {
        let mut prod = input.rows[0][j];
        for row in &input.rows[1..] {
            prod = f.mul_unchecked(prod, row[j]);
        }
        acc = FieldElement(acc.0 ^ prod.0);
    }
    Ok(acc)
}

/// The `n0` lowest-order bits of the GIP value; bit `j` of the result is `z_j`.
pub fn eval_gadget(input: &GadgetInput, spec: &GadgetSpec) -> Result<u64, GadgetError> {
    Ok(eval_gip(input, spec)?.0 & spec.output_mask())
}

/// Exact value counts of a function of the packed input over the full domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistributionTable {
    /// Number of inputs enumerated.
    pub total: u64,
    /// value -> number of inputs mapping to it. Zero counts are listed for
    /// every value in the codomain when it has at most 2^16 points.
    pub counts: BTreeMap<u64, u64>,
}

impl DistributionTable {
    pub fn probability(&self, value: u64) -> BigRational {
        let c = self.counts.get(&value).copied().unwrap_or(0);
        BigRational::new(BigInt::from(c), BigInt::from(self.total))
    }

    pub fn max_count(&self) -> (u64, u64) {
        self.counts
            .iter()
            .map(|(&v, &c)| (v, c))
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// CSV with header `value,numerator,denominator,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,numerator,denominator,probability\n");
        for &v in self.counts.keys() {
            let p = self.probability(v);
            let f = *self.counts.get(&v).unwrap() as f64 / self.total as f64;
            out.push_str(&format!("{v},{},{},{f}\n", p.numer(), p.denom()));
        }
        out
    }
}

fn tabulate(
    spec: &GipSpec,
    codomain_bits: u32,
    f: impl Fn(&GipEvaluator, u64) -> u64 + Sync,
) -> Result<DistributionTable, GadgetError> {
    let total = spec.enumeration_domain()?;
    let eval = GipEvaluator::new(*spec);
    const CHUNK: u64 = 1 << 16;
    let chunks = total.div_ceil(CHUNK);
    let dense = codomain_bits <= 16;
    let partials: Vec<BTreeMap<u64, u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            if dense {
                let mut counts = vec![0u64; 1 << codomain_bits];
                for x in lo..hi {
                    counts[f(&eval, x) as usize] += 1;
                }
                counts
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, n)| n > 0)
                    .map(|(v, n)| (v as u64, n))
                    .collect()
            } else {
                let mut counts = BTreeMap::new();
                for x in lo..hi {
                    *counts.entry(f(&eval, x)).or_insert(0) += 1;
                }
                counts
            }
        })
        .collect();
    let mut counts = BTreeMap::new();
    if dense {
        for v in 0..(1u64 << codomain_bits) {
            counts.insert(v, 0);
        }
    }
    for part in partials {
        for (v, n) in part {
            *counts.entry(v).or_insert(0) += n;
        }
    }
    Ok(DistributionTable { total, counts })
}

/// Exact distribution of GIP over uniformly random inputs.
pub fn gip_distribution_exact(spec: &GipSpec) -> Result<DistributionTable, GadgetError> {
    tabulate(spec, spec.degree(), |e, x| e.eval_packed(x))
}

/// Exact distribution of the gadget output `z` over uniformly random inputs.
pub fn gadget_distribution_exact(spec: &GadgetSpec) -> Result<DistributionTable, GadgetError> {
    let mask = spec.output_mask();
    tabulate(spec, spec.n0(), |e, x| e.eval_packed(x) & mask)
}

/// A keyed bijection on `bits`-bit words: alternating odd multiplications
/// and xor-shifts, all invertible modulo 2^bits.
#[derive(Debug, Clone)]
struct WordPermutation {
    bits: u32,
    rounds: [(u64, u64); 3],
}

impl WordPermutation {
    fn new(bits: u32, key: u64) -> Self {
        let mut rounds = [(0u64, 0u64); 3];
        for (i, round) in rounds.iter_mut().enumerate() {
            let a = seed::task_seed(key, 2 * i as u64) | 1;
            let b = seed::task_seed(key, 2 * i as u64 + 1);
            *round = (a, b);
        }
        WordPermutation { bits, rounds }
    }

    fn mask(&self) -> u64 {
        if self.bits >= 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    fn shift(&self) -> u32 {
        self.bits / 2 + 1
    }

    fn forward(&self, mut x: u64) -> u64 {
        let mask = self.mask();
        let s = self.shift();
        for &(a, b) in &self.rounds {
            x = x.wrapping_mul(a).wrapping_add(b) & mask;
            x ^= x.checked_shr(s).unwrap_or(0);
        }
        x
    }

    fn inverse(&self, mut y: u64) -> u64 {
        let mask = self.mask();
        let s = self.shift();
        for &(a, b) in self.rounds.iter().rev() {
            let mut x = y;
            for _ in 0..self.bits.div_ceil(s) {
                x = y ^ x.checked_shr(s).unwrap_or(0);
            }
            y = x.wrapping_sub(b).wrapping_mul(inverse_mod_2_64(a)) & mask;
        }
        y
    }
}

fn inverse_mod_2_64(a: u64) -> u64 {
    let mut inv = a;
    for _ in 0..6 {
        inv = inv.wrapping_mul(2u64.wrapping_sub(a.wrapping_mul(inv)));
    }
    inv
}

/// A pseudorandom subset of `{0,1}^bits` of exact size: the image of
/// `0..size` under a keyed bijection.
#[derive(Debug, Clone)]
pub struct PrefixSet {
    size: u64,
    perm: WordPermutation,
}

impl PrefixSet {
    pub fn new(bits: u32, size: u64, key: u64) -> Result<Self, GadgetError> {
        if bits > 63 {
            return Err(GadgetError::Sampler(format!("set universe of {bits} bits is too wide")));
        }
        if size > 1u64 << bits {
            return Err(GadgetError::Sampler(format!(
                "set size {size} exceeds universe 2^{bits}"
            )));
        }
        Ok(PrefixSet {
            size,
            perm: WordPermutation::new(bits, key),
        })
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn contains(&self, x: u64) -> bool {
        x <= self.perm.mask() && self.perm.inverse(x) < self.size
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.perm.forward(rng.gen_range(0..self.size))
    }
}

/// A cylinder: membership ignores row `free_row` and is decided by the
/// concatenation (in increasing row order) of the remaining rows.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub free_row: usize,
    pub set: PrefixSet,
}

impl Cylinder {
    fn key(&self, rows: &[u64], row_bits: u64) -> u64 {
        let mut key = 0u64;
        let mut offset = 0u64;
        for (i, &w) in rows.iter().enumerate() {
            if i != self.free_row {
                key |= w << offset;
                offset += row_bits;
            }
        }
        key
    }

    pub fn contains(&self, rows: &[u64], row_bits: u64) -> bool {
        self.set.contains(self.key(rows, row_bits))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplerMode {
    FullSpace,
    /// `p = 2` only: row 0 ranges over a set of `sizes[0]` words and row 1
    /// over `sizes[1]` words.
    Rectangle { sizes: [u64; 2] },
    /// One cylinder per row; `sizes[i]` is the number of admitted values of
    /// the rows other than `i`.
    RandomCylinders { sizes: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CylinderSampler {
    #[serde(flatten)]
    pub mode: SamplerMode,
    pub seed: u64,
}

/// Cardinality of a cylinder intersection, exact when it could be computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetSize {
    pub value: f64,
    pub exact: bool,
}

/// A concrete cylinder intersection over per-row packed words.
#[derive(Debug, Clone)]
pub struct CylinderIntersection {
    spec: GipSpec,
    cylinders: Vec<Cylinder>,
    rectangle: bool,
}

const EXACT_SIZE_BITS: u64 = 24;
const PILOT_SAMPLES: u64 = 100_000;
const MAX_REJECTIONS: u32 = 1_000_000;

impl CylinderIntersection {
    pub fn build(spec: &GipSpec, sampler: &CylinderSampler) -> Result<Self, GadgetError> {
        let row_bits = spec.row_bits();
        if row_bits > 63 {
            return Err(GadgetError::TooWide(row_bits));
        }
        let key = |i: u64| seed::subtask_seed(sampler.seed, 0, i);
        let (cylinders, rectangle) = match &sampler.mode {
            SamplerMode::FullSpace => (Vec::new(), false),
            SamplerMode::Rectangle { sizes } => {
                if spec.p() != 2 {
                    return Err(GadgetError::Sampler("rectangles need p = 2".into()));
                }
                // Row-0 constraint is a cylinder free in row 1 and vice versa.
                let a = PrefixSet::new(row_bits as u32, sizes[0], key(0))?;
                let b = PrefixSet::new(row_bits as u32, sizes[1], key(1))?;
                (
                    vec![Cylinder { free_row: 1, set: a }, Cylinder { free_row: 0, set: b }],
                    true,
                )
            }
            SamplerMode::RandomCylinders { sizes } => {
                if sizes.len() != spec.p() {
                    return Err(GadgetError::Sampler(format!(
                        "need {} cylinder sizes, got {}",
                        spec.p(),
                        sizes.len()
                    )));
                }
                let other_bits = row_bits * (spec.p() as u64 - 1);
                if other_bits > 63 {
                    return Err(GadgetError::TooWide(other_bits));
                }
                let cyl = sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        Ok(Cylinder {
                            free_row: i,
                            set: PrefixSet::new(other_bits as u32, s, key(i as u64))?,
                        })
                    })
                    .collect::<Result<Vec<_>, GadgetError>>()?;
                (cyl, false)
            }
        };
        if cylinders.iter().any(|c| c.set.size() == 0) {
            return Err(GadgetError::EmptyCylinder);
        }
        Ok(CylinderIntersection {
            spec: *spec,
            cylinders,
            rectangle,
        })
    }

    pub fn cylinders(&self) -> &[Cylinder] {
        &self.cylinders
    }

    pub fn contains(&self, rows: &[u64]) -> bool {
        let bits = self.spec.row_bits();
        self.cylinders.iter().all(|c| c.contains(rows, bits))
    }

    fn uniform_row<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let bits = self.spec.row_bits();
        rng.gen::<u64>() & ((1u64 << bits) - 1)
    }

    /// One uniform sample into `rows`; `false` when rejection sampling gives up.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, rows: &mut [u64]) -> bool {
        if self.cylinders.is_empty() {
            for w in rows.iter_mut() {
                *w = self.uniform_row(rng);
            }
            return true;
        }
        if self.rectangle {
            rows[0] = self.cylinders[0].set.sample(rng);
            rows[1] = self.cylinders[1].set.sample(rng);
            return true;
        }
        let bits = self.spec.row_bits();
        let row_mask = (1u64 << bits) - 1;
        let first = &self.cylinders[0];
        for _ in 0..MAX_REJECTIONS {
            let mut others = first.set.sample(rng);
            for (i, w) in rows.iter_mut().enumerate() {
                if i == first.free_row {
                    *w = self.uniform_row(rng);
                } else {
                    *w = others & row_mask;
                    others = others.checked_shr(bits as u32).unwrap_or(0);
                }
            }
            if self.cylinders[1..].iter().all(|c| c.contains(rows, bits)) {
                return true;
            }
        }
        false
    }

    pub fn size(&self) -> Result<SetSize, GadgetError> {
        let row_space = (self.spec.row_bits() as f64).exp2();
        if self.cylinders.is_empty() {
            return Ok(SetSize {
                value: (self.spec.input_bits() as f64).exp2(),
                exact: true,
            });
        }
        if self.rectangle {
            return Ok(SetSize {
                value: self.cylinders[0].set.size() as f64 * self.cylinders[1].set.size() as f64,
                exact: true,
            });
        }
        if self.spec.input_bits() <= EXACT_SIZE_BITS {
            let p = self.spec.p();
            let bits = self.spec.row_bits();
            let mut rows = vec![0u64; p];
            let mut count = 0u64;
            for x in 0..(1u64 << self.spec.input_bits()) {
                for (i, w) in rows.iter_mut().enumerate() {
                    *w = (x >> (i as u64 * bits)) & ((1u64 << bits) - 1);
                }
                if self.contains(&rows) {
                    count += 1;
                }
            }
            return Ok(SetSize {
                value: count as f64,
                exact: true,
            });
        }
        // |S| = |S_0| * Pr[x in S | x in S_0], S_0 the first cylinder.
        let mut rng = seed::task_rng(self.cylinders[0].set.perm.rounds[0].0, 0xC0FFEE);
        let bits = self.spec.row_bits();
        let row_mask = (1u64 << bits) - 1;
        let first = &self.cylinders[0];
        let mut rows = vec![0u64; self.spec.p()];
        let mut hits = 0u64;
        for _ in 0..PILOT_SAMPLES {
            let mut others = first.set.sample(&mut rng);
            for (i, w) in rows.iter_mut().enumerate() {
                if i == first.free_row {
                    *w = rng.gen::<u64>() & row_mask;
                } else {
                    *w = others & row_mask;
                    others = others.checked_shr(bits as u32).unwrap_or(0);
                }
            }
            if self.cylinders[1..].iter().all(|c| c.contains(&rows, bits)) {
                hits += 1;
            }
        }
        Ok(SetSize {
            value: first.set.size() as f64 * row_space * hits as f64 / PILOT_SAMPLES as f64,
            exact: false,
        })
    }

    /// Checks on random points that each cylinder ignores its free row.
    pub fn verify_cylinder_property<R: Rng + ?Sized>(&self, rng: &mut R, trials: usize) -> bool {
        let bits = self.spec.row_bits();
        let mut rows = vec![0u64; self.spec.p()];
        for _ in 0..trials {
            for w in rows.iter_mut() {
                *w = self.uniform_row(rng);
            }
            for c in &self.cylinders {
                let before = c.contains(&rows, bits);
                let saved = rows[c.free_row];
                rows[c.free_row] = self.uniform_row(rng);
                let after = c.contains(&rows, bits);
                rows[c.free_row] = saved;
                if before != after {
                    return false;
                }
            }
        }
        true
    }
}

/// One maximum-probability estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEstimate {
    pub value: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

impl MaxEstimate {
    fn new(value: u64, count: u64, samples: u64, bound: f64) -> Self {
        let estimate = count as f64 / samples as f64;
        let std_error = (estimate * (1.0 - estimate) / samples as f64).sqrt();
        MaxEstimate {
            value,
            estimate,
            std_error,
            bound,
            pass: estimate - 3.0 * std_error <= bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractorReport {
    pub set_size: SetSize,
    pub premise: f64,
    pub samples: u64,
    /// max over field values of the GIP probability; bound 1/q + q (p/q)^4.
    pub gip: MaxEstimate,
    /// max over gadget outputs; bound 2^-n0 + 2^-2n0.
    pub gadget: MaxEstimate,
    pub warnings: Vec<String>,
}

impl ExtractorReport {
    /// The disperser check decides pass/fail; the gadget bound is only
    /// claimed for the asymptotic field sizes and is reported alongside.
    pub fn pass(&self) -> bool {
        self.gip.pass
    }
}

pub const MIN_EXTRACTOR_SAMPLES: u64 = 10_000;

pub fn disperser_bound(spec: &GipSpec) -> f64 {
    let q = spec.field().order() as f64;
    let p = spec.p() as f64;
    1.0 / q + q * (p / q).powi(4)
}

pub fn gadget_extractor_bound(spec: &GadgetSpec) -> f64 {
    let n0 = spec.n0() as i32;
    2f64.powi(-n0) + 2f64.powi(-2 * n0)
}

/// Monte Carlo estimate of the most likely GIP value (and gadget output) on
/// a sampled cylinder intersection.
pub fn extractor_estimate(
    spec: &GadgetSpec,
    sampler: &CylinderSampler,
    samples: u64,
) -> Result<ExtractorReport, GadgetError> {
    if samples < MIN_EXTRACTOR_SAMPLES {
        return Err(GadgetError::TooFewSamples {
            min: MIN_EXTRACTOR_SAMPLES,
            got: samples,
        });
    }
    let set = CylinderIntersection::build(spec, sampler)?;
    let size = set.size()?;
    let premise = ((spec.input_bits() - spec.degree() as u64) as f64).exp2();
    if size.value == 0.0 {
        return Err(GadgetError::EmptyCylinder);
    }
    if size.value < premise {
        return Err(GadgetError::PremiseViolation {
            size: size.value,
            premise,
        });
    }
    let mut warnings = spec.warnings();
    if (spec.r() as u64) < 1u64 << (spec.p() + 1).min(63) {
        warnings.push(format!(
            "r = {} is below 2^(p+1) = {}; the disperser bound is not claimed here",
            spec.r(),
            1u64 << (spec.p() + 1)
        ));
    }

    let eval = GipEvaluator::new(*spec.gip());
    let mask = spec.output_mask();
    const CHUNK: u64 = 1 << 16;
    let chunks = samples.div_ceil(CHUNK);
    let dense = spec.degree() <= 16;
    let partials: Vec<Result<BTreeMap<u64, u64>, GadgetError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(samples - c * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed::subtask_seed(sampler.seed, 1, c));
            let mut rows = vec![0u64; spec.p()];
            let mut counts_dense = if dense { vec![0u64; 1 << spec.degree()] } else { Vec::new() };
            let mut counts = BTreeMap::new();
            for _ in 0..n {
                if !set.sample_into(&mut rng, &mut rows) {
                    return Err(GadgetError::EmptyCylinder);
                }
                let v = eval.eval_row_words(&rows);
                if dense {
                    counts_dense[v as usize] += 1;
                } else {
                    *counts.entry(v).or_insert(0) += 1;
                }
            }
            if dense {
                counts = counts_dense
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, n)| n > 0)
                    .map(|(v, n)| (v as u64, n))
                    .collect();
            }
            Ok(counts)
        })
        .collect();
    let mut gip_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for part in partials {
        for (v, n) in part? {
            *gip_counts.entry(v).or_insert(0) += n;
        }
    }
    let mut gadget_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for (&v, &n) in &gip_counts {
        *gadget_counts.entry(v & mask).or_insert(0) += n;
    }
    let argmax = |m: &BTreeMap<u64, u64>| {
        m.iter()
            .fold((0u64, 0u64), |b, (&v, &n)| if n > b.1 { (v, n) } else { b })
    };
    let (gv, gc) = argmax(&gip_counts);
    let (zv, zc) = argmax(&gadget_counts);
    Ok(ExtractorReport {
        set_size: size,
        premise,
        samples,
        gip: MaxEstimate::new(gv, gc, samples, disperser_bound(spec)),
        gadget: MaxEstimate::new(zv, zc, samples, gadget_extractor_bound(spec)),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn el(v: u64) -> FieldElement {
        FieldElement(v)
    }

    #[test]
    fn spec_validation() {
        assert!(GadgetSpec::with_degree(0, 4, 1, 4).is_err());
        assert!(GadgetSpec::with_degree(2, 4, 0, 4).is_err());
        assert!(GadgetSpec::with_degree(2, 4, 1, 3).is_err());
        assert!(GadgetSpec::with_degree(2, 4, 1, 6).is_err());
        assert!(GadgetSpec::with_degree(2, 4, 1, 0).is_err());
        let s = GadgetSpec::with_degree(2, 4, 1, 4).unwrap();
        assert_eq!(s.m(), 2);
        assert_eq!(s.players(), 3);
        assert_eq!(s.input_bits(), 8);
    }

    #[test]
    fn spec_serde_fills_modulus() {
        let s: GadgetSpec = serde_json::from_str(r#"{"p":2,"degree":3,"r":2,"n0":2}"#).unwrap();
        assert_eq!(s.field().modulus(), 0b1011);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"p":2,"degree":3,"modulus":11,"r":2,"n0":2}"#);
        assert!(serde_json::from_str::<GadgetSpec>(r#"{"p":2,"degree":3,"r":2,"n0":3}"#).is_err());
    }

    #[test]
    fn warning_on_many_players() {
        assert!(GadgetSpec::with_degree(1, 4, 1, 4).unwrap().warnings().is_empty());
        assert_eq!(GadgetSpec::with_degree(2, 3, 8, 2).unwrap().warnings().len(), 1);
    }

    #[test]
    fn gip_examples() {
        let s = GadgetSpec::with_degree(2, 3, 2, 2).unwrap();
        let zero = GadgetInput::zeros(&s);
        assert_eq!(eval_gip(&zero, &s).unwrap(), FieldElement::ZERO);
        assert_eq!(eval_gadget(&zero, &s).unwrap(), 0);
        // x1 = (x, x^2), x2 = (x^2, x): x*x^2 + x^2*x = 0.
        let input = GadgetInput::from_rows(&s, vec![vec![el(2), el(4)], vec![el(4), el(2)]]).unwrap();
        assert_eq!(eval_gip(&input, &s).unwrap(), FieldElement::ZERO);

        // q = 2, r = 1: GIP degenerates to AND.
        let and = GipSpec::with_degree(2, 1, 1).unwrap();
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let input = GadgetInput::from_rows(&and, vec![vec![el(a)], vec![el(b)]]).unwrap();
            assert_eq!(eval_gip(&input, &and).unwrap(), el(a & b));
        }
        assert!(GadgetSpec::with_degree(2, 1, 1, 2).is_err());
    }

    #[test]
    fn gadget_truncation() {
        let s = GadgetSpec::with_degree(1, 3, 1, 2).unwrap();
        let input = GadgetInput::from_rows(&s, vec![vec![el(0b101)]]).unwrap();
        assert_eq!(eval_gip(&input, &s).unwrap(), el(0b101));
        // bits (z_0, z_1) = (1, 0)
        assert_eq!(eval_gadget(&input, &s).unwrap(), 0b01);
        let full = GadgetSpec::with_degree(1, 4, 1, 4).unwrap();
        for v in 0..16 {
            let input = GadgetInput::from_rows(&full, vec![vec![el(v)]]).unwrap();
            assert_eq!(eval_gadget(&input, &full).unwrap(), v);
        }
    }

    #[test]
    fn shape_errors() {
        let s = GadgetSpec::with_degree(2, 3, 2, 2).unwrap();
        let bad = GadgetInput::from_rows(&s, vec![vec![el(1), el(1)]]);
        assert!(matches!(bad, Err(GadgetError::Shape { .. })));
        let other = GadgetSpec::with_degree(2, 3, 3, 2).unwrap();
        let input = GadgetInput::zeros(&other);
        assert!(eval_gip(&input, &s).is_err());
        let out_of_field = GadgetInput::from_rows(&s, vec![vec![el(9), el(0)], vec![el(0), el(0)]]);
        assert!(out_of_field.is_err());
    }

    #[test]
    fn packing_matches_rows_and_evaluator() {
        let s = GipSpec::with_degree(2, 3, 2).unwrap();
        let e = GipEvaluator::new(s);
        for x in 0..(1u64 << s.input_bits()) {
            let input = GadgetInput::from_packed(&s, x).unwrap();
            assert_eq!(input.to_packed(&s).unwrap(), x);
            let v = eval_gip(&input, &s).unwrap();
            assert_eq!(e.eval_packed(x), v.0);
            assert_eq!(e.eval_input(&input), v);
        }
        // element (i, j) sits at bit offset (i r + j) N
        let input = GadgetInput::from_rows(&s, vec![vec![el(0), el(0)], vec![el(1), el(0)]]).unwrap();
        assert_eq!(input.to_packed(&s).unwrap(), 1 << 6);
        let wide = GipSpec::with_degree(3, 8, 3).unwrap();
        assert!(matches!(GadgetInput::from_packed(&wide, 0), Err(GadgetError::TooWide(72))));
    }

    #[test]
    fn multilinear_per_block() {
        for degree in [1u32, 2] {
            for r in 1..=2 {
                let s = GipSpec::with_degree(2, degree, r).unwrap();
                let f = s.field();
                for x in 0..(1u64 << s.input_bits()) {
                    let input = GadgetInput::from_packed(&s, x).unwrap();
                    let base = eval_gip(&input, &s).unwrap();
                    for j in 0..r {
                        for delta in 0..f.order() {
                            let mut rows = input.rows().to_vec();
                            rows[0][j] = f.add(rows[0][j], el(delta)).unwrap();
                            let moved = GadgetInput::from_rows(&s, rows).unwrap();
                            let got = eval_gip(&moved, &s).unwrap();
                            let expect = f
                                .add(base, f.mul(el(delta), input.rows()[1][j]).unwrap())
                                .unwrap();
                            assert_eq!(got, expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exact_distribution_examples() {
        // p = 2, q = 2, r = 2: 10 of the 16 input pairs give 0.
        let s = GipSpec::with_degree(2, 1, 2).unwrap();
        let t = gip_distribution_exact(&s).unwrap();
        assert_eq!(t.total, 16);
        assert_eq!(t.counts, BTreeMap::from([(0, 10), (1, 6)]));
        // p = 1, r = 1 is the identity on a uniform field element.
        let s = GipSpec::with_degree(1, 4, 1).unwrap();
        let t = gip_distribution_exact(&s).unwrap();
        assert_eq!(t.total, 16);
        assert!(t.counts.values().all(|&c| c == 1));
        assert!(matches!(
            gip_distribution_exact(&GipSpec::with_degree(2, 8, 3).unwrap()),
            Err(GadgetError::DomainTooLarge(_))
        ));
    }

    #[test]
    fn distribution_csv_header() {
        let s = GipSpec::with_degree(1, 2, 1).unwrap();
        let csv = gip_distribution_exact(&s).unwrap().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("value,numerator,denominator,probability"));
        assert_eq!(lines.next(), Some("0,1,4,0.25"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn prefix_set_is_a_bijection_image() {
        for bits in [1u32, 3, 7, 12] {
            let size = (1u64 << bits) / 3 + 1;
            let set = PrefixSet::new(bits, size, 99).unwrap();
            let members = (0..1u64 << bits).filter(|&x| set.contains(x)).count() as u64;
            assert_eq!(members, size);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
            for _ in 0..100 {
                assert!(set.contains(set.sample(&mut rng)));
            }
        }
        let perm = WordPermutation::new(40, 5);
        for x in [0u64, 1, 12345, (1 << 40) - 1] {
            assert_eq!(perm.inverse(perm.forward(x)), x);
        }
    }

    #[test]
    fn sampled_sets_are_cylinder_intersections() {
        let s = GipSpec::with_degree(3, 2, 2).unwrap();
        let sampler = CylinderSampler {
            mode: SamplerMode::RandomCylinders {
                sizes: vec![200, 180, 220],
            },
            seed: 4,
        };
        let set = CylinderIntersection::build(&s, &sampler).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        assert!(set.verify_cylinder_property(&mut rng, 2000));
        let size = set.size().unwrap();
        assert!(size.exact);
        let mut rows = vec![0u64; 3];
        for _ in 0..200 {
            assert!(set.sample_into(&mut rng, &mut rows));
            assert!(set.contains(&rows));
        }

        let r = GipSpec::with_degree(2, 3, 2).unwrap();
        let rect = CylinderSampler {
            mode: SamplerMode::Rectangle { sizes: [64, 8] },
            seed: 1,
        };
        let set = CylinderIntersection::build(&r, &rect).unwrap();
        assert!(set.verify_cylinder_property(&mut rng, 2000));
        assert_eq!(set.size().unwrap().value, 512.0);
    }

    #[test]
    fn extractor_errors() {
        let s = GadgetSpec::with_degree(2, 3, 2, 2).unwrap();
        let full = CylinderSampler {
            mode: SamplerMode::FullSpace,
            seed: 0,
        };
        assert!(matches!(
            extractor_estimate(&s, &full, 100),
            Err(GadgetError::TooFewSamples { .. })
        ));
        let small = CylinderSampler {
            mode: SamplerMode::Rectangle { sizes: [8, 8] },
            seed: 0,
        };
        assert!(matches!(
            extractor_estimate(&s, &small, 10_000),
            Err(GadgetError::PremiseViolation { .. })
        ));
        let empty = CylinderSampler {
            mode: SamplerMode::Rectangle { sizes: [0, 8] },
            seed: 0,
        };
        assert!(matches!(
            extractor_estimate(&s, &empty, 10_000),
            Err(GadgetError::EmptyCylinder)
        ));
    }

    #[test]
    fn full_space_estimate_agrees_with_exact_table() {
        let s = GadgetSpec::with_degree(2, 3, 2, 2).unwrap();
        let exact = gip_distribution_exact(&s).unwrap();
        let (v, c) = exact.max_count();
        assert_eq!(v, 0);
        // Pr[0] = 1/8 + 1/64 - 1/512 = 71/512, i.e. 568 of 4096.
        assert_eq!(c, 568);
        let report = extractor_estimate(
            &s,
            &CylinderSampler {
                mode: SamplerMode::FullSpace,
                seed: 11,
            },
            200_000,
        )
        .unwrap();
        let truth = c as f64 / exact.total as f64;
        assert_eq!(report.gip.value, 0);
        assert!((report.gip.estimate - truth).abs() <= 3.0 * report.gip.std_error);
        assert!(report.pass());
    }

    #[test]
    fn estimates_are_reproducible() {
        let s = GadgetSpec::with_degree(2, 3, 8, 2).unwrap();
        let sampler = CylinderSampler {
            mode: SamplerMode::Rectangle {
                sizes: [1 << 24, 1 << 21],
            },
            seed: 3,
        };
        let a = extractor_estimate(&s, &sampler, 50_000).unwrap();
        let b = extractor_estimate(&s, &sampler, 50_000).unwrap();
        assert_eq!(a, b);
        assert!(a.pass());
    }
}
