//! Entropy, conditional entropy and mutual information over finite joint
//! distributions, plus checkers for the inequalities the lower-bound
//! argument leans on. All logarithms are base 2 and `0 log(1/0) = 0`.
//!
//! Weights are either `f64` or exact `BigRational`. Exact weights make
//! marginalization exact; only the final logarithms are floating point.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

/// Slack granted to every floating-point inequality check.
pub const SLACK: f64 = 1e-9;
pub const FLOAT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InfoError {
    #[error("distribution has empty support")]
    EmptySupport,
    #[error("outcome has {got} coordinates, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("coordinate {0} out of range")]
    Coordinate(usize),
    #[error("negative probability")]
    Negative,
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// A probability weight: exact or floating point.
pub trait Weight: Clone + Debug + PartialEq + Send + Sync {
    fn zero() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn to_f64(&self) -> f64;
    fn is_zero(&self) -> bool;
    fn is_negative(&self) -> bool;
    fn is_unit_total(total: &Self) -> bool;
    fn to_text(&self) -> String;
    fn parse_text(s: &str) -> Option<Self>;
}

impl Weight for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_negative(&self) -> bool {
        *self < 0.0
    }
    fn is_unit_total(total: &Self) -> bool {
        (total - 1.0).abs() <= FLOAT_SUM_TOLERANCE
    }
    fn to_text(&self) -> String {
        format!("{self}")
    }
    fn parse_text(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Weight for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_negative(&self) -> bool {
        Signed::is_negative(self)
    }
    fn is_unit_total(total: &Self) -> bool {
        One::is_one(total)
    }
    fn to_text(&self) -> String {
        format!("{}/{}", self.numer(), self.denom())
    }
    fn parse_text(s: &str) -> Option<Self> {
        BigRational::from_str(s).ok()
    }
}

/// `p log2(1/p)` with the `0 log 0 = 0` convention.
#[inline]
pub fn surprisal_term(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Binary entropy `H2(p)`.
pub fn binary_entropy(p: f64) -> f64 {
    surprisal_term(p) + surprisal_term(1.0 - p)
}

pub fn hamming_distance(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Weight of each conditioning value, with the joint weights under it.
type Groups<W> = BTreeMap<Vec<u64>, (W, BTreeMap<Vec<u64>, W>)>;

/// A joint distribution over tuples of `arity` integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution<W = f64> {
    arity: usize,
    entries: BTreeMap<Vec<u64>, W>,
}

pub type ExactDistribution = JointDistribution<BigRational>;

impl<W: Weight> JointDistribution<W> {
    /// Builds a distribution, merging repeated outcomes. Probabilities must
    /// be nonnegative and sum to one (exactly for rationals, within 1e-12
    /// for floats).
    pub fn new(
        arity: usize,
        entries: impl IntoIterator<Item = (Vec<u64>, W)>,
    ) -> Result<Self, InfoError> {
        let mut map: BTreeMap<Vec<u64>, W> = BTreeMap::new();
        let mut total = W::zero();
        for (tuple, w) in entries {
            if tuple.len() != arity {
                return Err(InfoError::Arity {
                    expected: arity,
                    got: tuple.len(),
                });
            }
            if w.is_negative() {
                return Err(InfoError::Negative);
            }
            total = total.add(&w);
            match map.get_mut(&tuple) {
                Some(acc) => *acc = acc.add(&w),
                None => {
                    map.insert(tuple, w);
                }
            }
        }
        if map.is_empty() {
            return Err(InfoError::EmptySupport);
        }
        if !W::is_unit_total(&total) {
            return Err(InfoError::NotNormalized(total.to_text()));
        }
        Ok(JointDistribution {
            arity,
            entries: map,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u64>, W> {
        &self.entries
    }

    pub fn probability(&self, tuple: &[u64]) -> W {
        self.entries.get(tuple).cloned().unwrap_or_else(W::zero)
    }

    fn check_coords(&self, coords: &[usize]) -> Result<(), InfoError> {
        match coords.iter().find(|&&c| c >= self.arity) {
            Some(&c) => Err(InfoError::Coordinate(c)),
            None => Ok(()),
        }
    }

    /// Marginal on `coords` (in the given order).
    pub fn marginal(&self, coords: &[usize]) -> Result<JointDistribution<W>, InfoError> {
        self.check_coords(coords)?;
        let mut map: BTreeMap<Vec<u64>, W> = BTreeMap::new();
        for (tuple, w) in &self.entries {
            let key: Vec<u64> = coords.iter().map(|&c| tuple[c]).collect();
            match map.get_mut(&key) {
                Some(acc) => *acc = acc.add(w),
                None => {
                    map.insert(key, w.clone());
                }
            }
        }
        Ok(JointDistribution {
            arity: coords.len(),
            entries: map,
        })
    }

    /// `H(X_coords)` in bits.
    pub fn entropy(&self, coords: &[usize]) -> Result<f64, InfoError> {
        let m = self.marginal(coords)?;
        Ok(m.entries.values().map(|w| surprisal_term(w.to_f64())).sum())
    }

    /// `H(X_target | X_given) = E_y H(X_target | X_given = y)`.
    pub fn cond_entropy(&self, target: &[usize], given: &[usize]) -> Result<f64, InfoError> {
        self.check_coords(target)?;
        self.check_coords(given)?;
        let mut groups: Groups<W> = BTreeMap::new();
        for (tuple, w) in &self.entries {
            let y: Vec<u64> = given.iter().map(|&c| tuple[c]).collect();
            let x: Vec<u64> = target.iter().map(|&c| tuple[c]).collect();
            let (py, inner) = groups.entry(y).or_insert_with(|| (W::zero(), BTreeMap::new()));
            *py = py.add(w);
            match inner.get_mut(&x) {
                Some(acc) => *acc = acc.add(w),
                None => {
                    inner.insert(x, w.clone());
                }
            }
        }
        let mut h = 0.0;
        for (py, inner) in groups.values() {
            let py = py.to_f64();
            if py <= 0.0 {
                continue;
            }
            let hy: f64 = inner.values().map(|w| surprisal_term(w.to_f64() / py)).sum();
            h += py * hy;
        }
        Ok(h)
    }

    /// `I(X_a ; X_b) = H(X_a) - H(X_a | X_b)`.
    pub fn mutual_info(&self, a: &[usize], b: &[usize]) -> Result<f64, InfoError> {
        Ok(self.entropy(a)? - self.cond_entropy(a, b)?)
    }

    pub fn to_float(&self) -> JointDistribution<f64> {
        JointDistribution {
            arity: self.arity,
            entries: self
                .entries
                .iter()
                .map(|(k, w)| (k.clone(), w.to_f64()))
                .collect(),
        }
    }

    /// CSV with header `c0,...,c{arity-1},probability`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (0..self.arity)
            .map(|i| format!("c{i}"))
            .chain(std::iter::once("probability".to_string()))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for (tuple, p) in &self.entries {
            let row = tuple.iter().map(u64::to_string).chain(std::iter::once(p.to_text()));
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn from_csv(text: &str) -> Result<Self, InfoError> {
        let csv_err = |e: csv::Error| InfoError::Csv(e.to_string());
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().next_back() != Some("probability") {
            return Err(InfoError::Csv("last column must be `probability`".into()));
        }
        let arity = header.len() - 1;
        let mut entries = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let tuple = rec
                .iter()
                .take(arity)
                .map(|f| f.parse::<u64>().map_err(|e| InfoError::Csv(format!("row {}: {e}", n + 1))))
                .collect::<Result<Vec<_>, _>>()?;
            let w = W::parse_text(&rec[arity]).ok_or_else(|| InfoError::Csv(format!("row {}: bad probability", n + 1)))?;
            entries.push((tuple, w));
        }
        Self::new(arity, entries)
    }
}

impl JointDistribution<BigRational> {
    /// Exact distribution from outcome counts.
    pub fn from_counts(
        arity: usize,
        counts: impl IntoIterator<Item = (Vec<u64>, u64)>,
    ) -> Result<Self, InfoError> {
        let counts: Vec<(Vec<u64>, u64)> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        let total: u64 = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return Err(InfoError::EmptySupport);
        }
        let total = BigInt::from(total);
        Self::new(
            arity,
            counts
                .into_iter()
                .map(|(t, c)| (t, BigRational::new(BigInt::from(c), total.clone()))),
        )
    }
}

/// Entropy of an empirical distribution given by counts.
pub fn entropy_from_counts<'a>(counts: impl IntoIterator<Item = &'a u64>) -> f64 {
    let counts: Vec<u64> = counts.into_iter().copied().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts.iter().map(|&c| surprisal_term(c as f64 / t)).sum()
}

/// Total variation distance between two distributions of equal arity.
pub fn tv_distance<W: Weight>(
    p: &JointDistribution<W>,
    q: &JointDistribution<W>,
) -> Result<f64, InfoError> {
    if p.arity != q.arity {
        return Err(InfoError::Arity {
            expected: p.arity,
            got: q.arity,
        });
    }
    let mut sum = 0.0;
    for (k, w) in &p.entries {
        sum += (w.to_f64() - q.probability(k).to_f64()).abs();
    }
    for (k, w) in &q.entries {
        if !p.entries.contains_key(k) {
            sum += w.to_f64();
        }
    }
    Ok(sum / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanoReport {
    pub width: usize,
    pub eps: f64,
    pub expected_distance: f64,
    pub premise_met: bool,
    pub entropy: f64,
    pub bound: f64,
    /// `None` when the premise fails: no judgment is made.
    pub pass: Option<bool>,
}

/// Generalized Fano bound: if `E[d_H(W, v)] <= eps k` with `eps <= 1/2`
/// then `H(W) <= k H2(eps)`. `d` has a single coordinate holding `W` as a
/// `width`-bit word.
pub fn check_fano<W: Weight>(
    d: &JointDistribution<W>,
    width: usize,
    center: u64,
    eps: f64,
) -> Result<FanoReport, InfoError> {
    if d.arity != 1 {
        return Err(InfoError::Arity {
            expected: 1,
            got: d.arity,
        });
    }
    let expected_distance: f64 = d
        .entries
        .iter()
        .map(|(t, w)| w.to_f64() * hamming_distance(t[0], center) as f64)
        .sum();
    let premise_met = (0.0..=0.5).contains(&eps) && expected_distance <= eps * width as f64 + SLACK;
    let entropy = d.entropy(&[0])?;
    let bound = width as f64 * binary_entropy(eps);
    Ok(FanoReport {
        width,
        eps,
        expected_distance,
        premise_met,
        entropy,
        bound,
        pass: premise_met.then_some(entropy <= bound + SLACK),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubadditivityReport {
    pub joint_entropy: f64,
    pub marginal_sum: f64,
    pub pass: bool,
}

/// `H(X_1, ..., X_d) <= sum_i H(X_i)` over all coordinates of `d`.
pub fn check_subadditivity<W: Weight>(d: &JointDistribution<W>) -> Result<SubadditivityReport, InfoError> {
    let all: Vec<usize> = (0..d.arity).collect();
    let joint_entropy = d.entropy(&all)?;
    let mut marginal_sum = 0.0;
    for i in 0..d.arity {
        marginal_sum += d.entropy(&[i])?;
    }
    Ok(SubadditivityReport {
        joint_entropy,
        marginal_sum,
        pass: joint_entropy <= marginal_sum + SLACK,
    })
}

/// A Markov chain `X -> Y -> Z` given by `p(x)`, `p(y|x)` and `p(z|y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub px: Vec<f64>,
    pub y_given_x: Vec<Vec<f64>>,
    pub z_given_y: Vec<Vec<f64>>,
}

impl MarkovChain {
    /// Joint over `(x, y, z)` built as `p(x) p(y|x) p(z|y)`.
    pub fn joint(&self) -> Result<JointDistribution<f64>, InfoError> {
        let mut entries = Vec::new();
        for (x, &px) in self.px.iter().enumerate() {
            for (y, &pyx) in self.y_given_x[x].iter().enumerate() {
                for (z, &pzy) in self.z_given_y[y].iter().enumerate() {
                    let w = px * pyx * pzy;
                    if w > 0.0 {
                        entries.push((vec![x as u64, y as u64, z as u64], w));
                    }
                }
            }
        }
        JointDistribution::new(3, entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataProcessingReport {
    pub i_xy: f64,
    pub i_xz: f64,
    pub pass: bool,
}

pub fn check_data_processing(chain: &MarkovChain) -> Result<DataProcessingReport, InfoError> {
    let d = chain.joint()?;
    let i_xy = d.mutual_info(&[0], &[1])?;
    let i_xz = d.mutual_info(&[0], &[2])?;
    Ok(DataProcessingReport {
        i_xy,
        i_xz,
        pass: i_xz <= i_xy + SLACK,
    })
}

/// Violations of `H >= 0`, `H(A|B) <= H(A)` and `I(A;B) >= 0`.
pub fn basic_inequality_violations<W: Weight>(
    d: &JointDistribution<W>,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<String>, InfoError> {
    let mut out = Vec::new();
    let ha = d.entropy(a)?;
    let hab = d.cond_entropy(a, b)?;
    let i = d.mutual_info(a, b)?;
    if ha < -SLACK {
        out.push(format!("H(A) = {ha} < 0"));
    }
    if hab < -SLACK {
        out.push(format!("H(A|B) = {hab} < 0"));
    }
    if hab > ha + SLACK {
        out.push(format!("H(A|B) = {hab} > H(A) = {ha}"));
    }
    if i < -SLACK {
        out.push(format!("I(A;B) = {i} < 0"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn float(arity: usize, entries: &[(&[u64], f64)]) -> JointDistribution<f64> {
        JointDistribution::new(arity, entries.iter().map(|(t, w)| (t.to_vec(), *w))).unwrap()
    }

    fn uniform_bits(k: u32) -> JointDistribution<f64> {
        let p = 1.0 / (1u64 << k) as f64;
        JointDistribution::new(1, (0..1u64 << k).map(|v| (vec![v], p))).unwrap()
    }

    #[test]
    fn entropy_examples() {
        for k in 0..6 {
            assert!((uniform_bits(k).entropy(&[0]).unwrap() - k as f64).abs() < 1e-12);
        }
        assert_eq!(float(1, &[(&[3], 1.0)]).entropy(&[0]).unwrap(), 0.0);
        let h = float(1, &[(&[0], 0.25), (&[1], 0.75)]).entropy(&[0]).unwrap();
        assert!((h - 0.811278).abs() < 1e-6);
        assert!((binary_entropy(0.25) - 0.811_278_124_459_132_8).abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            JointDistribution::<f64>::new(1, Vec::new()),
            Err(InfoError::EmptySupport)
        );
        assert!(matches!(
            JointDistribution::new(1, vec![(vec![0], 0.5)]),
            Err(InfoError::NotNormalized(_))
        ));
        assert!(matches!(
            JointDistribution::new(1, vec![(vec![0], 1.5), (vec![1], -0.5)]),
            Err(InfoError::Negative)
        ));
        assert!(matches!(
            JointDistribution::new(2, vec![(vec![0], 1.0)]),
            Err(InfoError::Arity { .. })
        ));
        let d = uniform_bits(1);
        assert_eq!(d.entropy(&[1]), Err(InfoError::Coordinate(1)));
    }

    #[test]
    fn conditional_and_mutual_examples() {
        // X, Y independent uniform bits.
        let ind = float(
            2,
            &[(&[0, 0], 0.25), (&[0, 1], 0.25), (&[1, 0], 0.25), (&[1, 1], 0.25)],
        );
        assert!((ind.cond_entropy(&[0], &[1]).unwrap() - 1.0).abs() < 1e-12);
        assert!(ind.mutual_info(&[0], &[1]).unwrap().abs() < 1e-12);
        // Y = X uniform on 3 bits.
        let p = 1.0 / 8.0;
        let copy = JointDistribution::new(2, (0..8u64).map(|v| (vec![v, v], p))).unwrap();
        assert!(copy.cond_entropy(&[0], &[1]).unwrap().abs() < 1e-12);
        assert!((copy.mutual_info(&[0], &[1]).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        let u = uniform_bits(1);
        assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);
        let a = float(1, &[(&[0], 1.0)]);
        let b = float(1, &[(&[1], 1.0)]);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(tv_distance(&u, &a).unwrap(), 0.5);
    }

    #[test]
    fn fano_examples() {
        // eps = 0 forces a point mass at v.
        let point = float(1, &[(&[0b101], 1.0)]);
        let r = check_fano(&point, 3, 0b101, 0.0).unwrap();
        assert_eq!(r.pass, Some(true));
        assert_eq!(r.entropy, 0.0);
        // Uniform W with eps = 1/2 meets the bound with equality.
        let u = uniform_bits(4);
        let r = check_fano(&u, 4, 0b0110, 0.5).unwrap();
        assert!(r.premise_met);
        assert!((r.entropy - r.bound).abs() < 1e-12);
        assert_eq!(r.pass, Some(true));
        // Premise unmet: no judgment.
        let r = check_fano(&u, 4, 0, 0.1).unwrap();
        assert!(!r.premise_met);
        assert_eq!(r.pass, None);
    }

    #[test]
    fn subadditivity_and_dpi_examples() {
        let ind = float(
            2,
            &[(&[0, 0], 0.25), (&[0, 1], 0.25), (&[1, 0], 0.25), (&[1, 1], 0.25)],
        );
        let r = check_subadditivity(&ind).unwrap();
        assert!(r.pass);
        assert!((r.joint_entropy - r.marginal_sum).abs() < 1e-12);
        // Z = Y: no information is lost.
        let chain = MarkovChain {
            px: vec![0.3, 0.7],
            y_given_x: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            z_given_y: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let r = check_data_processing(&chain).unwrap();
        assert!(r.pass);
        assert!((r.i_xy - r.i_xz).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_exact() {
        let d = ExactDistribution::from_counts(2, vec![(vec![0, 1], 1), (vec![2, 3], 3)]).unwrap();
        let text = d.to_csv();
        assert!(text.starts_with("c0,c1,probability\n0,1,1/4\n"));
        assert_eq!(ExactDistribution::from_csv(&text).unwrap(), d);
        let f = d.to_float();
        assert_eq!(JointDistribution::<f64>::from_csv(&f.to_csv()).unwrap(), f);
        assert!(JointDistribution::<f64>::from_csv("a,b\n1,2\n").is_err());
    }

    fn random_table() -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..20, 9).prop_filter("nonzero", |v| v.iter().any(|&c| c > 0))
    }

    fn table_3x3(counts: &[u64]) -> ExactDistribution {
        ExactDistribution::from_counts(
            2,
            counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (vec![i as u64 / 3, i as u64 % 3], c)),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn chain_rule(counts in random_table()) {
            let d = table_3x3(&counts);
            let hxy = d.entropy(&[0, 1]).unwrap();
            let hy = d.entropy(&[1]).unwrap();
            let hx_y = d.cond_entropy(&[0], &[1]).unwrap();
            prop_assert!((hxy - (hy + hx_y)).abs() < 1e-9);
        }

        #[test]
        fn mutual_information_is_symmetric(counts in random_table()) {
            let d = table_3x3(&counts);
            let a = d.mutual_info(&[0], &[1]).unwrap();
            let b = d.mutual_info(&[1], &[0]).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(basic_inequality_violations(&d, &[0], &[1]).unwrap().is_empty());
        }

        #[test]
        fn exact_and_float_agree(counts in prop::collection::vec(0u64..1000, 1..256)) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let d = ExactDistribution::from_counts(
                2,
                counts.iter().enumerate().map(|(i, &c)| (vec![i as u64 % 7, i as u64 / 7], c)),
            ).unwrap();
            let f = d.to_float();
            for coords in [&[0usize][..], &[1], &[0, 1]] {
                prop_assert!((d.entropy(coords).unwrap() - f.entropy(coords).unwrap()).abs() < 1e-9);
            }
            prop_assert!((d.mutual_info(&[0], &[1]).unwrap() - f.mutual_info(&[0], &[1]).unwrap()).abs() < 1e-9);
            let direct = entropy_from_counts(&counts);
            prop_assert!((d.entropy(&[0, 1]).unwrap() - direct).abs() < 1e-9);
        }
    }
}
