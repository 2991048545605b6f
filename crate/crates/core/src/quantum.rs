//! State-vector simulation of the one-message quantum protocol.
//!
//! Player 0 sends `|psi> = n0^(-1/2) sum_i (-1)^(z_i) |i>`; the last player
//! measures in the basis `(|l> +- |r>)/sqrt 2` over the edges of `M_{x1}`.
//! A `+` outcome answers `b = 0`, a `-` outcome `b = 1`.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::matching::{answer_is_valid, Answer, Edge, HMInstance, MatchingError, MatchingFamily};

pub const NORM_TOLERANCE: f64 = 1e-12;
/// Outcomes below this probability are kept in the table but zeroed.
pub const ZERO_CUTOFF: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("state dimension {got} does not match 2m = {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("n0 = {0} must be even and at least 2")]
    BadLength(u32),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE
    }
}

/// Amplitude `i` is `(-1)^(z_i) / sqrt(n0)`, with `z_i` bit `i` of `z`.
pub fn prepare_state(z: u64, n0: u32) -> Result<StateVector, QuantumError> {
    if n0 > 64 {
        return Err(QuantumError::BadLength(n0));
    }
    let bits: Vec<bool> = (0..n0).map(|i| (z >> i) & 1 == 1).collect();
    prepare_state_from_bits(&bits)
}

/// Same as [`prepare_state`] for strings longer than one word.
pub fn prepare_state_from_bits(z: &[bool]) -> Result<StateVector, QuantumError> {
    let n0 = z.len();
    if n0 < 2 || !n0.is_multiple_of(2) {
        return Err(QuantumError::BadLength(n0 as u32));
    }
    let a = 1.0 / (n0 as f64).sqrt();
    let amplitudes = z
        .iter()
        .map(|&bit| Complex64::new(if bit { -a } else { a }, 0.0))
        .collect();
    Ok(StateVector { amplitudes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn as_char(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }

    /// `+` certifies even parity, `-` odd.
    pub fn answer_bit(self) -> bool {
        self == Sign::Minus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub edge: Edge,
    pub sign: Sign,
    pub probability: f64,
}

impl Outcome {
    pub fn answer(&self) -> Answer {
        Answer::new(self.edge.left, self.edge.right, self.sign.answer_bit())
    }
}

/// Outcomes in edge order (increasing left node), `+` before `-`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub entries: Vec<Outcome>,
}

impl OutcomeDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|o| o.probability).sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.entries.iter().all(|o| o.probability >= 0.0) && (self.total() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub fn support(&self) -> impl Iterator<Item = &Outcome> {
        self.entries.iter().filter(|o| o.probability > NORM_TOLERANCE)
    }

    /// Inverse-CDF sampling over the entries in their fixed order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Outcome {
        let u: f64 = rng.gen::<f64>() * self.total();
        let mut acc = 0.0;
        for o in &self.entries {
            acc += o.probability;
            if u < acc {
                return o;
            }
        }
        self.entries
            .iter()
            .rev()
            .find(|o| o.probability > 0.0)
            .unwrap_or(&self.entries[self.entries.len() - 1])
    }
}

/// The basis vector `(|l> + s|r>)/sqrt 2` as a dense vector.
pub fn basis_vector(edge: Edge, sign: Sign, dim: usize) -> Vec<Complex64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = vec![Complex64::new(0.0, 0.0); dim];
    v[edge.left] = Complex64::new(h, 0.0);
    v[edge.right] = Complex64::new(if sign == Sign::Plus { h } else { -h }, 0.0);
    v
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Max deviation of the Gram matrix of the measurement basis from identity.
pub fn basis_orthonormality_error(matching: usize, m: usize) -> Result<f64, QuantumError> {
    let family = MatchingFamily::new(m)?;
    if matching >= m {
        return Err(MatchingError::BadMatchingIndex { x1: matching, m }.into());
    }
    let basis: Vec<Vec<Complex64>> = family
        .matching(matching)
        .flat_map(|e| [Sign::Plus, Sign::Minus].map(|s| basis_vector(e, s, 2 * m)))
        .collect();
    let mut worst = 0.0f64;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((inner(a, b) - Complex64::new(target, 0.0)).norm());
        }
    }
    Ok(worst)
}

/// Outcome probabilities `|<b|psi>|^2` for every basis vector of `M_matching`.
pub fn measure_matching_basis(
    state: &StateVector,
    matching: usize,
    m: usize,
) -> Result<OutcomeDistribution, QuantumError> {
    if state.dim() != 2 * m {
        return Err(QuantumError::Dimension {
            expected: 2 * m,
            got: state.dim(),
        });
    }
    let family = MatchingFamily::new(m)?;
    if matching >= m {
        return Err(MatchingError::BadMatchingIndex { x1: matching, m }.into());
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let amp = state.amplitudes();
    let mut entries = Vec::with_capacity(2 * m);
    for e in family.matching(matching) {
        for sign in [Sign::Plus, Sign::Minus] {
            let s = if sign == Sign::Plus { 1.0 } else { -1.0 };
            // <b|psi> for real basis vectors
            let overlap = (amp[e.left] + amp[e.right] * s) * h;
            let mut probability = overlap.norm_sqr();
            if probability < ZERO_CUTOFF {
                probability = 0.0;
            }
            entries.push(Outcome {
                edge: e,
                sign,
                probability,
            });
        }
    }
    Ok(OutcomeDistribution { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumRun {
    pub distribution: OutcomeDistribution,
    pub zero_error: bool,
    pub qubit_cost: u32,
}

/// `ceil(log2 n0)` qubits carry an `n0`-dimensional state.
pub fn qubit_cost(n0: u32) -> u32 {
    n0.next_power_of_two().trailing_zeros()
}

/// Runs the protocol on a raw hidden string instead of a gadget input.
pub fn run_on_string(z: u64, x1: usize, n0: u32) -> Result<QuantumRun, QuantumError> {
    let m = n0 as usize / 2;
    let state = prepare_state(z, n0)?;
    let distribution = measure_matching_basis(&state, x1, m)?;
    let zero_error = distribution
        .support()
        .all(|o| answer_is_valid(z, x1, m, &o.answer()));
    Ok(QuantumRun {
        distribution,
        zero_error,
        qubit_cost: qubit_cost(n0),
    })
}

pub fn run_quantum_protocol(instance: &HMInstance) -> Result<QuantumRun, QuantumError> {
    let z = instance.z()?;
    run_on_string(z, instance.x1, instance.spec.n0())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub n0: u32,
    pub cases: u64,
    /// (z, x1) pairs with a supported invalid answer.
    pub invalid_cases: u64,
    /// Supported outcomes whose probability differs from 2/n0 by more than 1e-12.
    pub off_value_outcomes: u64,
    pub unnormalized: u64,
    pub max_probability_deviation: f64,
}

impl SweepReport {
    pub fn pass(&self) -> bool {
        self.invalid_cases == 0 && self.off_value_outcomes == 0 && self.unnormalized == 0
    }
}

/// Exhaustive zero-error check over every `z in {0,1}^n0` and matching.
/// `visit` sees each `(z, x1, distribution)` in `(z, x1)` order.
pub fn zero_error_sweep(
    n0: u32,
    mut visit: impl FnMut(u64, usize, &OutcomeDistribution),
) -> Result<SweepReport, QuantumError> {
    if n0 < 2 || !n0.is_multiple_of(2) || n0 > 24 {
        return Err(QuantumError::BadLength(n0));
    }
    let m = n0 as usize / 2;
    let expected = 2.0 / n0 as f64;
    let mut report = SweepReport {
        n0,
        cases: 0,
        invalid_cases: 0,
        off_value_outcomes: 0,
        unnormalized: 0,
        max_probability_deviation: 0.0,
    };
    const CHUNK: u64 = 1 << 10;
    let total = 1u64 << n0;
    for base in (0..total).step_by(CHUNK as usize) {
        let runs: Vec<Vec<QuantumRun>> = (base..(base + CHUNK).min(total))
            .into_par_iter()
            .map(|z| (0..m).map(|x1| run_on_string(z, x1, n0)).collect())
            .collect::<Result<_, _>>()?;
        for (offset, per_z) in runs.into_iter().enumerate() {
            let z = base + offset as u64;
            for (x1, run) in per_z.into_iter().enumerate() {
                report.cases += 1;
                if !run.zero_error {
                    report.invalid_cases += 1;
                }
                if !run.distribution.is_normalized() {
                    report.unnormalized += 1;
                }
                for o in run.distribution.support() {
                    let dev = (o.probability - expected).abs();
                    report.max_probability_deviation = report.max_probability_deviation.max(dev);
                    if dev > NORM_TOLERANCE {
                        report.off_value_outcomes += 1;
                    }
                }
                visit(z, x1, &run.distribution);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prepare_examples() {
        let s = prepare_state(0, 4).unwrap();
        assert!(s.amplitudes().iter().all(|a| (a.re - 0.5).abs() < 1e-15 && a.im == 0.0));
        let s = prepare_state(0b1111, 4).unwrap();
        assert!(s.amplitudes().iter().all(|a| (a.re + 0.5).abs() < 1e-15));
        assert!(prepare_state(0, 3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n0 in [2u32, 8, 16, 64] {
            let s = prepare_state(rng.gen(), n0).unwrap();
            assert!(s.is_normalized());
        }
    }

    #[test]
    fn large_states_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n0 in [128usize, 512, 1024] {
            let z: Vec<bool> = (0..n0).map(|_| rng.gen()).collect();
            let s = prepare_state_from_bits(&z).unwrap();
            assert!(s.is_normalized());
            let m = n0 / 2;
            let d = measure_matching_basis(&s, 3, m).unwrap();
            assert!(d.is_normalized());
        }
    }

    #[test]
    fn all_zero_string_gives_plus_outcomes() {
        let n0 = 8;
        let state = prepare_state(0, n0).unwrap();
        for x1 in 0..4 {
            let d = measure_matching_basis(&state, x1, 4).unwrap();
            for o in &d.entries {
                match o.sign {
                    Sign::Plus => assert!((o.probability - 2.0 / n0 as f64).abs() < 1e-12),
                    Sign::Minus => assert_eq!(o.probability, 0.0),
                }
            }
        }
    }

    #[test]
    fn alternating_string_example() {
        // z = (0,1,0,1), matching 0 = {(0,2),(1,3)}: both pairs have even parity.
        let state = prepare_state(0b1010, 4).unwrap();
        let d = measure_matching_basis(&state, 0, 2).unwrap();
        let probs: Vec<_> = d.entries.iter().map(|o| (o.edge, o.sign, o.probability)).collect();
        assert_eq!(probs.len(), 4);
        assert_eq!(probs[0].0, Edge::new(0, 2));
        assert!((probs[0].2 - 0.5).abs() < 1e-12 && probs[0].1 == Sign::Plus);
        assert_eq!(probs[1].2, 0.0);
        assert!((probs[2].2 - 0.5).abs() < 1e-12 && probs[2].0 == Edge::new(1, 3));
        assert_eq!(probs[3].2, 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let state = prepare_state(0, 4).unwrap();
        assert!(matches!(
            measure_matching_basis(&state, 0, 4),
            Err(QuantumError::Dimension { expected: 8, got: 4 })
        ));
        assert!(measure_matching_basis(&state, 2, 2).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        for m in [1usize, 2, 4, 8] {
            for i in 0..m {
                assert!(basis_orthonormality_error(i, m).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn qubit_costs() {
        assert_eq!(qubit_cost(256), 8);
        assert_eq!(qubit_cost(4), 2);
        assert_eq!(qubit_cost(6), 3);
        assert_eq!(qubit_cost(2), 1);
    }

    #[test]
    fn sweep_small_lengths() {
        for n0 in [4u32, 8] {
            let mut rows = 0u64;
            let report = zero_error_sweep(n0, |_, _, d| rows += d.entries.len() as u64).unwrap();
            assert!(report.pass(), "{report:?}");
            assert_eq!(report.cases, (1u64 << n0) * n0 as u64 / 2);
            assert_eq!(rows, report.cases * n0 as u64);
        }
        assert!(zero_error_sweep(3, |_, _, _| {}).is_err());
    }

    #[test]
    fn gadget_instances_are_zero_error() {
        use crate::gadget::{GadgetInput, GadgetSpec};
        let spec = GadgetSpec::with_degree(2, 2, 2, 2).unwrap();
        for x in 0..(1u64 << spec.input_bits()) {
            let input = GadgetInput::from_packed(&spec, x).unwrap();
            let inst = HMInstance::new(spec, 0, input).unwrap();
            let run = run_quantum_protocol(&inst).unwrap();
            assert!(run.zero_error);
            assert_eq!(run.qubit_cost, 1);
            for o in run.distribution.support() {
                assert!(crate::matching::check_answer(&inst, &o.answer()));
            }
        }
    }

    #[test]
    fn sampling_follows_the_support() {
        let run = run_on_string(0b0110, 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let o = run.distribution.sample(&mut rng);
            assert!(o.probability > 0.0);
            assert!(answer_is_valid(0b0110, 1, 2, &o.answer()));
        }
    }
}
