//! One-way number-on-forehead protocols for the lifted Hidden Matching
//! problem, stored as explicit tables.
//!
//! Players are numbered `0..=p`. Player 0 has the matching index on its
//! forehead and sees the whole gadget input. Player `i >= 1` has gadget row
//! `i - 1` on its forehead and sees the matching index plus all other rows.
//! Players speak once, in order, and the last player also answers.
//!
//! Every table is keyed by a [`ViewKey`]: what the player sees (matching
//! index, packed input with its own row zeroed), the concatenated messages
//! so far, and the index of the shared random point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gadget::{GadgetError, GadgetSpec, GipEvaluator, ENUMERATION_LIMIT};
use crate::matching::{answer_is_valid, Answer, HMInstance, MatchingError, MatchingFamily};

mod baseline;
mod fixtures;
mod format;

pub use baseline::{
    baseline_answer, baseline_index_protocol, baseline_success_mc, subset_masks, BaselineEstimate, ZSource,
    BASELINE_SUBSET_LIMIT,
};
pub use fixtures::{
    helper_protocol, prefix_protocol, random_guess_protocol, send_all_protocol, silent_protocol,
    x1_dependent_protocol,
};
pub use format::PROTOCOL_SCHEMA;

/// Longest message or transcript representable in a table key.
pub const MAX_BITS: u32 = 128;
/// Cap on the number of entries a single build or simplify may create.
pub const TABLE_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error("enumeration of {0} (input, index, randomness) triples exceeds the limit")]
    TooLarge(u128),
    #[error("missing table entry for {table} at {key}")]
    MissingEntry { table: String, key: String },
    #[error("player {player} sent {got} bits, expected {expected}")]
    MessageLength { player: usize, expected: u32, got: u32 },
    #[error("{0} bits exceed the {MAX_BITS}-bit message limit")]
    MessageTooLong(u32),
    #[error("invalid randomness: {0}")]
    BadRandomness(String),
    #[error("malformed protocol: {0}")]
    Malformed(String),
    #[error("protocol is not x1-independent")]
    NotSimplified,
    #[error("t = {t} out of range 0..={n0}")]
    BaselineT { t: u32, n0: u32 },
    #[error("protocol file: {0}")]
    Format(String),
}

/// A bitstring of at most 128 bits; bit `i` is the `i`-th bit sent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bits {
    len: u8,
    value: u128,
}

impl Bits {
    pub const EMPTY: Bits = Bits { len: 0, value: 0 };

    pub fn new(len: u32, value: u128) -> Result<Self, ProtocolError> {
        if len > MAX_BITS {
            return Err(ProtocolError::MessageTooLong(len));
        }
        if len < MAX_BITS && value >> len != 0 {
            return Err(ProtocolError::Malformed(format!("value {value:#x} wider than {len} bits")));
        }
        Ok(Bits { len: len as u8, value })
    }

    /// The low `len` bits of `value`.
    pub fn truncate(len: u32, value: u128) -> Self {
        debug_assert!(len <= MAX_BITS);
        let mask = if len >= MAX_BITS { u128::MAX } else { (1u128 << len) - 1 };
        Bits {
            len: len as u8,
            value: value & mask,
        }
    }

    pub fn len(&self) -> u32 {
        self.len as u32
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn bit(&self, i: u32) -> bool {
        i < self.len() && (self.value >> i) & 1 == 1
    }

    /// `self` followed by `other`.
    pub fn concat(self, other: Bits) -> Result<Bits, ProtocolError> {
        let len = self.len() + other.len();
        if len > MAX_BITS {
            return Err(ProtocolError::MessageTooLong(len));
        }
        let hi = if other.is_empty() { 0 } else { other.value << self.len() };
        Ok(Bits {
            len: len as u8,
            value: self.value | hi,
        })
    }

    pub fn slice(&self, start: u32, len: u32) -> Bits {
        debug_assert!(start + len <= self.len());
        if len == 0 {
            return Bits::EMPTY;
        }
        Bits::truncate(len, self.value >> start)
    }

    pub fn to_hex(&self) -> String {
        format!("{:x}", self.value)
    }

    pub fn from_hex(len: u32, hex: &str) -> Result<Bits, ProtocolError> {
        let value = u128::from_str_radix(hex, 16)
            .map_err(|e| ProtocolError::Format(format!("bad hex `{hex}`: {e}")))?;
        Bits::new(len, value)
    }
}

/// Bits in sending order, `-` for the empty string.
impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        for i in 0..self.len() {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Per-player messages in speaking order.
pub type Transcript = Vec<Bits>;

/// What a table entry is keyed on. `x1: None` means the entry applies to
/// every matching index; player 0 never sees `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewKey {
    pub x1: Option<usize>,
    pub view: u64,
    pub prior: Bits,
    pub rand: usize,
}

/// A player's visible input as handed to a message or output rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct View {
    pub x1: Option<usize>,
    /// Packed gadget input with the player's own row zeroed.
    pub packed: u64,
}

impl View {
    pub fn row(&self, spec: &GadgetSpec, i: usize) -> u64 {
        (self.packed & spec.row_mask(i)) >> (i as u64 * spec.row_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub per_player_bits: Vec<u32>,
    pub total: u32,
    /// Bits sent by player 0, the only player who does not see `x1`.
    pub c1: u32,
    /// Bits sent by everyone else.
    pub c0: u32,
}

/// A protocol given by explicit tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TableProtocol {
    name: String,
    spec: GadgetSpec,
    message_lengths: Vec<u32>,
    messages: Vec<BTreeMap<ViewKey, Bits>>,
    output: BTreeMap<ViewKey, Answer>,
    randomness: Vec<BigRational>,
}

fn check_randomness(probs: &[BigRational]) -> Result<(), ProtocolError> {
    if probs.is_empty() {
        return Err(ProtocolError::BadRandomness("no random points".into()));
    }
    if probs.iter().any(|p| p.is_negative()) {
        return Err(ProtocolError::BadRandomness("negative probability".into()));
    }
    let total: BigRational = probs.iter().sum();
    if !total.is_one() {
        return Err(ProtocolError::BadRandomness(format!(
            "probabilities sum to {}",
            crate::ratio::format(&total)
        )));
    }
    Ok(())
}

fn check_lengths(spec: &GadgetSpec, lengths: &[u32]) -> Result<(), ProtocolError> {
    if lengths.len() != spec.players() {
        return Err(ProtocolError::Malformed(format!(
            "{} message lengths for {} players",
            lengths.len(),
            spec.players()
        )));
    }
    if let Some(&l) = lengths.iter().find(|&&l| l > MAX_BITS) {
        return Err(ProtocolError::MessageTooLong(l));
    }
    let total: u32 = lengths.iter().sum();
    if total > MAX_BITS {
        return Err(ProtocolError::MessageTooLong(total));
    }
    Ok(())
}

/// Number of inputs, after checking that inputs times matching indices
/// times random points stays within the enumeration limit.
fn enumeration_inputs(spec: &GadgetSpec, random_points: usize) -> Result<u64, ProtocolError> {
    let inputs = spec.domain_size();
    let total = inputs
        .saturating_mul(spec.m() as u128)
        .saturating_mul(random_points as u128);
    if total > ENUMERATION_LIMIT as u128 {
        return Err(ProtocolError::TooLarge(total));
    }
    Ok(inputs as u64)
}

fn gadget_evaluator(spec: &GadgetSpec) -> impl Fn(u64) -> u64 + Sync {
    let eval = GipEvaluator::new(*spec.gip());
    let mask = spec.output_mask();
    move |x| eval.eval_packed(x) & mask
}

impl TableProtocol {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &GadgetSpec {
        &self.spec
    }

    pub fn players(&self) -> usize {
        self.message_lengths.len()
    }

    pub fn last_player(&self) -> usize {
        self.players() - 1
    }

    pub fn message_lengths(&self) -> &[u32] {
        &self.message_lengths
    }

    pub fn message_table(&self, player: usize) -> &BTreeMap<ViewKey, Bits> {
        &self.messages[player]
    }

    pub fn output_table(&self) -> &BTreeMap<ViewKey, Answer> {
        &self.output
    }

    pub fn randomness(&self) -> &[BigRational] {
        &self.randomness
    }

    pub fn transcript_bits(&self) -> u32 {
        self.message_lengths.iter().sum()
    }

    pub fn cost(&self) -> CostReport {
        let per_player_bits = self.message_lengths.clone();
        let total = per_player_bits.iter().sum();
        let c1 = per_player_bits[0];
        CostReport {
            total,
            c1,
            c0: total - c1,
            per_player_bits,
        }
    }

    /// What `player` sees of the packed input `x`.
    pub fn view_of(&self, player: usize, x: u64) -> u64 {
        if player == 0 {
            x
        } else {
            x & !self.spec.row_mask(player - 1)
        }
    }

    /// Packed inputs with the given player's own row zeroed, ascending.
    fn views(&self, player: usize) -> impl Iterator<Item = u64> + '_ {
        let n = self.spec.domain_size() as u64;
        let hidden = if player == 0 { 0 } else { self.spec.row_mask(player - 1) };
        (0..n).filter(move |x| x & hidden == 0)
    }

    /// Message of `player` under the given view, prior transcript and
    /// random point.
    pub fn message(
        &self,
        player: usize,
        x1: usize,
        view: u64,
        prior: Bits,
        rand: usize,
    ) -> Result<Bits, ProtocolError> {
        if self.message_lengths[player] == 0 {
            return Ok(Bits::EMPTY);
        }
        let table = &self.messages[player];
        let key = ViewKey {
            x1: (player > 0).then_some(x1),
            view,
            prior,
            rand,
        };
        table
            .get(&key)
            .or_else(|| table.get(&ViewKey { x1: None, ..key }))
            .copied()
            .ok_or_else(|| ProtocolError::MissingEntry {
                table: format!("player {player}"),
                key: format::key_string(&key),
            })
    }

    pub fn answer(&self, x1: usize, view: u64, transcript: Bits, rand: usize) -> Result<Answer, ProtocolError> {
        let key = ViewKey {
            x1: Some(x1),
            view,
            prior: transcript,
            rand,
        };
        self.output
            .get(&key)
            .or_else(|| self.output.get(&ViewKey { x1: None, ..key }))
            .copied()
            .ok_or_else(|| ProtocolError::MissingEntry {
                table: "output".into(),
                key: format::key_string(&key),
            })
    }

    /// Concatenated transcript on packed input `x`.
    pub fn transcript_packed(&self, x: u64, x1: usize, rand: usize) -> Result<Bits, ProtocolError> {
        let mut tau = Bits::EMPTY;
        for player in 0..self.players() {
            let msg = self.message(player, x1, self.view_of(player, x), tau, rand)?;
            tau = tau.concat(msg)?;
        }
        Ok(tau)
    }

    pub fn run_packed(&self, x: u64, x1: usize, rand: usize) -> Result<(Bits, Answer), ProtocolError> {
        let tau = self.transcript_packed(x, x1, rand)?;
        let last = self.last_player();
        let answer = self.answer(x1, self.view_of(last, x), tau, rand)?;
        Ok((tau, answer))
    }

    /// Splits a concatenated transcript into per-player messages.
    pub fn split_transcript(&self, tau: Bits) -> Transcript {
        let mut out = Vec::with_capacity(self.players());
        let mut offset = 0;
        for &len in &self.message_lengths {
            out.push(tau.slice(offset, len));
            offset += len;
        }
        out
    }

    /// Number of failing `(x, x1)` pairs for each random point.
    pub fn failures_by_randomness(&self) -> Result<Vec<u64>, ProtocolError> {
        let n = enumeration_inputs(&self.spec, self.randomness.len())?;
        let m = self.spec.m();
        let z_of = gadget_evaluator(&self.spec);
        (0..self.randomness.len())
            .map(|rand| {
                (0..n)
                    .into_par_iter()
                    .map(|x| {
                        let z = z_of(x);
                        let mut fails = 0u64;
                        for x1 in 0..m {
                            let (_, ans) = self.run_packed(x, x1, rand)?;
                            if !answer_is_valid(z, x1, m, &ans) {
                                fails += 1;
                            }
                        }
                        Ok(fails)
                    })
                    .try_reduce(|| 0, |a, b| Ok(a + b))
            })
            .collect()
    }

    /// Checks that every reachable run is covered by the tables.
    pub fn check_coverage(&self) -> Result<(), ProtocolError> {
        let n = enumeration_inputs(&self.spec, self.randomness.len())?;
        let m = self.spec.m();
        for rand in 0..self.randomness.len() {
            (0..n).into_par_iter().try_for_each(|x| {
                (0..m).try_for_each(|x1| self.run_packed(x, x1, rand).map(|_| ()))
            })?;
        }
        Ok(())
    }
}

/// Runs `p` on one instance at random point `rand`.
pub fn run_protocol(
    p: &TableProtocol,
    instance: &HMInstance,
    rand: usize,
) -> Result<(Transcript, Answer), ProtocolError> {
    if instance.spec != p.spec {
        return Err(ProtocolError::Malformed("instance gadget differs from protocol gadget".into()));
    }
    if rand >= p.randomness.len() {
        return Err(ProtocolError::BadRandomness(format!("no random point {rand}")));
    }
    let x = instance.input.to_packed(&p.spec)?;
    let (tau, answer) = p.run_packed(x, instance.x1, rand)?;
    Ok((p.split_transcript(tau), answer))
}

/// Exact probability, over uniform `(x, x1)` and the protocol's randomness,
/// that the answer is invalid.
pub fn distributional_error(p: &TableProtocol) -> Result<BigRational, ProtocolError> {
    let fails = p.failures_by_randomness()?;
    let per_point = BigInt::from(p.spec.domain_size()) * BigInt::from(p.spec.m());
    let mut err = BigRational::zero();
    for (prob, f) in p.randomness.iter().zip(fails) {
        err += prob * BigRational::new(BigInt::from(f), per_point.clone());
    }
    Ok(err)
}

/// Builds an output rule from a closure.
pub type MessageFn<'a> = Box<dyn Fn(View, Bits, usize) -> Bits + 'a>;
pub type OutputFn<'a> = Box<dyn Fn(View, Bits, usize) -> Answer + 'a>;

enum OutputRule<'a> {
    Closure(OutputFn<'a>),
    BayesOptimal,
}

/// Tabulates a protocol from per-player rules.
///
/// Message tables of players `i >= 1` are filled for every prior transcript
/// that can arise when earlier players' views are taken from arbitrary
/// inputs, not just the true one. Those off-path entries are what make the
/// cylinder of each transcript well defined.
pub struct ProtocolBuilder<'a> {
    name: String,
    spec: GadgetSpec,
    randomness: Vec<BigRational>,
    rules: Vec<(usize, u32, MessageFn<'a>)>,
    output: Option<OutputRule<'a>>,
}

impl<'a> ProtocolBuilder<'a> {
    pub fn new(name: impl Into<String>, spec: GadgetSpec) -> Self {
        ProtocolBuilder {
            name: name.into(),
            spec,
            randomness: vec![BigRational::one()],
            rules: Vec::new(),
            output: None,
        }
    }

    pub fn randomness(mut self, probs: Vec<BigRational>) -> Self {
        self.randomness = probs;
        self
    }

    pub fn uniform_randomness(self, points: usize) -> Self {
        let p = BigRational::new(BigInt::one(), BigInt::from(points.max(1)));
        self.randomness(vec![p; points])
    }

    pub fn message(mut self, player: usize, len: u32, rule: impl Fn(View, Bits, usize) -> Bits + 'a) -> Self {
        self.rules.push((player, len, Box::new(rule)));
        self
    }

    pub fn output(mut self, rule: impl Fn(View, Bits, usize) -> Answer + 'a) -> Self {
        self.output = Some(OutputRule::Closure(Box::new(rule)));
        self
    }

    /// The last player picks, for its view and the transcript, the answer
    /// valid for the most consistent inputs. Ties go to the lowest left
    /// node, then to `b = 0`.
    pub fn bayes_optimal_output(mut self) -> Self {
        self.output = Some(OutputRule::BayesOptimal);
        self
    }

    pub fn build(self) -> Result<TableProtocol, ProtocolError> {
        let spec = self.spec;
        check_randomness(&self.randomness)?;
        let players = spec.players();
        let mut lengths = vec![0u32; players];
        let mut rules: Vec<Option<MessageFn<'a>>> = (0..players).map(|_| None).collect();
        for (player, len, rule) in self.rules {
            if player >= players {
                return Err(ProtocolError::Malformed(format!("no player {player}")));
            }
            if rules[player].is_some() {
                return Err(ProtocolError::Malformed(format!("player {player} given twice")));
            }
            lengths[player] = len;
            rules[player] = Some(rule);
        }
        check_lengths(&spec, &lengths)?;
        let output_rule = self
            .output
            .ok_or_else(|| ProtocolError::Malformed("no output rule".into()))?;
        let n = enumeration_inputs(&spec, self.randomness.len())?;
        let m = spec.m();
        let r_points = self.randomness.len();

        let mut proto = TableProtocol {
            name: self.name,
            spec,
            message_lengths: lengths.clone(),
            messages: vec![BTreeMap::new(); players],
            output: BTreeMap::new(),
            randomness: self.randomness,
        };
        let mut entries = 0usize;
        let mut bump = |k: usize| -> Result<(), ProtocolError> {
            entries += k;
            if entries > TABLE_LIMIT {
                return Err(ProtocolError::TooLarge(entries as u128));
            }
            Ok(())
        };

        let checked = |player: usize, b: Bits| -> Result<Bits, ProtocolError> {
            if b.len() != lengths[player] {
                return Err(ProtocolError::MessageLength {
                    player,
                    expected: lengths[player],
                    got: b.len(),
                });
            }
            Ok(b)
        };

        // Player 0, and the range of its messages per random point.
        let mut first: Vec<BTreeSet<Bits>> = vec![BTreeSet::new(); r_points];
        for (rand, range) in first.iter_mut().enumerate() {
            match &rules[0] {
                Some(rule) => {
                    bump(n as usize)?;
                    for x in 0..n {
                        let b = checked(0, rule(View { x1: None, packed: x }, Bits::EMPTY, rand))?;
                        proto.messages[0].insert(
                            ViewKey {
                                x1: None,
                                view: x,
                                prior: Bits::EMPTY,
                                rand,
                            },
                            b,
                        );
                        range.insert(b);
                    }
                }
                None => {
                    range.insert(Bits::EMPTY);
                }
            }
        }

        // Later players, over all counterfactual prefixes.
        let mut prefixes: Vec<Vec<BTreeSet<Bits>>> = first.iter().map(|s| vec![s.clone(); m]).collect();
        for (player, rule) in rules.iter().enumerate().skip(1) {
            let Some(rule) = rule else { continue };
            let views: Vec<u64> = proto.views(player).collect();
            for (rand, per_x1) in prefixes.iter_mut().enumerate() {
                for (x1, set) in per_x1.iter_mut().enumerate() {
                    let mut next = BTreeSet::new();
                    bump(set.len() * views.len())?;
                    for &prior in set.iter() {
                        for &v in &views {
                            let b = checked(player, rule(View { x1: Some(x1), packed: v }, prior, rand))?;
                            proto.messages[player].insert(
                                ViewKey {
                                    x1: Some(x1),
                                    view: v,
                                    prior,
                                    rand,
                                },
                                b,
                            );
                            next.insert(prior.concat(b)?);
                        }
                    }
                    *set = next;
                }
            }
        }

        // Output over actual transcripts.
        let last = proto.last_player();
        bump(n as usize * m * r_points)?;
        match output_rule {
            OutputRule::Closure(rule) => {
                for rand in 0..r_points {
                    for x in 0..n {
                        let view = proto.view_of(last, x);
                        for x1 in 0..m {
                            let tau = proto.transcript_packed(x, x1, rand)?;
                            let answer = rule(View { x1: Some(x1), packed: view }, tau, rand);
                            proto.output.insert(
                                ViewKey {
                                    x1: Some(x1),
                                    view,
                                    prior: tau,
                                    rand,
                                },
                                answer,
                            );
                        }
                    }
                }
            }
            OutputRule::BayesOptimal => {
                let family = MatchingFamily::new(m)?;
                let z_of = gadget_evaluator(&spec);
                let mut tallies: BTreeMap<ViewKey, Vec<u64>> = BTreeMap::new();
                for rand in 0..r_points {
                    for x in 0..n {
                        let z = z_of(x);
                        let view = proto.view_of(last, x);
                        for x1 in 0..m {
                            let tau = proto.transcript_packed(x, x1, rand)?;
                            let key = ViewKey {
                                x1: Some(x1),
                                view,
                                prior: tau,
                                rand,
                            };
                            let t = tallies.entry(key).or_insert_with(|| vec![0; 2 * m]);
                            for (l, e) in family.matching(x1).enumerate() {
                                t[2 * l + crate::matching::parity(z, e) as usize] += 1;
                            }
                        }
                    }
                }
                for (key, t) in tallies {
                    let x1 = key.x1.expect("output keys carry x1");
                    let mut best = 0;
                    for (i, &c) in t.iter().enumerate() {
                        if c > t[best] {
                            best = i;
                        }
                    }
                    let e = family.edge(x1, best / 2);
                    proto.output.insert(key, Answer::new(e.left, e.right, best % 2 == 1));
                }
            }
        }
        Ok(proto)
    }
}

/// Component `j` of a simplified transcript prefix covering players
/// `0..upto`: player 0's message followed by the `j`-th block of each later
/// player's message.
fn component(original: &[u32], m: usize, tau: Bits, upto: usize, j: usize) -> Result<Bits, ProtocolError> {
    let mut out = tau.slice(0, original[0]);
    let mut offset = original[0];
    for &len in &original[1..upto] {
        out = out.concat(tau.slice(offset + j as u32 * len, len))?;
        offset += m as u32 * len;
    }
    Ok(out)
}

/// The simplified protocol: player 0 is unchanged; player `i >= 1` sends
/// its original message for every candidate matching index `j = 0..m`, in
/// increasing `j`; the last player reads off the block for the true index.
/// Shared randomness is carried through unchanged.
pub fn simplify(p: &TableProtocol) -> Result<TableProtocol, ProtocolError> {
    let spec = p.spec;
    let m = spec.m();
    let players = p.players();
    let original = p.message_lengths.clone();
    let mut lengths = original.clone();
    for len in lengths.iter_mut().skip(1) {
        *len *= m as u32;
    }
    check_lengths(&spec, &lengths)?;
    let n = enumeration_inputs(&spec, p.randomness.len())?;

    let mut q = TableProtocol {
        name: format!("{}*", p.name),
        spec,
        message_lengths: lengths,
        messages: vec![BTreeMap::new(); players],
        output: BTreeMap::new(),
        randomness: p.randomness.clone(),
    };
    let mut entries = 0usize;

    for rand in 0..p.randomness.len() {
        let mut prefixes: BTreeSet<Bits> = BTreeSet::new();
        if original[0] == 0 {
            prefixes.insert(Bits::EMPTY);
        } else {
            for x in 0..n {
                let b = p.message(0, 0, x, Bits::EMPTY, rand)?;
                q.messages[0].insert(
                    ViewKey {
                        x1: None,
                        view: x,
                        prior: Bits::EMPTY,
                        rand,
                    },
                    b,
                );
                prefixes.insert(b);
            }
        }
        for player in 1..players {
            if original[player] == 0 {
                continue;
            }
            let views: Vec<u64> = p.views(player).collect();
            entries += prefixes.len() * views.len();
            if entries > TABLE_LIMIT {
                return Err(ProtocolError::TooLarge(entries as u128));
            }
            let mut next = BTreeSet::new();
            for &prior in &prefixes {
                for &v in &views {
                    let mut msg = Bits::EMPTY;
                    for j in 0..m {
                        let pj = component(&original, m, prior, player, j)?;
                        msg = msg.concat(p.message(player, j, v, pj, rand)?)?;
                    }
                    q.messages[player].insert(
                        ViewKey {
                            x1: None,
                            view: v,
                            prior,
                            rand,
                        },
                        msg,
                    );
                    next.insert(prior.concat(msg)?);
                }
            }
            prefixes = next;
        }
    }

    let last = q.last_player();
    for rand in 0..p.randomness.len() {
        for x in 0..n {
            let view = q.view_of(last, x);
            for x1 in 0..m {
                let tau = q.transcript_packed(x, x1, rand)?;
                let own = component(&original, m, tau, players, x1)?;
                let answer = p.answer(x1, view, own, rand)?;
                q.output.insert(
                    ViewKey {
                        x1: Some(x1),
                        view,
                        prior: tau,
                        rand,
                    },
                    answer,
                );
            }
        }
    }
    Ok(q)
}

/// Two runs that differ only in `x1` yet produce different transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct X1Counterexample {
    pub rand: usize,
    pub input: u64,
    pub x1_a: usize,
    pub x1_b: usize,
    pub transcript_a: String,
    pub transcript_b: String,
}

/// First `(rand, x)` in enumeration order whose transcript changes with
/// `x1`, or `None` if the transcript never depends on `x1`.
pub fn transcript_x1_independent(p: &TableProtocol) -> Result<Option<X1Counterexample>, ProtocolError> {
    let n = enumeration_inputs(&p.spec, p.randomness.len())?;
    let m = p.spec.m();
    for rand in 0..p.randomness.len() {
        let found = (0..n)
            .into_par_iter()
            .map(|x| -> Result<Option<X1Counterexample>, ProtocolError> {
                let base = p.transcript_packed(x, 0, rand)?;
                for x1 in 1..m {
                    let other = p.transcript_packed(x, x1, rand)?;
                    if other != base {
                        return Ok(Some(X1Counterexample {
                            rand,
                            input: x,
                            x1_a: 0,
                            x1_b: x1,
                            transcript_a: base.to_string(),
                            transcript_b: other.to_string(),
                        }));
                    }
                }
                Ok(None)
            })
            .find_first(|r| !matches!(r, Ok(None)));
        if let Some(r) = found {
            return r;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplifiedClaims {
    pub m: usize,
    #[serde(serialize_with = "crate::ratio::serialize")]
    pub error_original: BigRational,
    #[serde(serialize_with = "crate::ratio::serialize")]
    pub error_simplified: BigRational,
    pub error_equal: bool,
    pub cost_original: CostReport,
    pub cost_simplified: CostReport,
    pub cost_relation: bool,
    pub x1_independent: bool,
    pub counterexample: Option<X1Counterexample>,
}

impl SimplifiedClaims {
    pub fn pass(&self) -> bool {
        self.error_equal && self.cost_relation && self.x1_independent
    }
}

/// Checks the three claims relating `original` and a candidate simplified
/// version: equal exact error, the cost relation, and a transcript that
/// does not depend on `x1`.
pub fn check_simplified(original: &TableProtocol, candidate: &TableProtocol) -> Result<SimplifiedClaims, ProtocolError> {
    let m = original.spec.m();
    let error_original = distributional_error(original)?;
    let error_simplified = distributional_error(candidate)?;
    let cost_original = original.cost();
    let cost_simplified = candidate.cost();
    let per_player = cost_original.per_player_bits.len() == cost_simplified.per_player_bits.len()
        && cost_original
            .per_player_bits
            .iter()
            .zip(&cost_simplified.per_player_bits)
            .enumerate()
            .all(|(i, (&a, &b))| if i == 0 { a == b } else { b == m as u32 * a });
    let cost_relation = per_player && cost_simplified.total == cost_original.c1 + m as u32 * cost_original.c0;
    let counterexample = transcript_x1_independent(candidate)?;
    Ok(SimplifiedClaims {
        m,
        error_equal: error_original == error_simplified,
        error_original,
        error_simplified,
        cost_original,
        cost_simplified,
        cost_relation,
        x1_independent: counterexample.is_none(),
        counterexample,
    })
}

pub fn verify_simplified_claims(p: &TableProtocol) -> Result<SimplifiedClaims, ProtocolError> {
    let simplified = simplify(p)?;
    check_simplified(p, &simplified)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gadget::GadgetInput;
    use crate::ratio::from_ratio;

    fn spec(p: usize, degree: u32, n0: u32) -> GadgetSpec {
        GadgetSpec::with_degree(p, degree, 1, n0).unwrap()
    }

    #[test]
    fn bits_basics() {
        let a = Bits::new(3, 0b101).unwrap();
        let b = Bits::new(2, 0b10).unwrap();
        let c = a.concat(b).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.value(), 0b10101);
        assert_eq!(c.slice(3, 2), b);
        assert_eq!(c.slice(0, 3), a);
        assert_eq!(c.to_string(), "10101");
        assert_eq!(Bits::EMPTY.to_string(), "-");
        assert!(Bits::new(2, 4).is_err());
        assert!(Bits::new(129, 0).is_err());
        let full = Bits::new(128, u128::MAX).unwrap();
        assert!(full.concat(Bits::new(1, 0).unwrap()).is_err());
        assert_eq!(Bits::from_hex(5, &c.to_hex()).unwrap(), c);
    }

    /// Error by brute force straight from the closures, without tables.
    fn oracle_error(
        spec: &GadgetSpec,
        probs: &[(u64, u64)],
        answer: impl Fn(u64, usize, usize) -> Answer,
    ) -> BigRational {
        let z_of = gadget_evaluator(spec);
        let n = spec.domain_size() as u64;
        let m = spec.m();
        let mut err = BigRational::zero();
        for (rand, &(a, b)) in probs.iter().enumerate() {
            let mut fails = 0u64;
            for x in 0..n {
                for x1 in 0..m {
                    if !answer_is_valid(z_of(x), x1, m, &answer(x, x1, rand)) {
                        fails += 1;
                    }
                }
            }
            err += from_ratio(a, b) * from_ratio(fails, n * m as u64);
        }
        err
    }

    #[test]
    fn send_all_is_error_free() {
        for s in [spec(1, 4, 4), spec(2, 4, 4), spec(1, 8, 8)] {
            let p = send_all_protocol(&s).unwrap();
            assert_eq!(distributional_error(&p).unwrap(), BigRational::zero());
            let cost = p.cost();
            assert_eq!(cost.c1, s.n0());
            assert_eq!(cost.c0, 0);
        }
    }

    #[test]
    fn random_guess_errs_half() {
        let s = spec(1, 4, 4);
        let p = random_guess_protocol(&s).unwrap();
        assert_eq!(distributional_error(&p).unwrap(), from_ratio(1, 2));
        let q = simplify(&p).unwrap();
        assert_eq!(distributional_error(&q).unwrap(), from_ratio(1, 2));
        // Each random point alone.
        let m = s.m();
        let oracle = oracle_error(&s, &[(1, 2), (1, 2)], |_, x1, rand| {
            let e = MatchingFamily::new(m).unwrap().edge(x1, 0);
            Answer::new(e.left, e.right, rand == 1)
        });
        assert_eq!(oracle, from_ratio(1, 2));
    }

    #[test]
    fn run_protocol_on_instance() {
        let s = spec(2, 4, 4);
        let p = send_all_protocol(&s).unwrap();
        let input = GadgetInput::from_packed(&s, 0b0110_1011).unwrap();
        for x1 in 0..s.m() {
            let inst = HMInstance::new(s, x1, input.clone()).unwrap();
            let (t, ans) = run_protocol(&p, &inst, 0).unwrap();
            assert_eq!(t.len(), 3);
            assert_eq!(t[0].len(), 4);
            assert!(t[1].is_empty() && t[2].is_empty());
            assert!(crate::matching::check_answer(&inst, &ans));
        }
        let other = GadgetSpec::with_degree(2, 4, 1, 2).unwrap();
        let inst = HMInstance::new(other, 0, GadgetInput::zeros(&other)).unwrap();
        assert!(run_protocol(&p, &inst, 0).is_err());
        let inst = HMInstance::new(s, 0, input).unwrap();
        assert!(run_protocol(&p, &inst, 1).is_err());
    }

    #[test]
    fn missing_entries_are_reported() {
        let s = spec(1, 4, 4);
        let mut p = send_all_protocol(&s).unwrap();
        let key = *p.messages[0].keys().next().unwrap();
        p.messages[0].remove(&key);
        assert!(matches!(
            distributional_error(&p),
            Err(ProtocolError::MissingEntry { .. })
        ));
        assert!(p.check_coverage().is_err());
    }

    #[test]
    fn builder_rejects_bad_rules() {
        let s = spec(1, 4, 4);
        let wrong_len = ProtocolBuilder::new("bad", s)
            .message(0, 2, |_, _, _| Bits::new(1, 0).unwrap())
            .output(|_, _, _| Answer::new(0, 2, false))
            .build();
        assert!(matches!(wrong_len, Err(ProtocolError::MessageLength { .. })));
        let no_output = ProtocolBuilder::new("bad", s).build();
        assert!(matches!(no_output, Err(ProtocolError::Malformed(_))));
        let bad_player = ProtocolBuilder::new("bad", s)
            .message(5, 1, |_, _, _| Bits::EMPTY)
            .output(|_, _, _| Answer::new(0, 2, false))
            .build();
        assert!(bad_player.is_err());
        let bad_rand = ProtocolBuilder::new("bad", s)
            .randomness(vec![from_ratio(1, 3)])
            .output(|_, _, _| Answer::new(0, 2, false))
            .build();
        assert!(matches!(bad_rand, Err(ProtocolError::BadRandomness(_))));
    }

    #[test]
    fn enumeration_guard() {
        let s = GadgetSpec::with_degree(4, 16, 1, 4).unwrap();
        assert!(matches!(silent_protocol(&s), Err(ProtocolError::TooLarge(_))));
    }

    #[test]
    fn prefix_error_matches_oracle_and_decreases() {
        // Oracle: best achievable success for the last player who knows x1
        // and the low c bits of a uniform z; unseen pairs are a coin flip.
        for n0 in [4u32, 8] {
            let s = spec(1, n0, n0);
            let m = s.m();
            let mut prev = BigRational::one();
            for c in 0..=n0 {
                let p = prefix_protocol(&s, c).unwrap();
                let err = distributional_error(&p).unwrap();
                // Edge l pairs positions l and m + (x1 + l) mod m; it is
                // fully known iff both positions are below c.
                let known_edges = |x1: usize| (0..m).any(|l| l < c as usize && m + (x1 + l) % m < c as usize);
                let fully = (0..m).filter(|&x1| known_edges(x1)).count() as u64;
                let expected = from_ratio(m as u64 - fully, 2 * m as u64);
                assert_eq!(err, expected, "n0 = {n0}, c = {c}");
                assert!(err <= prev);
                prev = err;
            }
        }
    }

    #[test]
    fn simplify_costs() {
        let s = spec(2, 8, 8);
        let p = helper_protocol(&s).unwrap();
        assert_eq!(p.message_lengths(), &[8, 1, 0]);
        let q = simplify(&p).unwrap();
        assert_eq!(q.message_lengths(), &[8, 4, 0]);
        // A three-bit middle message at m = 4 becomes twelve bits.
        let s = spec(2, 8, 8);
        let three = ProtocolBuilder::new("three", s)
            .message(1, 3, |v, _, _| Bits::truncate(3, (v.x1.unwrap() as u128) ^ 5))
            .output(|v, _, _| {
                let e = MatchingFamily::new(4).unwrap().edge(v.x1.unwrap(), 0);
                Answer::new(e.left, e.right, false)
            })
            .build()
            .unwrap();
        let q = simplify(&three).unwrap();
        assert_eq!(q.message_lengths(), &[0, 12, 0]);
        assert_eq!(q.cost().c1, three.cost().c1);
    }

    #[test]
    fn simplified_claims_hold_for_fixtures() {
        for n0 in [4u32, 8] {
            for p in [1usize, 2] {
                let s = spec(p, n0, n0);
                let mut fixtures = vec![
                    send_all_protocol(&s).unwrap(),
                    prefix_protocol(&s, 2).unwrap(),
                    random_guess_protocol(&s).unwrap(),
                    x1_dependent_protocol(&s).unwrap(),
                ];
                if p >= 2 {
                    fixtures.push(helper_protocol(&s).unwrap());
                }
                for f in &fixtures {
                    let r = verify_simplified_claims(f).unwrap();
                    assert!(r.pass(), "{} n0={n0} p={p}: {r:?}", f.name());
                }
            }
        }
    }

    #[test]
    fn negative_control_fails_independence() {
        let s = spec(2, 4, 4);
        let bad = x1_dependent_protocol(&s).unwrap();
        let r = check_simplified(&bad, &bad).unwrap();
        assert!(r.error_equal);
        assert!(!r.x1_independent);
        let c = r.counterexample.clone().unwrap();
        assert_eq!((c.rand, c.input, c.x1_a, c.x1_b), (0, 0, 0, 1));
        assert!(!r.pass());
    }

    #[test]
    fn simplified_transcripts_ignore_x1() {
        let s = spec(2, 4, 4);
        let q = simplify(&helper_protocol(&s).unwrap()).unwrap();
        for x in 0..256u64 {
            let t0 = q.transcript_packed(x, 0, 0).unwrap();
            let t1 = q.transcript_packed(x, 1, 0).unwrap();
            assert_eq!(t0, t1);
        }
        // Simplifying twice keeps the error and multiplies again.
        let qq = simplify(&q).unwrap();
        assert_eq!(distributional_error(&qq).unwrap(), distributional_error(&q).unwrap());
        assert_eq!(qq.message_lengths()[1], s.m() as u32 * q.message_lengths()[1]);
    }

    #[test]
    fn helper_matches_closure_oracle() {
        // Simplified helper agrees with a direct evaluation of the rules.
        let s = spec(2, 4, 4);
        let q = simplify(&helper_protocol(&s).unwrap()).unwrap();
        let z_of = gadget_evaluator(&s);
        let m = s.m();
        let err = oracle_error(&s, &[(1, 1)], |x, x1, _| {
            let e = MatchingFamily::new(m).unwrap().edge(x1, 0);
            Answer::for_edge(e, z_of(x))
        });
        assert_eq!(distributional_error(&q).unwrap(), err);
    }
}
