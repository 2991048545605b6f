//! Audits that replay the lower-bound argument on an explicit simplified
//! protocol: transcript and cylinder volumes for the information upper
//! bound, and the good-transcript / prediction-graph / forest pipeline for
//! the entropy-loss bound.
//!
//! Everything is computed by exact enumeration over the gadget input, once
//! per shared random point. Probabilities are exact rationals; only the
//! entropies are floating point, checked with [`SLACK`].

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gadget::{GadgetSpec, GipEvaluator};
use crate::infotheory::{binary_entropy, check_fano, hamming_distance, ExactDistribution, FanoReport, InfoError, SLACK};
use crate::matching::{answer_is_valid, parity, Answer, Edge};
use crate::protocol::{distributional_error, transcript_x1_independent, Bits, ProtocolError, TableProtocol};
use crate::ratio;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error("graph is not simple: {0}")]
    NotSimple(String),
    #[error("transcript depends on x1; simplify the protocol first")]
    NotSimplified,
    #[error("invalid threshold: {0}")]
    Threshold(String),
}

/// Bipartite graph on `left_size + right_size` vertices. Right endpoints
/// are numbered from 0 on their own side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BipartiteGraph {
    left_size: usize,
    right_size: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl BipartiteGraph {
    pub fn new(
        left_size: usize,
        right_size: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, AnalysisError> {
        let mut set = BTreeSet::new();
        for (l, r) in edges {
            if l >= left_size || r >= right_size {
                return Err(AnalysisError::NotSimple(format!("edge ({l}, {r}) out of range")));
            }
            if !set.insert((l, r)) {
                return Err(AnalysisError::NotSimple(format!("duplicate edge ({l}, {r})")));
            }
        }
        Ok(BipartiteGraph {
            left_size,
            right_size,
            edges: set,
        })
    }

    pub fn left_size(&self) -> usize {
        self.left_size
    }

    pub fn right_size(&self) -> usize {
        self.right_size
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Forest {
    pub edges: Vec<(usize, usize)>,
    pub rank: usize,
    pub touched: usize,
    pub components: usize,
}

/// Greedy spanning forest, scanning edges in `(left, right)` order.
/// `rank` is the number of forest edges, i.e. touched vertices minus
/// components among them.
pub fn spanning_forest(g: &BipartiteGraph) -> Forest {
    let mut uf = UnionFind::<usize>::new(g.left_size + g.right_size);
    let mut touched = vec![false; g.left_size + g.right_size];
    let mut edges = Vec::new();
    for (l, r) in g.edges() {
        let (a, b) = (l, g.left_size + r);
        touched[a] = true;
        touched[b] = true;
        if uf.union(a, b) {
            edges.push((l, r));
        }
    }
    let touched_count = touched.iter().filter(|&&t| t).count();
    let components = (0..touched.len())
        .filter(|&v| touched[v])
        .map(|v| uf.find_mut(v))
        .collect::<BTreeSet<_>>()
        .len();
    Forest {
        rank: edges.len(),
        edges,
        touched: touched_count,
        components,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TuranReport {
    pub edges: usize,
    pub rank: usize,
    pub pass: bool,
}

/// A simple bipartite graph whose spanning forests have `r` edges has at
/// most `r^2` edges; checks `rank^2 >= |E|`.
pub fn verify_turan(g: &BipartiteGraph) -> TuranReport {
    let rank = spanning_forest(g).rank;
    TuranReport {
        edges: g.edge_count(),
        rank,
        pass: rank * rank >= g.edge_count(),
    }
}

/// Outcome tally for one named inequality across an audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub evaluated: u64,
    pub failed: u64,
    pub first_failure: Option<String>,
}

impl CheckSummary {
    pub fn holds(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Checks(Vec<CheckSummary>);

impl Checks {
    pub fn record(&mut self, name: &str, holds: bool, detail: impl FnOnce() -> String) {
        let idx = match self.0.iter().position(|c| c.name == name) {
            Some(i) => i,
            None => {
                self.0.push(CheckSummary {
                    name: name.to_string(),
                    evaluated: 0,
                    failed: 0,
                    first_failure: None,
                });
                self.0.len() - 1
            }
        };
        let c = &mut self.0[idx];
        c.evaluated += 1;
        if !holds {
            c.failed += 1;
            if c.first_failure.is_none() {
                c.first_failure = Some(detail());
            }
        }
    }

    fn merge(&mut self, other: Vec<(&'static str, bool, String)>) {
        for (name, holds, detail) in other {
            self.record(name, holds, || detail);
        }
    }

    pub fn get(&self, name: &str) -> Option<&CheckSummary> {
        self.0.iter().find(|c| c.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CheckSummary> {
        self.0.iter()
    }

    pub fn all_hold(&self) -> bool {
        self.0.iter().all(CheckSummary::holds)
    }
}

/// Cutoffs of the entropy-loss pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thresholds {
    /// Largest distributional error for which the pipeline applies.
    #[serde(serialize_with = "ratio::serialize")]
    pub error_gate: BigRational,
    /// A transcript is good when its conditional error is at most this.
    #[serde(serialize_with = "ratio::serialize")]
    pub good_transcript: BigRational,
    /// A matching is good for a transcript when its error is at most this.
    #[serde(serialize_with = "ratio::serialize")]
    pub good_matching: BigRational,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            error_gate: ratio::from_ratio(1, 16),
            good_transcript: ratio::from_ratio(1, 8),
            good_matching: ratio::from_ratio(1, 4),
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let half = ratio::from_ratio(1, 2);
        for (name, t) in [
            ("error_gate", &self.error_gate),
            ("good_transcript", &self.good_transcript),
            ("good_matching", &self.good_matching),
        ] {
            if t < &BigRational::zero() || t > &BigRational::from_integer(1.into()) {
                return Err(AnalysisError::Threshold(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.good_matching > half {
            return Err(AnalysisError::Threshold("good_matching must be at most 1/2".into()));
        }
        Ok(())
    }
}

/// Entropy-loss pipeline results for one transcript.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub eps_tau: String,
    pub good: bool,
    /// Error of each matching given the transcript, indexed by matching.
    pub matching_errors: Vec<String>,
    pub good_matchings: Vec<usize>,
    pub constant_predictions: bool,
    /// Predicted edges of the good matchings, as `(l, r)` node pairs.
    pub graph: Vec<Edge>,
    pub forest: Vec<Edge>,
    pub rank: usize,
    /// `E[d_H(u_Z, v) | tau]` over the forest edges.
    pub expected_distance: f64,
    pub fano: Option<FanoReport>,
    pub h_z_given_tau: f64,
    pub h_z_given_u_tau: f64,
    pub chain_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptRecord {
    pub rand: usize,
    pub transcript: String,
    pub first_message: String,
    pub p_tau: String,
    /// Volume of the cylinder intersection cut out by the later players.
    pub q_tau: Option<String>,
    /// Volume of the set of inputs on which player 0 sends this message.
    pub first_mass: Option<String>,
    pub bad: Option<bool>,
    pub loss: Option<LossRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    InfoUpperBound,
    EntropyLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    /// `I(Z; tau)` averaged over random points.
    pub mutual_information: f64,
    pub mutual_information_by_rand: Vec<f64>,
    pub h_z: f64,
    pub c1: u32,
    pub c0: u32,
    /// `c1 + 2` for the information audit.
    pub info_bound: Option<f64>,
    pub good_mass: Option<String>,
    pub min_good_rank: Option<usize>,
    /// `(1/2)(1 - H2(1/4)) * min_good_rank`, reported only.
    pub rank_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub kind: AuditKind,
    pub protocol: String,
    pub gadget: GadgetSpec,
    pub error: String,
    pub premise_met: bool,
    pub premise: String,
    pub thresholds: Option<Thresholds>,
    pub aggregate: Aggregate,
    pub checks: Checks,
    pub transcripts: Vec<TranscriptRecord>,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.premise_met && self.checks.all_hold()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit report serializes")
    }

    pub const CSV_HEADER: &'static str = "rand,transcript,first_message,p_tau,q_tau,first_mass,bad,eps_tau,good,good_matchings,graph_edges,rank,expected_distance,fano_entropy,fano_bound,h_z_given_tau,h_z_given_u_tau,chain_bound";

    /// One row per transcript; empty cells where the audit does not apply.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for t in &self.transcripts {
            let opt = |s: &Option<String>| s.clone().unwrap_or_default();
            let mut cells = vec![
                t.rand.to_string(),
                t.transcript.clone(),
                t.first_message.clone(),
                t.p_tau.clone(),
                opt(&t.q_tau),
                opt(&t.first_mass),
                t.bad.map(|b| b.to_string()).unwrap_or_default(),
            ];
            match &t.loss {
                Some(l) => {
                    let (fe, fb) = l
                        .fano
                        .as_ref()
                        .map(|f| (f.entropy.to_string(), f.bound.to_string()))
                        .unwrap_or_default();
                    cells.extend([
                        l.eps_tau.clone(),
                        l.good.to_string(),
                        l.good_matchings.len().to_string(),
                        l.graph.len().to_string(),
                        l.rank.to_string(),
                        l.expected_distance.to_string(),
                        fe,
                        fb,
                        l.h_z_given_tau.to_string(),
                        l.h_z_given_u_tau.to_string(),
                        l.chain_bound.to_string(),
                    ]);
                }
                None => cells.extend(std::iter::repeat_n(String::new(), 11)),
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn frac(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Counts `key(x)` over `x in 0..n`, in parallel, merged deterministically.
fn par_count<K, F>(n: u64, key: F) -> Result<BTreeMap<K, u64>, ProtocolError>
where
    K: Ord + Send,
    F: Fn(u64) -> Result<K, ProtocolError> + Sync,
{
    (0..n)
        .into_par_iter()
        .try_fold(BTreeMap::new, |mut acc, x| {
            *acc.entry(key(x)?).or_insert(0) += 1;
            Ok(acc)
        })
        .try_reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            Ok(a)
        })
}

struct Setup<'a> {
    p: &'a TableProtocol,
    spec: GadgetSpec,
    n: u64,
    z_of: Box<dyn Fn(u64) -> u64 + Sync + 'a>,
}

fn setup(p: &TableProtocol) -> Result<Setup<'_>, AnalysisError> {
    if transcript_x1_independent(p)?.is_some() {
        return Err(AnalysisError::NotSimplified);
    }
    let spec = *p.spec();
    let eval = GipEvaluator::new(*spec.gip());
    let mask = spec.output_mask();
    Ok(Setup {
        p,
        spec,
        n: spec.domain_size() as u64,
        z_of: Box::new(move |x| eval.eval_packed(x) & mask),
    })
}

impl Setup<'_> {
    /// Transcript with the later players' messages computed from `first`
    /// instead of player 0's actual message.
    fn continuation(&self, first: Bits, x: u64, rand: usize) -> Result<Bits, ProtocolError> {
        let mut tau = first;
        for player in 1..self.p.players() {
            let msg = self.p.message(player, 0, self.p.view_of(player, x), tau, rand)?;
            tau = tau.concat(msg)?;
        }
        Ok(tau)
    }

    fn first_len(&self) -> u32 {
        self.p.message_lengths()[0]
    }

    /// Exact `I(Z; tau)` and `H(Z)` at one random point.
    fn mutual_information(&self, rand: usize) -> Result<(f64, f64), AnalysisError> {
        let joint = par_count(self.n, |x| Ok(((self.z_of)(x), self.p.transcript_packed(x, 0, rand)?)))?;
        let ids: BTreeMap<Bits, u64> = joint
            .keys()
            .map(|(_, t)| *t)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .zip(0..)
            .collect();
        let d = ExactDistribution::from_counts(2, joint.iter().map(|((z, t), &c)| (vec![*z, ids[t]], c)))?;
        Ok((d.mutual_info(&[0], &[1])?, d.entropy(&[0])?))
    }

    fn average(&self, per_rand: &[f64]) -> f64 {
        self.p
            .randomness()
            .iter()
            .zip(per_rand)
            .map(|(w, v)| to_f64(w) * v)
            .sum()
    }
}

/// Replays the information upper bound `I(Z; tau) <= c1 + 2` on a
/// simplified protocol.
///
/// For each transcript: `p_tau` is its probability, `q_tau` the volume of
/// the cylinder intersection defined by the later players' messages (with
/// player 0's message held fixed), and the transcript is bad when
/// `q_tau <= 2^-N`. Checked: `p_tau <= q_tau`; for each first message the
/// cylinders partition the input space; total cylinder volume over
/// occurring transcripts is at most `2^c1`; the Jensen step
/// `sum_good p log(q/p) <= log(sum_good q) <= c1`; and the bound itself.
pub fn audit_info_upper_bound(p: &TableProtocol) -> Result<AuditReport, AnalysisError> {
    let s = setup(p)?;
    let n = s.n;
    let cost = p.cost();
    let degree = s.spec.degree();
    let mut checks = Checks::default();
    let mut records = Vec::new();
    let mut mi_by_rand = Vec::new();
    let mut h_z = 0.0;

    for rand in 0..p.randomness().len() {
        let actual = par_count(n, |x| p.transcript_packed(x, 0, rand))?;
        let mut first_counts: BTreeMap<Bits, u64> = BTreeMap::new();
        for (t, &c) in &actual {
            *first_counts.entry(t.slice(0, s.first_len())).or_insert(0) += c;
        }
        let total: u64 = actual.values().sum();
        checks.record("p_sums_to_one", total == n, || format!("rand {rand}: {total} of {n}"));

        // Cylinder volumes for every transcript sharing a first message.
        let mut volume: BTreeMap<Bits, u64> = BTreeMap::new();
        for &first in first_counts.keys() {
            let parts = par_count(n, |x| s.continuation(first, x, rand))?;
            let sum: u64 = parts.values().sum();
            checks.record("cylinders_partition", sum == n, || {
                format!("rand {rand}, first {first}: volume {sum} of {n}")
            });
            volume.extend(parts);
        }

        let mut q_total = 0u64;
        let mut good_q = 0u64;
        let mut jensen = 0.0;
        for (&tau, &count) in &actual {
            let q = volume.get(&tau).copied().unwrap_or(0);
            checks.record("p_le_q", count <= q, || format!("rand {rand}, tau {tau}: {count} > {q}"));
            // bad iff q / n <= 2^-N
            let bad = (q as u128) << degree <= n as u128;
            q_total += q;
            if !bad {
                good_q += q;
                let (pt, qt) = (count as f64 / n as f64, q as f64 / n as f64);
                jensen += pt * (qt / pt).log2();
            }
            let first = tau.slice(0, s.first_len());
            records.push(TranscriptRecord {
                rand,
                transcript: tau.to_string(),
                first_message: first.to_string(),
                p_tau: ratio::format(&frac(count, n)),
                q_tau: Some(ratio::format(&frac(q, n))),
                first_mass: Some(ratio::format(&frac(first_counts[&first], n))),
                bad: Some(bad),
                loss: None,
            });
        }
        let cap = (n as u128) << cost.c1;
        checks.record("volume_le_2^c1", (q_total as u128) <= cap, || {
            format!("rand {rand}: total volume {q_total}/{n} exceeds 2^{}", cost.c1)
        });
        let log_good = if good_q == 0 {
            f64::NEG_INFINITY
        } else {
            (good_q as f64 / n as f64).log2()
        };
        checks.record("jensen_step", good_q == 0 || jensen <= log_good + SLACK, || {
            format!("rand {rand}: {jensen} > log2(good volume) = {log_good}")
        });
        checks.record("jensen_sum_le_c1", jensen <= cost.c1 as f64 + SLACK, || {
            format!("rand {rand}: {jensen} > c1 = {}", cost.c1)
        });

        let (mi, hz) = s.mutual_information(rand)?;
        h_z = hz;
        let bound = cost.c1 as f64 + 2.0;
        checks.record("info_le_c1_plus_2", mi <= bound + SLACK, || {
            format!("rand {rand}: I = {mi} > {bound}")
        });
        mi_by_rand.push(mi);
    }

    let mutual_information = s.average(&mi_by_rand);
    let bound = cost.c1 as f64 + 2.0;
    checks.record("average_info_le_c1_plus_2", mutual_information <= bound + SLACK, || {
        format!("I = {mutual_information} > {bound}")
    });
    Ok(AuditReport {
        kind: AuditKind::InfoUpperBound,
        protocol: p.name().to_string(),
        gadget: s.spec,
        error: ratio::format(&distributional_error(p)?),
        premise_met: true,
        premise: "x1-independent transcript".into(),
        thresholds: None,
        aggregate: Aggregate {
            mutual_information,
            mutual_information_by_rand: mi_by_rand,
            h_z,
            c1: cost.c1,
            c0: cost.c0,
            info_bound: Some(bound),
            good_mass: None,
            min_good_rank: None,
            rank_bound: None,
        },
        checks,
        transcripts: records,
    })
}

type LocalChecks = Vec<(&'static str, bool, String)>;

fn loss_record(
    s: &Setup<'_>,
    th: &Thresholds,
    rand: usize,
    tau: Bits,
    inputs: &[u64],
) -> Result<(LossRecord, LocalChecks), AnalysisError> {
    let p = s.p;
    let m = s.spec.m();
    let n0 = s.spec.n0() as usize;
    let count = inputs.len() as u64;
    let last = p.last_player();
    let mut local: LocalChecks = Vec::new();
    let label = || format!("rand {rand}, tau {tau}");

    let mut fails = vec![0u64; m];
    let mut predictions: Vec<BTreeSet<Answer>> = vec![BTreeSet::new(); m];
    for &x in inputs {
        let z = (s.z_of)(x);
        let view = p.view_of(last, x);
        for x1 in 0..m {
            let a = p.answer(x1, view, tau, rand)?;
            if !answer_is_valid(z, x1, m, &a) {
                fails[x1] += 1;
            }
            predictions[x1].insert(a);
        }
    }
    let eps_m: Vec<BigRational> = fails.iter().map(|&f| frac(f, count)).collect();
    let eps_tau = frac(fails.iter().sum(), count * m as u64);
    let good = eps_tau <= th.good_transcript;

    let z_counts = |f: &dyn Fn(u64) -> u64| -> BTreeMap<u64, u64> {
        let mut c = BTreeMap::new();
        for &x in inputs {
            *c.entry(f(x)).or_insert(0) += 1;
        }
        c
    };
    let h_z_given_tau = crate::infotheory::entropy_from_counts(z_counts(&|x| (s.z_of)(x)).values());

    let mut rec = LossRecord {
        eps_tau: ratio::format(&eps_tau),
        good,
        matching_errors: eps_m.iter().map(ratio::format).collect(),
        good_matchings: Vec::new(),
        constant_predictions: true,
        graph: Vec::new(),
        forest: Vec::new(),
        rank: 0,
        expected_distance: 0.0,
        fano: None,
        h_z_given_tau,
        h_z_given_u_tau: h_z_given_tau,
        chain_bound: n0 as f64,
    };
    if !good {
        return Ok((rec, local));
    }

    rec.good_matchings = (0..m).filter(|&i| eps_m[i] <= th.good_matching).collect();
    let enough = 2 * rec.good_matchings.len() >= m;
    local.push(("good_matchings_ge_half", enough, format!("{}: {} of {m}", label(), rec.good_matchings.len())));

    rec.constant_predictions = rec.good_matchings.iter().all(|&i| predictions[i].len() == 1);
    local.push(("constant_predictions", rec.constant_predictions, format!("{}: answer varies with the last player's view", label())));
    if !rec.constant_predictions {
        return Ok((rec, local));
    }

    // Prediction graph: one edge per good matching, labelled by its bit.
    let mut bit_of: BTreeMap<(usize, usize), (bool, usize)> = BTreeMap::new();
    for &i in &rec.good_matchings {
        let a = *predictions[i].iter().next().expect("constant prediction");
        bit_of.insert((a.l, a.r - m), (a.b, i));
    }
    let graph = BipartiteGraph::new(m, m, bit_of.keys().copied())?;
    let forest = spanning_forest(&graph);
    rec.graph = graph.edges().map(|(l, r)| Edge::new(l, r + m)).collect();
    rec.forest = forest.edges.iter().map(|&(l, r)| Edge::new(l, r + m)).collect();
    rec.rank = forest.rank;
    let k = forest.rank;
    local.push((
        "rank_squared_ge_edges",
        k * k >= graph.edge_count(),
        format!("{}: rank {k}, {} edges", label(), graph.edge_count()),
    ));

    // u_Z: parities of Z on forest edges; v: the predicted bits.
    let v: u64 = rec
        .forest
        .iter()
        .enumerate()
        .map(|(j, e)| (bit_of[&(e.left, e.right - m)].0 as u64) << j)
        .sum();
    let u_of = |x: u64| -> u64 {
        let z = (s.z_of)(x);
        rec.forest
            .iter()
            .enumerate()
            .map(|(j, e)| (parity(z, *e) as u64) << j)
            .sum()
    };
    let mut joint: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    let mut distance_total = 0u64;
    for &x in inputs {
        let u = u_of(x);
        distance_total += hamming_distance(u, v) as u64;
        *joint.entry(((s.z_of)(x), u)).or_insert(0) += 1;
    }
    rec.expected_distance = distance_total as f64 / count as f64;
    let forest_fails: u64 = rec
        .forest
        .iter()
        .map(|e| fails[bit_of[&(e.left, e.right - m)].1])
        .sum();
    local.push((
        "distance_equals_forest_errors",
        distance_total == forest_fails,
        format!("{}: {distance_total} vs {forest_fails}", label()),
    ));
    // E[d_H] <= |A| * threshold, exactly.
    let limit = th.good_matching.clone() * BigRational::from_integer((k as u64 * count).into());
    local.push((
        "distance_le_rank_quarter",
        BigRational::from_integer(distance_total.into()) <= limit,
        format!("{}: E[d_H] = {} > {k} * threshold", label(), rec.expected_distance),
    ));

    let eps = to_f64(&th.good_matching);
    let d = ExactDistribution::from_counts(2, joint.iter().map(|(&(z, u), &c)| (vec![z, u], c)))?;
    let u_dist = d.marginal(&[1])?;
    let fano = check_fano(&u_dist, k, v, eps)?;
    local.push(("fano_premise", fano.premise_met, format!("{}: E[d_H] = {}", label(), fano.expected_distance)));
    local.push(("fano", fano.pass != Some(false), format!("{}: H = {} > {}", label(), fano.entropy, fano.bound)));
    rec.h_z_given_u_tau = d.cond_entropy(&[0], &[1])?;
    local.push((
        "residual_entropy_le_free_bits",
        rec.h_z_given_u_tau <= (n0 - k) as f64 + SLACK,
        format!("{}: H(Z|u) = {} > {}", label(), rec.h_z_given_u_tau, n0 - k),
    ));
    rec.chain_bound = k as f64 * binary_entropy(eps) + (n0 - k) as f64;
    local.push((
        "chain_bound",
        rec.h_z_given_tau <= rec.chain_bound + SLACK,
        format!("{}: H(Z|tau) = {} > {}", label(), rec.h_z_given_tau, rec.chain_bound),
    ));
    rec.fano = Some(fano);
    Ok((rec, local))
}

/// Replays the entropy-loss pipeline on a simplified protocol whose error
/// is at most `th.error_gate`. Above the gate the report says the premise is
/// unmet and makes no judgment.
pub fn audit_entropy_loss(p: &TableProtocol, th: &Thresholds) -> Result<AuditReport, AnalysisError> {
    th.validate()?;
    let s = setup(p)?;
    let n = s.n;
    let cost = p.cost();
    let error = distributional_error(p)?;
    let premise_met = error <= th.error_gate;
    let mut checks = Checks::default();
    let mut records = Vec::new();
    let mut mi_by_rand = Vec::new();
    let mut h_z = 0.0;
    let mut good_mass = BigRational::zero();
    let mut min_good_rank: Option<usize> = None;

    for rand in 0..p.randomness().len() {
        let (mi, hz) = s.mutual_information(rand)?;
        mi_by_rand.push(mi);
        h_z = hz;
        if !premise_met {
            continue;
        }
        let mut groups: BTreeMap<Bits, Vec<u64>> = BTreeMap::new();
        for x in 0..n {
            groups.entry(p.transcript_packed(x, 0, rand)?).or_default().push(x);
        }
        let groups: Vec<(Bits, Vec<u64>)> = groups.into_iter().collect();
        let results = groups
            .par_iter()
            .map(|(tau, inputs)| loss_record(&s, th, rand, *tau, inputs))
            .collect::<Result<Vec<_>, _>>()?;

        let mut good_count = 0u64;
        for ((tau, inputs), (rec, local)) in groups.iter().zip(results) {
            checks.merge(local);
            if rec.good {
                good_count += inputs.len() as u64;
                if rec.constant_predictions {
                    min_good_rank = Some(min_good_rank.map_or(rec.rank, |r| r.min(rec.rank)));
                }
            }
            records.push(TranscriptRecord {
                rand,
                transcript: tau.to_string(),
                first_message: tau.slice(0, s.first_len()).to_string(),
                p_tau: ratio::format(&frac(inputs.len() as u64, n)),
                q_tau: None,
                first_mass: None,
                bad: None,
                loss: Some(rec),
            });
        }
        let mass = frac(good_count, n);
        checks.record("good_transcripts_ge_half", 2 * good_count >= n, || {
            format!("rand {rand}: Pr[good] = {}", ratio::format(&mass))
        });
        good_mass += &p.randomness()[rand] * mass;
    }

    let rank_bound = min_good_rank.map(|r| 0.5 * (1.0 - binary_entropy(0.25)) * r as f64);
    Ok(AuditReport {
        kind: AuditKind::EntropyLoss,
        protocol: p.name().to_string(),
        gadget: s.spec,
        error: ratio::format(&error),
        premise_met,
        premise: if premise_met {
            format!("error {} <= {}", ratio::format(&error), ratio::format(&th.error_gate))
        } else {
            format!("premise unmet: error {} > {}", ratio::format(&error), ratio::format(&th.error_gate))
        },
        thresholds: Some(th.clone()),
        aggregate: Aggregate {
            mutual_information: s.average(&mi_by_rand),
            mutual_information_by_rand: mi_by_rand,
            h_z,
            c1: cost.c1,
            c0: cost.c0,
            info_bound: None,
            good_mass: premise_met.then(|| ratio::format(&good_mass)),
            min_good_rank,
            rank_bound,
        },
        checks,
        transcripts: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{
        prefix_protocol, random_guess_protocol, send_all_protocol, silent_protocol, simplify, x1_dependent_protocol,
    };
    use proptest::prelude::*;

    fn graph(l: usize, r: usize, e: &[(usize, usize)]) -> BipartiteGraph {
        BipartiteGraph::new(l, r, e.iter().copied()).unwrap()
    }

    /// Rank via connected components found by depth-first search.
    fn rank_oracle(g: &BipartiteGraph) -> usize {
        let n = g.left_size() + g.right_size();
        let mut adj = vec![Vec::new(); n];
        for (l, r) in g.edges() {
            adj[l].push(g.left_size() + r);
            adj[g.left_size() + r].push(l);
        }
        let mut seen = vec![false; n];
        let mut rank = 0;
        for start in 0..n {
            if seen[start] || adj[start].is_empty() {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut size = 0;
            while let Some(v) = stack.pop() {
                size += 1;
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            rank += size - 1;
        }
        rank
    }

    #[test]
    fn forest_examples() {
        assert_eq!(spanning_forest(&graph(1, 1, &[(0, 0)])).rank, 1);
        let m = 5;
        let matching: Vec<_> = (0..m).map(|i| (i, i)).collect();
        assert_eq!(spanning_forest(&graph(m, m, &matching)).rank, m);
        let k22 = graph(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let f = spanning_forest(&k22);
        assert_eq!(f.rank, 3);
        assert_eq!((f.touched, f.components), (4, 1));
        assert_eq!(f.edges, vec![(0, 0), (0, 1), (1, 0)]);
        let t = verify_turan(&k22);
        assert!(t.pass && t.rank == 3 && t.edges == 4);
        assert_eq!(spanning_forest(&graph(3, 3, &[])).rank, 0);
        assert!(BipartiteGraph::new(2, 2, [(0, 0), (0, 0)]).is_err());
        assert!(BipartiteGraph::new(2, 2, [(2, 0)]).is_err());
    }

    proptest! {
        #[test]
        fn forest_matches_oracle(l in 1usize..12, r in 1usize..12, bits in prop::collection::vec(any::<bool>(), 144)) {
            let edges: Vec<_> = (0..l).flat_map(|a| (0..r).map(move |b| (a, b)))
                .filter(|&(a, b)| bits[a * 12 + b]).collect();
            let g = graph(l, r, &edges);
            let f = spanning_forest(&g);
            prop_assert_eq!(f.rank, rank_oracle(&g));
            prop_assert_eq!(f.rank, f.touched - f.components);
            // The forest alone has the same rank, so it is acyclic.
            let fg = graph(l, r, &f.edges);
            prop_assert_eq!(rank_oracle(&fg), f.edges.len());
            prop_assert!(verify_turan(&g).pass);
        }
    }

    fn spec(p: usize, n0: u32) -> GadgetSpec {
        GadgetSpec::with_degree(p, n0, 1, n0).unwrap()
    }

    #[test]
    fn info_audit_prefix_is_exact() {
        for n0 in [4u32, 8] {
            for c1 in 0..=n0 {
                let q = simplify(&prefix_protocol(&spec(1, n0), c1).unwrap()).unwrap();
                let r = audit_info_upper_bound(&q).unwrap();
                assert!(r.pass(), "{:?}", r.checks);
                assert!((r.aggregate.mutual_information - c1 as f64).abs() < 1e-9);
                assert!(r.transcripts.iter().all(|t| t.q_tau.as_deref() == Some("1/1") && t.bad == Some(false)));
            }
        }
    }

    #[test]
    fn info_audit_silent_and_send_all() {
        let s = spec(2, 4);
        let r = audit_info_upper_bound(&simplify(&silent_protocol(&s).unwrap()).unwrap()).unwrap();
        assert!(r.pass());
        assert_eq!(r.aggregate.mutual_information, 0.0);
        let q = simplify(&send_all_protocol(&s).unwrap()).unwrap();
        let r = audit_info_upper_bound(&q).unwrap();
        assert!(r.pass());
        let h = crate::infotheory::entropy_from_counts(
            crate::gadget::gadget_distribution_exact(&s).unwrap().counts.values(),
        );
        assert!((r.aggregate.mutual_information - h).abs() < 1e-9);
        assert!((r.aggregate.h_z - h).abs() < 1e-9);
        assert!(r.aggregate.mutual_information <= 4.0);
    }

    #[test]
    fn audits_reject_x1_dependent() {
        let bad = x1_dependent_protocol(&spec(1, 4)).unwrap();
        assert_eq!(audit_info_upper_bound(&bad), Err(AnalysisError::NotSimplified));
        assert_eq!(
            audit_entropy_loss(&bad, &Thresholds::default()),
            Err(AnalysisError::NotSimplified)
        );
    }

    #[test]
    fn entropy_loss_send_all() {
        for n0 in [4u32, 8] {
            let s = spec(1, n0);
            let m = s.m();
            let q = simplify(&send_all_protocol(&s).unwrap()).unwrap();
            let r = audit_entropy_loss(&q, &Thresholds::default()).unwrap();
            assert!(r.premise_met);
            assert!(r.pass(), "{:?}", r.checks);
            assert_eq!(r.aggregate.good_mass.as_deref(), Some("1/1"));
            for t in &r.transcripts {
                let l = t.loss.as_ref().unwrap();
                assert_eq!(l.eps_tau, "0/1");
                assert_eq!(l.good_matchings.len(), m);
                assert_eq!(l.graph.len(), m);
                assert_eq!(l.rank, m);
            }
            assert!((r.aggregate.mutual_information - n0 as f64).abs() < 1e-9);
            assert_eq!(r.aggregate.min_good_rank, Some(m));
        }
    }

    #[test]
    fn entropy_loss_with_helper_rows() {
        let s = spec(2, 4);
        let q = simplify(&send_all_protocol(&s).unwrap()).unwrap();
        let r = audit_entropy_loss(&q, &Thresholds::default()).unwrap();
        assert!(r.pass(), "{:?}", r.checks);
    }

    #[test]
    fn entropy_loss_premise_gate() {
        let q = simplify(&random_guess_protocol(&spec(1, 4)).unwrap()).unwrap();
        let r = audit_entropy_loss(&q, &Thresholds::default()).unwrap();
        assert!(!r.premise_met);
        assert!(r.premise.starts_with("premise unmet"));
        assert!(!r.pass());
        assert!(r.transcripts.is_empty());
    }

    #[test]
    fn entropy_loss_prefix_n0_minus_one() {
        let q = simplify(&prefix_protocol(&spec(1, 4), 3).unwrap()).unwrap();
        let r = audit_entropy_loss(&q, &Thresholds::default()).unwrap();
        assert!(r.pass(), "{:?}", r.checks);
    }

    #[test]
    fn csv_has_one_row_per_transcript() {
        let q = simplify(&send_all_protocol(&spec(1, 4)).unwrap()).unwrap();
        let r = audit_entropy_loss(&q, &Thresholds::default()).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], AuditReport::CSV_HEADER);
        assert_eq!(lines.len(), 1 + 16);
        let cols = AuditReport::CSV_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(r.to_json().contains("\"kind\": \"entropy_loss\""));
    }

    #[test]
    fn thresholds_validate() {
        let mut t = Thresholds::default();
        assert!(t.validate().is_ok());
        t.good_matching = ratio::from_ratio(3, 4);
        assert!(t.validate().is_err());
    }
}
