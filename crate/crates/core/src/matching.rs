//! The shifted matching family and the lifted Hidden Matching relation.
//!
//! Nodes `0..m` form the left side and `m..2m` the right side. Matching `i`
//! pairs left node `l` with `m + ((i + l) mod m)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gadget::{eval_gadget, GadgetError, GadgetInput, GadgetSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchingError {
    #[error("matching family needs m >= 1")]
    Empty,
    #[error("index {index} out of range for m = {m}")]
    OutOfRange { index: usize, m: usize },
    #[error("x1 = {x1} is not a matching index for m = {m}")]
    BadMatchingIndex { x1: usize, m: usize },
    #[error(transparent)]
    Gadget(#[from] GadgetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub left: usize,
    pub right: usize,
}

impl Edge {
    pub fn new(left: usize, right: usize) -> Self {
        Edge { left, right }
    }
}

/// `M_i = {(l, m + ((i + l) mod m)) : l < m}`.
pub fn matching_edge(i: usize, l: usize, m: usize) -> Result<Edge, MatchingError> {
    if m == 0 {
        return Err(MatchingError::Empty);
    }
    for index in [i, l] {
        if index >= m {
            return Err(MatchingError::OutOfRange { index, m });
        }
    }
    Ok(Edge::new(l, m + (i + l) % m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchingFamily {
    m: usize,
}

impl MatchingFamily {
    pub fn new(m: usize) -> Result<Self, MatchingError> {
        if m == 0 {
            return Err(MatchingError::Empty);
        }
        Ok(MatchingFamily { m })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nodes(&self) -> usize {
        2 * self.m
    }

    /// Edge of matching `i` at left node `l`; both indices must be below `m`.
    pub fn edge(&self, i: usize, l: usize) -> Edge {
        debug_assert!(i < self.m && l < self.m);
        Edge::new(l, self.m + (i + l) % self.m)
    }

    /// Edges of matching `i` in increasing left-node order.
    pub fn matching(&self, i: usize) -> impl Iterator<Item = Edge> + '_ {
        (0..self.m).map(move |l| self.edge(i, l))
    }

    pub fn contains(&self, i: usize, edge: Edge) -> bool {
        i < self.m && edge.left < self.m && edge.right == self.m + (i + edge.left) % self.m
    }

    /// The unique matching containing `edge`, if any.
    pub fn matching_of(&self, edge: Edge) -> Option<usize> {
        if edge.left >= self.m || edge.right < self.m || edge.right >= 2 * self.m {
            return None;
        }
        Some((edge.right - self.m + self.m - edge.left) % self.m)
    }
}

/// An answer `<l, r, b>` to the Hidden Matching relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Answer {
    pub l: usize,
    pub r: usize,
    pub b: bool,
}

impl Answer {
    pub fn new(l: usize, r: usize, b: bool) -> Self {
        Answer { l, r, b }
    }

    pub fn edge(&self) -> Edge {
        Edge::new(self.l, self.r)
    }

    /// Edge `e` together with the parity of its endpoints in `z`.
    pub fn for_edge(e: Edge, z: u64) -> Self {
        Answer::new(e.left, e.right, parity(z, e))
    }
}

/// `z_l xor z_r` for the endpoints of `e`.
#[inline]
pub fn parity(z: u64, e: Edge) -> bool {
    ((z >> e.left) ^ (z >> e.right)) & 1 == 1
}

/// Validity of `answer` against the hidden string `z` and matching `x1`.
pub fn answer_is_valid(z: u64, x1: usize, m: usize, answer: &Answer) -> bool {
    let Ok(family) = MatchingFamily::new(m) else {
        return false;
    };
    family.contains(x1, answer.edge()) && parity(z, answer.edge()) == answer.b
}

/// One instance of the lifted problem: the matching index on player 0's
/// forehead and the gadget rows on the others'.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HMInstance {
    pub spec: GadgetSpec,
    pub x1: usize,
    pub input: GadgetInput,
}

impl HMInstance {
    pub fn new(spec: GadgetSpec, x1: usize, input: GadgetInput) -> Result<Self, MatchingError> {
        if x1 >= spec.m() {
            return Err(MatchingError::BadMatchingIndex { x1, m: spec.m() });
        }
        input.check_shape(&spec)?;
        Ok(HMInstance { spec, x1, input })
    }

    pub fn z(&self) -> Result<u64, MatchingError> {
        Ok(eval_gadget(&self.input, &self.spec)?)
    }
}

/// True iff the answer's edge lies in `M_{x1}` and its bit is the parity of
/// the gadget output on that edge.
pub fn check_answer(instance: &HMInstance, answer: &Answer) -> bool {
    match instance.z() {
        Ok(z) => answer_is_valid(z, instance.x1, instance.spec.m(), answer),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FamilyReport {
    pub m: usize,
    pub perfect: bool,
    pub disjoint: bool,
}

impl FamilyReport {
    pub fn pass(&self) -> bool {
        self.perfect && self.disjoint
    }
}

pub const MAX_VERIFIED_M: usize = 1 << 16;

/// Exhaustively checks that each matching is perfect and that no edge is
/// shared by two matchings.
pub fn verify_family(m: usize) -> FamilyReport {
    if m == 0 || m > MAX_VERIFIED_M {
        return FamilyReport {
            m,
            perfect: false,
            disjoint: false,
        };
    }
    let family = MatchingFamily { m };
    let mut perfect = true;
    let mut seen_node = vec![usize::MAX; 2 * m];
    for i in 0..m {
        for e in family.matching(i) {
            let in_range = e.left < m && (m..2 * m).contains(&e.right);
            if !in_range || seen_node[e.left] == i || seen_node[e.right] == i {
                perfect = false;
                continue;
            }
            seen_node[e.left] = i;
            seen_node[e.right] = i;
        }
        perfect &= (0..2 * m).all(|v| seen_node[v] == i);
    }
    // Each left node has one edge per matching; disjointness means the m
    // right endpoints at each left node are distinct.
    let mut disjoint = true;
    let mut owner = vec![usize::MAX; m];
    for l in 0..m {
        owner.iter_mut().for_each(|o| *o = usize::MAX);
        for i in 0..m {
            let r = family.edge(i, l).right - m;
            if owner[r] != usize::MAX {
                disjoint = false;
            }
            owner[r] = i;
        }
    }
    FamilyReport {
        m,
        perfect,
        disjoint,
    }
}
