//! Classical index-set baseline: player 0 reveals `z` on a shared random
//! set of `t` positions and the last player answers on any edge of its
//! matching that falls inside the set.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bits, ProtocolBuilder, ProtocolError, TableProtocol};
use crate::gadget::{GadgetError, GadgetSpec, GipEvaluator};
use crate::matching::{answer_is_valid, Answer, Edge};
use crate::seed::subtask_seed;

/// Most random index sets a tabulated baseline may enumerate.
pub const BASELINE_SUBSET_LIMIT: usize = 1 << 16;

const CHUNK: u64 = 1 << 14;

fn binomial(n: u32, k: u32) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `t`-subsets of `0..n` as bitmasks, in increasing numeric order.
pub fn subset_masks(n: u32, t: u32) -> Result<Vec<u64>, ProtocolError> {
    if t > n || n > 64 {
        return Err(ProtocolError::BaselineT { t, n0: n });
    }
    let count = binomial(n, t);
    if count > BASELINE_SUBSET_LIMIT as u128 {
        return Err(ProtocolError::TooLarge(count));
    }
    if t == 0 {
        return Ok(vec![0]);
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut x: u64 = if t == 64 { u64::MAX } else { (1u64 << t) - 1 };
    loop {
        out.push(x);
        if out.len() as u128 == count {
            break;
        }
        // Next mask with the same popcount.
        let c = x & x.wrapping_neg();
        let r = x + c;
        x = (((r ^ x) >> 2) / c) | r;
    }
    Ok(out)
}

/// Bits of `z` at the positions in `mask`, packed in increasing position.
fn extract(z: u64, mask: u64) -> u64 {
    let (mut out, mut k, mut m) = (0u64, 0, mask);
    while m != 0 {
        let pos = m.trailing_zeros();
        out |= ((z >> pos) & 1) << k;
        k += 1;
        m &= m - 1;
    }
    out
}

/// Inverse of [`extract`]: scatter packed bits back to the positions in `mask`.
fn deposit(bits: u64, mask: u64) -> u64 {
    let (mut out, mut k, mut m) = (0u64, 0, mask);
    while m != 0 {
        let pos = m.trailing_zeros();
        out |= ((bits >> k) & 1) << pos;
        k += 1;
        m &= m - 1;
    }
    out
}

/// First edge of `M_{x1}` (lowest left node) with both endpoints in `known`,
/// answered with its parity in `z`; otherwise edge 0 with `b = 0`. Only the
/// bits of `z` inside `known` are read.
pub fn baseline_answer(m: usize, x1: usize, known: u64, z: u64) -> Answer {
    for l in 0..m {
        let r = m + (x1 + l) % m;
        if (known >> l) & 1 == 1 && (known >> r) & 1 == 1 {
            return Answer::for_edge(Edge::new(l, r), z & known);
        }
    }
    Answer::new(0, m + x1 % m, false)
}

/// Tabulated baseline whose randomness is every `t`-subset, uniformly.
pub fn baseline_index_protocol(t: u32, spec: &GadgetSpec) -> Result<TableProtocol, ProtocolError> {
    let n0 = spec.n0();
    if t > n0 {
        return Err(ProtocolError::BaselineT { t, n0 });
    }
    let subsets = subset_masks(n0, t)?;
    let points = subsets.len();
    let eval = GipEvaluator::new(*spec.gip());
    let (mask, m) = (spec.output_mask(), spec.m());
    let for_output = subsets.clone();
    ProtocolBuilder::new(format!("baseline-{t}"), *spec)
        .uniform_randomness(points)
        .message(0, t, move |v, _, rand| {
            let z = eval.eval_packed(v.packed) & mask;
            Bits::truncate(t, extract(z, subsets[rand]) as u128)
        })
        .output(move |v, tau, rand| {
            let known = for_output[rand];
            let z = deposit(tau.slice(0, t).value() as u64, known);
            baseline_answer(m, v.x1.expect("last player sees x1"), known, z)
        })
        .build()
}

/// Where the hidden string comes from in the Monte Carlo baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZSource {
    /// `z` uniform on `{0,1}^n0`, allowing `n0` up to 64.
    Uniform { n0: u32 },
    /// `z = g(x)` for a uniform gadget input.
    Gadget { gadget: GadgetSpec },
}

impl ZSource {
    pub fn n0(&self) -> u32 {
        match self {
            ZSource::Uniform { n0 } => *n0,
            ZSource::Gadget { gadget } => gadget.n0(),
        }
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            ZSource::Uniform { n0 } => {
                if *n0 < 2 || *n0 > 64 || n0 % 2 != 0 {
                    return Err(ProtocolError::Malformed(format!("n0 = {n0} must be even in 2..=64")));
                }
            }
            ZSource::Gadget { gadget } => {
                if gadget.input_bits() > 64 {
                    return Err(GadgetError::TooWide(gadget.input_bits()).into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineEstimate {
    pub t: u32,
    pub n0: u32,
    pub trials: u64,
    pub successes: u64,
    pub success: f64,
    pub std_error: f64,
}

/// Success rate of the baseline over `trials` random `(z, x1, T)`.
/// Deterministic in `seed`, independent of thread count.
pub fn baseline_success_mc(source: &ZSource, t: u32, trials: u64, seed: u64) -> Result<BaselineEstimate, ProtocolError> {
    source.validate()?;
    let n0 = source.n0();
    if t > n0 {
        return Err(ProtocolError::BaselineT { t, n0 });
    }
    if trials == 0 {
        return Err(ProtocolError::Malformed("need at least one trial".into()));
    }
    let m = n0 as usize / 2;
    let z_mask = if n0 == 64 { u64::MAX } else { (1u64 << n0) - 1 };
    let gadget = match source {
        ZSource::Gadget { gadget } => {
            let bits = gadget.input_bits();
            let in_mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
            Some((GipEvaluator::new(*gadget.gip()), in_mask))
        }
        ZSource::Uniform { .. } => None,
    };
    let chunks = trials.div_ceil(CHUNK);
    let successes: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(subtask_seed(seed, t as u64, c));
            let count = CHUNK.min(trials - c * CHUNK);
            let mut ok = 0u64;
            for _ in 0..count {
                let z = match &gadget {
                    Some((eval, in_mask)) => eval.eval_packed(rng.gen::<u64>() & in_mask) & z_mask,
                    None => rng.gen::<u64>() & z_mask,
                };
                let x1 = rng.gen_range(0..m);
                let known = sample(&mut rng, n0 as usize, t as usize)
                    .into_iter()
                    .fold(0u64, |acc, i| acc | 1 << i);
                if answer_is_valid(z, x1, m, &baseline_answer(m, x1, known, z)) {
                    ok += 1;
                }
            }
            ok
        })
        .sum();
    let success = successes as f64 / trials as f64;
    Ok(BaselineEstimate {
        t,
        n0,
        trials,
        successes,
        success,
        std_error: (success * (1.0 - success) / trials as f64).sqrt(),
    })
}
