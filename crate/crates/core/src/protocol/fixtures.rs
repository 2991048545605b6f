//! Small hand-written protocols used as test subjects.

use num_bigint::BigInt;
use num_rational::BigRational;

use super::{Bits, ProtocolBuilder, ProtocolError, TableProtocol};
use crate::gadget::{GadgetSpec, GipEvaluator};
use crate::matching::{Answer, MatchingFamily};

fn edge_zero(m: usize, x1: usize) -> crate::matching::Edge {
    MatchingFamily::new(m).expect("m >= 1").edge(x1, 0)
}

/// Player 0 sends all of `z`; the last player answers on edge 0.
pub fn send_all_protocol(spec: &GadgetSpec) -> Result<TableProtocol, ProtocolError> {
    let eval = GipEvaluator::new(*spec.gip());
    let (n0, mask, m) = (spec.n0(), spec.output_mask(), spec.m());
    ProtocolBuilder::new("send-all", *spec)
        .message(0, n0, move |v, _, _| Bits::truncate(n0, (eval.eval_packed(v.packed) & mask) as u128))
        .output(move |v, tau, _| {
            let e = edge_zero(m, v.x1.expect("last player sees x1"));
            let z = tau.slice(0, n0).value() as u64;
            Answer::for_edge(e, z)
        })
        .build()
}

/// Player 0 sends the lowest `c1` bits of `z`; the last player answers
/// optimally given what it knows.
pub fn prefix_protocol(spec: &GadgetSpec, c1: u32) -> Result<TableProtocol, ProtocolError> {
    if c1 > spec.n0() {
        return Err(ProtocolError::Malformed(format!("prefix of {c1} bits exceeds n0 = {}", spec.n0())));
    }
    let eval = GipEvaluator::new(*spec.gip());
    let mask = spec.output_mask();
    ProtocolBuilder::new(format!("prefix-{c1}"), *spec)
        .message(0, c1, move |v, _, _| Bits::truncate(c1, (eval.eval_packed(v.packed) & mask) as u128))
        .bayes_optimal_output()
        .build()
}

/// No messages; two equally likely random points decide the parity guess.
pub fn random_guess_protocol(spec: &GadgetSpec) -> Result<TableProtocol, ProtocolError> {
    let m = spec.m();
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    ProtocolBuilder::new("random-guess", *spec)
        .randomness(vec![half.clone(), half])
        .output(move |v, _, rand| {
            let e = edge_zero(m, v.x1.expect("last player sees x1"));
            Answer::new(e.left, e.right, rand == 1)
        })
        .build()
}

/// No messages, no randomness, always `b = 0` on edge 0.
pub fn silent_protocol(spec: &GadgetSpec) -> Result<TableProtocol, ProtocolError> {
    let m = spec.m();
    ProtocolBuilder::new("silent", *spec)
        .output(move |v, _, _| {
            let e = edge_zero(m, v.x1.expect("last player sees x1"));
            Answer::new(e.left, e.right, false)
        })
        .build()
}

/// Send-all, plus player 1 announcing the low bit of `x1`. Its transcript
/// depends on `x1`, so it is not a valid simplified protocol.
pub fn x1_dependent_protocol(spec: &GadgetSpec) -> Result<TableProtocol, ProtocolError> {
    let eval = GipEvaluator::new(*spec.gip());
    let (n0, mask, m) = (spec.n0(), spec.output_mask(), spec.m());
    ProtocolBuilder::new("x1-dependent", *spec)
        .message(0, n0, move |v, _, _| Bits::truncate(n0, (eval.eval_packed(v.packed) & mask) as u128))
        .message(1, 1, |v, _, _| Bits::truncate(1, (v.x1.expect("player 1 sees x1") & 1) as u128))
        .output(move |v, tau, _| {
            let e = edge_zero(m, v.x1.expect("last player sees x1"));
            Answer::for_edge(e, tau.slice(0, n0).value() as u64)
        })
        .build()
}

/// Send-all, plus player 1 sending the low bit of row 1 xor the low bit of
/// `x1`. Needs at least two gadget rows.
pub fn helper_protocol(spec: &GadgetSpec) -> Result<TableProtocol, ProtocolError> {
    if spec.p() < 2 {
        return Err(ProtocolError::Malformed("helper protocol needs p >= 2".into()));
    }
    let eval = GipEvaluator::new(*spec.gip());
    let (n0, mask, m) = (spec.n0(), spec.output_mask(), spec.m());
    let s = *spec;
    ProtocolBuilder::new("helper", *spec)
        .message(0, n0, move |v, _, _| Bits::truncate(n0, (eval.eval_packed(v.packed) & mask) as u128))
        .message(1, 1, move |v, _, _| {
            let bit = (v.row(&s, 1) & 1) as usize ^ (v.x1.expect("player 1 sees x1") & 1);
            Bits::truncate(1, bit as u128)
        })
        .output(move |v, tau, _| {
            let e = edge_zero(m, v.x1.expect("last player sees x1"));
            Answer::for_edge(e, tau.slice(0, n0).value() as u64)
        })
        .build()
}
