//! JSON protocol files, schema `hmlab-protocol/1`.
//!
//! ```text
//! {
//!   "schema": "hmlab-protocol/1",
//!   "name": "send-all",
//!   "gadget": {"p": 1, "degree": 4, "modulus": 19, "r": 1, "n0": 4},
//!   "players": 2,
//!   "message_lengths": [4, 0],
//!   "randomness": ["1/1"],
//!   "messages": [{"-:a:0:0:0": "5", ...}, {}],
//!   "output": {"1:0:4:5:0": [0, 3, 1], ...}
//! }
//! ```
//!
//! Table keys are `x1:view:prior_len:prior:rand` with `view` and `prior` in
//! hex and `x1` written `-` when the entry holds for every matching index.
//! Message values are hex; answers are `[l, r, b]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_lengths, check_randomness, Bits, ProtocolError, TableProtocol, ViewKey};
use crate::gadget::GadgetSpec;
use crate::matching::Answer;
use crate::ratio;

pub const PROTOCOL_SCHEMA: &str = "hmlab-protocol/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolFile {
    schema: String,
    name: String,
    gadget: GadgetSpec,
    players: usize,
    message_lengths: Vec<u32>,
    randomness: Vec<String>,
    messages: Vec<BTreeMap<String, String>>,
    output: BTreeMap<String, (usize, usize, u8)>,
}

pub(super) fn key_string(k: &ViewKey) -> String {
    let x1 = k.x1.map_or_else(|| "-".to_string(), |v| v.to_string());
    format!("{x1}:{:x}:{}:{}:{}", k.view, k.prior.len(), k.prior.to_hex(), k.rand)
}

fn parse_key(s: &str) -> Result<ViewKey, ProtocolError> {
    let bad = || ProtocolError::Format(format!("bad table key `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let [x1, view, len, prior, rand] = parts[..] else {
        return Err(bad());
    };
    let x1 = match x1 {
        "-" => None,
        v => Some(v.parse().map_err(|_| bad())?),
    };
    Ok(ViewKey {
        x1,
        view: u64::from_str_radix(view, 16).map_err(|_| bad())?,
        prior: Bits::from_hex(len.parse().map_err(|_| bad())?, prior)?,
        rand: rand.parse().map_err(|_| bad())?,
    })
}

impl TableProtocol {
    pub fn to_json(&self) -> String {
        let file = ProtocolFile {
            schema: PROTOCOL_SCHEMA.into(),
            name: self.name.clone(),
            gadget: self.spec,
            players: self.players(),
            message_lengths: self.message_lengths.clone(),
            randomness: self.randomness.iter().map(ratio::format).collect(),
            messages: self
                .messages
                .iter()
                .map(|t| t.iter().map(|(k, v)| (key_string(k), v.to_hex())).collect())
                .collect(),
            output: self
                .output
                .iter()
                .map(|(k, a)| (key_string(k), (a.l, a.r, a.b as u8)))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("protocol serializes")
    }

    /// Parses and validates a protocol file, including that every reachable
    /// run is covered by the tables.
    pub fn from_json(text: &str) -> Result<TableProtocol, ProtocolError> {
        let file: ProtocolFile = serde_json::from_str(text).map_err(|e| ProtocolError::Format(e.to_string()))?;
        if file.schema != PROTOCOL_SCHEMA {
            return Err(ProtocolError::Format(format!(
                "schema `{}`, expected `{PROTOCOL_SCHEMA}`",
                file.schema
            )));
        }
        let spec = file.gadget;
        if file.players != spec.players() {
            return Err(ProtocolError::Format(format!(
                "{} players declared, gadget has {}",
                file.players,
                spec.players()
            )));
        }
        check_lengths(&spec, &file.message_lengths)?;
        if file.messages.len() != file.players {
            return Err(ProtocolError::Format("one message table per player expected".into()));
        }
        let randomness = file
            .randomness
            .iter()
            .map(|s| ratio::parse(s).ok_or_else(|| ProtocolError::Format(format!("bad probability `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        check_randomness(&randomness)?;
        let m = spec.m();
        let domain = spec.domain_size();
        let check_key = |k: &ViewKey, player: usize| -> Result<(), ProtocolError> {
            let hidden = if player == 0 { 0 } else { spec.row_mask(player - 1) };
            let ok = (k.view as u128) < domain
                && k.view & hidden == 0
                && k.rand < randomness.len()
                && k.x1.is_none_or(|x1| x1 < m)
                && (player > 0 || k.x1.is_none());
            if ok {
                Ok(())
            } else {
                Err(ProtocolError::Format(format!("key {} invalid for player {player}", key_string(k))))
            }
        };
        let mut messages = Vec::with_capacity(file.players);
        for (player, table) in file.messages.iter().enumerate() {
            let len = file.message_lengths[player];
            let mut parsed = BTreeMap::new();
            for (k, v) in table {
                let key = parse_key(k)?;
                check_key(&key, player)?;
                parsed.insert(key, Bits::from_hex(len, v)?);
            }
            messages.push(parsed);
        }
        let last = file.players - 1;
        let mut output = BTreeMap::new();
        for (k, &(l, r, b)) in &file.output {
            let key = parse_key(k)?;
            check_key(&key, last)?;
            if l >= m || r < m || r >= 2 * m || b > 1 {
                return Err(ProtocolError::Format(format!("answer [{l}, {r}, {b}] out of range")));
            }
            output.insert(key, Answer::new(l, r, b == 1));
        }
        let proto = TableProtocol {
            name: file.name,
            spec,
            message_lengths: file.message_lengths,
            messages,
            output,
            randomness,
        };
        proto.check_coverage()?;
        Ok(proto)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{distributional_error, helper_protocol, random_guess_protocol, simplify};

    #[test]
    fn round_trip_preserves_protocol() {
        let spec = GadgetSpec::with_degree(2, 4, 1, 4).unwrap();
        for p in [helper_protocol(&spec).unwrap(), random_guess_protocol(&spec).unwrap()] {
            let q = simplify(&p).unwrap();
            for proto in [p, q] {
                let text = proto.to_json();
                assert!(text.contains("\"schema\": \"hmlab-protocol/1\""));
                let back = TableProtocol::from_json(&text).unwrap();
                assert_eq!(back, proto);
                assert_eq!(back.to_json(), text);
                assert_eq!(distributional_error(&back).unwrap(), distributional_error(&proto).unwrap());
            }
        }
    }

    #[test]
    fn rejects_bad_files() {
        let spec = GadgetSpec::with_degree(1, 4, 1, 4).unwrap();
        let text = random_guess_protocol(&spec).unwrap().to_json();
        let wrong_schema = text.replace("hmlab-protocol/1", "hmlab-protocol/2");
        assert!(TableProtocol::from_json(&wrong_schema).is_err());
        let bad_rand = text.replace("\"1/2\"", "\"1/3\"");
        assert!(matches!(
            TableProtocol::from_json(&bad_rand),
            Err(ProtocolError::BadRandomness(_))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let out = v["output"].as_object_mut().unwrap();
        let first = out.keys().next().unwrap().clone();
        out.remove(&first);
        assert!(matches!(
            TableProtocol::from_json(&v.to_string()),
            Err(ProtocolError::MissingEntry { .. })
        ));
        assert!(parse_key("1:2:3").is_err());
        assert!(TableProtocol::from_json("{}").is_err());
    }

    #[test]
    fn key_format() {
        let k = ViewKey {
            x1: None,
            view: 0xab,
            prior: Bits::new(5, 0x13).unwrap(),
            rand: 2,
        };
        assert_eq!(key_string(&k), "-:ab:5:13:2");
        assert_eq!(parse_key("-:ab:5:13:2").unwrap(), k);
        assert_eq!(parse_key("3:0:0:0:0").unwrap().x1, Some(3));
    }
}
