//! Random chain fixtures shared by unit tests.

use crate::chain::{OutPoint, RawInput, RawOutput, RawTransaction, Txid};
pub use crate::synth::random_chain;

pub fn ext(addr: &str, value: u64) -> RawInput {
    RawInput::External {
        address: addr.into(),
        value,
    }
}

pub fn spend(tag: &str, vout: u32) -> RawInput {
    RawInput::Spend {
        prevout: OutPoint {
            txid: Txid::from_tag(tag),
            vout,
        },
        address: None,
        value: None,
    }
}

pub fn tx(tag: &str, ts: i64, inputs: Vec<RawInput>, outputs: &[(&str, u64)]) -> RawTransaction {
    RawTransaction {
        txid: Txid::from_tag(tag),
        timestamp: ts,
        height: ts as u64,
        inputs,
        outputs: outputs
            .iter()
            .map(|(a, v)| RawOutput {
                address: a.to_string(),
                value: *v,
            })
            .collect(),
    }
}
