//! In-memory UTXO transaction graph.
//!
//! A [`Chain`] is built once from a flat-file extract and is immutable
//! afterwards. Transactions are stored in canonical order
//! (height, timestamp, txid) so that every index, cluster id and export is
//! independent of the row order of the input file. Addresses are interned
//! in order of first appearance along that canonical order.

mod ingest;
mod labels;
mod price;
mod seeds;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use ingest::{ingest_chain, read_chain_csv, read_chain_jsonl, write_chain_jsonl, ChainFormat};
pub use labels::{Category, LabelIndex, LabelRecord, LabelSet};
pub use price::{usd_value, PriceTable, Usd};
pub(crate) use price::column;
pub use seeds::{Provenance, Seed, SeedSet, ANCHOR_CLUSTER_A, ANCHOR_CLUSTER_B};

pub const SATS_PER_BTC: u64 = 100_000_000;

/// 32-byte transaction id, displayed as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Txid(pub [u8; 32]);

impl Txid {
    /// Deterministic id derived from an arbitrary tag. Used by the generator
    /// and by hand-built fixtures.
    pub fn from_tag(tag: &str) -> Self {
        let digest = Sha256::digest(tag.as_bytes());
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        Txid(bytes)
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({})", self)
    }
}

impl FromStr for Txid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.len() != 64 {
            return Err(format!("expected 64 hex characters, got {}", s.len()));
        }
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| e.to_string())?;
        Ok(Txid(bytes))
    }
}

/// Dense index of an address inside a [`Chain`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddressId(pub u32);

impl AddressId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Position of a transaction in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxIndex(pub u32);

impl TxIndex {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An output identified by its transaction's canonical index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutputRef {
    pub tx: TxIndex,
    pub vout: u32,
}

/// An output identified by txid, as written in input files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputSource {
    /// Spends an output that is part of the ingested set.
    Resolved(OutputRef),
    /// Funds enter from outside the extract; value and address come from the row.
    External,
    /// References an outpoint that is not in the extract.
    Dangling(OutPoint),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxInput {
    pub source: InputSource,
    pub address: Option<AddressId>,
    /// Satoshis. Zero for dangling references whose value was not supplied.
    pub value: u64,
}

impl TxInput {
    pub fn is_resolved(&self) -> bool {
        matches!(self.source, InputSource::Resolved(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxOutput {
    pub address: AddressId,
    pub value: u64,
    pub spent_by: Option<TxIndex>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub txid: Txid,
    pub timestamp: i64,
    pub height: u64,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
}

impl Transaction {
    pub fn input_value(&self) -> u64 {
        self.inputs.iter().map(|i| i.value).sum()
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    /// Fee, when every input value is known.
    pub fn fee(&self) -> Option<u64> {
        if self
            .inputs
            .iter()
            .any(|i| matches!(i.source, InputSource::Dangling(_)))
        {
            return None;
        }
        self.input_value().checked_sub(self.output_value())
    }

    pub fn date(&self) -> NaiveDate {
        utc_date(self.timestamp)
    }
}

pub fn utc_date(timestamp: i64) -> NaiveDate {
    DateTime::from_timestamp(timestamp, 0)
        .map(|dt| dt.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

/// Transaction as read from a file, before indexing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTransaction {
    pub txid: Txid,
    pub timestamp: i64,
    pub height: u64,
    pub inputs: Vec<RawInput>,
    pub outputs: Vec<RawOutput>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawInput {
    Spend {
        prevout: OutPoint,
        /// Only consulted when the prevout is not part of the extract.
        address: Option<String>,
        value: Option<u64>,
    },
    External {
        address: String,
        value: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawOutput {
    pub address: String,
    pub value: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub transactions: usize,
    pub addresses: usize,
    pub external_inputs: usize,
    pub dangling_inputs: usize,
}

/// Receipt and activity summary for one address.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddressTotals {
    pub known: bool,
    pub received_sat: u64,
    pub received_usd: Usd,
    pub first_seen: Option<i64>,
    pub last_seen: Option<i64>,
    pub incoming_tx_count: usize,
}

impl AddressTotals {
    fn unknown() -> Self {
        AddressTotals {
            known: false,
            received_sat: 0,
            received_usd: Usd::ZERO,
            first_seen: None,
            last_seen: None,
            incoming_tx_count: 0,
        }
    }

    pub fn received_btc(&self) -> f64 {
        self.received_sat as f64 / SATS_PER_BTC as f64
    }
}

/// Indexed, immutable transaction graph.
#[derive(Clone, Debug)]
pub struct Chain {
    txs: Vec<Transaction>,
    by_txid: HashMap<Txid, TxIndex>,
    addresses: Vec<String>,
    by_address: HashMap<String, AddressId>,
    receipts: Vec<Vec<OutputRef>>,
    spends: Vec<Vec<TxIndex>>,
    report: IngestReport,
}

impl Chain {
    pub fn empty() -> Self {
        Chain::from_raw(Vec::new()).expect("empty chain is valid")
    }

    pub fn from_raw(mut raw: Vec<RawTransaction>) -> Result<Self> {
        raw.sort_by(|a, b| {
            (a.height, a.timestamp, a.txid).cmp(&(b.height, b.timestamp, b.txid))
        });
        let mut by_txid = HashMap::with_capacity(raw.len());
        for (i, tx) in raw.iter().enumerate() {
            if by_txid.insert(tx.txid, TxIndex(i as u32)).is_some() {
                return Err(Error::DuplicateTxid(tx.txid.to_string()));
            }
        }

        let mut chain = Chain {
            txs: Vec::with_capacity(raw.len()),
            by_txid,
            addresses: Vec::new(),
            by_address: HashMap::new(),
            receipts: Vec::new(),
            spends: Vec::new(),
            report: IngestReport::default(),
        };

        // Addresses first, so ids follow canonical first appearance.
        for tx in &raw {
            for input in &tx.inputs {
                match input {
                    RawInput::External { address, .. } => {
                        chain.intern(address);
                    }
                    RawInput::Spend {
                        prevout,
                        address: Some(address),
                        ..
                    } if !chain.by_txid.contains_key(&prevout.txid) => {
                        chain.intern(address);
                    }
                    RawInput::Spend { .. } => {}
                }
            }
            for output in &tx.outputs {
                chain.intern(&output.address);
            }
        }

        for tx in &raw {
            let outputs = tx
                .outputs
                .iter()
                .map(|o| TxOutput {
                    address: chain.by_address[&o.address],
                    value: o.value,
                    spent_by: None,
                })
                .collect();
            chain.txs.push(Transaction {
                txid: tx.txid,
                timestamp: tx.timestamp,
                height: tx.height,
                inputs: Vec::with_capacity(tx.inputs.len()),
                outputs,
            });
        }

        for (i, tx) in raw.iter().enumerate() {
            let spender = TxIndex(i as u32);
            for input in &tx.inputs {
                let resolved = match input {
                    RawInput::External { address, value } => {
                        chain.report.external_inputs += 1;
                        TxInput {
                            source: InputSource::External,
                            address: Some(chain.by_address[address]),
                            value: *value,
                        }
                    }
                    RawInput::Spend {
                        prevout,
                        address,
                        value,
                    } => match chain.by_txid.get(&prevout.txid).copied() {
                        Some(funding) => chain.link(spender, funding, prevout.vout)?,
                        None => {
                            chain.report.dangling_inputs += 1;
                            TxInput {
                                source: InputSource::Dangling(*prevout),
                                address: address.as_ref().map(|a| chain.by_address[a]),
                                value: value.unwrap_or(0),
                            }
                        }
                    },
                };
                chain.txs[i].inputs.push(resolved);
            }
        }

        for tx in &chain.txs {
            let has_dangling = tx
                .inputs
                .iter()
                .any(|i| matches!(i.source, InputSource::Dangling(_)));
            if !has_dangling && tx.input_value() < tx.output_value() {
                return Err(Error::ValueCreation(tx.txid.to_string()));
            }
        }

        for (i, tx) in chain.txs.iter().enumerate() {
            let idx = TxIndex(i as u32);
            for (vout, output) in tx.outputs.iter().enumerate() {
                chain.receipts[output.address.index()].push(OutputRef {
                    tx: idx,
                    vout: vout as u32,
                });
            }
            for input in &tx.inputs {
                if let Some(addr) = input.address {
                    let spends = &mut chain.spends[addr.index()];
                    if spends.last() != Some(&idx) {
                        spends.push(idx);
                    }
                }
            }
        }

        chain.report.transactions = chain.txs.len();
        chain.report.addresses = chain.addresses.len();
        Ok(chain)
    }

    fn intern(&mut self, address: &str) -> AddressId {
        if let Some(id) = self.by_address.get(address) {
            return *id;
        }
        let id = AddressId(self.addresses.len() as u32);
        self.addresses.push(address.to_owned());
        self.by_address.insert(address.to_owned(), id);
        self.receipts.push(Vec::new());
        self.spends.push(Vec::new());
        id
    }

    fn link(&mut self, spender: TxIndex, funding: TxIndex, vout: u32) -> Result<TxInput> {
        let funding_tx = &mut self.txs[funding.index()];
        let funding_txid = funding_tx.txid;
        let Some(output) = funding_tx.outputs.get_mut(vout as usize) else {
            return Err(Error::MissingOutput {
                spender: self.txs[spender.index()].txid.to_string(),
                txid: funding_txid.to_string(),
                vout,
            });
        };
        if let Some(first) = output.spent_by {
            let first = self.txs[first.index()].txid.to_string();
            return Err(Error::DoubleSpend {
                txid: funding_txid.to_string(),
                vout,
                first,
                second: self.txs[spender.index()].txid.to_string(),
            });
        }
        output.spent_by = Some(spender);
        Ok(TxInput {
            source: InputSource::Resolved(OutputRef { tx: funding, vout }),
            address: Some(output.address),
            value: output.value,
        })
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn tx(&self, idx: TxIndex) -> &Transaction {
        &self.txs[idx.index()]
    }

    pub fn tx_index(&self, txid: &Txid) -> Option<TxIndex> {
        self.by_txid.get(txid).copied()
    }

    pub fn output(&self, out: OutputRef) -> &TxOutput {
        &self.txs[out.tx.index()].outputs[out.vout as usize]
    }

    pub fn address_count(&self) -> usize {
        self.addresses.len()
    }

    pub fn address(&self, id: AddressId) -> &str {
        &self.addresses[id.index()]
    }

    pub fn address_id(&self, address: &str) -> Option<AddressId> {
        self.by_address.get(address).copied()
    }

    pub fn require_address(&self, address: &str) -> Result<AddressId> {
        self.address_id(address)
            .ok_or_else(|| Error::UnknownAddress(address.to_owned()))
    }

    pub fn address_ids(&self) -> impl Iterator<Item = AddressId> {
        (0..self.addresses.len() as u32).map(AddressId)
    }

    /// Outputs paying `addr`, in canonical order.
    pub fn receipts(&self, addr: AddressId) -> &[OutputRef] {
        &self.receipts[addr.index()]
    }

    /// Transactions that spend from `addr`, in canonical order, deduplicated.
    pub fn spends(&self, addr: AddressId) -> &[TxIndex] {
        &self.spends[addr.index()]
    }

    /// Number of distinct transactions paying `addr`.
    pub fn incoming_tx_count(&self, addr: AddressId) -> usize {
        let receipts = self.receipts(addr);
        let mut count = 0;
        let mut last = None;
        for r in receipts {
            if last != Some(r.tx) {
                count += 1;
                last = Some(r.tx);
            }
        }
        count
    }

    pub fn received_sat(&self, addr: AddressId) -> u64 {
        self.receipts(addr)
            .iter()
            .map(|r| self.output(*r).value)
            .sum()
    }

    /// Satoshis `addr` contributes as inputs to `tx`.
    pub fn contributed_sat(&self, addr: AddressId, tx: TxIndex) -> u64 {
        self.tx(tx)
            .inputs
            .iter()
            .filter(|i| i.address == Some(addr))
            .map(|i| i.value)
            .sum()
    }

    /// Total satoshis `addr` has spent across all transactions.
    pub fn sent_sat(&self, addr: AddressId) -> u64 {
        self.spends(addr)
            .iter()
            .map(|t| self.contributed_sat(addr, *t))
            .sum()
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    /// Receipt totals for `address`. USD is summed per receiving transaction
    /// at that transaction's date; an unknown address yields zeroed totals
    /// flagged `known = false`.
    pub fn address_totals(&self, address: &str, prices: Option<&PriceTable>) -> Result<AddressTotals> {
        let Some(id) = self.address_id(address) else {
            return Ok(AddressTotals::unknown());
        };
        let mut totals = AddressTotals {
            known: true,
            ..AddressTotals::unknown()
        };
        let mut per_tx: Vec<(TxIndex, u64)> = Vec::new();
        for r in self.receipts(id) {
            let value = self.output(*r).value;
            match per_tx.last_mut() {
                Some((tx, v)) if *tx == r.tx => *v += value,
                _ => per_tx.push((r.tx, value)),
            }
        }
        for (tx, value) in per_tx {
            let ts = self.tx(tx).timestamp;
            totals.received_sat += value;
            totals.incoming_tx_count += 1;
            totals.first_seen = Some(totals.first_seen.map_or(ts, |f: i64| f.min(ts)));
            totals.last_seen = Some(totals.last_seen.map_or(ts, |l: i64| l.max(ts)));
            if let Some(prices) = prices {
                totals.received_usd += usd_value(value, utc_date(ts), prices)?;
            }
        }
        Ok(totals)
    }

    /// Convert the graph back to file-level rows, in canonical order.
    pub fn to_raw(&self) -> Vec<RawTransaction> {
        self.txs
            .iter()
            .map(|tx| RawTransaction {
                txid: tx.txid,
                timestamp: tx.timestamp,
                height: tx.height,
                inputs: tx
                    .inputs
                    .iter()
                    .map(|i| match &i.source {
                        InputSource::Resolved(r) => RawInput::Spend {
                            prevout: OutPoint {
                                txid: self.tx(r.tx).txid,
                                vout: r.vout,
                            },
                            address: None,
                            value: None,
                        },
                        InputSource::External => RawInput::External {
                            address: self.address(i.address.expect("external input has address")).to_owned(),
                            value: i.value,
                        },
                        InputSource::Dangling(p) => RawInput::Spend {
                            prevout: *p,
                            address: i.address.map(|a| self.address(a).to_owned()),
                            value: Some(i.value),
                        },
                    })
                    .collect(),
                outputs: tx
                    .outputs
                    .iter()
                    .map(|o| RawOutput {
                        address: self.address(o.address).to_owned(),
                        value: o.value,
                    })
                    .collect(),
            })
            .collect()
    }
}
