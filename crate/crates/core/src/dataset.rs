//! Loader for released payment datasets: one row per payment address with
//! a dataset tag.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use crate::chain::{Chain, PriceTable, Provenance, Usd};
use crate::error::{Error, Result};

const ADDRESS_COLUMNS: [&str; 3] = ["address", "addr", "payment_address"];
const TAG_COLUMNS: [&str; 5] = ["provenance", "dataset", "source", "tag", "set"];
const FAMILY_COLUMNS: [&str; 2] = ["family", "ransomware_family"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetRow {
    pub address: String,
    pub family: Option<String>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PublishedDataset {
    /// Unique addresses in file order.
    pub rows: Vec<DatasetRow>,
    /// Repeated rows for an address already seen, with either tag.
    pub duplicates: usize,
    /// Addresses listed under more than one tag; the first tag is kept.
    pub conflicting: BTreeSet<String>,
}

/// Maps the tag spellings seen in released files onto a provenance.
pub fn parse_tag(raw: &str) -> Option<Provenance> {
    let t: String = raw
        .trim()
        .to_ascii_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect();
    match t.as_str() {
        "ransomwhere" | "seed" | "seeds" => Some(Provenance::Ransomwhere),
        "origcluster" | "origin" | "origincluster" | "cluster" | "clusterab" | "negotiator" => {
            Some(Provenance::OrigCluster)
        }
        "expanded" | "expandedset" | "expansion" => Some(Provenance::Expanded),
        _ => None,
    }
}

impl PublishedDataset {
    pub fn read_csv<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = r.headers()?.clone();
        let find = |names: &[&str]| {
            headers
                .iter()
                .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
        };
        let missing = |what: &str, names: &[&str]| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            field: what.to_owned(),
            message: format!("no column named any of {names:?}"),
        };
        let ia = find(&ADDRESS_COLUMNS).ok_or_else(|| missing("address", &ADDRESS_COLUMNS))?;
        let it = find(&TAG_COLUMNS).ok_or_else(|| missing("provenance", &TAG_COLUMNS))?;
        let ifam = find(&FAMILY_COLUMNS);
        let mut out = PublishedDataset::default();
        let mut seen: BTreeMap<String, Provenance> = BTreeMap::new();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let address = row.get(ia).unwrap_or("").trim();
            if address.is_empty() {
                return Err(Error::parse(path, line, "address", "empty address"));
            }
            let raw = row.get(it).unwrap_or("");
            let provenance =
                parse_tag(raw).ok_or_else(|| Error::parse(path, line, "provenance", format!("unknown dataset tag {raw:?}")))?;
            if let Some(prev) = seen.get(address) {
                out.duplicates += 1;
                if *prev != provenance {
                    out.conflicting.insert(address.to_owned());
                }
                continue;
            }
            seen.insert(address.to_owned(), provenance);
            let family = ifam
                .and_then(|k| row.get(k))
                .map(str::trim)
                .filter(|f| !f.is_empty())
                .map(str::to_owned);
            out.rows.push(DatasetRow {
                address: address.to_owned(),
                family,
                provenance,
            });
        }
        Ok(out)
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, path)
    }

    /// Unique addresses per tag, in tag order.
    pub fn counts(&self) -> BTreeMap<Provenance, usize> {
        let mut out: BTreeMap<Provenance, usize> = Provenance::ALL.into_iter().map(|p| (p, 0)).collect();
        for r in &self.rows {
            *out.entry(r.provenance).or_insert(0) += 1;
        }
        out
    }

    /// Received USD per tag over the given chain. Addresses absent from the
    /// chain contribute nothing and are counted in the second value.
    pub fn usd_totals(&self, chain: &Chain, prices: &PriceTable) -> Result<(BTreeMap<Provenance, Usd>, usize)> {
        let mut out: BTreeMap<Provenance, Usd> = Provenance::ALL.into_iter().map(|p| (p, Usd::ZERO)).collect();
        let mut absent = 0;
        for r in &self.rows {
            if chain.address_id(&r.address).is_none() {
                absent += 1;
                continue;
            }
            let t = chain.address_totals(&r.address, Some(prices))?;
            let e = out.entry(r.provenance).or_insert(Usd::ZERO);
            *e += t.received_usd;
        }
        Ok((out, absent))
    }
}
