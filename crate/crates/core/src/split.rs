//! Operator/affiliate split detection.
//!
//! From a payment address the detector follows the largest output for up to
//! `max_hops` transactions and reports the first two-output transaction
//! whose larger share sits on the integer-percent grid.

use std::collections::BTreeMap;
use std::io::Write;

use crate::chain::{AddressId, Chain, TxIndex, Txid};
use crate::detect::PaymentRecord;
use crate::error::{Error, Result};
use crate::stats::{summary, Summary};

pub const DEFAULT_TOLERANCE: f64 = 0.0025;
pub const GRID_MIN_PCT: u32 = 50;
pub const GRID_MAX_PCT: u32 = 95;
pub const UNLABELED_FAMILY: &str = "unlabeled";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitParams {
    pub max_hops: u8,
    /// Absolute distance allowed between the observed share and a grid point.
    pub tolerance: f64,
    pub grid_min_pct: u32,
    pub grid_max_pct: u32,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            max_hops: 3,
            tolerance: DEFAULT_TOLERANCE,
            grid_min_pct: GRID_MIN_PCT,
            grid_max_pct: GRID_MAX_PCT,
        }
    }
}

impl SplitParams {
    pub fn with_tolerance(tolerance: f64) -> Self {
        SplitParams {
            tolerance,
            ..Default::default()
        }
    }

    /// Grid percentage matched by `share`, if any.
    pub fn match_grid(&self, share: f64) -> Option<u32> {
        let nearest = (share * 100.0).round();
        if nearest < self.grid_min_pct as f64 || nearest > self.grid_max_pct as f64 {
            // A share can still be within tolerance of an edge grid point.
            let edge = if nearest < self.grid_min_pct as f64 {
                self.grid_min_pct
            } else {
                self.grid_max_pct
            };
            return ((share - edge as f64 / 100.0).abs() <= self.tolerance).then_some(edge);
        }
        ((share - nearest / 100.0).abs() <= self.tolerance).then_some(nearest as u32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitFinding {
    pub payment: AddressId,
    pub split_tx: Txid,
    pub hop: u8,
    /// Larger output's share of the output sum.
    pub affiliate_share: f64,
    pub operator_share: f64,
    pub matched_grid_pct: u32,
}

pub fn detect_split(chain: &Chain, addr: AddressId, params: SplitParams) -> Option<SplitFinding> {
    let mut current = first_spend(chain, addr)?;
    for hop in 1..=params.max_hops {
        let tx = chain.tx(current);
        let out_sum = tx.output_value();
        if tx.outputs.len() == 2 && out_sum > 0 {
            let larger = tx.outputs[0].value.max(tx.outputs[1].value);
            let share = larger as f64 / out_sum as f64;
            if let Some(pct) = params.match_grid(share) {
                return Some(SplitFinding {
                    payment: addr,
                    split_tx: tx.txid,
                    hop,
                    affiliate_share: share,
                    operator_share: 1.0 - share,
                    matched_grid_pct: pct,
                });
            }
        }
        let majority = tx
            .outputs
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.value
                    .cmp(&b.value)
                    .then_with(|| chain.address(b.address).cmp(chain.address(a.address)))
            })
            .map(|(_, o)| o)?;
        current = majority.spent_by?;
    }
    None
}

pub fn detect_split_of(chain: &Chain, address: &str, params: SplitParams) -> Result<Option<SplitFinding>> {
    Ok(detect_split(chain, chain.require_address(address)?, params))
}

/// The transaction spending the most of `addr`'s funds; ties go to the
/// earliest in canonical order.
fn first_spend(chain: &Chain, addr: AddressId) -> Option<TxIndex> {
    chain
        .spends(addr)
        .iter()
        .map(|t| (chain.contributed_sat(addr, *t), *t))
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, t)| t)
}

/// `address,split_tx,hop,affiliate_share,grid_pct`
pub fn write_splits_csv<W: Write>(chain: &Chain, findings: &[SplitFinding], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["address", "split_tx", "hop", "affiliate_share", "grid_pct"])?;
    for f in findings {
        w.write_record([
            chain.address(f.payment),
            &f.split_tx.to_string(),
            &f.hop.to_string(),
            &format!("{:.6}", f.affiliate_share),
            &f.matched_grid_pct.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<splits csv>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilySplitStats {
    pub family: String,
    pub payments: usize,
    pub splitting: usize,
    pub fraction: f64,
    /// Distribution of affiliate shares among splitting payments.
    pub shares: Option<Summary>,
}

/// Per-family splitting rate and affiliate-share distribution, sorted by
/// family name. Payments without a family fall under `unlabeled`.
pub fn split_rate_by_family(
    chain: &Chain,
    payments: &[PaymentRecord],
    params: SplitParams,
) -> Vec<FamilySplitStats> {
    let mut groups: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
    for p in payments {
        let family = p.family.as_deref().unwrap_or(UNLABELED_FAMILY);
        let entry = groups.entry(family).or_default();
        entry.0 += 1;
        if let Some(addr) = chain.address_id(&p.address) {
            if let Some(f) = detect_split(chain, addr, params) {
                entry.1.push(f.affiliate_share);
            }
        }
    }
    groups
        .into_iter()
        .map(|(family, (n, shares))| FamilySplitStats {
            family: family.to_owned(),
            payments: n,
            splitting: shares.len(),
            fraction: shares.len() as f64 / n as f64,
            shares: summary(&shares),
        })
        .collect()
}

/// `family,payments,splitting,fraction,share_min,share_q1,share_median,share_q3,share_max`
pub fn write_split_rates_csv<W: Write>(rows: &[FamilySplitStats], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "family",
        "payments",
        "splitting",
        "fraction",
        "share_min",
        "share_q1",
        "share_median",
        "share_q3",
        "share_max",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.family.clone(),
            r.payments.to_string(),
            r.splitting.to_string(),
            format!("{:.6}", r.fraction),
        ];
        match &r.shares {
            Some(s) => rec.extend([s.min, s.q1, s.median, s.q3, s.max].map(|v| format!("{v:.6}"))),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io("<split rates csv>", e))?;
    Ok(())
}
