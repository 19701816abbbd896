//! Validation of detected payments against an independent label set.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::chain::{Category, Chain, LabelIndex, LabelSet, Provenance, Usd};
use crate::detect::PaymentRecord;
use crate::error::{Error, Result};
use crate::flow::{exposure, ExposureParams};
use crate::stats::ecdf;

/// Share above which an address counts as sending "all" its funds.
pub const ALL_THRESHOLD: f64 = 0.99;
/// Low-risk share above which an address is a suspected false positive.
pub const FP_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    SuspectedTpRansomware,
    SuspectedTpIllicit,
    SuspectedFpLowRisk,
    Uninformative,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::SuspectedTpRansomware => "suspected-TP-ransomware",
            Outcome::SuspectedTpIllicit => "suspected-TP-illicit",
            Outcome::SuspectedFpLowRisk => "suspected-FP-lowrisk",
            Outcome::Uninformative => "uninformative-unlabeled",
        }
    }

    /// Illicit first, then low-risk majority, else uninformative.
    pub fn classify(pct_ransomware: f64, pct_highrisk: f64, pct_lowrisk: f64) -> Outcome {
        if pct_ransomware > 0.0 {
            Outcome::SuspectedTpRansomware
        } else if pct_highrisk > 0.0 {
            Outcome::SuspectedTpIllicit
        } else if pct_lowrisk > FP_THRESHOLD {
            Outcome::SuspectedFpLowRisk
        } else {
            Outcome::Uninformative
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationOutcome {
    pub address: String,
    pub provenance: Provenance,
    pub total_usd: Option<Usd>,
    pub outcome: Outcome,
    pub pct_to_ransomware: f64,
    /// Illicit destinations other than ransomware.
    pub pct_to_highrisk: f64,
    pub pct_to_lowrisk: f64,
}

impl ValidationOutcome {
    pub fn pct_to_illicit(&self) -> f64 {
        (self.pct_to_ransomware + self.pct_to_highrisk).min(1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SummaryRow {
    /// Provenance tag, or `all`.
    pub dataset: String,
    pub addresses: usize,
    pub all_ransomware: usize,
    pub some_ransomware: usize,
    pub all_illicit: usize,
    pub some_illicit: usize,
    pub suspected_fp: usize,
    pub suspected_fp_usd: Usd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub outcomes: Vec<ValidationOutcome>,
    pub summary: Vec<SummaryRow>,
}

/// Fails when the two label sets share a source tag.
pub fn check_label_sources(detector: &LabelSet, independent: &LabelSet) -> Result<()> {
    let ours = detector.sources();
    match independent.sources().into_iter().find(|s| ours.contains(s)) {
        Some(s) => Err(Error::LabelSourceCollision(s.to_owned())),
        None => Ok(()),
    }
}

/// Classifies each payment by where its funds go within the exposure
/// horizon, using only the independent labels.
pub fn validate(
    payments: &[PaymentRecord],
    chain: &Chain,
    detector_labels: &LabelSet,
    independent: &LabelSet,
    params: ExposureParams,
) -> Result<ValidationReport> {
    check_label_sources(detector_labels, independent)?;
    let index = LabelIndex::new(chain, independent);
    let mut outcomes: Vec<ValidationOutcome> = payments
        .par_iter()
        .map(|p| {
            let mut pct = [0.0f64; 3];
            if let Some(a) = chain.address_id(&p.address) {
                for (d, w) in &exposure(chain, a, params).weights {
                    let c = index.category(*d);
                    let slot = if c == Category::Ransomware {
                        0
                    } else if c.is_illicit() {
                        1
                    } else if c.is_low_risk() {
                        2
                    } else {
                        continue;
                    };
                    pct[slot] += w;
                }
            }
            let [r, h, l] = pct.map(|x| x.min(1.0));
            ValidationOutcome {
                address: p.address.clone(),
                provenance: p.provenance,
                total_usd: p.total_usd,
                outcome: Outcome::classify(r, h, l),
                pct_to_ransomware: r,
                pct_to_highrisk: h,
                pct_to_lowrisk: l,
            }
        })
        .collect();
    outcomes.sort_by(|a, b| a.address.cmp(&b.address).then(a.provenance.cmp(&b.provenance)));
    let summary = summarize(&outcomes);
    Ok(ValidationReport { outcomes, summary })
}

/// One row per provenance present, in tag order, then an `all` row.
pub fn summarize(outcomes: &[ValidationOutcome]) -> Vec<SummaryRow> {
    let mut rows: BTreeMap<Provenance, SummaryRow> = BTreeMap::new();
    let mut all = SummaryRow {
        dataset: "all".into(),
        ..Default::default()
    };
    for o in outcomes {
        let row = rows.entry(o.provenance).or_insert_with(|| SummaryRow {
            dataset: o.provenance.as_str().into(),
            ..Default::default()
        });
        for r in [&mut *row, &mut all] {
            r.addresses += 1;
            r.all_ransomware += (o.pct_to_ransomware > ALL_THRESHOLD) as usize;
            r.some_ransomware += (o.pct_to_ransomware > 0.0) as usize;
            r.all_illicit += (o.pct_to_illicit() > ALL_THRESHOLD) as usize;
            r.some_illicit += (o.pct_to_illicit() > 0.0) as usize;
            if o.outcome == Outcome::SuspectedFpLowRisk {
                r.suspected_fp += 1;
                r.suspected_fp_usd += o.total_usd.unwrap_or(Usd::ZERO);
            }
        }
    }
    let mut out: Vec<SummaryRow> = rows.into_values().collect();
    out.push(all);
    out
}

pub fn write_validation_csv<W: Write>(outcomes: &[ValidationOutcome], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "address",
        "provenance",
        "outcome",
        "pct_to_ransomware",
        "pct_to_highrisk",
        "pct_to_lowrisk",
    ])?;
    for o in outcomes {
        w.write_record([
            o.address.as_str(),
            o.provenance.as_str(),
            o.outcome.as_str(),
            &format!("{:.6}", o.pct_to_ransomware),
            &format!("{:.6}", o.pct_to_highrisk),
            &format!("{:.6}", o.pct_to_lowrisk),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<validation csv>", e))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    fn pct(n: usize, d: usize) -> String {
        format!("{} ({:.0}%)", n, 100.0 * n as f64 / d.max(1) as f64)
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "dataset",
        "num_addresses",
        "all_ransomware",
        "some_ransomware",
        "all_illicit",
        "some_illicit",
        "suspected_fp",
        "suspected_fp_usd",
    ])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.addresses.to_string(),
            pct(r.all_ransomware, r.addresses),
            pct(r.some_ransomware, r.addresses),
            pct(r.all_illicit, r.addresses),
            pct(r.some_illicit, r.addresses),
            r.suspected_fp.to_string(),
            r.suspected_fp_usd.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<validation summary csv>", e))?;
    Ok(())
}

/// Ransomware, high-risk and low-risk share ECDFs, in that order.
pub fn labeled_value_ecdf(outcomes: &[ValidationOutcome]) -> [Vec<(f64, f64)>; 3] {
    let col = |f: fn(&ValidationOutcome) -> f64| ecdf(&outcomes.iter().map(f).collect::<Vec<_>>());
    [
        col(|o| o.pct_to_ransomware),
        col(|o| o.pct_to_highrisk),
        col(|o| o.pct_to_lowrisk),
    ]
}

pub fn write_ecdf_csv<W: Write>(points: &[(f64, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "F"])?;
    for (x, f) in points {
        w.write_record([format!("{x:.6}"), format!("{f:.6}")])?;
    }
    w.flush().map_err(|e| Error::io("<ecdf csv>", e))?;
    Ok(())
}
