//! Family labeling, time series, destination tallies, family overlap and
//! split-size curves.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::Datelike;
use rayon::prelude::*;

use crate::chain::{utc_date, AddressId, Category, Chain, LabelIndex, PriceTable, Usd};
use crate::cluster::ClusterAssignment;
use crate::detect::PaymentRecord;
use crate::error::{Error, Result};
use crate::flow::{exposure, ruzicka, ExposureParams, ExposureVector};
use crate::split::{SplitFinding, UNLABELED_FAMILY};
use crate::stats::{mean, median};

/// Exposure vectors of every payment present in the chain, keyed by address.
pub fn payment_exposures(
    chain: &Chain,
    payments: &[PaymentRecord],
    params: ExposureParams,
) -> BTreeMap<String, ExposureVector> {
    let ids: Vec<(String, AddressId)> = payments
        .iter()
        .filter_map(|p| chain.address_id(&p.address).map(|a| (p.address.clone(), a)))
        .collect();
    ids.into_par_iter()
        .map(|(s, a)| (s, exposure(chain, a, params)))
        .collect()
}

/// Payment address to family name, or `unlabeled`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FamilyLabeling {
    pub families: BTreeMap<String, String>,
}

impl FamilyLabeling {
    pub fn family(&self, address: &str) -> &str {
        self.families.get(address).map_or(UNLABELED_FAMILY, String::as_str)
    }

    /// Fills in the family of records that have none.
    pub fn apply(&self, records: &mut [PaymentRecord]) {
        for r in records {
            if r.family.is_none() {
                let f = self.family(&r.address);
                if f != UNLABELED_FAMILY {
                    r.family = Some(f.to_owned());
                }
            }
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["address", "family"])?;
        for (a, f) in &self.families {
            w.write_record([a, f])?;
        }
        w.flush().map_err(|e| Error::io("<families csv>", e))?;
        Ok(())
    }
}

/// Labels each payment with the family whose labeled addresses receive the
/// most of its funds within the exposure horizon. Ties go to the larger
/// direct (hop-1) value, then the smaller family name.
pub fn label_families(
    payments: &[PaymentRecord],
    chain: &Chain,
    labels: &LabelIndex,
    params: ExposureParams,
) -> FamilyLabeling {
    let exposures = payment_exposures(chain, payments, params);
    let mut families = BTreeMap::new();
    for p in payments {
        let family = match (exposures.get(&p.address), chain.address_id(&p.address)) {
            (Some(e), Some(a)) => argmax_family(chain, labels, a, e),
            _ => None,
        };
        families.insert(p.address.clone(), family.unwrap_or_else(|| UNLABELED_FAMILY.to_owned()));
    }
    FamilyLabeling { families }
}

fn argmax_family(chain: &Chain, labels: &LabelIndex, addr: AddressId, e: &ExposureVector) -> Option<String> {
    let mut score: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    for (d, w) in &e.weights {
        if let Some(f) = labels.family(*d) {
            score.entry(f).or_default().0 += w;
        }
    }
    for t in chain.spends(addr) {
        let tx = chain.tx(*t);
        let share = chain.contributed_sat(addr, *t) as f64 / tx.input_value().max(1) as f64;
        for o in &tx.outputs {
            if let Some(f) = labels.family(o.address) {
                score.entry(f).or_default().1 += (o.value as f64 * share).round() as u64;
            }
        }
    }
    score
        .into_iter()
        .filter(|(_, (w, _))| *w > 0.0)
        .max_by(|(fa, a), (fb, b)| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then_with(|| fb.cmp(fa))
        })
        .map(|(f, _)| f.to_owned())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucket {
    Month,
    Quarter,
    Year,
}

impl Bucket {
    pub fn label(self, date: chrono::NaiveDate) -> String {
        match self {
            Bucket::Month => format!("{:04}-{:02}", date.year(), date.month()),
            Bucket::Quarter => format!("{:04}-Q{}", date.year(), (date.month() - 1) / 3 + 1),
            Bucket::Year => format!("{:04}", date.year()),
        }
    }
}

impl std::str::FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "month" => Ok(Bucket::Month),
            "quarter" => Ok(Bucket::Quarter),
            "year" => Ok(Bucket::Year),
            _ => Err(format!("unknown bucket {s:?}; expected month, quarter or year")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeBucket {
    pub bucket: String,
    pub total_usd: Usd,
    /// Receiving transactions in the bucket.
    pub count: usize,
}

/// Receipts of every payment, bucketed by transaction date. Each receiving
/// transaction is priced once per address, as in the address totals.
pub fn payments_over_time(
    payments: &[PaymentRecord],
    chain: &Chain,
    prices: &PriceTable,
    bucket: Bucket,
) -> Result<Vec<TimeBucket>> {
    let mut out: BTreeMap<String, (Usd, usize)> = BTreeMap::new();
    for p in payments {
        let Some(a) = chain.address_id(&p.address) else {
            continue;
        };
        let mut per_tx: Vec<(crate::chain::TxIndex, u64)> = Vec::new();
        for r in chain.receipts(a) {
            let value = chain.output(*r).value;
            match per_tx.last_mut() {
                Some((t, v)) if *t == r.tx => *v += value,
                _ => per_tx.push((r.tx, value)),
            }
        }
        for (t, value) in per_tx {
            let date = utc_date(chain.tx(t).timestamp);
            let e = out.entry(bucket.label(date)).or_insert((Usd::ZERO, 0));
            e.0 += crate::chain::usd_value(value, date, prices)?;
            e.1 += 1;
        }
    }
    Ok(out
        .into_iter()
        .map(|(bucket, (total_usd, count))| TimeBucket {
            bucket,
            total_usd,
            count,
        })
        .collect())
}

pub fn write_timeseries_csv<W: Write>(series: &[TimeBucket], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bucket", "total_usd", "count"])?;
    for b in series {
        w.write_record([b.bucket.clone(), b.total_usd.to_string(), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<timeseries csv>", e))?;
    Ok(())
}

pub const MILLION_USD: f64 = 1_000_000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Tendency {
    /// Year of first receipt, or `all` for the whole set.
    pub bucket: String,
    pub count: usize,
    pub mean_usd: f64,
    pub median_usd: f64,
    pub million_share: f64,
}

/// Yearly mean, median and share of payments above one million USD, over
/// per-address USD totals, followed by an `all` row. Records without a USD
/// total are skipped.
pub fn central_tendency(payments: &[PaymentRecord]) -> Vec<Tendency> {
    let mut by_year: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    for p in payments {
        let (Some(usd), Some(first)) = (p.total_usd, p.first_seen) else {
            continue;
        };
        let v = usd.to_f64();
        by_year.entry(Bucket::Year.label(utc_date(first))).or_default().push(v);
        all.push(v);
    }
    let row = |bucket: String, v: &[f64]| Tendency {
        bucket,
        count: v.len(),
        mean_usd: mean(v).unwrap_or(0.0),
        median_usd: median(v).unwrap_or(0.0),
        million_share: v.iter().filter(|x| **x > MILLION_USD).count() as f64 / v.len().max(1) as f64,
    };
    let mut out: Vec<Tendency> = by_year.iter().map(|(y, v)| row(y.clone(), v)).collect();
    if !all.is_empty() {
        out.push(row("all".to_owned(), &all));
    }
    out
}

pub fn write_tendency_csv<W: Write>(rows: &[Tendency], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bucket", "count", "mean_usd", "median_usd", "million_share"])?;
    for r in rows {
        w.write_record([
            r.bucket.clone(),
            r.count.to_string(),
            format!("{:.2}", r.mean_usd),
            format!("{:.2}", r.median_usd),
            format!("{:.6}", r.million_share),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<tendency csv>", e))?;
    Ok(())
}

/// Fraction of payments with any exposure to each illicit category.
pub fn destination_type_tally(
    payments: &[PaymentRecord],
    chain: &Chain,
    labels: &LabelIndex,
    params: ExposureParams,
) -> Vec<(Category, f64)> {
    let exposures = payment_exposures(chain, payments, params);
    let n = payments.len().max(1) as f64;
    Category::ILLICIT
        .iter()
        .map(|c| {
            let hits = payments
                .iter()
                .filter(|p| {
                    exposures
                        .get(&p.address)
                        .is_some_and(|e| e.weights.iter().any(|(d, w)| *w > 0.0 && labels.category(*d) == *c))
                })
                .count();
            (*c, hits as f64 / n)
        })
        .collect()
}

pub fn write_dest_types_csv<W: Write>(rows: &[(Category, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["category", "fraction"])?;
    for (c, f) in rows {
        w.write_record([c.as_str(), &format!("{f:.6}")])?;
    }
    w.flush().map_err(|e| Error::io("<dest types csv>", e))?;
    Ok(())
}

/// A payment's received total and its exposure keyed by destination.
type Member = (f64, BTreeMap<u32, f64>);

/// How exposure vectors are compared in the overlap matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapOptions {
    /// Compare destination clusters instead of addresses.
    pub by_cluster: bool,
    /// Compare absolute amounts (weight × outgoing value) instead of fractions.
    pub absolute: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMatrix {
    pub families: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl OverlapMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.families.iter().position(|f| f == a)?;
        let j = self.families.iter().position(|f| f == b)?;
        Some(self.scores[i][j])
    }

    /// Each row divided by its sum.
    pub fn row_normalized(&self) -> OverlapMatrix {
        let scores = self
            .scores
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
            })
            .collect();
        OverlapMatrix {
            families: self.families.clone(),
            scores,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["family".to_owned()];
        header.extend(self.families.iter().cloned());
        w.write_record(&header)?;
        for (f, row) in self.families.iter().zip(&self.scores) {
            let mut rec = vec![f.clone()];
            rec.extend(row.iter().map(|x| format!("{x:.6}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<overlap matrix csv>", e))?;
        Ok(())
    }
}

/// Family-pair score: mean of pairwise shared-exposure scores between the
/// families' payments, weighted by the product of the payments' received
/// values. A payment is never paired with itself.
pub fn family_overlap(
    labeling: &FamilyLabeling,
    payments: &[PaymentRecord],
    chain: &Chain,
    clusters: Option<&ClusterAssignment>,
    params: ExposureParams,
    options: OverlapOptions,
) -> OverlapMatrix {
    let exposures = payment_exposures(chain, payments, params);
    let mut members: BTreeMap<String, Vec<Member>> = BTreeMap::new();
    for p in payments {
        let family = labeling.family(&p.address);
        if family == UNLABELED_FAMILY {
            continue;
        }
        let Some(e) = exposures.get(&p.address) else {
            continue;
        };
        let scale = if options.absolute { e.outgoing_sat as f64 } else { 1.0 };
        let vector: BTreeMap<u32, f64> = match (options.by_cluster, clusters) {
            (true, Some(c)) => e.by_cluster(c).into_iter().map(|(k, w)| (k.0, w * scale)).collect(),
            _ => e.weights.iter().map(|(k, w)| (k.0, w * scale)).collect(),
        };
        members
            .entry(family.to_owned())
            .or_default()
            .push((p.total_sat as f64, vector));
    }
    let families: Vec<String> = members.keys().cloned().collect();
    let groups: Vec<&Vec<Member>> = members.values().collect();
    let n = families.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<((usize, usize), f64)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (x, (wa, va)) in groups[i].iter().enumerate() {
                for (y, (wb, vb)) in groups[j].iter().enumerate() {
                    if i == j && x == y {
                        continue;
                    }
                    let w = wa * wb;
                    num += w * ruzicka(va, vb);
                    den += w;
                }
            }
            ((i, j), if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 })
        })
        .collect();
    let mut scores = vec![vec![0.0; n]; n];
    for ((i, j), v) in values {
        scores[i][j] = v;
        scores[j][i] = v;
    }
    OverlapMatrix { families, scores }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PercentileBucket {
    /// Lower and upper payment-size percentile of the bucket.
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub count: usize,
    pub mean_affiliate_share: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCurve {
    pub buckets: Vec<PercentileBucket>,
    /// True when fewer than ten splitting payments forced coarser buckets.
    pub coarse: bool,
}

/// Mean affiliate share per payment-size decile among splitting payments.
/// Size is the USD total when known, else the satoshi total.
pub fn split_by_percentile(chain: &Chain, payments: &[PaymentRecord], splits: &[SplitFinding]) -> SplitCurve {
    let by_addr: HashMap<AddressId, f64> = splits.iter().map(|s| (s.payment, s.affiliate_share)).collect();
    let mut rows: Vec<(f64, &str, f64)> = payments
        .iter()
        .filter_map(|p| {
            let share = by_addr.get(&chain.address_id(&p.address)?)?;
            let size = p.total_usd.map_or(p.total_sat as f64, |u| u.to_f64());
            Some((size, p.address.as_str(), *share))
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    rows.dedup_by(|a, b| a.1 == b.1);
    let n = rows.len();
    let k = n.min(10);
    let mut sums = vec![(0usize, 0.0); k];
    for (rank, row) in rows.iter().enumerate() {
        let b = rank * k / n;
        sums[b].0 += 1;
        sums[b].1 += row.2;
    }
    let buckets = sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, total))| PercentileBucket {
            lower_pct: 100.0 * i as f64 / k as f64,
            upper_pct: 100.0 * (i + 1) as f64 / k as f64,
            count,
            mean_affiliate_share: total / count.max(1) as f64,
        })
        .collect();
    SplitCurve {
        buckets,
        coarse: n < 10,
    }
}

pub fn write_split_percentile_csv<W: Write>(curve: &SplitCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lower_pct", "upper_pct", "count", "mean_affiliate_share", "coarse"])?;
    for b in &curve.buckets {
        w.write_record([
            format!("{:.1}", b.lower_pct),
            format!("{:.1}", b.upper_pct),
            b.count.to_string(),
            format!("{:.6}", b.mean_affiliate_share),
            curve.coarse.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<split percentile csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use proptest::prelude::*;

    use super::*;
    use crate::chain::{LabelRecord, LabelSet, Provenance, RawTransaction, SATS_PER_BTC};
    use crate::split::{detect_split, SplitParams};
    use crate::testutil::{ext, spend, tx};

    const BTC: u64 = SATS_PER_BTC;
    const DAY: i64 = 86_400;

    fn rec(addr: &str) -> PaymentRecord {
        PaymentRecord::new(addr, None, Provenance::OrigCluster)
    }

    fn labels(rows: &[(&str, Category, Option<&str>)]) -> LabelSet {
        LabelSet::from_records(rows.iter().map(|(a, c, f)| {
            LabelRecord::new(*a, format!("{a}-entity"), *c, f.map(str::to_owned), "vendor").unwrap()
        }))
        .unwrap()
    }

    fn family_chain(scale: u64) -> Chain {
        Chain::from_raw(vec![
            tx("f", 1, vec![ext("v", 10 * scale)], &[("p", 10 * scale)]),
            tx("s", 2, vec![spend("f", 0)], &[("conti", 6 * scale), ("lockbit", 4 * scale)]),
            tx("t", 3, vec![spend("s", 1)], &[("ryuk", 4 * scale)]),
        ])
        .unwrap()
    }

    #[test]
    fn labeling_argmax_and_tie_break() {
        let set = labels(&[
            ("conti", Category::Ransomware, Some("Conti")),
            ("lockbit", Category::Ransomware, Some("LockBit")),
            ("ryuk", Category::Ransomware, Some("Ryuk")),
        ]);
        for scale in [1, 1000, 123_457] {
            let chain = family_chain(scale);
            let index = LabelIndex::new(&chain, &set);
            let l = label_families(&[rec("p"), rec("ryuk")], &chain, &index, ExposureParams::default());
            // Conti 0.6; LockBit 0.4 + Ryuk 0.4 are separate families.
            assert_eq!(l.family("p"), "Conti");
            assert_eq!(l.family("ryuk"), "unlabeled");
        }

        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("v", 100)], &[("p", 100)]),
            tx("s", 2, vec![spend("f", 0)], &[("b", 50), ("x", 50)]),
            tx("t", 3, vec![spend("s", 1)], &[("a", 50)]),
        ])
        .unwrap();
        let set = labels(&[
            ("a", Category::Ransomware, Some("Akira")),
            ("b", Category::Ransomware, Some("Black Basta")),
        ]);
        let index = LabelIndex::new(&chain, &set);
        // Equal exposure: Black Basta wins on hop-1 value.
        let l = label_families(&[rec("p")], &chain, &index, ExposureParams::default());
        assert_eq!(l.family("p"), "Black Basta");
    }

    #[test]
    fn labeling_name_tie_break() {
        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("v", 100)], &[("p", 100)]),
            tx("s", 2, vec![spend("f", 0)], &[("b", 50), ("a", 50)]),
        ])
        .unwrap();
        let set = labels(&[
            ("a", Category::Ransomware, Some("Zeppelin")),
            ("b", Category::Ransomware, Some("Akira")),
        ]);
        let index = LabelIndex::new(&chain, &set);
        let l = label_families(&[rec("p")], &chain, &index, ExposureParams::default());
        assert_eq!(l.family("p"), "Akira");
    }

    fn priced(days: i64, close: f64) -> PriceTable {
        let mut p = PriceTable::new();
        let start = utc_date(0);
        for d in 0..days {
            p.insert(start + chrono::Days::new(d as u64), close).unwrap();
        }
        p
    }

    #[test]
    fn timeseries_single_and_empty() {
        let chain = Chain::from_raw(vec![tx("f", 40 * DAY, vec![ext("v", BTC)], &[("p", BTC)])]).unwrap();
        let prices = priced(400, 20_000.0);
        let s = payments_over_time(&[rec("p")], &chain, &prices, Bucket::Month).unwrap();
        assert_eq!(s, vec![TimeBucket { bucket: "1970-02".into(), total_usd: Usd::from_cents(2_000_000), count: 1 }]);
        assert!(payments_over_time(&[], &chain, &prices, Bucket::Month).unwrap().is_empty());
    }

    #[test]
    fn timeseries_conserves_address_totals() {
        let mut raw: Vec<RawTransaction> = Vec::new();
        let mut recs = Vec::new();
        let prices = {
            let mut p = PriceTable::new();
            for d in 0..400u64 {
                p.insert(utc_date(0) + chrono::Days::new(d), 1000.0 + d as f64 * 37.13).unwrap();
            }
            p
        };
        for i in 0..30i64 {
            let addr = format!("p{}", i % 7);
            raw.push(tx(&format!("t{i}"), i * 11 * DAY + 5, vec![ext("v", 12_345_678 + i as u64 * 99_991)], &[(&addr, 12_345_678 + i as u64 * 99_991)]));
        }
        let chain = Chain::from_raw(raw).unwrap();
        for i in 0..7 {
            recs.push(PaymentRecord::from_chain(&chain, &format!("p{i}"), None, Provenance::Ransomwhere, Some(&prices)).unwrap());
        }
        for b in [Bucket::Month, Bucket::Quarter, Bucket::Year] {
            let s = payments_over_time(&recs, &chain, &prices, b).unwrap();
            let bucketed: Usd = s.iter().map(|x| x.total_usd).sum();
            let direct: Usd = recs.iter().map(|r| r.total_usd.unwrap()).sum();
            assert_eq!(bucketed, direct);
            assert_eq!(s.iter().map(|x| x.count).sum::<usize>(), 30);
        }
    }

    #[test]
    fn tendency_single_payment() {
        let mut r = rec("p");
        r.total_usd = Some(Usd::from_cents(10_000));
        r.first_seen = Some(0);
        let t = central_tendency(&[r]);
        assert_eq!(t.len(), 2);
        assert_eq!((t[1].mean_usd, t[1].median_usd, t[1].million_share), (100.0, 100.0, 0.0));
    }

    proptest! {
        #[test]
        fn tendency_matches_sort_oracle(cents in proptest::collection::vec(0i64..1_000_000_000, 1..200)) {
            let recs: Vec<PaymentRecord> = cents.iter().enumerate().map(|(i, c)| {
                let mut r = rec(&format!("p{i}"));
                r.total_usd = Some(Usd::from_cents(*c));
                r.first_seen = Some(0);
                r
            }).collect();
            let all = central_tendency(&recs).pop().unwrap();
            let mut v: Vec<f64> = cents.iter().map(|c| *c as f64 / 100.0).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
            prop_assert!((all.median_usd - med).abs() < 1e-6);
            prop_assert!((all.mean_usd - v.iter().sum::<f64>() / n as f64).abs() < 1e-3);
            let big = v.iter().filter(|x| **x > 1e6).count() as f64 / n as f64;
            prop_assert_eq!(all.million_share, big);
        }
    }

    #[test]
    fn tally_all_to_mixer() {
        let chain = Chain::from_raw(vec![
            tx("a", 1, vec![ext("v1", 100)], &[("p1", 100)]),
            tx("b", 1, vec![ext("v2", 100)], &[("p2", 100)]),
            tx("c", 2, vec![spend("a", 0)], &[("mix", 100)]),
            tx("d", 2, vec![spend("b", 0)], &[("mix", 100)]),
        ])
        .unwrap();
        let set = labels(&[("mix", Category::Mixer, None)]);
        let index = LabelIndex::new(&chain, &set);
        let t = destination_type_tally(&[rec("p1"), rec("p2")], &chain, &index, ExposureParams::default());
        assert_eq!(t.iter().find(|(c, _)| *c == Category::Mixer).unwrap().1, 1.0);
        assert_eq!(t.iter().find(|(c, _)| *c == Category::Ransomware).unwrap().1, 0.0);
    }

    /// p1,p2 (Conti) and q1 (Royal) pool into `shared`; r1,r2 (Akira) are disjoint.
    fn overlap_fixture() -> (Chain, FamilyLabeling, Vec<PaymentRecord>) {
        let mut raw = Vec::new();
        for (p, dest) in [("p1", "shared"), ("p2", "shared"), ("q1", "shared"), ("r1", "own1"), ("r2", "own2")] {
            raw.push(tx(&format!("f{p}"), 1, vec![ext(&format!("v{p}"), 1000)], &[(p, 1000)]));
            raw.push(tx(&format!("s{p}"), 2, vec![spend(&format!("f{p}"), 0)], &[(dest, 800), (&format!("op{p}"), 200)]));
        }
        let chain = Chain::from_raw(raw).unwrap();
        let families = [("p1", "Conti"), ("p2", "Conti"), ("q1", "Royal"), ("r1", "Akira"), ("r2", "Akira")]
            .iter()
            .map(|(a, f)| (a.to_string(), f.to_string()))
            .collect();
        let recs = ["p1", "p2", "q1", "r1", "r2"]
            .iter()
            .map(|a| PaymentRecord::from_chain(&chain, a, None, Provenance::Ransomwhere, None).unwrap())
            .collect();
        (chain, FamilyLabeling { families }, recs)
    }

    #[test]
    fn overlap_matrix_shape() {
        let (chain, labeling, recs) = overlap_fixture();
        let m = family_overlap(&labeling, &recs, &chain, None, ExposureParams::default(), OverlapOptions::default());
        assert_eq!(m.families, vec!["Akira", "Conti", "Royal"]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.scores[i][j], m.scores[j][i]);
                assert!((0.0..=1.0).contains(&m.scores[i][j]));
            }
        }
        // Ruzicka of {shared:.8, opA:.2} and {shared:.8, opB:.2} = .8 / 1.2.
        let pooled = 0.8 / 1.2;
        assert!((m.get("Conti", "Royal").unwrap() - pooled).abs() < 1e-12);
        assert!((m.get("Conti", "Conti").unwrap() - pooled).abs() < 1e-12);
        assert_eq!(m.get("Akira", "Conti"), Some(0.0));
        assert_eq!(m.get("Akira", "Akira"), Some(0.0));
        let r = m.row_normalized();
        assert!((r.scores[1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn split_chain(shares: &[(u64, u64)]) -> (Chain, Vec<PaymentRecord>) {
        let mut raw = Vec::new();
        for (i, (size, pct)) in shares.iter().enumerate() {
            let p = format!("p{i:02}");
            raw.push(tx(&format!("f{i}"), 1, vec![ext("v", size * 100)], &[(&p, size * 100)]));
            raw.push(tx(&format!("s{i}"), 2, vec![spend(&format!("f{i}"), 0)], &[("aff", size * pct), ("op", size * (100 - pct))]));
        }
        let chain = Chain::from_raw(raw).unwrap();
        let recs = (0..shares.len())
            .map(|i| PaymentRecord::from_chain(&chain, &format!("p{i:02}"), None, Provenance::Expanded, None).unwrap())
            .collect();
        (chain, recs)
    }

    fn findings(chain: &Chain, recs: &[PaymentRecord]) -> Vec<SplitFinding> {
        recs.iter()
            .filter_map(|r| detect_split(chain, chain.address_id(&r.address).unwrap(), SplitParams::default()))
            .collect()
    }

    #[test]
    fn percentile_curve() {
        let planted: Vec<(u64, u64)> = (0..40).map(|i| (1000 + i * 10, 70 + (i / 8) * 5)).collect();
        let (chain, recs) = split_chain(&planted);
        let curve = split_by_percentile(&chain, &recs, &findings(&chain, &recs));
        assert!(!curve.coarse);
        assert_eq!(curve.buckets.len(), 10);
        for w in curve.buckets.windows(2) {
            assert!(w[1].mean_affiliate_share >= w[0].mean_affiliate_share);
        }
        assert!((curve.buckets[0].mean_affiliate_share - 0.70).abs() < 1e-9);
        assert!((curve.buckets[9].mean_affiliate_share - 0.90).abs() < 1e-9);

        let (chain, recs) = split_chain(&[(500, 80), (700, 80), (900, 80)]);
        let curve = split_by_percentile(&chain, &recs, &findings(&chain, &recs));
        assert!(curve.coarse);
        assert_eq!(curve.buckets.len(), 3);
        assert!(curve.buckets.iter().all(|b| (b.mean_affiliate_share - 0.8).abs() < 1e-12));

        let (chain, recs) = split_chain(&[(500, 80)]);
        assert_eq!(split_by_percentile(&chain, &recs, &findings(&chain, &recs)).buckets.len(), 1);
    }

    #[test]
    fn bucket_labels() {
        let d = NaiveDate::from_ymd_opt(2021, 8, 3).unwrap();
        assert_eq!(Bucket::Month.label(d), "2021-08");
        assert_eq!(Bucket::Quarter.label(d), "2021-Q3");
        assert_eq!(Bucket::Year.label(d), "2021");
        assert!("week".parse::<Bucket>().is_err());
    }
}
