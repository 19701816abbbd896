//! Payment identification: source-cluster ranking, the origin-cluster
//! classifier and the expanded-set classifier.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;

use crate::chain::{
    utc_date, AddressId, Category, Chain, LabelIndex, PriceTable, Provenance, SeedSet, Usd, SATS_PER_BTC,
};
use crate::cluster::{ClusterAssignment, ClusterId};
use crate::error::{Error, Result};
use crate::flow::{backtrace, direct_origin_share, exposure, sort_shares, ExposureParams, Source, SourceShare};
use crate::split::{detect_split, SplitParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorConfig {
    pub min_receipt_btc: f64,
    pub max_incoming_txs: usize,
    pub low_risk_origin_share: f64,
    pub hop_bound: u8,
    pub nontrivial_share: f64,
    pub split: SplitParams,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            min_receipt_btc: 1.0,
            max_incoming_txs: 5,
            low_risk_origin_share: 0.99,
            hop_bound: 3,
            nontrivial_share: 0.10,
            split: SplitParams::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_receipt_btc.is_nan() || self.min_receipt_btc <= 0.0 {
            return Err(Error::Config("min_receipt_btc must be positive".into()));
        }
        if self.max_incoming_txs == 0 {
            return Err(Error::Config("max_incoming_txs must be positive".into()));
        }
        if !(self.low_risk_origin_share > 0.5 && self.low_risk_origin_share <= 1.0) {
            return Err(Error::Config("low_risk_origin_share must be in (0.5, 1]".into()));
        }
        if !(1..=3).contains(&self.hop_bound) {
            return Err(Error::Config("hop_bound must be 1, 2 or 3".into()));
        }
        if !(self.nontrivial_share > 0.0 && self.nontrivial_share <= 1.0) {
            return Err(Error::Config("nontrivial_share must be in (0, 1]".into()));
        }
        if self.split.tolerance.is_nan() || self.split.tolerance <= 0.0 {
            return Err(Error::Config("split tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn min_receipt_sat(&self) -> u64 {
        (self.min_receipt_btc * SATS_PER_BTC as f64).round() as u64
    }

    fn exposure_params(&self) -> ExposureParams {
        ExposureParams::with_hops(self.hop_bound)
    }
}

/// Per-criterion outcome. Origin-cluster records use all five fields;
/// expanded records use `c1..c3` and leave `c4a`/`c4b` empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CriteriaTrace {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    pub c4a: Option<bool>,
    pub c4b: Option<bool>,
}

impl CriteriaTrace {
    pub fn passes(&self) -> bool {
        let c4 = match (self.c4a, self.c4b) {
            (None, None) => true,
            (a, b) => a == Some(true) || b == Some(true),
        };
        self.c1 && self.c2 && self.c3 && c4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaymentRecord {
    pub address: String,
    pub family: Option<String>,
    pub total_sat: u64,
    pub total_usd: Option<Usd>,
    pub first_seen: Option<i64>,
    pub last_seen: Option<i64>,
    pub provenance: Provenance,
    pub trace: CriteriaTrace,
}

impl PaymentRecord {
    /// Record with zero totals, used before chain totals are attached.
    pub fn new(address: &str, family: Option<&str>, provenance: Provenance) -> Self {
        PaymentRecord {
            address: address.to_owned(),
            family: family.map(str::to_owned),
            total_sat: 0,
            total_usd: None,
            first_seen: None,
            last_seen: None,
            provenance,
            trace: CriteriaTrace::default(),
        }
    }

    /// Record with totals read from the chain.
    pub fn from_chain(
        chain: &Chain,
        address: &str,
        family: Option<&str>,
        provenance: Provenance,
        prices: Option<&PriceTable>,
    ) -> Result<Self> {
        let totals = chain.address_totals(address, prices)?;
        Ok(PaymentRecord {
            total_sat: totals.received_sat,
            total_usd: prices.map(|_| totals.received_usd),
            first_seen: totals.first_seen,
            last_seen: totals.last_seen,
            ..PaymentRecord::new(address, family, provenance)
        })
    }

    pub fn total_btc(&self) -> f64 {
        self.total_sat as f64 / SATS_PER_BTC as f64
    }
}

/// Payment records for every seed, with chain totals where observed.
pub fn seed_records(chain: &Chain, seeds: &SeedSet, prices: Option<&PriceTable>) -> Result<Vec<PaymentRecord>> {
    let mut out = Vec::with_capacity(seeds.len());
    for s in &seeds.seeds {
        out.push(PaymentRecord::from_chain(chain, &s.address, s.family.as_deref(), s.tag, prices)?);
    }
    out.sort_by(|a, b| a.address.cmp(&b.address));
    Ok(out)
}

/// `address,family,total_btc,total_usd,first_seen,last_seen,provenance,c1,c2,c3,c4a,c4b`
pub fn write_payments_csv<W: Write>(records: &[PaymentRecord], writer: W) -> Result<()> {
    fn opt(b: Option<bool>) -> String {
        b.map(|b| b.to_string()).unwrap_or_default()
    }
    fn date(ts: Option<i64>) -> String {
        ts.map(|t| utc_date(t).to_string()).unwrap_or_default()
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "address",
        "family",
        "total_btc",
        "total_usd",
        "first_seen",
        "last_seen",
        "provenance",
        "c1",
        "c2",
        "c3",
        "c4a",
        "c4b",
    ])?;
    for r in records {
        w.write_record([
            r.address.clone(),
            r.family.clone().unwrap_or_default(),
            format!("{:.8}", r.total_btc()),
            r.total_usd.map(|u| u.to_string()).unwrap_or_default(),
            date(r.first_seen),
            date(r.last_seen),
            r.provenance.as_str().to_owned(),
            r.trace.c1.to_string(),
            r.trace.c2.to_string(),
            r.trace.c3.to_string(),
            opt(r.trace.c4a),
            opt(r.trace.c4b),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<payments csv>", e))?;
    Ok(())
}

/// Reads the `payments.csv` export back. Totals other than BTC are dropped;
/// use [`PaymentRecord::from_chain`] to restore them.
pub fn read_payments_csv(path: &std::path::Path) -> Result<Vec<PaymentRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    let col = |name: &str| crate::chain::column(&headers, name, path);
    let (ia, ifam, ibtc, iprov) = (col("address")?, col("family")?, col("total_btc")?, col("provenance")?);
    let criteria = ["c1", "c2", "c3", "c4a", "c4b"].map(|c| headers.iter().position(|h| h == c));
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let mut flags = [None; 5];
        for (k, idx) in criteria.iter().enumerate() {
            let Some(raw) = idx.and_then(|j| row.get(j)).filter(|v| !v.is_empty()) else {
                continue;
            };
            let v: bool = raw
                .parse()
                .map_err(|_| Error::parse(path, line, ["c1", "c2", "c3", "c4a", "c4b"][k], format!("not a boolean: {raw:?}")))?;
            flags[k] = Some(v);
        }
        let prov: Provenance = row[iprov]
            .parse()
            .map_err(|m: String| Error::parse(path, line, "provenance", m))?;
        let btc: f64 = row[ibtc]
            .parse()
            .map_err(|_| Error::parse(path, line, "total_btc", format!("not a number: {:?}", &row[ibtc])))?;
        let family = Some(&row[ifam]).filter(|f| !f.is_empty());
        let mut rec = PaymentRecord::new(&row[ia], family, prov);
        rec.total_sat = (btc * SATS_PER_BTC as f64).round() as u64;
        rec.trace = CriteriaTrace {
            c1: flags[0].unwrap_or(false),
            c2: flags[1].unwrap_or(false),
            c3: flags[2].unwrap_or(false),
            c4a: flags[3],
            c4b: flags[4],
        };
        out.push(rec);
    }
    Ok(out)
}

/// Clusters of the two anchor addresses. Anchors absent from the chain are
/// skipped; at least one must resolve.
pub fn anchor_clusters(chain: &Chain, clusters: &ClusterAssignment, seeds: &SeedSet) -> Result<Vec<ClusterId>> {
    let found: Vec<ClusterId> = seeds
        .anchors
        .iter()
        .filter_map(|a| clusters.cluster_of(chain, a))
        .collect();
    if found.is_empty() {
        return Err(Error::UnknownAddress(seeds.anchors.join(", ")));
    }
    Ok(found)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceRow {
    pub source: Source,
    /// Entity name of the cluster's first labeled member, or the anchor name.
    pub entity: Option<String>,
    pub share: f64,
    pub attributed_usd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceRanking {
    pub rows: Vec<SourceRow>,
    /// Seed addresses absent from the chain.
    pub skipped: Vec<String>,
}

/// Averages each seed's backtrace shares, so every payment counts once.
/// Walks stop at labeled clusters and anchor clusters.
pub fn rank_source_clusters(
    seeds: &SeedSet,
    depth: u8,
    chain: &Chain,
    clusters: &ClusterAssignment,
    labels: &LabelIndex,
    prices: Option<&PriceTable>,
) -> Result<SourceRanking> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let mut names: HashMap<ClusterId, String> = HashMap::new();
    for (anchor, name) in seeds.anchors.iter().zip(["Cluster A", "Cluster B"]) {
        if let Some(c) = clusters.cluster_of(chain, anchor) {
            names.entry(c).or_insert_with(|| name.to_owned());
        }
    }
    for a in chain.address_ids() {
        if let Some(r) = labels.get(a) {
            names.entry(clusters.cluster_of_id(a)).or_insert_with(|| r.entity.clone());
        }
    }
    let stop = |c: ClusterId| names.contains_key(&c);

    let mut skipped = Vec::new();
    let mut addrs = Vec::new();
    let mut seen = HashSet::new();
    for s in &seeds.seeds {
        match chain.address_id(&s.address) {
            Some(a) if seen.insert(a) => addrs.push(a),
            Some(_) => {}
            None => skipped.push(s.address.clone()),
        }
    }
    addrs.sort();
    let per_seed: Vec<Vec<SourceShare>> = addrs
        .par_iter()
        .map(|a| backtrace(chain, clusters, *a, depth, &stop, prices))
        .collect::<Result<_>>()?;

    let mut share: BTreeMap<Source, (f64, f64)> = BTreeMap::new();
    let n = per_seed.iter().filter(|s| !s.is_empty()).count().max(1) as f64;
    for shares in &per_seed {
        for s in shares {
            let e = share.entry(s.source).or_insert((0.0, 0.0));
            e.0 += s.share / n;
            e.1 += s.attributed_usd;
        }
    }
    let mut ranked: Vec<SourceShare> = share
        .into_iter()
        .map(|(source, (s, usd))| SourceShare {
            source,
            attributed_sat: 0.0,
            attributed_usd: usd,
            share: s,
        })
        .collect();
    sort_shares(&mut ranked);
    let rows = ranked
        .into_iter()
        .map(|s| SourceRow {
            entity: match s.source {
                Source::Cluster(c) => names.get(&c).cloned(),
                Source::External => None,
            },
            source: s.source,
            share: s.share,
            attributed_usd: s.attributed_usd,
        })
        .collect();
    skipped.sort();
    Ok(SourceRanking { rows, skipped })
}

/// `rank,cluster_id,entity,share,attributed_usd`
pub fn write_sources_csv<W: Write>(ranking: &SourceRanking, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "cluster_id", "entity", "share", "attributed_usd"])?;
    for (i, r) in ranking.rows.iter().enumerate() {
        let id = match r.source {
            Source::Cluster(c) => c.0.to_string(),
            Source::External => "external".to_owned(),
        };
        w.write_record([
            (i + 1).to_string(),
            id,
            r.entity.clone().unwrap_or_default(),
            format!("{:.6}", r.share),
            format!("{:.2}", r.attributed_usd),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sources csv>", e))?;
    Ok(())
}

/// Known ransomware addresses for the hop-1 link criteria: ransomware
/// labels plus seeds of the base dataset.
fn known_ransomware(chain: &Chain, labels: &LabelIndex, seeds: &SeedSet) -> HashSet<AddressId> {
    let mut known: HashSet<AddressId> = chain.address_ids().filter(|a| labels.is_ransomware(*a)).collect();
    known.extend(
        seeds
            .with_tag(Provenance::Ransomwhere)
            .filter_map(|s| chain.address_id(&s.address)),
    );
    known
}

/// Shared state for origin-cluster evaluation.
pub struct OriginContext<'a> {
    chain: &'a Chain,
    clusters: &'a ClusterAssignment,
    anchors: Vec<ClusterId>,
    known: HashSet<AddressId>,
    config: DetectorConfig,
}

impl<'a> OriginContext<'a> {
    pub fn new(
        config: DetectorConfig,
        chain: &'a Chain,
        clusters: &'a ClusterAssignment,
        labels: &LabelIndex,
        seeds: &SeedSet,
    ) -> Result<Self> {
        config.validate()?;
        Ok(OriginContext {
            chain,
            clusters,
            anchors: anchor_clusters(chain, clusters, seeds)?,
            known: known_ransomware(chain, labels, seeds),
            config,
        })
    }

    fn in_anchor(&self, a: AddressId) -> bool {
        self.anchors.contains(&self.clusters.cluster_of_id(a))
    }

    /// Addresses receiving directly from an anchor cluster, outside it.
    pub fn candidates(&self) -> Vec<AddressId> {
        let mut out = BTreeSet::new();
        for &c in &self.anchors {
            for &m in self.clusters.members(c) {
                for &t in self.chain.spends(m) {
                    for o in &self.chain.tx(t).outputs {
                        if !self.in_anchor(o.address) {
                            out.insert(o.address);
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    fn hop1_destinations(&self, a: AddressId) -> BTreeSet<AddressId> {
        self.chain
            .spends(a)
            .iter()
            .flat_map(|t| self.chain.tx(*t).outputs.iter().map(|o| o.address))
            .filter(|d| *d != a)
            .collect()
    }

    pub fn evaluate(&self, a: AddressId) -> CriteriaTrace {
        let chain = self.chain;
        let c1 = chain.receipts(a).iter().any(|r| {
            chain
                .tx(r.tx)
                .inputs
                .iter()
                .any(|i| i.address.is_some_and(|x| self.in_anchor(x)))
        });
        let c2 = chain.received_sat(a) >= self.config.min_receipt_sat();
        let c3 = chain.incoming_tx_count(a) <= self.config.max_incoming_txs;
        let dests = self.hop1_destinations(a);
        let c4a = dests.iter().any(|d| self.known.contains(d));
        let linked = dests.iter().any(|d| {
            chain.receipts(*d).iter().any(|r| {
                chain
                    .tx(r.tx)
                    .inputs
                    .iter()
                    .any(|i| i.address.is_some_and(|x| x != a && self.known.contains(&x)))
            })
        });
        let c4b = linked && detect_split(chain, a, self.config.split).is_some();
        CriteriaTrace {
            c1,
            c2,
            c3,
            c4a: Some(c4a),
            c4b: Some(c4b),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OriginDetection {
    /// New payments, sorted by address.
    pub found: Vec<PaymentRecord>,
    /// Seed addresses that also satisfy the criteria.
    pub already_known: Vec<PaymentRecord>,
    /// Candidates failing at least one criterion, with their traces.
    pub rejected: Vec<PaymentRecord>,
}

pub fn classify_origin_payments(
    config: DetectorConfig,
    chain: &Chain,
    clusters: &ClusterAssignment,
    labels: &LabelIndex,
    seeds: &SeedSet,
    prices: Option<&PriceTable>,
) -> Result<OriginDetection> {
    let ctx = OriginContext::new(config, chain, clusters, labels, seeds)?;
    let traces: Vec<(AddressId, CriteriaTrace)> = ctx
        .candidates()
        .into_par_iter()
        .map(|a| (a, ctx.evaluate(a)))
        .collect();
    let mut out = OriginDetection::default();
    for (a, trace) in traces {
        let address = chain.address(a);
        let mut rec = PaymentRecord::from_chain(chain, address, labels.family(a), Provenance::OrigCluster, prices)?;
        rec.trace = trace;
        if !trace.passes() {
            out.rejected.push(rec);
        } else if seeds.contains(address) {
            out.already_known.push(rec);
        } else {
            out.found.push(rec);
        }
    }
    for v in [&mut out.found, &mut out.already_known, &mut out.rejected] {
        v.sort_by(|a, b| a.address.cmp(&b.address));
    }
    Ok(out)
}

/// Shared state for expanded-set evaluation.
pub struct ExpandedContext<'a> {
    chain: &'a Chain,
    clusters: &'a ClusterAssignment,
    config: DetectorConfig,
    known: BTreeSet<AddressId>,
    anchors: Vec<ClusterId>,
    accept: HashSet<ClusterId>,
    labeled: HashSet<AddressId>,
    /// Intermediates receiving at least `nontrivial_share` of their inflow
    /// from known addresses.
    pub pools: BTreeSet<AddressId>,
}

impl<'a> ExpandedContext<'a> {
    pub fn new(
        config: DetectorConfig,
        chain: &'a Chain,
        clusters: &'a ClusterAssignment,
        labels: &LabelIndex,
        seeds: &SeedSet,
        known: &[String],
    ) -> Result<Self> {
        config.validate()?;
        let known: BTreeSet<AddressId> = known.iter().filter_map(|a| chain.address_id(a)).collect();
        if known.is_empty() {
            return Err(Error::EmptyKnownSet);
        }
        let anchors = anchor_clusters(chain, clusters, seeds).unwrap_or_default();
        let mut accept: HashSet<ClusterId> = anchors.iter().copied().collect();
        let mut labeled = HashSet::new();
        for a in chain.address_ids() {
            let category = labels.category(a);
            if category == Category::ExchangeLowRisk {
                accept.insert(clusters.cluster_of_id(a));
            }
            if category != Category::Unlabeled {
                labeled.insert(a);
            }
        }

        let params = config.exposure_params();
        let contributions: Vec<Vec<(AddressId, f64)>> = known
            .par_iter()
            .map(|k| {
                let e = exposure(chain, *k, params);
                let out = e.outgoing_sat as f64;
                e.weights.iter().map(|(d, w)| (*d, w * out)).collect()
            })
            .collect();
        let mut inflow: BTreeMap<AddressId, f64> = BTreeMap::new();
        for c in contributions {
            for (d, v) in c {
                *inflow.entry(d).or_insert(0.0) += v;
            }
        }
        let pools = inflow
            .into_iter()
            .filter(|(d, v)| {
                let received = chain.received_sat(*d) as f64;
                received > 0.0 && v / received >= config.nontrivial_share
            })
            .map(|(d, _)| d)
            .collect();
        Ok(ExpandedContext {
            chain,
            clusters,
            config,
            known,
            anchors,
            accept,
            labeled,
            pools,
        })
    }

    /// Addresses within `hop_bound` backward hops of a pool, excluding
    /// known addresses, labeled addresses and anchor-cluster members.
    pub fn candidates(&self) -> Vec<AddressId> {
        let mut seen: BTreeSet<AddressId> = self.pools.clone();
        let mut frontier: Vec<AddressId> = self.pools.iter().copied().collect();
        for _ in 0..self.config.hop_bound {
            let mut next = Vec::new();
            for d in frontier {
                for r in self.chain.receipts(d) {
                    for i in &self.chain.tx(r.tx).inputs {
                        if let Some(a) = i.address {
                            if seen.insert(a) {
                                next.push(a);
                            }
                        }
                    }
                }
            }
            frontier = next;
        }
        let mut out: BTreeSet<AddressId> = seen;
        for d in &self.pools {
            // Pools are candidates only when they also send onward.
            if self.chain.spends(*d).is_empty() {
                out.remove(d);
            }
        }
        out.into_iter()
            .filter(|a| {
                !self.known.contains(a)
                    && !self.labeled.contains(a)
                    && !self.anchors.contains(&self.clusters.cluster_of_id(*a))
            })
            .collect()
    }

    pub fn evaluate(&self, a: AddressId) -> CriteriaTrace {
        let e = exposure(self.chain, a, self.config.exposure_params());
        let c1 = self
            .pools
            .iter()
            .any(|d| *d != a && e.weight(*d) >= self.config.nontrivial_share);
        let c2 = detect_split(self.chain, a, self.config.split).is_some();
        let share = direct_origin_share(self.chain, self.clusters, a, &|c| self.accept.contains(&c));
        let c3 = share > self.config.low_risk_origin_share;
        CriteriaTrace {
            c1,
            c2,
            c3,
            c4a: None,
            c4b: None,
        }
    }
}

/// Classifies addresses linked to `known` payments through shared pools.
pub fn classify_expanded(
    config: DetectorConfig,
    chain: &Chain,
    clusters: &ClusterAssignment,
    labels: &LabelIndex,
    seeds: &SeedSet,
    known: &[String],
    prices: Option<&PriceTable>,
) -> Result<Vec<PaymentRecord>> {
    let ctx = ExpandedContext::new(config, chain, clusters, labels, seeds, known)?;
    let passing: Vec<(AddressId, CriteriaTrace)> = ctx
        .candidates()
        .into_par_iter()
        .map(|a| (a, ctx.evaluate(a)))
        .filter(|(_, t)| t.passes())
        .collect();
    let mut out = Vec::with_capacity(passing.len());
    for (a, trace) in passing {
        let address = chain.address(a);
        if seeds.contains(address) {
            continue;
        }
        let mut rec = PaymentRecord::from_chain(chain, address, labels.family(a), Provenance::Expanded, prices)?;
        rec.trace = trace;
        out.push(rec);
    }
    out.sort_by(|a, b| a.address.cmp(&b.address));
    Ok(out)
}
