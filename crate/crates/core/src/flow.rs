//! Bounded-depth fund-flow traversal with pro-rata value attribution.
//!
//! Every transaction is treated as a mixing pool: value entering through an
//! input leaves through the outputs in proportion to output values (fees are
//! normalised away), and value leaving through an output came from the inputs
//! in proportion to input values. This rule is order-independent.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use crate::chain::{usd_value, AddressId, Chain, InputSource, OutputRef, PriceTable, TxIndex};
use crate::cluster::{ClusterAssignment, ClusterId};
use crate::error::{Error, Result};

pub const DEFAULT_HOPS: u8 = 3;
pub const DEFAULT_PRUNE_FLOOR: f64 = 1e-4;
pub const WEIGHT_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExposureParams {
    pub hops: u8,
    /// Outpoints carrying less than this fraction of the origin's funds are dropped.
    pub prune_floor: f64,
}

impl Default for ExposureParams {
    fn default() -> Self {
        ExposureParams {
            hops: DEFAULT_HOPS,
            prune_floor: DEFAULT_PRUNE_FLOOR,
        }
    }
}

impl ExposureParams {
    pub fn with_hops(hops: u8) -> Self {
        ExposureParams {
            hops,
            ..Default::default()
        }
    }
}

/// Fraction of an origin's outgoing funds reaching each downstream address.
///
/// A destination's weight is the mass arriving at it summed over hops
/// `1..=hop_bound`, capped at 1. Funds flowing back into the origin are
/// dropped, since the origin's own spends are already the starting point.
/// `hop_mass[k]` is the total mass arriving at hop `k + 1`; each is at most 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureVector {
    pub origin: AddressId,
    pub hop_bound: u8,
    pub weights: BTreeMap<AddressId, f64>,
    pub hop_mass: Vec<f64>,
    /// Total satoshis the origin spent, the denominator of every weight.
    pub outgoing_sat: u64,
}

impl ExposureVector {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, addr: AddressId) -> f64 {
        self.weights.get(&addr).copied().unwrap_or(0.0)
    }

    /// Re-key the weights by destination cluster.
    pub fn by_cluster(&self, clusters: &ClusterAssignment) -> BTreeMap<ClusterId, f64> {
        let mut out = BTreeMap::new();
        for (a, w) in &self.weights {
            *out.entry(clusters.cluster_of_id(*a)).or_insert(0.0) += w;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> BTreeMap<AddressId, f64> {
        self.weights.iter().map(|(a, w)| (*a, w * factor)).collect()
    }
}

pub fn exposure(chain: &Chain, origin: AddressId, params: ExposureParams) -> ExposureVector {
    let hops = params.hops.max(1);
    let outgoing_sat = chain.sent_sat(origin);
    let mut vector = ExposureVector {
        origin,
        hop_bound: hops,
        weights: BTreeMap::new(),
        hop_mass: vec![0.0; hops as usize],
        outgoing_sat,
    };
    if outgoing_sat == 0 {
        return vector;
    }

    // Mass entering each transaction at the current hop.
    let mut entering: BTreeMap<TxIndex, f64> = chain
        .spends(origin)
        .iter()
        .map(|t| (*t, chain.contributed_sat(origin, *t) as f64 / outgoing_sat as f64))
        .collect();

    for hop in 0..hops as usize {
        let mut arriving: BTreeMap<OutputRef, f64> = BTreeMap::new();
        for (&t, &mass) in &entering {
            let tx = chain.tx(t);
            let out_sum = tx.output_value();
            if out_sum == 0 {
                continue;
            }
            for (vout, o) in tx.outputs.iter().enumerate() {
                if o.address == origin || o.value == 0 {
                    continue;
                }
                *arriving
                    .entry(OutputRef { tx: t, vout: vout as u32 })
                    .or_insert(0.0) += mass * o.value as f64 / out_sum as f64;
            }
        }

        let mut next: BTreeMap<TxIndex, f64> = BTreeMap::new();
        for (out, mass) in arriving {
            if mass < params.prune_floor {
                continue;
            }
            let o = chain.output(out);
            *vector.weights.entry(o.address).or_insert(0.0) += mass;
            vector.hop_mass[hop] += mass;
            if let Some(s) = o.spent_by {
                *next.entry(s).or_insert(0.0) += mass;
            }
        }
        entering = next;
    }

    for w in vector.weights.values_mut() {
        *w = w.min(1.0);
    }
    vector
}

/// Exposure of `address`; errors when the address is not in the chain.
pub fn exposure_of(chain: &Chain, address: &str, params: ExposureParams) -> Result<ExposureVector> {
    Ok(exposure(chain, chain.require_address(address)?, params))
}

/// Weighted Jaccard (Ruzicka) similarity: Σ min / Σ max over the union of
/// keys. Two empty vectors score 0.
pub fn ruzicka<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut lo = 0.0;
    let mut hi = 0.0;
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((ka, va)), Some((kb, vb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    hi += **va;
                    ia.next();
                }
                std::cmp::Ordering::Greater => {
                    hi += **vb;
                    ib.next();
                }
                std::cmp::Ordering::Equal => {
                    lo += va.min(**vb);
                    hi += va.max(**vb);
                    ia.next();
                    ib.next();
                }
            },
            (Some((_, va)), None) => {
                hi += **va;
                ia.next();
            }
            (None, Some((_, vb))) => {
                hi += **vb;
                ib.next();
            }
            (None, None) => break,
        }
    }
    if hi > 0.0 {
        (lo / hi).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedExposure {
    pub pair: (String, String),
    pub score: f64,
}

pub fn shared_exposure(chain: &Chain, a1: &str, a2: &str, params: ExposureParams) -> Result<SharedExposure> {
    let e1 = exposure_of(chain, a1, params)?;
    let e2 = exposure_of(chain, a2, params)?;
    Ok(SharedExposure {
        pair: (a1.to_owned(), a2.to_owned()),
        score: ruzicka(&e1.weights, &e2.weights),
    })
}

/// `origin,destination,weight,hops`
pub fn write_exposure_csv<W: Write>(chain: &Chain, vectors: &[ExposureVector], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["origin", "destination", "weight", "hops"])?;
    for v in vectors {
        for (dest, weight) in &v.weights {
            w.write_record([
                chain.address(v.origin),
                chain.address(*dest),
                &format!("{weight:.9}"),
                &v.hop_bound.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<exposure csv>", e))?;
    Ok(())
}

/// `addr1,addr2,score`
pub fn write_overlap_csv<W: Write>(scores: &[SharedExposure], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["addr1", "addr2", "score"])?;
    for s in scores {
        w.write_record([s.pair.0.as_str(), s.pair.1.as_str(), &format!("{:.9}", s.score)])?;
    }
    w.flush().map_err(|e| Error::io("<overlap csv>", e))?;
    Ok(())
}

/// Where backtraced funds came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Cluster(ClusterId),
    /// Funds of unknown provenance: inputs from outside the extract whose
    /// cluster is not a stopping point, or inputs without an address.
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceShare {
    pub source: Source,
    pub attributed_sat: f64,
    pub attributed_usd: f64,
    pub share: f64,
}

/// Walks funding transactions backward from every receipt of `addr`,
/// splitting value across inputs pro rata at each hop.
///
/// An input ends the walk at its cluster when that cluster satisfies
/// `stop`, or when `depth` hops have been taken. Otherwise a resolved input
/// is followed to the transaction that created it, and an unresolved one is
/// credited to [`Source::External`]. USD values use the receipt date's price
/// when `prices` is given.
pub fn backtrace(
    chain: &Chain,
    clusters: &ClusterAssignment,
    addr: AddressId,
    depth: u8,
    stop: &dyn Fn(ClusterId) -> bool,
    prices: Option<&PriceTable>,
) -> Result<Vec<SourceShare>> {
    let depth = depth.clamp(1, DEFAULT_HOPS);
    let mut sat: HashMap<Source, f64> = HashMap::new();
    let mut usd: HashMap<Source, f64> = HashMap::new();
    let mut total = 0.0;

    for receipt in chain.receipts(addr) {
        let value = chain.output(*receipt).value as f64;
        if value == 0.0 {
            continue;
        }
        total += value;
        let receipt_usd = match prices {
            Some(p) => usd_value(value as u64, chain.tx(receipt.tx).date(), p)?.to_f64(),
            None => 0.0,
        };
        let mut credited: HashMap<Source, f64> = HashMap::new();
        walk_back(chain, clusters, receipt.tx, 1.0, 1, depth, stop, &mut credited);
        for (source, fraction) in credited {
            *sat.entry(source).or_insert(0.0) += fraction * value;
            *usd.entry(source).or_insert(0.0) += fraction * receipt_usd;
        }
    }

    let mut ranked: Vec<SourceShare> = sat
        .into_iter()
        .map(|(source, s)| SourceShare {
            source,
            attributed_sat: s,
            attributed_usd: usd.get(&source).copied().unwrap_or(0.0),
            share: if total > 0.0 { s / total } else { 0.0 },
        })
        .collect();
    sort_shares(&mut ranked);
    Ok(ranked)
}

pub(crate) fn sort_shares(shares: &mut [SourceShare]) {
    shares.sort_by(|a, b| {
        b.share
            .partial_cmp(&a.share)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.source.cmp(&b.source))
    });
}

#[allow(clippy::too_many_arguments)]
fn walk_back(
    chain: &Chain,
    clusters: &ClusterAssignment,
    tx: TxIndex,
    mass: f64,
    hop: u8,
    depth: u8,
    stop: &dyn Fn(ClusterId) -> bool,
    credited: &mut HashMap<Source, f64>,
) {
    let tx = chain.tx(tx);
    let in_sum = tx.input_value();
    if in_sum == 0 {
        *credited.entry(Source::External).or_insert(0.0) += mass;
        return;
    }
    for input in &tx.inputs {
        let m = mass * input.value as f64 / in_sum as f64;
        if m == 0.0 {
            continue;
        }
        let Some(a) = input.address else {
            *credited.entry(Source::External).or_insert(0.0) += m;
            continue;
        };
        let c = clusters.cluster_of_id(a);
        if stop(c) || hop >= depth {
            *credited.entry(Source::Cluster(c)).or_insert(0.0) += m;
            continue;
        }
        match input.source {
            InputSource::Resolved(r) => walk_back(chain, clusters, r.tx, m, hop + 1, depth, stop, credited),
            InputSource::External | InputSource::Dangling(_) => {
                *credited.entry(Source::External).or_insert(0.0) += m;
            }
        }
    }
}

/// Value-weighted share of `addr`'s receipts whose direct (hop-1) inputs lie
/// in clusters accepted by `accept`.
pub fn direct_origin_share(
    chain: &Chain,
    clusters: &ClusterAssignment,
    addr: AddressId,
    accept: &dyn Fn(ClusterId) -> bool,
) -> f64 {
    let mut total = 0.0;
    let mut accepted = 0.0;
    for receipt in chain.receipts(addr) {
        let value = chain.output(*receipt).value as f64;
        let tx = chain.tx(receipt.tx);
        let in_sum = tx.input_value() as f64;
        total += value;
        if in_sum == 0.0 {
            continue;
        }
        for input in &tx.inputs {
            if let Some(a) = input.address {
                if accept(clusters.cluster_of_id(a)) {
                    accepted += value * input.value as f64 / in_sum;
                }
            }
        }
    }
    if total > 0.0 {
        accepted / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::cluster::cluster_multi_input;
    use crate::testutil::{ext, random_chain, spend, tx};

    /// Exposure by explicit enumeration of every path, no aggregation.
    fn brute_force_paths(chain: &Chain, origin: AddressId, hops: u8) -> (BTreeMap<AddressId, f64>, Vec<f64>) {
        #[allow(clippy::too_many_arguments)]
        fn go(
            chain: &Chain,
            origin: AddressId,
            t: TxIndex,
            mass: f64,
            hop: usize,
            hops: usize,
            w: &mut BTreeMap<AddressId, f64>,
            per_hop: &mut Vec<f64>,
        ) {
            let tx = chain.tx(t);
            let sum: u64 = tx.output_value();
            if sum == 0 {
                return;
            }
            for o in &tx.outputs {
                if o.address == origin || o.value == 0 {
                    continue;
                }
                let m = mass * o.value as f64 / sum as f64;
                *w.entry(o.address).or_insert(0.0) += m;
                per_hop[hop] += m;
                if hop + 1 < hops {
                    if let Some(s) = o.spent_by {
                        go(chain, origin, s, m, hop + 1, hops, w, per_hop);
                    }
                }
            }
        }
        let total = chain.sent_sat(origin) as f64;
        let mut w = BTreeMap::new();
        let mut per_hop = vec![0.0; hops as usize];
        for &t in chain.spends(origin) {
            let f = chain.contributed_sat(origin, t) as f64 / total;
            go(chain, origin, t, f, 0, hops as usize, &mut w, &mut per_hop);
        }
        for v in w.values_mut() {
            *v = v.min(1.0);
        }
        (w, per_hop)
    }

    fn dense_ruzicka(a: &BTreeMap<AddressId, f64>, b: &BTreeMap<AddressId, f64>, n: usize) -> f64 {
        let (mut lo, mut hi) = (0.0, 0.0);
        for i in 0..n as u32 {
            let x = a.get(&AddressId(i)).copied().unwrap_or(0.0);
            let y = b.get(&AddressId(i)).copied().unwrap_or(0.0);
            lo += x.min(y);
            hi += x.max(y);
        }
        if hi > 0.0 {
            lo / hi
        } else {
            0.0
        }
    }

    fn id(chain: &Chain, a: &str) -> AddressId {
        chain.address_id(a).unwrap()
    }

    #[test]
    fn single_destination_one_hop() {
        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("x", 100)], &[("p", 100)]),
            tx("s", 2, vec![spend("f", 0)], &[("d", 99)]),
        ])
        .unwrap();
        let e = exposure(&chain, id(&chain, "p"), ExposureParams::with_hops(1));
        assert_eq!(e.weights.into_iter().collect::<Vec<_>>(), vec![(id(&chain, "d"), 1.0)]);
    }

    #[test]
    fn eighty_twenty_split() {
        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("x", 100)], &[("p", 100)]),
            tx("s", 2, vec![spend("f", 0)], &[("d1", 80), ("d2", 20)]),
        ])
        .unwrap();
        let e = exposure(&chain, id(&chain, "p"), ExposureParams::with_hops(1));
        assert!((e.weight(id(&chain, "d1")) - 0.8).abs() < 1e-12);
        assert!((e.weight(id(&chain, "d2")) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn later_hops_accumulate_and_origin_returns_are_dropped() {
        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("x", 100)], &[("p", 100)]),
            tx("s", 2, vec![spend("f", 0)], &[("d1", 50), ("p", 50)]),
            tx("u", 3, vec![spend("s", 0), ext("y", 50)], &[("d2", 100)]),
        ])
        .unwrap();
        let p = id(&chain, "p");
        let e = exposure(&chain, p, ExposureParams::with_hops(2));
        assert!(!e.weights.contains_key(&p));
        assert!((e.weight(id(&chain, "d1")) - 0.5).abs() < 1e-12);
        assert!((e.weight(id(&chain, "d2")) - 0.5).abs() < 1e-12);
        assert_eq!(e.hop_mass.len(), 2);
    }

    #[test]
    fn unknown_address_errors() {
        let chain = Chain::empty();
        assert!(matches!(
            exposure_of(&chain, "nope", ExposureParams::default()),
            Err(Error::UnknownAddress(_))
        ));
    }

    #[test]
    fn pruning_drops_dust_paths() {
        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("x", 1_000_000)], &[("p", 1_000_000)]),
            tx("s", 2, vec![spend("f", 0)], &[("big", 999_950), ("dust", 50)]),
        ])
        .unwrap();
        let e = exposure(&chain, id(&chain, "p"), ExposureParams::default());
        assert!(e.weights.contains_key(&id(&chain, "big")));
        assert!(!e.weights.contains_key(&id(&chain, "dust")));
    }

    #[test]
    fn jaccard_edge_cases() {
        let a: BTreeMap<u32, f64> = [(1, 0.5), (2, 0.5)].into();
        let b: BTreeMap<u32, f64> = [(3, 0.5), (4, 0.5)].into();
        let empty = BTreeMap::<u32, f64>::new();
        assert_eq!(ruzicka(&a, &a), 1.0);
        assert_eq!(ruzicka(&a, &b), 0.0);
        assert_eq!(ruzicka(&empty, &empty), 0.0);
        let c: BTreeMap<u32, f64> = [(1, 0.25), (5, 0.75)].into();
        // min sum 0.25, max sum 0.5 + 0.5 + 0.75
        assert!((ruzicka(&a, &c) - 0.25 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn half_pooled_payments() {
        // p1 and p2 each send half to a shared pool and half to their own
        // wallet; brute force: min sum 0.5, max sum 0.5 + 0.5 + 0.5 = 1.5.
        let chain = Chain::from_raw(vec![
            tx("f1", 1, vec![ext("x1", 100)], &[("p1", 100)]),
            tx("f2", 1, vec![ext("x2", 300)], &[("p2", 300)]),
            tx("s1", 2, vec![spend("f1", 0)], &[("pool", 50), ("w1", 50)]),
            tx("s2", 2, vec![spend("f2", 0)], &[("pool", 150), ("w2", 150)]),
        ])
        .unwrap();
        let s = shared_exposure(&chain, "p1", "p2", ExposureParams::default()).unwrap();
        assert!((s.score - 1.0 / 3.0).abs() < 1e-9);
        let rev = shared_exposure(&chain, "p2", "p1", ExposureParams::default()).unwrap();
        assert_eq!(s.score, rev.score);
    }

    #[test]
    fn backtrace_single_source() {
        let chain = Chain::from_raw(vec![
            tx("f", 1, vec![ext("x", 100)], &[("p", 100)]),
        ])
        .unwrap();
        let clusters = cluster_multi_input(&chain);
        let shares = backtrace(&chain, &clusters, id(&chain, "p"), 1, &|_| false, None).unwrap();
        let x = clusters.cluster_of(&chain, "x").unwrap();
        assert_eq!(shares.len(), 1);
        assert_eq!(shares[0].source, Source::Cluster(x));
        assert_eq!(shares[0].share, 1.0);
        assert_eq!(shares[0].attributed_sat, 100.0);
    }

    #[test]
    fn backtrace_sixty_forty() {
        let chain = Chain::from_raw(vec![
            tx("f1", 1, vec![ext("x", 60)], &[("p", 60)]),
            tx("f2", 1, vec![ext("y", 40)], &[("p", 40)]),
        ])
        .unwrap();
        let clusters = cluster_multi_input(&chain);
        let shares = backtrace(&chain, &clusters, id(&chain, "p"), 3, &|_| true, None).unwrap();
        assert_eq!(shares.len(), 2);
        assert!((shares[0].share - 0.6).abs() < 1e-12);
        assert!((shares[1].share - 0.4).abs() < 1e-12);
        assert_eq!(shares[0].source, Source::Cluster(clusters.cluster_of(&chain, "x").unwrap()));
    }

    #[test]
    fn backtrace_walks_through_unlabeled_hops() {
        let chain = Chain::from_raw(vec![
            tx("fx", 1, vec![ext("ex", 60)], &[("x", 60)]),
            tx("fy", 1, vec![ext("ey", 40)], &[("y", 40)]),
            tx("f", 2, vec![spend("fx", 0), spend("fy", 0)], &[("p", 100)]),
        ])
        .unwrap();
        let clusters = cluster_multi_input(&chain);
        // Past hop 2 the sources are externally funded and not stopping points.
        let shares = backtrace(&chain, &clusters, id(&chain, "p"), 3, &|_| false, None).unwrap();
        assert_eq!(shares.len(), 1);
        assert_eq!(shares[0].source, Source::External);
        assert_eq!(shares[0].share, 1.0);

        let shares = backtrace(&chain, &clusters, id(&chain, "p"), 2, &|_| false, None).unwrap();
        let ex = clusters.cluster_of(&chain, "ex").unwrap();
        let ey = clusters.cluster_of(&chain, "ey").unwrap();
        let get = |c| shares.iter().find(|s| s.source == Source::Cluster(c)).unwrap().share;
        assert!((get(ex) - 0.6).abs() < 1e-12);
        assert!((get(ey) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn direct_share_counts_value() {
        let chain = Chain::from_raw(vec![
            tx("f1", 1, vec![ext("x", 989)], &[("p", 989)]),
            tx("f2", 1, vec![ext("y", 11)], &[("p", 11)]),
        ])
        .unwrap();
        let clusters = cluster_multi_input(&chain);
        let x = clusters.cluster_of(&chain, "x").unwrap();
        let share = direct_origin_share(&chain, &clusters, id(&chain, "p"), &|c| c == x);
        assert!((share - 0.989).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn matches_path_enumeration(seed in any::<u64>(), n in 1usize..120, hops in 1u8..=3) {
            let chain = random_chain(seed, n, 25);
            let params = ExposureParams { hops, prune_floor: 0.0 };
            for a in chain.address_ids().take(10) {
                let e = exposure(&chain, a, params);
                let (w, per_hop) = brute_force_paths(&chain, a, hops);
                prop_assert_eq!(e.weights.len(), w.len());
                for (k, v) in &w {
                    prop_assert!((e.weight(*k) - v).abs() < 1e-9);
                }
                for (x, y) in e.hop_mass.iter().zip(&per_hop) {
                    prop_assert!((x - y).abs() < 1e-9);
                    prop_assert!(*x <= 1.0 + WEIGHT_EPSILON);
                }
            }
        }

        #[test]
        fn jaccard_properties(seed in any::<u64>(), n in 1usize..150) {
            let chain = random_chain(seed, n, 20);
            let params = ExposureParams::default();
            let vectors: Vec<_> = chain.address_ids().map(|a| exposure(&chain, a, params)).collect();
            for e1 in &vectors {
                for w in e1.weights.values() {
                    prop_assert!((0.0..=1.0).contains(w));
                }
                if !e1.is_empty() {
                    prop_assert_eq!(ruzicka(&e1.weights, &e1.weights), 1.0);
                }
                for e2 in &vectors {
                    let s = ruzicka(&e1.weights, &e2.weights);
                    prop_assert_eq!(s, ruzicka(&e2.weights, &e1.weights));
                    prop_assert!((0.0..=1.0).contains(&s));
                    let oracle = dense_ruzicka(&e1.weights, &e2.weights, chain.address_count());
                    prop_assert!((s - oracle).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn union_mass_grows_with_hops(seed in any::<u64>(), n in 1usize..150) {
            let chain = random_chain(seed, n, 20);
            let ids: Vec<AddressId> = chain.address_ids().take(8).collect();
            for &a in &ids {
                for &b in &ids {
                    let mut last = 0.0;
                    for hops in 1..=3 {
                        let p = ExposureParams { hops, prune_floor: 0.0 };
                        let (ea, eb) = (exposure(&chain, a, p), exposure(&chain, b, p));
                        let mut union = 0.0;
                        for k in ea.weights.keys().chain(eb.weights.keys()).collect::<std::collections::BTreeSet<_>>() {
                            union += ea.weight(*k).max(eb.weight(*k));
                        }
                        prop_assert!(union + 1e-12 >= last);
                        last = union;
                    }
                }
            }
        }

        #[test]
        fn backtrace_shares_sum_to_one(seed in any::<u64>(), n in 1usize..150, depth in 1u8..=3) {
            let chain = random_chain(seed, n, 20);
            let clusters = cluster_multi_input(&chain);
            for a in chain.address_ids() {
                if chain.received_sat(a) == 0 {
                    continue;
                }
                let shares = backtrace(&chain, &clusters, a, depth, &|c| c.0 % 3 == 0, None).unwrap();
                let total: f64 = shares.iter().map(|s| s.share).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
