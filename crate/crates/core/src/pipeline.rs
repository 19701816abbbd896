//! Stage runner shared by the command-line tool and the tests.
//!
//! Stages read configured inputs plus the CSV outputs of earlier stages from
//! the output directory, so each can be rerun on its own and `pipeline` can
//! resume from whatever is already cached.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analytics::{
    central_tendency, destination_type_tally, family_overlap, label_families, payment_exposures, payments_over_time,
    split_by_percentile, write_dest_types_csv, write_split_percentile_csv, write_tendency_csv, write_timeseries_csv,
    Bucket,
};
use crate::chain::{ingest_chain, write_chain_jsonl, Chain, ChainFormat, LabelIndex, LabelSet, PriceTable, SeedSet};
use crate::cluster::{cluster_with_change, ClusterAssignment};
use crate::config::RunConfig;
use crate::detect::{
    classify_expanded, classify_origin_payments, rank_source_clusters, read_payments_csv, seed_records,
    write_payments_csv, write_sources_csv, PaymentRecord,
};
use crate::error::{Error, Result};
use crate::flow::{ruzicka, write_exposure_csv, write_overlap_csv, SharedExposure};
use crate::split::{detect_split, split_rate_by_family, write_split_rates_csv, write_splits_csv};
use crate::validation::{labeled_value_ecdf, validate, write_ecdf_csv, write_summary_csv, write_validation_csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Cluster,
    RankSources,
    DetectOrigin,
    DetectExpanded,
    Splits,
    Analyze,
    Validate,
}

pub const PAYMENTS_FILE: &str = "payments.csv";
pub const ORIGIN_FILE: &str = "payments_origin.csv";

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Cluster,
        Stage::RankSources,
        Stage::DetectOrigin,
        Stage::DetectExpanded,
        Stage::Splits,
        Stage::Analyze,
        Stage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::RankSources => "rank-sources",
            Stage::DetectOrigin => "detect-origin",
            Stage::DetectExpanded => "detect-expanded",
            Stage::Splits => "splits",
            Stage::Analyze => "analyze",
            Stage::Validate => "validate",
        }
    }

    /// Files the stage writes into the output directory.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["chain_canonical.jsonl", "addresses.csv"],
            Stage::Cluster => &["cluster.csv"],
            Stage::RankSources => &["sources.csv"],
            Stage::DetectOrigin => &[ORIGIN_FILE, "origin_already_known.csv", "origin_rejected.csv"],
            Stage::DetectExpanded => &["payments_expanded.csv", PAYMENTS_FILE],
            Stage::Splits => &["splits.csv", "split_rates.csv"],
            Stage::Analyze => &[
                "families.csv",
                "timeseries.csv",
                "tendency.csv",
                "dest_types.csv",
                "overlap_matrix.csv",
                "split_percentile.csv",
                "exposure.csv",
                "overlap.csv",
            ],
            Stage::Validate => &[
                "validation.csv",
                "validation_summary.csv",
                "ecdf_ransomware.csv",
                "ecdf_highrisk.csv",
                "ecdf_lowrisk.csv",
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReport {
    pub files: Vec<PathBuf>,
    /// `(label, value)` rows for the summary table.
    pub summary: Vec<(String, String)>,
    /// True when cached outputs were reused.
    pub cached: bool,
}

impl StageReport {
    fn row(&mut self, label: &str, value: impl fmt::Display) {
        self.summary.push((label.to_owned(), value.to_string()));
    }
}

/// Inputs loaded on first use.
pub struct Workspace {
    pub config: RunConfig,
    chain: OnceCell<Chain>,
    clusters: OnceCell<ClusterAssignment>,
    prices: OnceCell<Option<PriceTable>>,
    labels: OnceCell<LabelSet>,
    independent: OnceCell<LabelSet>,
    seeds: OnceCell<SeedSet>,
}

fn missing_input(what: &str, key: &str) -> Error {
    Error::Config(format!("missing input: {what} (set `{key}` in the config or pass --{})", key.replace('_', "-")))
}

fn chain_format(path: &Path) -> ChainFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => ChainFormat::Csv,
        _ => ChainFormat::Jsonl,
    }
}

impl Workspace {
    pub fn new(config: RunConfig) -> Self {
        Workspace {
            config,
            chain: OnceCell::new(),
            clusters: OnceCell::new(),
            prices: OnceCell::new(),
            labels: OnceCell::new(),
            independent: OnceCell::new(),
            seeds: OnceCell::new(),
        }
    }

    fn load<T>(cell: &OnceCell<T>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
        if let Some(v) = cell.get() {
            return Ok(v);
        }
        let v = f()?;
        Ok(cell.get_or_init(|| v))
    }

    pub fn chain(&self) -> Result<&Chain> {
        Self::load(&self.chain, || {
            let path = self.config.chain.as_ref().ok_or_else(|| missing_input("chain file", "chain"))?;
            ingest_chain(path, chain_format(path))
        })
    }

    pub fn clusters(&self) -> Result<&ClusterAssignment> {
        let chain = self.chain()?;
        Self::load(&self.clusters, || Ok(cluster_with_change(chain, self.config.change_clustering)))
    }

    pub fn prices(&self) -> Result<Option<&PriceTable>> {
        let p = Self::load(&self.prices, || match &self.config.prices {
            Some(path) => PriceTable::read_csv(path).map(Some),
            None => Ok(None),
        })?;
        Ok(p.as_ref())
    }

    fn require_prices(&self) -> Result<&PriceTable> {
        self.prices()?.ok_or_else(|| missing_input("price table", "prices"))
    }

    pub fn labels(&self) -> Result<&LabelSet> {
        Self::load(&self.labels, || match &self.config.labels {
            Some(path) => LabelSet::read_csv(path),
            None => Err(missing_input("label file", "labels")),
        })
    }

    pub fn independent_labels(&self) -> Result<&LabelSet> {
        Self::load(&self.independent, || match &self.config.independent_labels {
            Some(path) => LabelSet::read_csv(path),
            None => Err(missing_input("independent label file", "independent_labels")),
        })
    }

    pub fn label_index(&self) -> Result<LabelIndex<'_>> {
        Ok(LabelIndex::new(self.chain()?, self.labels()?))
    }

    pub fn seeds(&self) -> Result<&SeedSet> {
        Self::load(&self.seeds, || {
            let path = self.config.seeds.as_ref().ok_or_else(|| missing_input("seed file", "seeds"))?;
            let seeds = SeedSet::read_csv(path)?;
            if seeds.is_empty() {
                return Err(Error::EmptySeeds);
            }
            Ok(seeds)
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn write(&self, report: &mut StageReport, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.out(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        report.files.push(path);
        Ok(())
    }

    /// Payment records from an earlier stage's export, with chain totals
    /// restored.
    fn cached_payments(&self, name: &str, stage: Stage) -> Result<Vec<PaymentRecord>> {
        let path = self.out(name);
        if !path.is_file() {
            return Err(Error::MissingStage {
                stage: stage.name().to_owned(),
                path,
            });
        }
        let chain = self.chain()?;
        let prices = self.prices()?;
        read_payments_csv(&path)?
            .into_iter()
            .map(|r| {
                let mut full = PaymentRecord::from_chain(chain, &r.address, r.family.as_deref(), r.provenance, prices)?;
                full.trace = r.trace;
                Ok(full)
            })
            .collect()
    }

    pub fn is_cached(&self, stage: Stage) -> bool {
        stage.outputs().iter().all(|f| self.out(f).is_file())
    }

    pub fn run(&self, stage: Stage) -> Result<StageReport> {
        self.config.validate()?;
        std::fs::create_dir_all(&self.config.out).map_err(|e| Error::io(&self.config.out, e))?;
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Cluster => self.cluster(),
            Stage::RankSources => self.rank_sources(),
            Stage::DetectOrigin => self.detect_origin(),
            Stage::DetectExpanded => self.detect_expanded(),
            Stage::Splits => self.splits(),
            Stage::Analyze => self.analyze(),
            Stage::Validate => self.validate(),
        }
    }

    /// Runs every stage in order. With `resume`, stages whose outputs all
    /// exist are skipped.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageReport)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if self.config.resume && self.is_cached(stage) {
                let report = StageReport {
                    files: stage.outputs().iter().map(|f| self.out(f)).collect(),
                    summary: Vec::new(),
                    cached: true,
                };
                out.push((stage, report));
                continue;
            }
            out.push((stage, self.run(stage)?));
        }
        Ok(out)
    }

    fn ingest(&self) -> Result<StageReport> {
        let chain = self.chain()?;
        let prices = self.prices()?;
        let mut r = StageReport::default();
        self.write(&mut r, "chain_canonical.jsonl", |w| write_chain_jsonl(chain, w))?;
        self.write(&mut r, "addresses.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "address",
                "received_btc",
                "received_usd",
                "incoming_tx_count",
                "first_seen",
                "last_seen",
            ])?;
            for a in chain.address_ids() {
                let addr = chain.address(a);
                let t = chain.address_totals(addr, prices)?;
                let date = |ts: Option<i64>| ts.map(|t| crate::chain::utc_date(t).to_string()).unwrap_or_default();
                c.write_record([
                    addr.to_owned(),
                    format!("{:.8}", t.received_sat as f64 / crate::chain::SATS_PER_BTC as f64),
                    prices.map(|_| t.received_usd.to_string()).unwrap_or_default(),
                    t.incoming_tx_count.to_string(),
                    date(t.first_seen),
                    date(t.last_seen),
                ])?;
            }
            c.flush().map_err(|e| Error::io("<addresses csv>", e))?;
            Ok(())
        })?;
        r.row("transactions", chain.len());
        r.row("addresses", chain.address_count());
        Ok(r)
    }

    fn cluster(&self) -> Result<StageReport> {
        let chain = self.chain()?;
        let clusters = self.clusters()?;
        let mut r = StageReport::default();
        self.write(&mut r, "cluster.csv", |w| clusters.write_csv(chain, w))?;
        r.row("addresses", chain.address_count());
        r.row("clusters", clusters.cluster_count());
        r.row("change clustering", self.config.change_clustering);
        Ok(r)
    }

    fn rank_sources(&self) -> Result<StageReport> {
        let ranking = rank_source_clusters(
            self.seeds()?,
            self.config.backtrace_depth,
            self.chain()?,
            self.clusters()?,
            &self.label_index()?,
            self.prices()?,
        )?;
        let mut r = StageReport::default();
        self.write(&mut r, "sources.csv", |w| write_sources_csv(&ranking, w))?;
        for row in ranking.rows.iter().take(5) {
            let name = match (&row.entity, &row.source) {
                (Some(e), _) => e.clone(),
                (None, crate::flow::Source::Cluster(c)) => format!("cluster {}", c.0),
                (None, crate::flow::Source::External) => "external".to_owned(),
            };
            r.row(&name, format!("{:.1}%", row.share * 100.0));
        }
        r.row("seeds absent from chain", ranking.skipped.len());
        Ok(r)
    }

    fn detect_origin(&self) -> Result<StageReport> {
        let d = classify_origin_payments(
            self.config.detector,
            self.chain()?,
            self.clusters()?,
            &self.label_index()?,
            self.seeds()?,
            self.prices()?,
        )?;
        let mut r = StageReport::default();
        self.write(&mut r, ORIGIN_FILE, |w| write_payments_csv(&d.found, w))?;
        self.write(&mut r, "origin_already_known.csv", |w| write_payments_csv(&d.already_known, w))?;
        self.write(&mut r, "origin_rejected.csv", |w| write_payments_csv(&d.rejected, w))?;
        r.row("found", d.found.len());
        r.row("already known", d.already_known.len());
        r.row("rejected", d.rejected.len());
        if self.prices()?.is_some() {
            let usd: crate::chain::Usd = d.found.iter().chain(&d.already_known).filter_map(|p| p.total_usd).sum();
            r.row("total USD (found + known)", usd);
        }
        Ok(r)
    }

    fn detect_expanded(&self) -> Result<StageReport> {
        let chain = self.chain()?;
        let prices = self.prices()?;
        let seeds = self.seeds()?;
        let origin = self.cached_payments(ORIGIN_FILE, Stage::DetectOrigin)?;
        let mut known: Vec<String> = seeds.seeds.iter().map(|s| s.address.clone()).collect();
        known.extend(origin.iter().map(|p| p.address.clone()));
        known.sort();
        known.dedup();
        let expanded = classify_expanded(
            self.config.detector,
            chain,
            self.clusters()?,
            &self.label_index()?,
            seeds,
            &known,
            prices,
        )?;
        let mut all = seed_records(chain, seeds, prices)?;
        all.extend(origin);
        all.extend(expanded.iter().cloned());
        all.sort_by(|a, b| a.address.cmp(&b.address).then(a.provenance.cmp(&b.provenance)));
        let mut r = StageReport::default();
        self.write(&mut r, "payments_expanded.csv", |w| write_payments_csv(&expanded, w))?;
        self.write(&mut r, PAYMENTS_FILE, |w| write_payments_csv(&all, w))?;
        r.row("expanded", expanded.len());
        r.row("payments (all datasets)", all.len());
        if prices.is_some() {
            let usd: crate::chain::Usd = all.iter().filter_map(|p| p.total_usd).sum();
            r.row("total USD", usd);
        }
        Ok(r)
    }

    fn payments(&self) -> Result<Vec<PaymentRecord>> {
        self.cached_payments(PAYMENTS_FILE, Stage::DetectExpanded)
    }

    fn splits(&self) -> Result<StageReport> {
        let chain = self.chain()?;
        let payments = self.payments()?;
        let params = self.config.detector.split;
        let findings = find_splits(chain, &payments, params);
        let rates = split_rate_by_family(chain, &payments, params);
        let mut r = StageReport::default();
        self.write(&mut r, "splits.csv", |w| write_splits_csv(chain, &findings, w))?;
        self.write(&mut r, "split_rates.csv", |w| write_split_rates_csv(&rates, w))?;
        let unique: BTreeSet<&str> = payments.iter().map(|p| p.address.as_str()).collect();
        r.row("payments", unique.len());
        r.row("splitting", findings.len());
        Ok(r)
    }

    fn analyze(&self) -> Result<StageReport> {
        let chain = self.chain()?;
        let payments = self.payments()?;
        let prices = self.require_prices()?;
        let index = &self.label_index()?;
        let params = self.config.exposure_params();
        let labeling = label_families(&payments, chain, index, params);
        let series = payments_over_time(&payments, chain, prices, Bucket::Month)?;
        let tendency = central_tendency(&payments);
        let dest = destination_type_tally(&payments, chain, index, params);
        let clusters = if self.config.overlap.by_cluster { Some(self.clusters()?) } else { None };
        let matrix = family_overlap(&labeling, &payments, chain, clusters, params, self.config.overlap);
        let matrix = if self.config.row_normalized { matrix.row_normalized() } else { matrix };
        let findings = find_splits(chain, &payments, self.config.detector.split);
        let curve = split_by_percentile(chain, &payments, &findings);
        let exposures = payment_exposures(chain, &payments, params);
        let pairs = overlapping_pairs(&exposures);

        let mut r = StageReport::default();
        self.write(&mut r, "families.csv", |w| labeling.write_csv(w))?;
        self.write(&mut r, "timeseries.csv", |w| write_timeseries_csv(&series, w))?;
        self.write(&mut r, "tendency.csv", |w| write_tendency_csv(&tendency, w))?;
        self.write(&mut r, "dest_types.csv", |w| write_dest_types_csv(&dest, w))?;
        self.write(&mut r, "overlap_matrix.csv", |w| matrix.write_csv(w))?;
        self.write(&mut r, "split_percentile.csv", |w| write_split_percentile_csv(&curve, w))?;
        let vectors: Vec<_> = exposures.values().cloned().collect();
        self.write(&mut r, "exposure.csv", |w| write_exposure_csv(chain, &vectors, w))?;
        self.write(&mut r, "overlap.csv", |w| write_overlap_csv(&pairs, w))?;

        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for f in labeling.families.values() {
            *counts.entry(f.as_str()).or_insert(0) += 1;
        }
        let mut top: Vec<(&str, usize)> = counts.into_iter().collect();
        top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (f, n) in top.iter().take(5) {
            r.row(&format!("family {f}"), n);
        }
        if let Some(all) = tendency.iter().find(|t| t.bucket == "all") {
            r.row("mean USD", format!("{:.0}", all.mean_usd));
            r.row("median USD", format!("{:.0}", all.median_usd));
        }
        if let Some((_, f)) = dest.iter().find(|(c, _)| *c == crate::chain::Category::Mixer) {
            r.row("mixer fraction", format!("{f:.3}"));
        }
        Ok(r)
    }

    fn validate(&self) -> Result<StageReport> {
        let chain = self.chain()?;
        let payments = self.payments()?;
        let report = validate(
            &payments,
            chain,
            self.labels()?,
            self.independent_labels()?,
            self.config.exposure_params(),
        )?;
        let [ransomware, highrisk, lowrisk] = labeled_value_ecdf(&report.outcomes);
        let mut r = StageReport::default();
        self.write(&mut r, "validation.csv", |w| write_validation_csv(&report.outcomes, w))?;
        self.write(&mut r, "validation_summary.csv", |w| write_summary_csv(&report.summary, w))?;
        self.write(&mut r, "ecdf_ransomware.csv", |w| write_ecdf_csv(&ransomware, w))?;
        self.write(&mut r, "ecdf_highrisk.csv", |w| write_ecdf_csv(&highrisk, w))?;
        self.write(&mut r, "ecdf_lowrisk.csv", |w| write_ecdf_csv(&lowrisk, w))?;
        for s in &report.summary {
            r.row(
                &s.dataset,
                format!(
                    "n={} all-ransomware={} some-ransomware={} all-illicit={} some-illicit={} fp={} (${})",
                    s.addresses,
                    s.all_ransomware,
                    s.some_ransomware,
                    s.all_illicit,
                    s.some_illicit,
                    s.suspected_fp,
                    s.suspected_fp_usd
                ),
            );
        }
        Ok(r)
    }
}

/// Split findings for each distinct payment address, in address order.
pub fn find_splits(
    chain: &Chain,
    payments: &[PaymentRecord],
    params: crate::split::SplitParams,
) -> Vec<crate::split::SplitFinding> {
    let addrs: BTreeSet<&str> = payments.iter().map(|p| p.address.as_str()).collect();
    addrs
        .into_iter()
        .filter_map(|a| chain.address_id(a))
        .filter_map(|a| detect_split(chain, a, params))
        .collect()
}

/// Shared-exposure scores for every pair of payments whose exposure vectors
/// intersect, sorted by pair.
pub fn overlapping_pairs(exposures: &BTreeMap<String, crate::flow::ExposureVector>) -> Vec<SharedExposure> {
    let entries: Vec<(&String, &crate::flow::ExposureVector)> = exposures.iter().collect();
    let mut by_dest: BTreeMap<crate::chain::AddressId, Vec<usize>> = BTreeMap::new();
    for (i, (_, e)) in entries.iter().enumerate() {
        for d in e.weights.keys() {
            by_dest.entry(*d).or_default().push(i);
        }
    }
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for list in by_dest.values() {
        for (k, i) in list.iter().enumerate() {
            for j in &list[k + 1..] {
                pairs.insert((*i, *j));
            }
        }
    }
    pairs
        .into_iter()
        .map(|(i, j)| SharedExposure {
            pair: (entries[i].0.clone(), entries[j].0.clone()),
            score: ruzicka(&entries[i].1.weights, &entries[j].1.weights),
        })
        .collect()
}
