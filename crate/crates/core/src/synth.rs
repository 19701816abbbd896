//! Synthetic chains with a ground-truth manifest.
//!
//! Every multi-address entity is created by one transaction co-spending
//! external funds from all its addresses and afterwards pays out from single
//! addresses, so the co-spend partition is exactly the manifest's entity
//! list. Payments follow fixed shapes per stage:
//!
//! * seed payments: funded by one planted source, then either split on the
//!   grid into the family's affiliate pool and operator address, or sent on
//!   through an irregular two-output transaction;
//! * origin payments: funded by a negotiator cluster, at least one bitcoin
//!   over at most five receipts, always split;
//! * OTC decoys: negotiator withdrawals cashed out at exchanges;
//! * expanded payments: funded only by low-risk exchanges and split into a
//!   pool shared with seed payments;
//! * expanded decoys: exchange withdrawals split into fresh addresses.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{
    write_chain_jsonl, Category, Chain, LabelRecord, LabelSet, OutPoint, PriceTable, Provenance, RawInput,
    RawOutput, RawTransaction, Seed, SeedSet, Txid, ANCHOR_CLUSTER_A, ANCHOR_CLUSTER_B, SATS_PER_BTC,
};
use crate::error::{Error, Result};
use crate::split::{GRID_MAX_PCT, GRID_MIN_PCT};

pub const CLUSTER_A: &str = "Cluster A";
pub const CLUSTER_B: &str = "Cluster B";
pub const EXTERNAL: &str = "external";
pub const LOW_RISK_EXCHANGES: [&str; 3] = ["Gemini", "Binance", "Coinbase"];
pub const HIGH_RISK_EXCHANGE: &str = "RiskyExchange";
pub const MIXERS: [&str; 3] = ["MixerOne", "MixerTwo", "MixerThree"];
pub const LABEL_SOURCE: &str = "synth-vendor";
pub const INDEPENDENT_SOURCE: &str = "synth-independent";

const DAY: i64 = 86_400;
const HOUR: i64 = 3_600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub name: String,
    pub seed_payments: usize,
    pub orig_payments: usize,
    pub expanded_payments: usize,
    /// Fraction of seed payments that split.
    pub split_rate: f64,
}

impl FamilyConfig {
    pub fn new(name: &str, seeds: usize, orig: usize, expanded: usize, split_rate: f64) -> Self {
        FamilyConfig {
            name: name.to_owned(),
            seed_payments: seeds,
            orig_payments: orig,
            expanded_payments: expanded,
            split_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceTarget {
    pub entity: String,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub families: Vec<FamilyConfig>,
    /// Funding sources of seed payments; the remainder is external.
    pub source_targets: Vec<SourceTarget>,
    /// Share of origin payments and OTC decoys paid by Cluster B.
    pub cluster_b_share: f64,
    pub otc_decoys: usize,
    pub expanded_decoys: usize,
    pub split_grid: Vec<u32>,
    /// Width of the uniform noise added to the log size before picking a
    /// grid value; 0 makes the split a step function of size.
    pub split_noise: f64,
    /// Fraction of payments whose affiliate funds reach a mixer.
    pub mixer_rate: f64,
    /// Family pairs laundering through one shared address.
    pub rebrand_pairs: Vec<(String, String)>,
    /// Fraction of origin payments whose operator output is unlabeled.
    pub unlabeled_operator_rate: f64,
    pub max_fee_rate: f64,
    /// Mean payment size in USD per calendar year.
    pub yearly_mean_usd: Vec<(i32, f64)>,
    /// Fraction of payments dated inside the spike windows.
    pub spike_rate: f64,
    /// Addresses per multi-address entity.
    pub entity_size: usize,
}

impl ScenarioConfig {
    /// 300 seed, 150 origin and 100 expanded payments over 2019-2023 with
    /// 41% negotiator funding of seeds, 80/20-style splits and 42% mixer use.
    pub fn paper_shape(seed: u64) -> Self {
        let fam = FamilyConfig::new;
        ScenarioConfig {
            seed,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2023, 12, 31).unwrap(),
            families: vec![
                fam("Conti", 60, 40, 30, 0.6),
                fam("NetWalker", 45, 25, 15, 0.9),
                fam("Ryuk", 30, 15, 10, 0.5),
                fam("MedusaLocker", 25, 15, 10, 0.5),
                fam("Black Basta", 35, 20, 15, 0.7),
                fam("Royal", 25, 15, 10, 0.7),
                fam("Akira", 20, 10, 5, 0.5),
                fam("LockBit", 60, 10, 5, 0.9),
            ],
            source_targets: vec![
                SourceTarget { entity: CLUSTER_A.into(), share: 0.37 },
                SourceTarget { entity: CLUSTER_B.into(), share: 0.04 },
                SourceTarget { entity: "Gemini".into(), share: 0.22 },
                SourceTarget { entity: "Binance".into(), share: 0.18 },
                SourceTarget { entity: "Coinbase".into(), share: 0.15 },
            ],
            cluster_b_share: 0.1,
            otc_decoys: 200,
            expanded_decoys: 100,
            split_grid: vec![70, 75, 80, 85, 90],
            split_noise: 1.0,
            mixer_rate: 0.42,
            rebrand_pairs: vec![
                ("Conti".into(), "Black Basta".into()),
                ("Royal".into(), "Akira".into()),
            ],
            unlabeled_operator_rate: 0.3,
            max_fee_rate: 0.001,
            yearly_mean_usd: vec![
                (2019, 250_000.0),
                (2020, 600_000.0),
                (2021, 1_000_000.0),
                (2022, 2_500_000.0),
                (2023, 1_500_000.0),
            ],
            spike_rate: 0.35,
            entity_size: 12,
        }
    }

    /// A scaled-down `paper_shape`: `payments` seed payments spread over four
    /// families, with proportional origin, expanded and decoy counts.
    pub fn small(seed: u64, payments: usize) -> Self {
        let per = payments / 4;
        let mut c = Self::paper_shape(seed);
        c.families = vec![
            FamilyConfig::new("Conti", per + payments % 4, per / 2, per / 3, 0.7),
            FamilyConfig::new("Black Basta", per, per / 2, per / 3, 0.7),
            FamilyConfig::new("LockBit", per, per / 2, per / 3, 0.9),
            FamilyConfig::new("Ryuk", per, per / 2, per / 3, 0.5),
        ];
        c.rebrand_pairs = vec![("Conti".into(), "Black Basta".into())];
        c.otc_decoys = payments / 2;
        c.expanded_decoys = payments / 4;
        c.entity_size = 5;
        c
    }

    /// No payments at all; entities are still created.
    pub fn empty(seed: u64) -> Self {
        let mut c = Self::small(seed, 0);
        c.families.clear();
        c.rebrand_pairs.clear();
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let total: f64 = self.source_targets.iter().map(|s| s.share).sum();
        if self.source_targets.iter().any(|s| s.share < 0.0) || total > 1.0 + 1e-9 {
            return bad(format!("source shares must be nonnegative and sum to at most 1, got {total}"));
        }
        for s in &self.source_targets {
            if !source_names().contains(&s.entity.as_str()) {
                return bad(format!("unknown source entity {:?}", s.entity));
            }
        }
        if self.split_grid.is_empty() || self.split_grid.iter().any(|g| !(GRID_MIN_PCT..=GRID_MAX_PCT).contains(g)) {
            return bad(format!("split grid must be nonempty within {GRID_MIN_PCT}..={GRID_MAX_PCT}"));
        }
        for (name, r) in [
            ("cluster_b_share", self.cluster_b_share),
            ("mixer_rate", self.mixer_rate),
            ("unlabeled_operator_rate", self.unlabeled_operator_rate),
            ("spike_rate", self.spike_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        if !(0.0..=4.0).contains(&self.split_noise) {
            return bad("split_noise must be in [0, 4]".into());
        }
        if !(0.0..=0.01).contains(&self.max_fee_rate) {
            return bad("max_fee_rate must be in [0, 0.01]".into());
        }
        for f in &self.families {
            if !(0.0..=1.0).contains(&f.split_rate) {
                return bad(format!("split rate of {} must be in [0, 1]", f.name));
            }
        }
        for (a, b) in &self.rebrand_pairs {
            for n in [a, b] {
                if !self.families.iter().any(|f| &f.name == n) {
                    return bad(format!("rebrand pair names unknown family {n:?}"));
                }
            }
        }
        if self.end < self.start + chrono::Days::new(30) {
            return bad("date range must span at least 30 days".into());
        }
        if self.entity_size < 2 {
            return bad("entity_size must be at least 2".into());
        }
        Ok(())
    }
}

fn source_names() -> Vec<&'static str> {
    let mut v = vec![CLUSTER_A, CLUSTER_B];
    v.extend(LOW_RISK_EXCHANGES);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedStage {
    Ransomwhere,
    OrigCluster,
    Expanded,
    OtcDecoy,
    ExpandedDecoy,
}

impl PlantedStage {
    /// Pipeline stage expected to report the payment, if any.
    pub fn expected_stage(self) -> Option<&'static str> {
        match self {
            PlantedStage::Ransomwhere => Some("seeds"),
            PlantedStage::OrigCluster => Some("detect-origin"),
            PlantedStage::Expanded => Some("detect-expanded"),
            PlantedStage::OtcDecoy | PlantedStage::ExpandedDecoy => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPayment {
    pub address: String,
    pub stage: PlantedStage,
    pub expected_stage: Option<String>,
    pub family: Option<String>,
    pub source: String,
    pub total_sat: u64,
    pub receipts: usize,
    pub first_seen: i64,
    pub split_pct: Option<u32>,
    /// Larger output share of the planted split, after fees.
    pub split_share: Option<f64>,
    pub split_tx: Option<String>,
    /// Share of a planted off-grid two-output transaction.
    pub irregular_share: Option<f64>,
    pub uses_mixer: bool,
    /// Families whose payments launder through the same address.
    pub pooling_partners: Vec<String>,
    /// Whether the payment's downstream is linked to a seed payment.
    pub linkable: bool,
    /// Origin payments only: operator output carries a ransomware label.
    pub operator_labeled: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCluster {
    pub entity: String,
    pub role: String,
    pub members: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub seed: u64,
    pub transactions: usize,
    pub addresses: usize,
    /// Multi-address entities; every other address is its own cluster.
    pub clusters: Vec<PlantedCluster>,
    pub payments: Vec<PlantedPayment>,
    /// Realized funding shares of seed payments by source entity.
    pub seed_source_shares: BTreeMap<String, f64>,
    pub spike_windows: Vec<(NaiveDate, NaiveDate)>,
    pub rebrand_pairs: Vec<(String, String)>,
}

impl GroundTruthManifest {
    pub fn with_stage(&self, stage: PlantedStage) -> impl Iterator<Item = &PlantedPayment> {
        self.payments.iter().filter(move |p| p.stage == stage)
    }
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub chain: Chain,
    pub prices: PriceTable,
    pub labels: LabelSet,
    pub independent_labels: LabelSet,
    pub seeds: SeedSet,
    pub manifest: GroundTruthManifest,
}

pub const CHAIN_FILE: &str = "chain.jsonl";
pub const PRICES_FILE: &str = "prices.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const INDEPENDENT_LABELS_FILE: &str = "independent_labels.csv";
pub const SEEDS_FILE: &str = "seeds.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl SynthOutput {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(path, e))
        };
        write_chain_jsonl(&self.chain, create(CHAIN_FILE)?)?;
        self.prices.write_csv(create(PRICES_FILE)?)?;
        self.labels.write_csv(create(LABELS_FILE)?)?;
        self.independent_labels.write_csv(create(INDEPENDENT_LABELS_FILE)?)?;
        self.seeds.write_csv(create(SEEDS_FILE)?)?;
        let mut m = create(MANIFEST_FILE)?;
        serde_json::to_writer_pretty(&mut m, &self.manifest)?;
        m.write_all(b"\n").map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
        m.flush().map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
        Ok(())
    }
}

const BASE58: &[u8] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
const BECH32: &[u8] = b"qpzry9x8gf2tvdw0s3jn54khce6mua7l";

/// Syntactically plausible address derived from a tag: base58 with a `1` or
/// `3` prefix, or bech32 characters after `bc1q`.
pub fn synth_address(tag: &str) -> String {
    let digest = Sha256::digest(tag.as_bytes());
    let more = Sha256::digest(digest);
    let bytes: Vec<u8> = digest.iter().chain(more.iter()).copied().collect();
    match bytes[0] % 3 {
        0 => std::iter::once('1')
            .chain(bytes[1..34].iter().map(|b| BASE58[*b as usize % 58] as char))
            .collect(),
        1 => std::iter::once('3')
            .chain(bytes[1..34].iter().map(|b| BASE58[*b as usize % 58] as char))
            .collect(),
        _ => "bc1q"
            .chars()
            .chain(bytes[1..39].iter().map(|b| BECH32[*b as usize % 32] as char))
            .collect(),
    }
}

/// Piecewise-linear daily closing price through fixed anchor points, with a
/// small deterministic wobble.
pub fn price_curve(date: NaiveDate) -> f64 {
    const ANCHORS: [(i32, u32, u32, f64); 11] = [
        (2018, 1, 1, 14_000.0),
        (2019, 1, 1, 3_800.0),
        (2019, 7, 1, 11_000.0),
        (2020, 3, 15, 5_000.0),
        (2020, 12, 31, 29_000.0),
        (2021, 4, 15, 63_000.0),
        (2021, 7, 20, 30_000.0),
        (2021, 11, 10, 68_000.0),
        (2022, 6, 30, 20_000.0),
        (2022, 12, 31, 16_500.0),
        (2024, 3, 1, 62_000.0),
    ];
    let day = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
    let first = ANCHORS[0];
    let last = ANCHORS[ANCHORS.len() - 1];
    let base = if date <= day(first.0, first.1, first.2) {
        first.3
    } else if date >= day(last.0, last.1, last.2) {
        last.3
    } else {
        let i = ANCHORS
            .windows(2)
            .position(|w| date < day(w[1].0, w[1].1, w[1].2))
            .unwrap();
        let (a, b) = (ANCHORS[i], ANCHORS[i + 1]);
        let (da, db) = (day(a.0, a.1, a.2), day(b.0, b.1, b.2));
        let t = (date - da).num_days() as f64 / (db - da).num_days() as f64;
        a.3 + (b.3 - a.3) * t
    };
    let n = date.num_days_from_ce() as f64;
    let wobble = 1.0 + 0.02 * (n * 0.7).sin() + 0.01 * (n * 0.13).cos();
    (base * wobble * 100.0).round() / 100.0
}

struct Entity {
    name: String,
    role: &'static str,
    members: Vec<String>,
}

struct Generator<'c> {
    config: &'c ScenarioConfig,
    rng: ChaCha8Rng,
    raw: Vec<RawTransaction>,
    labels: Vec<LabelRecord>,
    next_tx: u64,
    next_addr: u64,
    base_ts: i64,
    entities: BTreeMap<String, Entity>,
    payments: Vec<PlantedPayment>,
    emitted: BTreeSet<String>,
}

/// An unspent output created by the generator.
#[derive(Clone, Copy)]
struct Utxo {
    txid: Txid,
    vout: u32,
    value: u64,
}

impl Utxo {
    fn input(self) -> RawInput {
        RawInput::Spend {
            prevout: OutPoint {
                txid: self.txid,
                vout: self.vout,
            },
            address: None,
            value: None,
        }
    }
}

impl<'c> Generator<'c> {
    fn new(config: &'c ScenarioConfig) -> Self {
        Generator {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            raw: Vec::new(),
            labels: Vec::new(),
            next_tx: 0,
            next_addr: 0,
            base_ts: ts_of(config.start) - 30 * DAY,
            entities: BTreeMap::new(),
            payments: Vec::new(),
            emitted: BTreeSet::new(),
        }
    }

    fn address(&mut self) -> String {
        self.next_addr += 1;
        synth_address(&format!("synth:{}:addr:{}", self.config.seed, self.next_addr))
    }

    fn label(&mut self, address: &str, entity: &str, category: Category, family: Option<&str>) {
        self.labels
            .push(LabelRecord::new(address, entity, category, family.map(str::to_owned), LABEL_SOURCE).expect("valid label"));
    }

    fn tx(&mut self, ts: i64, inputs: Vec<RawInput>, outputs: Vec<(String, u64)>) -> Txid {
        self.next_tx += 1;
        let txid = Txid::from_tag(&format!("synth:{}:tx:{}", self.config.seed, self.next_tx));
        for i in &inputs {
            if let RawInput::External { address, .. } = i {
                self.emitted.insert(address.clone());
            }
        }
        self.emitted.extend(outputs.iter().map(|(a, _)| a.clone()));
        self.raw.push(RawTransaction {
            txid,
            timestamp: ts,
            height: ((ts - self.base_ts) / 600) as u64,
            inputs,
            outputs: outputs
                .into_iter()
                .map(|(address, value)| RawOutput { address, value })
                .collect(),
        });
        txid
    }

    fn fee(&mut self, value: u64) -> u64 {
        let rate = self.rng.random_range(0.0..=self.config.max_fee_rate);
        (value as f64 * rate) as u64
    }

    /// Spends `inputs` into `outputs`, paying a fee out of the inputs.
    fn spend_to(&mut self, ts: i64, inputs: &[Utxo], outputs: Vec<(String, u64)>) -> Vec<Utxo> {
        let txid = self.tx(ts, inputs.iter().map(|u| u.input()).collect(), outputs.clone());
        outputs
            .iter()
            .enumerate()
            .map(|(i, (_, v))| Utxo {
                txid,
                vout: i as u32,
                value: *v,
            })
            .collect()
    }

    /// Moves all of `inputs` to one address, less a fee.
    fn forward(&mut self, ts: i64, inputs: &[Utxo], to: String) -> Utxo {
        let total: u64 = inputs.iter().map(|u| u.value).sum();
        let fee = self.fee(total);
        self.spend_to(ts, inputs, vec![(to, total - fee)])[0]
    }

    fn create_entity(&mut self, name: &str, role: &'static str, anchor: Option<&str>, label: Option<Category>) {
        let size = self.config.entity_size;
        let mut members: Vec<String> = Vec::with_capacity(size);
        if let Some(a) = anchor {
            members.push(a.to_owned());
        }
        while members.len() < size {
            let a = self.address();
            members.push(a);
        }
        let inputs = members
            .iter()
            .map(|m| RawInput::External {
                address: m.clone(),
                value: SATS_PER_BTC,
            })
            .collect();
        let ts = self.base_ts + 1;
        self.tx(ts, inputs, vec![(members[0].clone(), size as u64 * SATS_PER_BTC)]);
        if let Some(category) = label {
            for m in members.clone() {
                self.label(&m, name, category, None);
            }
        }
        self.entities.insert(
            name.to_owned(),
            Entity {
                name: name.to_owned(),
                role,
                members,
            },
        );
    }

    /// Pays `value` to `to` from a random member of `entity`, funded
    /// externally so that no change output is needed.
    fn payout(&mut self, entity: &str, ts: i64, to: &str, value: u64) -> Utxo {
        let k = self.rng.random_range(0..self.entities[entity].members.len());
        let from = self.entities[entity].members[k].clone();
        let fee = self.rng.random_range(1_000..20_000);
        let txid = self.tx(
            ts,
            vec![RawInput::External {
                address: from,
                value: value + fee,
            }],
            vec![(to.to_owned(), value)],
        );
        Utxo { txid, vout: 0, value }
    }

    /// Victim-side funding from outside the extract.
    fn external_payment(&mut self, ts: i64, to: &str, value: u64) -> Utxo {
        let victim = self.address();
        let fee = self.rng.random_range(1_000..20_000);
        let txid = self.tx(ts, vec![RawInput::External { address: victim, value: value + fee }], vec![(to.to_owned(), value)]);
        Utxo { txid, vout: 0, value }
    }

    fn deposit(&mut self, exchange: &str, category: Category) -> String {
        let a = self.address();
        self.label(&a, exchange, category, None);
        a
    }

    fn mixer_deposit(&mut self) -> String {
        let m = MIXERS[self.rng.random_range(0..MIXERS.len())];
        let a = self.address();
        self.label(&a, m, Category::Mixer, None);
        a
    }

    fn low_risk_deposit(&mut self) -> String {
        let e = LOW_RISK_EXCHANGES[self.rng.random_range(0..LOW_RISK_EXCHANGES.len())];
        self.deposit(e, Category::ExchangeLowRisk)
    }

    fn payment_time(&mut self) -> i64 {
        let c = self.config;
        let windows = spike_windows();
        let (lo, hi) = if self.rng.random_bool(c.spike_rate) {
            let w = windows[self.rng.random_range(0..windows.len())];
            (w.0.max(c.start), w.1.min(c.end))
        } else {
            (c.start, c.end)
        };
        let (lo, hi) = if lo < hi { (lo, hi) } else { (c.start, c.end) };
        let span = (ts_of(hi) - ts_of(lo) - 5 * DAY).max(DAY);
        ts_of(lo) + self.rng.random_range(0..span)
    }

    /// Lognormal size in satoshis around the year's mean in USD.
    fn payment_size(&mut self, ts: i64) -> u64 {
        const SIGMA: f64 = 0.8;
        let date = crate::chain::utc_date(ts);
        let mean = self
            .config
            .yearly_mean_usd
            .iter()
            .min_by_key(|(y, _)| (y - date.year()).abs())
            .map_or(500_000.0, |(_, m)| *m);
        let mu = mean.ln() - SIGMA * SIGMA / 2.0;
        let usd = LogNormal::new(mu, SIGMA).expect("valid lognormal").sample(&mut self.rng);
        let sat = (usd / price_curve(date) * SATS_PER_BTC as f64) as u64;
        sat.max(SATS_PER_BTC / 100)
    }

    /// Grid value rising with the payment's USD size: $1M maps to the middle
    /// of the grid, one log unit either side spans a quarter of it.
    fn grid_pick(&mut self, value: u64, ts: i64) -> u32 {
        let usd = value as f64 / SATS_PER_BTC as f64 * price_curve(crate::chain::utc_date(ts));
        let half = self.config.split_noise / 2.0;
        let jitter: f64 = if half > 0.0 { self.rng.random_range(-half..half) } else { 0.0 };
        let z = (usd / 1e6).ln();
        let u = ((z + jitter + 2.0) / 4.0).clamp(0.0, 0.999_999);
        let g = &self.config.split_grid;
        g[(u * g.len() as f64) as usize]
    }

    /// Splits `inputs` at `pct` between `affiliate` and `operator`; the fee
    /// comes out of the affiliate output. Output order is random.
    fn split(&mut self, ts: i64, inputs: &[Utxo], pct: u32, affiliate: String, operator: String) -> (Txid, f64, Utxo) {
        let total: u64 = inputs.iter().map(|u| u.value).sum();
        let fee = self.fee(total);
        let gross = (total as f64 * pct as f64 / 100.0).round() as u64;
        let aff = gross - fee;
        let op = total - gross;
        let mut outs = vec![(affiliate, aff), (operator, op)];
        let flip = self.rng.random_bool(0.5);
        if flip {
            outs.reverse();
        }
        let utxos = self.spend_to(ts, inputs, outs);
        let share = aff.max(op) as f64 / (aff + op) as f64;
        let aff_utxo = utxos[flip as usize];
        (aff_utxo.txid, share, aff_utxo)
    }

    /// Off-grid two-output spend: the larger share sits 0.45-0.55 points from
    /// the nearest grid value. Returns the share and the larger output.
    fn irregular(&mut self, ts: i64, inputs: &[Utxo], to_major: String, to_minor: String) -> (f64, Utxo) {
        let g = self.rng.random_range(55..=90) as f64 / 100.0;
        let delta = self.rng.random_range(0.0045..=0.0055) * if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let q = g + delta;
        let total: u64 = inputs.iter().map(|u| u.value).sum();
        let fee = self.fee(total);
        let net = total - fee;
        let major = (net as f64 * q).round() as u64;
        let utxos = self.spend_to(ts, inputs, vec![(to_major, major), (to_minor, net - major)]);
        (major as f64 / net as f64, utxos[0])
    }

    /// Receives `value` at `address` over `n` receipts from `source`.
    fn fund(&mut self, source: &str, address: &str, value: u64, n: usize, ts: i64) -> Vec<Utxo> {
        let mut out = Vec::with_capacity(n);
        let part = value / n as u64;
        for i in 0..n {
            let v = if i == 0 { value - part * (n as u64 - 1) } else { part };
            let t = ts + i as i64 * HOUR;
            let u = match source {
                EXTERNAL => self.external_payment(t, address, v),
                "low-risk" => {
                    let e = LOW_RISK_EXCHANGES[self.rng.random_range(0..LOW_RISK_EXCHANGES.len())];
                    self.payout(e, t, address, v)
                }
                s => self.payout(s, t, address, v),
            };
            out.push(u);
        }
        out
    }

    fn generate(mut self) -> Result<SynthOutput> {
        let c = self.config;
        self.create_entity(CLUSTER_A, "negotiator", Some(ANCHOR_CLUSTER_A), None);
        self.create_entity(CLUSTER_B, "negotiator", Some(ANCHOR_CLUSTER_B), None);
        for e in LOW_RISK_EXCHANGES {
            self.create_entity(e, "exchange-low-risk", None, Some(Category::ExchangeLowRisk));
        }
        self.create_entity(HIGH_RISK_EXCHANGE, "exchange-high-risk", None, Some(Category::ExchangeHighRisk));

        // Per-family laundering addresses.
        let mut affiliate_pool = BTreeMap::new();
        let mut operator = BTreeMap::new();
        for f in &c.families {
            let pool = self.address();
            affiliate_pool.insert(f.name.clone(), pool);
            let op = self.address();
            self.label(&op, &format!("{} operator", f.name), Category::Ransomware, Some(&f.name));
            operator.insert(f.name.clone(), op);
        }
        let mut shared: BTreeMap<String, (String, String)> = BTreeMap::new();
        for (a, b) in &c.rebrand_pairs {
            let l = self.address();
            shared.insert(a.clone(), (l.clone(), b.clone()));
            shared.insert(b.clone(), (l, a.clone()));
        }

        // Seed funding sources, assigned by exact quota.
        let n_seeds: usize = c.families.iter().map(|f| f.seed_payments).sum();
        let mut sources: Vec<String> = Vec::with_capacity(n_seeds);
        for t in &c.source_targets {
            let k = (t.share * n_seeds as f64).round() as usize;
            sources.extend(std::iter::repeat_n(t.entity.clone(), k.min(n_seeds - sources.len())));
        }
        sources.resize(n_seeds, EXTERNAL.to_owned());
        sources.shuffle(&mut self.rng);

        // Mixer use, also by exact quota over all split-bearing payments.
        let n_all: usize = c
            .families
            .iter()
            .map(|f| f.seed_payments + f.orig_payments + f.expanded_payments)
            .sum();
        let mut mixer: Vec<bool> = (0..n_all).map(|i| i < (c.mixer_rate * n_all as f64).round() as usize).collect();
        mixer.shuffle(&mut self.rng);
        let mut mixer = mixer.into_iter();

        let mut seed_list = Vec::new();
        let mut source_iter = sources.into_iter();
        let mut family_linked: BTreeMap<String, bool> = BTreeMap::new();
        for f in &c.families {
            for i in 0..f.seed_payments {
                let source = source_iter.next().expect("one source per seed");
                let splits = i == 0 || self.rng.random_bool(f.split_rate);
                let uses_mixer = mixer.next().unwrap_or(false);
                let p = self.plant_payment(
                    PlantedStage::Ransomwhere,
                    &f.name,
                    &source,
                    splits,
                    uses_mixer,
                    true,
                    &affiliate_pool,
                    &operator,
                    &shared,
                )?;
                if splits {
                    family_linked.insert(f.name.clone(), true);
                }
                seed_list.push(Seed {
                    address: p.address.clone(),
                    family: Some(f.name.clone()),
                    tag: Provenance::Ransomwhere,
                });
                self.payments.push(p);
            }
        }
        for f in &c.families {
            let linked = family_linked.get(&f.name).copied().unwrap_or(false);
            for _ in 0..f.orig_payments {
                let source = if self.rng.random_bool(c.cluster_b_share) { CLUSTER_B } else { CLUSTER_A };
                let uses_mixer = mixer.next().unwrap_or(false);
                let op_labeled = !(linked && self.rng.random_bool(c.unlabeled_operator_rate));
                let p = self.plant_payment(
                    PlantedStage::OrigCluster,
                    &f.name,
                    source,
                    true,
                    uses_mixer,
                    op_labeled,
                    &affiliate_pool,
                    &operator,
                    &shared,
                )?;
                self.payments.push(PlantedPayment {
                    linkable: linked,
                    ..p
                });
            }
            if f.orig_payments > 0 {
                family_linked.insert(f.name.clone(), true);
            }
        }
        for f in &c.families {
            let linked = family_linked.get(&f.name).copied().unwrap_or(false);
            for _ in 0..f.expanded_payments {
                let uses_mixer = mixer.next().unwrap_or(false);
                let p = self.plant_payment(
                    PlantedStage::Expanded,
                    &f.name,
                    "low-risk",
                    true,
                    uses_mixer,
                    true,
                    &affiliate_pool,
                    &operator,
                    &shared,
                )?;
                self.payments.push(PlantedPayment {
                    linkable: linked,
                    ..p
                });
            }
        }
        for _ in 0..c.otc_decoys {
            self.plant_otc_decoy()?;
        }
        for _ in 0..c.expanded_decoys {
            self.plant_expanded_decoy()?;
        }

        self.finish(seed_list)
    }

    #[allow(clippy::too_many_arguments)]
    fn plant_payment(
        &mut self,
        stage: PlantedStage,
        family: &str,
        source: &str,
        splits: bool,
        uses_mixer: bool,
        operator_labeled: bool,
        affiliate_pool: &BTreeMap<String, String>,
        operator: &BTreeMap<String, String>,
        shared: &BTreeMap<String, (String, String)>,
    ) -> Result<PlantedPayment> {
        let address = self.address();
        let ts = self.payment_time();
        let mut value = self.payment_size(ts);
        if stage == PlantedStage::OrigCluster {
            value = value.max(SATS_PER_BTC + self.rng.random_range(SATS_PER_BTC / 20..SATS_PER_BTC));
        }
        let receipts = match stage {
            PlantedStage::OrigCluster => self.rng.random_range(1..=5),
            _ => self.rng.random_range(1..=3),
        };
        let utxos = self.fund(source, &address, value, receipts, ts);
        let t1 = ts + DAY;
        let t2 = ts + 2 * DAY;

        let mut planted = PlantedPayment {
            address: address.clone(),
            stage,
            expected_stage: stage.expected_stage().map(str::to_owned),
            family: Some(family.to_owned()),
            source: source.to_owned(),
            total_sat: value,
            receipts,
            first_seen: ts,
            split_pct: None,
            split_share: None,
            split_tx: None,
            irregular_share: None,
            uses_mixer,
            pooling_partners: Vec::new(),
            linkable: stage == PlantedStage::Ransomwhere,
            operator_labeled: (stage == PlantedStage::OrigCluster).then_some(operator_labeled),
        };

        let onward = if splits {
            let pct = self.grid_pick(value, ts);
            let op = if operator_labeled {
                operator[family].clone()
            } else {
                self.address()
            };
            let (txid, share, aff) = self.split(t1, &utxos, pct, affiliate_pool[family].clone(), op);
            planted.split_pct = Some(pct);
            planted.split_share = Some(share);
            planted.split_tx = Some(txid.to_string());
            aff
        } else {
            let major = self.address();
            let minor = self.address();
            let (share, out) = self.irregular(t1, &utxos, major, minor);
            planted.irregular_share = Some(share);
            out
        };

        let dest = if uses_mixer {
            self.mixer_deposit()
        } else if let Some((l, partner)) = shared.get(family).filter(|_| splits) {
            planted.pooling_partners = vec![partner.clone()];
            l.clone()
        } else {
            self.deposit(HIGH_RISK_EXCHANGE, Category::ExchangeHighRisk)
        };
        self.forward(t2, &[onward], dest);
        Ok(planted)
    }

    fn plant_otc_decoy(&mut self) -> Result<()> {
        let c = self.config;
        let address = self.address();
        let ts = self.payment_time();
        let source = if self.rng.random_bool(c.cluster_b_share) { CLUSTER_B } else { CLUSTER_A };
        let value = self.rng.random_range(SATS_PER_BTC / 2..100 * SATS_PER_BTC);
        let receipts = self.rng.random_range(1..=3);
        let utxos = self.fund(source, &address, value, receipts, ts);
        let t1 = ts + DAY;
        let mut planted = PlantedPayment {
            address: address.clone(),
            stage: PlantedStage::OtcDecoy,
            expected_stage: None,
            family: None,
            source: source.to_owned(),
            total_sat: value,
            receipts,
            first_seen: ts,
            split_pct: None,
            split_share: None,
            split_tx: None,
            irregular_share: None,
            uses_mixer: false,
            pooling_partners: Vec::new(),
            linkable: false,
            operator_labeled: None,
        };
        match self.rng.random_range(0..3) {
            0 => {
                let d = self.low_risk_deposit();
                self.forward(t1, &utxos, d);
            }
            1 => {
                // Grid-like two-way cash-out into two exchange deposits.
                let pct = self.config.split_grid[self.rng.random_range(0..self.config.split_grid.len())];
                let (a, b) = (self.low_risk_deposit(), self.low_risk_deposit());
                let (txid, share, _) = self.split(t1, &utxos, pct, a, b);
                planted.split_pct = Some(pct);
                planted.split_share = Some(share);
                planted.split_tx = Some(txid.to_string());
            }
            _ => {
                let d = self.low_risk_deposit();
                let rest = self.address();
                let (share, _) = self.irregular(t1, &utxos, d, rest);
                planted.irregular_share = Some(share);
            }
        }
        self.payments.push(planted);
        Ok(())
    }

    fn plant_expanded_decoy(&mut self) -> Result<()> {
        let address = self.address();
        let ts = self.payment_time();
        let value = self.payment_size(ts);
        let receipts = self.rng.random_range(1..=2);
        let utxos = self.fund("low-risk", &address, value, receipts, ts);
        let t1 = ts + DAY;
        let (a, b) = (self.address(), self.address());
        let mut planted = PlantedPayment {
            address: address.clone(),
            stage: PlantedStage::ExpandedDecoy,
            expected_stage: None,
            family: None,
            source: "low-risk".to_owned(),
            total_sat: value,
            receipts,
            first_seen: ts,
            split_pct: None,
            split_share: None,
            split_tx: None,
            irregular_share: None,
            uses_mixer: false,
            pooling_partners: Vec::new(),
            linkable: false,
            operator_labeled: None,
        };
        let out = if self.rng.random_bool(0.5) {
            let pct = self.config.split_grid[self.rng.random_range(0..self.config.split_grid.len())];
            let (txid, share, out) = self.split(t1, &utxos, pct, a, b);
            planted.split_pct = Some(pct);
            planted.split_share = Some(share);
            planted.split_tx = Some(txid.to_string());
            out
        } else {
            let (share, out) = self.irregular(t1, &utxos, a, b);
            planted.irregular_share = Some(share);
            out
        };
        let d = self.low_risk_deposit();
        self.forward(ts + 2 * DAY, &[out], d);
        self.payments.push(planted);
        Ok(())
    }

    fn finish(mut self, seed_list: Vec<Seed>) -> Result<SynthOutput> {
        let c = self.config;
        let transactions = self.raw.len();
        let chain = Chain::from_raw(std::mem::take(&mut self.raw))?;

        let mut prices = PriceTable::new();
        let mut d = c.start - chrono::Days::new(45);
        let last = c.end + chrono::Days::new(15);
        while d <= last {
            prices.insert(d, price_curve(d)).map_err(Error::Config)?;
            d = d + chrono::Days::new(1);
        }

        let mut indep_rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x005e_ed1a_be15);
        let independent: Vec<LabelRecord> = self
            .labels
            .iter()
            .filter(|_| indep_rng.random_bool(0.9))
            .map(|r| LabelRecord {
                source: INDEPENDENT_SOURCE.to_owned(),
                ..r.clone()
            })
            .collect();
        let labels = LabelSet::from_records(std::mem::take(&mut self.labels)).map_err(Error::Config)?;
        let independent_labels = LabelSet::from_records(independent).map_err(Error::Config)?;

        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        let seeds_planted: Vec<&PlantedPayment> = self.payments.iter().filter(|p| p.stage == PlantedStage::Ransomwhere).collect();
        for p in &seeds_planted {
            *counts.entry(p.source.clone()).or_insert(0.0) += 1.0 / seeds_planted.len() as f64;
        }

        let clusters = self
            .entities
            .values()
            .map(|e| PlantedCluster {
                entity: e.name.clone(),
                role: e.role.to_owned(),
                members: e.members.clone(),
            })
            .collect();
        let mut payments = std::mem::take(&mut self.payments);
        payments.sort_by(|a, b| a.address.cmp(&b.address));
        let manifest = GroundTruthManifest {
            seed: c.seed,
            transactions,
            addresses: self.emitted.len(),
            clusters,
            payments,
            seed_source_shares: counts,
            spike_windows: spike_windows().to_vec(),
            rebrand_pairs: c.rebrand_pairs.clone(),
        };
        let mut seed_list = seed_list;
        seed_list.sort_by(|a, b| a.address.cmp(&b.address));
        Ok(SynthOutput {
            chain,
            prices,
            labels,
            independent_labels,
            seeds: SeedSet::new(seed_list),
            manifest,
        })
    }
}

/// Random acyclic chain over a small address pool `a0..a{pool}`. Inputs are a mix of
/// unspent outputs and external funds; outputs reuse pool addresses so that
/// co-spend components and downstream overlaps are frequent.
pub fn random_chain(seed: u64, n_txs: usize, pool: usize) -> Chain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utxos: Vec<(Txid, u32, u64)> = Vec::new();
    let mut raw = Vec::with_capacity(n_txs);
    for i in 0..n_txs {
        let txid = Txid::from_tag(&format!("{seed}-{i}"));
        let mut inputs = Vec::new();
        let mut total = 0u64;
        let n_in = rng.random_range(1..=3);
        for _ in 0..n_in {
            if !utxos.is_empty() && rng.random_bool(0.7) {
                let k = rng.random_range(0..utxos.len());
                let (t, v, value) = utxos.swap_remove(k);
                total += value;
                inputs.push(RawInput::Spend {
                    prevout: OutPoint { txid: t, vout: v },
                    address: None,
                    value: None,
                });
            } else {
                let value = rng.random_range(1_000..1_000_000);
                total += value;
                inputs.push(RawInput::External {
                    address: format!("a{}", rng.random_range(0..pool)),
                    value,
                });
            }
        }
        let fee = total / 1000;
        let spendable = total - fee;
        let n_out = rng.random_range(1..=3usize).min(spendable as usize);
        let mut outputs = Vec::new();
        let mut left = spendable;
        for k in 0..n_out {
            let value = if k + 1 == n_out {
                left
            } else {
                rng.random_range(0..=left / 2)
            };
            left -= value;
            outputs.push(RawOutput {
                address: format!("a{}", rng.random_range(0..pool)),
                value,
            });
            utxos.push((txid, k as u32, value));
        }
        raw.push(RawTransaction {
            txid,
            timestamp: 1_600_000_000 + i as i64 * 600,
            height: i as u64,
            inputs,
            outputs,
        });
    }
    Chain::from_raw(raw).expect("random chain is well formed")
}

fn ts_of(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp()
}

/// Late 2020, early 2021 and mid 2022.
pub fn spike_windows() -> [(NaiveDate, NaiveDate); 3] {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).unwrap();
    [
        (d(2020, 10, 15), d(2020, 12, 15)),
        (d(2021, 2, 1), d(2021, 3, 31)),
        (d(2022, 5, 1), d(2022, 7, 31)),
    ]
}

pub fn generate(config: &ScenarioConfig) -> Result<SynthOutput> {
    config.validate()?;
    Generator::new(config).generate()
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashMap};

    use super::*;
    use crate::chain::InputSource;
    use crate::cluster::cluster_multi_input;
    use crate::split::{detect_split_of, SplitParams};

    #[test]
    fn empty_config() {
        let out = generate(&ScenarioConfig::empty(1)).unwrap();
        assert!(out.manifest.payments.is_empty());
        assert!(out.seeds.is_empty());
        assert_eq!(out.manifest.clusters.len(), 6);
    }

    #[test]
    fn deterministic_bytes() {
        let write = |seed| {
            let dir = tempfile::tempdir().unwrap();
            generate(&ScenarioConfig::small(seed, 40)).unwrap().write_to_dir(dir.path()).unwrap();
            [CHAIN_FILE, PRICES_FILE, LABELS_FILE, INDEPENDENT_LABELS_FILE, SEEDS_FILE, MANIFEST_FILE]
                .map(|f| std::fs::read(dir.path().join(f)).unwrap())
        };
        assert_eq!(write(7), write(7));
        assert_ne!(write(7)[0], write(8)[0]);
    }

    #[test]
    fn infeasible_configs_rejected() {
        let mut c = ScenarioConfig::small(1, 8);
        c.source_targets[0].share = 0.9;
        assert!(generate(&c).is_err());
        let mut c = ScenarioConfig::small(1, 8);
        c.split_grid = vec![40];
        assert!(generate(&c).is_err());
        let mut c = ScenarioConfig::small(1, 8);
        c.rebrand_pairs.push(("Conti".into(), "Nobody".into()));
        assert!(generate(&c).is_err());
    }

    #[test]
    fn conservation_and_partition() {
        let out = generate(&ScenarioConfig::small(3, 60)).unwrap();
        let chain = &out.chain;
        for tx in chain.transactions() {
            assert!(tx.input_value() >= tx.output_value());
            assert!(tx.inputs.iter().all(|i| !matches!(i.source, InputSource::Dangling(_))));
        }
        let clusters = cluster_multi_input(chain);
        let mut expected: HashMap<&str, usize> = HashMap::new();
        for (i, c) in out.manifest.clusters.iter().enumerate() {
            for m in &c.members {
                expected.insert(m, i);
            }
        }
        let mut seen: HashMap<usize, crate::cluster::ClusterId> = HashMap::new();
        for a in chain.address_ids() {
            let c = clusters.cluster_of_id(a);
            match expected.get(chain.address(a)) {
                Some(i) => {
                    assert_eq!(*seen.entry(*i).or_insert(c), c);
                }
                None => assert_eq!(clusters.member_count(c), 1, "{}", chain.address(a)),
            }
        }
        assert_eq!(out.manifest.addresses, chain.address_count());
    }

    #[test]
    fn manifest_matches_chain() {
        let out = generate(&ScenarioConfig::small(5, 80)).unwrap();
        for p in &out.manifest.payments {
            let totals = out.chain.address_totals(&p.address, None).unwrap();
            assert_eq!(totals.received_sat, p.total_sat);
            assert_eq!(totals.incoming_tx_count, p.receipts);
            if let Some(pct) = p.split_pct {
                let f = detect_split_of(&out.chain, &p.address, SplitParams::default()).unwrap();
                assert_eq!(f.map(|f| f.matched_grid_pct), Some(pct), "{}", p.address);
            }
            if p.irregular_share.is_some() && p.split_pct.is_none() {
                assert_eq!(detect_split_of(&out.chain, &p.address, SplitParams::default()).unwrap(), None);
            }
        }
        let shares = &out.manifest.seed_source_shares;
        assert!((shares.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn addresses_look_like_addresses() {
        let mut seen = BTreeSet::new();
        for i in 0..500 {
            let a = synth_address(&format!("t{i}"));
            assert!(a.starts_with('1') || a.starts_with('3') || a.starts_with("bc1q"));
            assert!(a.len() == 34 || a.len() == 42);
            assert!(seen.insert(a));
        }
    }

    #[test]
    fn prices_positive() {
        let mut d = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap();
        while d.year() < 2025 {
            assert!(price_curve(d) > 1000.0);
            d = d + chrono::Days::new(1);
        }
    }
}
