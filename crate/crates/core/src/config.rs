//! Run configuration read from flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the config file's directory.

use std::path::{Path, PathBuf};

use crate::analytics::OverlapOptions;
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::flow::ExposureParams;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub chain: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub independent_labels: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub out: PathBuf,
    pub detector: DetectorConfig,
    /// Exposure horizon for analytics and validation.
    pub hops: u8,
    /// Backtrace depth for source ranking.
    pub backtrace_depth: u8,
    pub change_clustering: bool,
    pub overlap: OverlapOptions,
    pub row_normalized: bool,
    /// Reuse stage outputs already present in `out`.
    pub resume: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chain: None,
            prices: None,
            labels: None,
            independent_labels: None,
            seeds: None,
            out: PathBuf::from("out"),
            detector: DetectorConfig::default(),
            hops: 3,
            backtrace_depth: 3,
            change_clustering: false,
            overlap: OverlapOptions::default(),
            row_normalized: false,
            resume: false,
            threads: None,
        }
    }
}

pub const KEYS: [&str; 21] = [
    "chain",
    "prices",
    "labels",
    "independent_labels",
    "seeds",
    "out",
    "hops",
    "backtrace_depth",
    "min_btc",
    "max_incoming",
    "lowrisk_share",
    "nontrivial_share",
    "detector_hops",
    "split_tolerance",
    "change_clustering",
    "cluster_exposure",
    "absolute_overlap",
    "row_normalized",
    "resume",
    "threads",
    "workers",
];

impl RunConfig {
    pub fn exposure_params(&self) -> ExposureParams {
        ExposureParams::with_hops(self.hops)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut c = RunConfig::default();
        c.apply_text(&text, path, base)?;
        Ok(c)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, path: &Path, base: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "line", "expected key = value"))?;
            let (k, v) = (k.trim(), v.trim().trim_matches('"'));
            self.set(k, v, base)
                .map_err(|m| Error::parse(path, i + 1, k, m))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("not a number: {v:?}"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(format!("not a boolean: {v:?}")),
            }
        }
        let path = |v: &str| Some(base.join(v));
        match key {
            "chain" => self.chain = path(value),
            "prices" => self.prices = path(value),
            "labels" => self.labels = path(value),
            "independent_labels" => self.independent_labels = path(value),
            "seeds" => self.seeds = path(value),
            "out" => self.out = base.join(value),
            "hops" => self.hops = hops(num(value)?)?,
            "backtrace_depth" => self.backtrace_depth = num(value)?,
            "min_btc" => self.detector.min_receipt_btc = num(value)?,
            "max_incoming" => self.detector.max_incoming_txs = num(value)?,
            "lowrisk_share" => self.detector.low_risk_origin_share = num(value)?,
            "nontrivial_share" => self.detector.nontrivial_share = num(value)?,
            "detector_hops" => self.detector.hop_bound = hops(num(value)?)?,
            "split_tolerance" => self.detector.split.tolerance = num(value)?,
            "change_clustering" => self.change_clustering = flag(value)?,
            "cluster_exposure" => self.overlap.by_cluster = flag(value)?,
            "absolute_overlap" => self.overlap.absolute = flag(value)?,
            "row_normalized" => self.row_normalized = flag(value)?,
            "resume" => self.resume = flag(value)?,
            "threads" | "workers" => self.threads = Some(num(value)?).filter(|n| *n > 0),
            _ => return Err(format!("unknown key; expected one of {}", KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        hops(self.hops).map_err(Error::Config)?;
        if self.backtrace_depth == 0 {
            return Err(Error::Config("backtrace_depth must be at least 1".into()));
        }
        Ok(())
    }
}

fn hops(h: u8) -> std::result::Result<u8, String> {
    if (1..=3).contains(&h) {
        Ok(h)
    } else {
        Err(format!("hops must be 1, 2 or 3, got {h}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_text() {
        let mut c = RunConfig::default();
        let text = "# run\nchain = data/chain.jsonl\nmin_btc = 2.5\nmax_incoming=4\nchange_clustering = yes\nhops = 2\nthreads = 0\n";
        c.apply_text(text, Path::new("run.conf"), Path::new("/base")).unwrap();
        assert_eq!(c.chain, Some(PathBuf::from("/base/data/chain.jsonl")));
        assert_eq!(c.detector.min_receipt_btc, 2.5);
        assert_eq!(c.detector.max_incoming_txs, 4);
        assert!(c.change_clustering);
        assert_eq!(c.hops, 2);
        assert_eq!(c.threads, None);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_lines() {
        let mut c = RunConfig::default();
        let err = c.apply_text("x\n", Path::new("r"), Path::new("")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = c.apply_text("\nbogus = 1\n", Path::new("r"), Path::new("")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(c.apply_text("hops = 4\n", Path::new("r"), Path::new("")).is_err());
        assert!(c.apply_text("resume = maybe\n", Path::new("r"), Path::new("")).is_err());
    }
}
