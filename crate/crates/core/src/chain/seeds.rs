use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::price::column;
use crate::error::{Error, Result};

/// Anchor address of the larger negotiator-linked source cluster.
pub const ANCHOR_CLUSTER_A: &str = "19JyAkHKh36sFduqK4hMsMZhU6ZDoLotW";
/// Anchor address of the smaller cluster funded mostly by cluster A.
pub const ANCHOR_CLUSTER_B: &str = "3DtLWACQNiVFaXQyMS57PjVir19FRY32Hf";

/// Which dataset a payment address belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ransomwhere,
    OrigCluster,
    Expanded,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Ransomwhere, Provenance::OrigCluster, Provenance::Expanded];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Ransomwhere => "ransomwhere",
            Provenance::OrigCluster => "orig_cluster",
            Provenance::Expanded => "expanded",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown dataset tag {s:?}; expected ransomwhere, orig_cluster or expanded"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seed {
    pub address: String,
    pub family: Option<String>,
    pub tag: Provenance,
}

/// Known ransomware payment addresses plus the two source-cluster anchors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedSet {
    pub seeds: Vec<Seed>,
    pub anchors: [String; 2],
}

impl Default for SeedSet {
    fn default() -> Self {
        SeedSet {
            seeds: Vec::new(),
            anchors: [ANCHOR_CLUSTER_A.to_owned(), ANCHOR_CLUSTER_B.to_owned()],
        }
    }
}

impl SeedSet {
    /// Seeds are kept sorted so results do not depend on file row order.
    pub fn new(mut seeds: Vec<Seed>) -> Self {
        seeds.sort_by(|a, b| (&a.address, a.tag, &a.family).cmp(&(&b.address, b.tag, &b.family)));
        SeedSet {
            seeds,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn contains(&self, address: &str) -> bool {
        self.seeds.iter().any(|s| s.address == address)
    }

    pub fn with_tag(&self, tag: Provenance) -> impl Iterator<Item = &Seed> {
        self.seeds.iter().filter(move |s| s.tag == tag)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    /// Parse `address,family,dataset_tag`.
    pub fn from_reader<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let address = column(&headers, "address", path)?;
        let family = column(&headers, "family", path)?;
        let tag = column(&headers, "dataset_tag", path)?;
        let mut seeds = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let addr = record.get(address).unwrap_or("");
            if addr.is_empty() {
                return Err(Error::parse(path, line, "address", "empty"));
            }
            let tag = record
                .get(tag)
                .unwrap_or("")
                .parse()
                .map_err(|m| Error::parse(path, line, "dataset_tag", m))?;
            let fam = record.get(family).filter(|f| !f.is_empty()).map(str::to_owned);
            seeds.push(Seed {
                address: addr.to_owned(),
                family: fam,
                tag,
            });
        }
        Ok(SeedSet::new(seeds))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["address", "family", "dataset_tag"])?;
        for s in &self.seeds {
            w.write_record([s.address.as_str(), s.family.as_deref().unwrap_or(""), s.tag.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<seed csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_seed_rows() {
        let text = "address,family,dataset_tag\np1,Conti,ransomwhere\np2,,orig_cluster\n";
        let set = SeedSet::from_reader(text.as_bytes(), Path::new("s.csv")).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.seeds[1].family, None);
        assert_eq!(set.anchors[0], ANCHOR_CLUSTER_A);
        assert_eq!(set.with_tag(Provenance::Ransomwhere).count(), 1);
    }

    #[test]
    fn rejects_unknown_tag() {
        let text = "address,family,dataset_tag\np1,Conti,leaks\n";
        let err = SeedSet::from_reader(text.as_bytes(), Path::new("s.csv")).unwrap_err().to_string();
        assert!(err.contains("dataset_tag"), "{err}");
    }
}
