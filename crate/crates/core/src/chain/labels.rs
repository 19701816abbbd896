use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::price::column;
use super::{AddressId, Chain};
use crate::error::{Error, Result};

/// Risk category attached to a labeled address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Ransomware,
    ExchangeLowRisk,
    ExchangeHighRisk,
    Mixer,
    OtherIllicit,
    OtherLicit,
    Unlabeled,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Ransomware,
        Category::ExchangeLowRisk,
        Category::ExchangeHighRisk,
        Category::Mixer,
        Category::OtherIllicit,
        Category::OtherLicit,
        Category::Unlabeled,
    ];

    /// Illicit destinations, ransomware included.
    pub const ILLICIT: [Category; 4] = [
        Category::Ransomware,
        Category::ExchangeHighRisk,
        Category::Mixer,
        Category::OtherIllicit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Ransomware => "ransomware",
            Category::ExchangeLowRisk => "exchange-low-risk",
            Category::ExchangeHighRisk => "exchange-high-risk",
            Category::Mixer => "mixer",
            Category::OtherIllicit => "other-illicit",
            Category::OtherLicit => "other-licit",
            Category::Unlabeled => "unlabeled",
        }
    }

    pub fn is_illicit(self) -> bool {
        Self::ILLICIT.contains(&self)
    }

    pub fn is_low_risk(self) -> bool {
        matches!(self, Category::ExchangeLowRisk | Category::OtherLicit)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown category {s:?}; expected one of {}",
                    Category::ALL.map(Category::as_str).join(", ")
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRecord {
    pub subject: String,
    pub entity: String,
    pub category: Category,
    pub family: Option<String>,
    pub source: String,
}

impl LabelRecord {
    pub fn new(
        subject: impl Into<String>,
        entity: impl Into<String>,
        category: Category,
        family: Option<String>,
        source: impl Into<String>,
    ) -> std::result::Result<Self, String> {
        if family.is_some() && category != Category::Ransomware {
            return Err(format!("family given for non-ransomware category {category}"));
        }
        Ok(LabelRecord {
            subject: subject.into(),
            entity: entity.into(),
            category,
            family,
            source: source.into(),
        })
    }
}

/// One label file: at most one record per address.
#[derive(Clone, Debug, Default)]
pub struct LabelSet {
    records: Vec<LabelRecord>,
    by_subject: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = LabelRecord>) -> std::result::Result<Self, String> {
        let mut set = LabelSet::new();
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: LabelRecord) -> std::result::Result<(), String> {
        if self.by_subject.contains_key(&record.subject) {
            return Err(format!("duplicate label for {}", record.subject));
        }
        self.by_subject.insert(record.subject.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn get(&self, address: &str) -> Option<&LabelRecord> {
        self.by_subject.get(address).map(|i| &self.records[*i])
    }

    pub fn sources(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.source.as_str()).collect()
    }

    /// Families present in the file, sorted.
    pub fn families(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter_map(|r| r.family.as_deref())
            .collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    /// Parse `address,entity,category,family,source`.
    pub fn from_reader<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = ["address", "entity", "category", "family", "source"]
            .map(|name| column(&headers, name, path));
        let [address, entity, category, family, source] = cols;
        let (address, entity, category, family, source) = (address?, entity?, category?, family?, source?);
        let mut set = LabelSet::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let get = |c: usize| record.get(c).unwrap_or("");
            let subject = get(address);
            if subject.is_empty() {
                return Err(Error::parse(path, line, "address", "empty"));
            }
            let cat: Category = get(category)
                .parse()
                .map_err(|m| Error::parse(path, line, "category", m))?;
            let fam = Some(get(family)).filter(|f| !f.is_empty()).map(str::to_owned);
            let rec = LabelRecord::new(subject, get(entity), cat, fam, get(source))
                .map_err(|m| Error::parse(path, line, "family", m))?;
            set.push(rec).map_err(|m| Error::parse(path, line, "address", m))?;
        }
        Ok(set)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["address", "entity", "category", "family", "source"])?;
        for r in &self.records {
            w.write_record([
                r.subject.as_str(),
                r.entity.as_str(),
                r.category.as_str(),
                r.family.as_deref().unwrap_or(""),
                r.source.as_str(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<label csv>", e))?;
        Ok(())
    }
}

/// Labels resolved against a chain's address ids.
#[derive(Clone, Debug)]
pub struct LabelIndex<'a> {
    set: &'a LabelSet,
    by_address: Vec<Option<u32>>,
}

impl<'a> LabelIndex<'a> {
    pub fn new(chain: &Chain, set: &'a LabelSet) -> Self {
        let mut by_address = vec![None; chain.address_count()];
        for (i, r) in set.records().iter().enumerate() {
            if let Some(id) = chain.address_id(&r.subject) {
                by_address[id.index()] = Some(i as u32);
            }
        }
        LabelIndex { set, by_address }
    }

    pub fn set(&self) -> &'a LabelSet {
        self.set
    }

    pub fn get(&self, addr: AddressId) -> Option<&'a LabelRecord> {
        self.by_address
            .get(addr.index())
            .copied()
            .flatten()
            .map(|i| &self.set.records()[i as usize])
    }

    pub fn category(&self, addr: AddressId) -> Category {
        self.get(addr).map_or(Category::Unlabeled, |r| r.category)
    }

    pub fn family(&self, addr: AddressId) -> Option<&'a str> {
        self.get(addr).and_then(|r| r.family.as_deref())
    }

    pub fn is_ransomware(&self, addr: AddressId) -> bool {
        self.category(addr) == Category::Ransomware
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = "address,entity,category,family,source\n\
        a1,Conti pool,ransomware,Conti,vendor1\n\
        x1,Gemini,exchange-low-risk,,vendor1\n";

    #[test]
    fn parses_closed_category_set() {
        let set = LabelSet::from_reader(FILE.as_bytes(), Path::new("l.csv")).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.get("a1").unwrap().family.as_deref(), Some("Conti"));
        assert_eq!(set.get("x1").unwrap().category, Category::ExchangeLowRisk);
        assert_eq!(set.sources().into_iter().collect::<Vec<_>>(), vec!["vendor1"]);
    }

    #[test]
    fn rejects_unknown_category() {
        let text = "address,entity,category,family,source\na,b,casino,,v\n";
        let err = LabelSet::from_reader(text.as_bytes(), Path::new("l.csv")).unwrap_err().to_string();
        assert!(err.contains("l.csv:2") && err.contains("category"), "{err}");
    }

    #[test]
    fn rejects_family_outside_ransomware() {
        let text = "address,entity,category,family,source\na,b,mixer,Conti,v\n";
        assert!(LabelSet::from_reader(text.as_bytes(), Path::new("l.csv")).is_err());
    }

    #[test]
    fn category_strings_roundtrip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
    }
}
