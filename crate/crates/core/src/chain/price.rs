use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::ops::{Add, AddAssign};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Fixed-point price precision: prices are held in units of 1e-8 USD.
const PRICE_SCALE: u64 = 100_000_000;

/// A USD amount in whole cents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(pub i64);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub fn from_cents(cents: i64) -> Self {
        Usd(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

/// Daily closing BTC/USD prices keyed by UTC calendar date.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PriceTable {
    closes: BTreeMap<NaiveDate, u64>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a closing price given as a decimal string, e.g. `"29374.15"`.
    pub fn insert_str(&mut self, date: NaiveDate, close: &str) -> std::result::Result<(), String> {
        let units = parse_price(close)?;
        self.closes.insert(date, units);
        Ok(())
    }

    /// Insert a closing price from a float, rounded to 1e-8 USD.
    pub fn insert(&mut self, date: NaiveDate, close: f64) -> std::result::Result<(), String> {
        if !(close.is_finite() && close > 0.0) {
            return Err(format!("price must be positive, got {close}"));
        }
        self.closes
            .insert(date, (close * PRICE_SCALE as f64).round() as u64);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn close(&self, date: NaiveDate) -> Option<f64> {
        self.closes
            .get(&date)
            .map(|u| *u as f64 / PRICE_SCALE as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, String)> + '_ {
        self.closes.iter().map(|(d, u)| (*d, format_price(*u)))
    }

    fn units(&self, date: NaiveDate) -> Result<u64> {
        self.closes.get(&date).copied().ok_or_else(|| {
            let before = self.closes.range(..date).next_back().map(|(d, _)| d.to_string());
            let after = self.closes.range(date..).next().map(|(d, _)| d.to_string());
            let nearest = match (before, after) {
                (Some(b), Some(a)) => format!("{b}, {a}"),
                (Some(d), None) | (None, Some(d)) => d,
                (None, None) => "none (price table is empty)".to_owned(),
            };
            Error::MissingPrice {
                date: date.to_string(),
                nearest,
            }
        })
    }

    /// Read a `date,usd_close` CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn from_reader<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let date_col = column(&headers, "date", path)?;
        let close_col = column(&headers, "usd_close", path)?;
        let mut table = PriceTable::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let date_str = record.get(date_col).unwrap_or("");
            let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
                .map_err(|e| Error::parse(path, line, "date", format!("{date_str:?}: {e}")))?;
            let close = record.get(close_col).unwrap_or("");
            table
                .insert_str(date, close)
                .map_err(|m| Error::parse(path, line, "usd_close", m))?;
        }
        Ok(table)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "usd_close"])?;
        for (date, close) in self.iter() {
            w.write_record([date.to_string(), close])?;
        }
        w.flush().map_err(|e| Error::io("<price csv>", e))?;
        Ok(())
    }
}

pub(crate) fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, 1, name, "missing column"))
}

fn parse_price(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, f),
        None => (s, ""),
    };
    if whole.is_empty() && frac.is_empty()
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(format!("not a positive decimal: {s:?}"));
    }
    if frac.len() > 8 {
        return Err(format!("more than 8 decimal places: {s:?}"));
    }
    let whole: u64 = if whole.is_empty() {
        0
    } else {
        whole.parse().map_err(|e| format!("{s:?}: {e}"))?
    };
    let mut frac_units: u64 = 0;
    for (i, b) in frac.bytes().enumerate() {
        frac_units += u64::from(b - b'0') * 10u64.pow(7 - i as u32);
    }
    let units = whole
        .checked_mul(PRICE_SCALE)
        .and_then(|w| w.checked_add(frac_units))
        .ok_or_else(|| format!("price out of range: {s:?}"))?;
    if units == 0 {
        return Err("price must be strictly positive".to_owned());
    }
    Ok(units)
}

fn format_price(units: u64) -> String {
    let whole = units / PRICE_SCALE;
    let frac = units % PRICE_SCALE;
    if frac == 0 {
        return format!("{whole}.00");
    }
    let mut s = format!("{whole}.{frac:08}");
    while s.ends_with('0') && !s.ends_with(".00") {
        s.pop();
    }
    s
}

/// `amount × 1e-8 × close(date)`, rounded to cents half-to-even.
pub fn usd_value(amount_sat: u64, date: NaiveDate, prices: &PriceTable) -> Result<Usd> {
    let units = prices.units(date)?;
    // sat * (1e-8 USD/BTC units) is in 1e-16 USD; one cent is 1e14 of those.
    const DIVISOR: u128 = 100_000_000_000_000;
    let product = u128::from(amount_sat) * u128::from(units);
    let quotient = product / DIVISOR;
    let remainder = product % DIVISOR;
    let half = DIVISOR / 2;
    let rounded = match remainder.cmp(&half) {
        std::cmp::Ordering::Less => quotient,
        std::cmp::Ordering::Greater => quotient + 1,
        std::cmp::Ordering::Equal => quotient + (quotient & 1),
    };
    Ok(Usd(rounded as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn table(close: &str) -> PriceTable {
        let mut t = PriceTable::new();
        t.insert_str(day("2021-05-01"), close).unwrap();
        t
    }

    #[test]
    fn one_btc_at_quarter_million() {
        let usd = usd_value(100_000_000, day("2021-05-01"), &table("250000")).unwrap();
        assert_eq!(usd, Usd(25_000_000));
        assert_eq!(usd.to_string(), "250000.00");
    }

    #[test]
    fn zero_amount_is_zero() {
        assert_eq!(usd_value(0, day("2021-05-01"), &table("57000.12")).unwrap(), Usd::ZERO);
    }

    #[test]
    fn hand_computed_rounding() {
        // 1.23456789 BTC * 100 USD = 123.456789 -> 123.46
        let usd = usd_value(123_456_789, day("2021-05-01"), &table("100.00")).unwrap();
        assert_eq!(usd.to_string(), "123.46");
    }

    #[test]
    fn half_even_ties() {
        // 500_000 sat * 1.00 USD = 0.005 USD -> ties to 0.00
        assert_eq!(usd_value(500_000, day("2021-05-01"), &table("1")).unwrap(), Usd(0));
        // 1_500_000 sat * 1.00 = 0.015 -> 0.02
        assert_eq!(usd_value(1_500_000, day("2021-05-01"), &table("1")).unwrap(), Usd(2));
        // 2_500_000 sat * 1.00 = 0.025 -> 0.02
        assert_eq!(usd_value(2_500_000, day("2021-05-01"), &table("1")).unwrap(), Usd(2));
    }

    #[test]
    fn missing_date_lists_neighbours() {
        let mut t = table("10");
        t.insert_str(day("2021-05-05"), "11").unwrap();
        let err = usd_value(1, day("2021-05-03"), &t).unwrap_err().to_string();
        assert!(err.contains("2021-05-01") && err.contains("2021-05-05"), "{err}");
    }

    #[test]
    fn rejects_bad_prices() {
        let mut t = PriceTable::new();
        assert!(t.insert_str(day("2021-01-01"), "0").is_err());
        assert!(t.insert_str(day("2021-01-01"), "-5").is_err());
        assert!(t.insert_str(day("2021-01-01"), "abc").is_err());
        assert!(t.insert_str(day("2021-01-01"), "1.123456789").is_err());
        assert!(t.insert_str(day("2021-01-01"), ".5").is_ok());
    }

    #[test]
    fn csv_roundtrip() {
        let text = "date,usd_close\n2021-05-01,57000.5\n2021-05-02,56000\n";
        let t = PriceTable::from_reader(text.as_bytes(), Path::new("p.csv")).unwrap();
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "date,usd_close\n2021-05-01,57000.5\n2021-05-02,56000.00\n");
    }

    #[test]
    fn bad_csv_row_names_line_and_field() {
        let text = "date,usd_close\n2021-05-01,1\n2021-13-01,2\n";
        let err = PriceTable::from_reader(text.as_bytes(), Path::new("p.csv")).unwrap_err().to_string();
        assert!(err.contains("p.csv:3") && err.contains("`date`"), "{err}");
    }

    proptest! {
        #[test]
        fn linear_up_to_a_cent(a in 0u64..2_100_000_000_000_000, b in 0u64..2_100_000_000_000_000, cents in 1u64..20_000_000) {
            let close = format!("{}.{:02}", cents / 100, cents % 100);
            let t = table(&close);
            let d = day("2021-05-01");
            let whole = usd_value(a + b, d, &t).unwrap().cents();
            let parts = usd_value(a, d, &t).unwrap().cents() + usd_value(b, d, &t).unwrap().cents();
            prop_assert!((whole - parts).abs() <= 1);
        }
    }
}
