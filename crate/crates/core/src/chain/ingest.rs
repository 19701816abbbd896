//! Flat-file chain extracts.
//!
//! JSONL: one transaction per line,
//! `{"txid", "timestamp", "height", "inputs": [...], "outputs": [{"address", "value_sat"}]}`
//! where each input is either `{"txid", "vout"}` (optionally carrying
//! `address`/`value_sat` for outpoints outside the extract) or
//! `{"external_address", "value_sat"}`.
//!
//! CSV: one row per input or output,
//! `txid,timestamp,height,direction,vout,prev_txid,address,value_sat`.
//! `direction` is `in` or `out`; for `out` rows `vout` is the output index,
//! for `in` rows it is the spent output's index. An `in` row with an empty
//! `prev_txid` is an external input.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::{Chain, OutPoint, RawInput, RawOutput, RawTransaction, Txid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainFormat {
    Jsonl,
    Csv,
}

impl ChainFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(ChainFormat::Jsonl),
            "csv" => Some(ChainFormat::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for ChainFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ChainFormat::Jsonl),
            "csv" => Ok(ChainFormat::Csv),
            other => Err(format!("unknown chain format {other:?}")),
        }
    }
}

pub fn ingest_chain(path: &Path, format: ChainFormat) -> Result<Chain> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let raw = match format {
        ChainFormat::Jsonl => read_chain_jsonl(file, path)?,
        ChainFormat::Csv => read_chain_csv(file, path)?,
    };
    Chain::from_raw(raw)
}

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, field, message)
    }

    fn get<'v>(&self, obj: &'v Map<String, Value>, field: &str) -> Result<&'v Value> {
        obj.get(field).ok_or_else(|| self.err(field, "missing"))
    }

    fn str_field<'v>(&self, obj: &'v Map<String, Value>, field: &str) -> Result<&'v str> {
        self.get(obj, field)?
            .as_str()
            .ok_or_else(|| self.err(field, "expected a string"))
    }

    fn u64_field(&self, obj: &Map<String, Value>, field: &str) -> Result<u64> {
        self.get(obj, field)?
            .as_u64()
            .ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    fn txid(&self, obj: &Map<String, Value>, field: &str) -> Result<Txid> {
        self.str_field(obj, field)?
            .parse()
            .map_err(|m: String| self.err(field, m))
    }
}

pub fn read_chain_jsonl<R: Read>(reader: R, path: &Path) -> Result<Vec<RawTransaction>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let ctx = LineCtx { path, line: i + 1 };
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| ctx.err("<row>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ctx.err("<row>", "expected a JSON object"))?;
        let txid = ctx.txid(obj, "txid")?;
        let timestamp = ctx
            .get(obj, "timestamp")?
            .as_i64()
            .ok_or_else(|| ctx.err("timestamp", "expected an integer"))?;
        let height = ctx.u64_field(obj, "height")?;

        let inputs = ctx
            .get(obj, "inputs")?
            .as_array()
            .ok_or_else(|| ctx.err("inputs", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let field = format!("inputs[{k}]");
                let input = v.as_object().ok_or_else(|| ctx.err(&field, "expected an object"))?;
                if input.contains_key("external_address") {
                    Ok(RawInput::External {
                        address: ctx.str_field(input, "external_address")?.to_owned(),
                        value: ctx.u64_field(input, "value_sat")?,
                    })
                } else {
                    let address = match input.get("address") {
                        None | Some(Value::Null) => None,
                        Some(_) => Some(ctx.str_field(input, "address")?.to_owned()),
                    };
                    let value = match input.get("value_sat") {
                        None | Some(Value::Null) => None,
                        Some(_) => Some(ctx.u64_field(input, "value_sat")?),
                    };
                    let vout = u32::try_from(ctx.u64_field(input, "vout")?)
                        .map_err(|_| ctx.err("vout", "out of range"))?;
                    Ok(RawInput::Spend {
                        prevout: OutPoint {
                            txid: ctx.txid(input, "txid")?,
                            vout,
                        },
                        address,
                        value,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let outputs = ctx
            .get(obj, "outputs")?
            .as_array()
            .ok_or_else(|| ctx.err("outputs", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let output = v
                    .as_object()
                    .ok_or_else(|| ctx.err(&format!("outputs[{k}]"), "expected an object"))?;
                Ok(RawOutput {
                    address: ctx.str_field(output, "address")?.to_owned(),
                    value: ctx.u64_field(output, "value_sat")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        out.push(RawTransaction {
            txid,
            timestamp,
            height,
            inputs,
            outputs,
        });
    }
    Ok(out)
}

#[derive(Default)]
struct CsvTx {
    line: usize,
    timestamp: i64,
    height: u64,
    inputs: Vec<RawInput>,
    outputs: BTreeMap<u32, RawOutput>,
}

pub fn read_chain_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<RawTransaction>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| super::price::column(&headers, name, path);
    let c_txid = col("txid")?;
    let c_ts = col("timestamp")?;
    let c_height = col("height")?;
    let c_dir = col("direction")?;
    let c_vout = col("vout")?;
    let c_prev = col("prev_txid")?;
    let c_addr = col("address")?;
    let c_value = col("value_sat")?;

    let mut txs: BTreeMap<Txid, CsvTx> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let ctx = LineCtx { path, line: i + 2 };
        let get = |c: usize| record.get(c).unwrap_or("");
        let parse_u64 = |c: usize, field: &str| -> Result<u64> {
            get(c)
                .parse::<u64>()
                .map_err(|e| ctx.err(field, format!("{:?}: {e}", get(c))))
        };
        let txid: Txid = get(c_txid).parse().map_err(|m: String| ctx.err("txid", m))?;
        let timestamp: i64 = get(c_ts)
            .parse()
            .map_err(|e| ctx.err("timestamp", format!("{:?}: {e}", get(c_ts))))?;
        let height = parse_u64(c_height, "height")?;
        let vout = u32::try_from(parse_u64(c_vout, "vout")?).map_err(|_| ctx.err("vout", "out of range"))?;

        let entry = txs.entry(txid).or_insert_with(|| CsvTx {
            line: ctx.line,
            timestamp,
            height,
            ..Default::default()
        });
        if entry.timestamp != timestamp || entry.height != height {
            return Err(ctx.err(
                "timestamp",
                format!("disagrees with line {} for the same txid", entry.line),
            ));
        }

        match get(c_dir) {
            "out" => {
                let output = RawOutput {
                    address: non_empty(get(c_addr)).ok_or_else(|| ctx.err("address", "empty"))?.to_owned(),
                    value: parse_u64(c_value, "value_sat")?,
                };
                if entry.outputs.insert(vout, output).is_some() {
                    return Err(ctx.err("vout", format!("output {vout} listed twice")));
                }
            }
            "in" => {
                let input = match non_empty(get(c_prev)) {
                    None => RawInput::External {
                        address: non_empty(get(c_addr))
                            .ok_or_else(|| ctx.err("address", "external input needs an address"))?
                            .to_owned(),
                        value: parse_u64(c_value, "value_sat")?,
                    },
                    Some(prev) => RawInput::Spend {
                        prevout: OutPoint {
                            txid: prev.parse().map_err(|m: String| ctx.err("prev_txid", m))?,
                            vout,
                        },
                        address: non_empty(get(c_addr)).map(str::to_owned),
                        value: match non_empty(get(c_value)) {
                            None => None,
                            Some(_) => Some(parse_u64(c_value, "value_sat")?),
                        },
                    },
                };
                entry.inputs.push(input);
            }
            other => return Err(ctx.err("direction", format!("expected `in` or `out`, got {other:?}"))),
        }
    }

    txs.into_iter()
        .map(|(txid, tx)| {
            let n = tx.outputs.len() as u32;
            if tx.outputs.keys().copied().ne(0..n) {
                return Err(Error::parse(
                    path,
                    tx.line,
                    "vout",
                    format!("outputs of {txid} are not numbered 0..{n}"),
                ));
            }
            Ok(RawTransaction {
                txid,
                timestamp: tx.timestamp,
                height: tx.height,
                inputs: tx.inputs,
                outputs: tx.outputs.into_values().collect(),
            })
        })
        .collect()
}

fn non_empty(s: &str) -> Option<&str> {
    Some(s).filter(|s| !s.is_empty())
}

/// Canonical JSONL export. Same chain state produces the same bytes.
pub fn write_chain_jsonl<W: Write>(chain: &Chain, mut writer: W) -> Result<()> {
    let io = |e| Error::io("<chain jsonl>", e);
    for tx in chain.to_raw() {
        let inputs: Vec<String> = tx
            .inputs
            .iter()
            .map(|i| match i {
                RawInput::External { address, value } => {
                    format!("{{\"external_address\":{},\"value_sat\":{value}}}", json_str(address))
                }
                RawInput::Spend {
                    prevout,
                    address,
                    value,
                } => {
                    let mut s = format!("{{\"txid\":\"{}\",\"vout\":{}", prevout.txid, prevout.vout);
                    if let Some(a) = address {
                        s.push_str(&format!(",\"address\":{}", json_str(a)));
                    }
                    if let Some(v) = value {
                        s.push_str(&format!(",\"value_sat\":{v}"));
                    }
                    s.push('}');
                    s
                }
            })
            .collect();
        let outputs: Vec<String> = tx
            .outputs
            .iter()
            .map(|o| format!("{{\"address\":{},\"value_sat\":{}}}", json_str(&o.address), o.value))
            .collect();
        writeln!(
            writer,
            "{{\"txid\":\"{}\",\"timestamp\":{},\"height\":{},\"inputs\":[{}],\"outputs\":[{}]}}",
            tx.txid,
            tx.timestamp,
            tx.height,
            inputs.join(","),
            outputs.join(",")
        )
        .map_err(io)?;
    }
    writer.flush().map_err(io)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(tag: &str) -> String {
        Txid::from_tag(tag).to_string()
    }

    fn two_tx_jsonl() -> String {
        format!(
            "{{\"txid\":\"{t1}\",\"timestamp\":100,\"height\":1,\"inputs\":[{{\"external_address\":\"a\",\"value_sat\":1000}}],\"outputs\":[{{\"address\":\"b\",\"value_sat\":900}},{{\"address\":\"c\",\"value_sat\":50}}]}}\n\
             {{\"txid\":\"{t2}\",\"timestamp\":200,\"height\":2,\"inputs\":[{{\"txid\":\"{t1}\",\"vout\":0}}],\"outputs\":[{{\"address\":\"d\",\"value_sat\":890}}]}}\n",
            t1 = id("t1"),
            t2 = id("t2")
        )
    }

    #[test]
    fn empty_file_is_empty_chain() {
        let raw = read_chain_jsonl("".as_bytes(), Path::new("c.jsonl")).unwrap();
        let chain = Chain::from_raw(raw).unwrap();
        assert_eq!((chain.len(), chain.address_count()), (0, 0));
    }

    #[test]
    fn second_tx_spends_first() {
        let raw = read_chain_jsonl(two_tx_jsonl().as_bytes(), Path::new("c.jsonl")).unwrap();
        let chain = Chain::from_raw(raw).unwrap();
        let t1 = chain.tx_index(&Txid::from_tag("t1")).unwrap();
        let t2 = chain.tx_index(&Txid::from_tag("t2")).unwrap();
        assert_eq!(chain.tx(t1).outputs[0].spent_by, Some(t2));
        assert_eq!(chain.tx(t1).outputs[1].spent_by, None);
    }

    #[test]
    fn jsonl_export_is_stable() {
        let raw = read_chain_jsonl(two_tx_jsonl().as_bytes(), Path::new("c.jsonl")).unwrap();
        let chain = Chain::from_raw(raw).unwrap();
        let mut first = Vec::new();
        write_chain_jsonl(&chain, &mut first).unwrap();
        let again = Chain::from_raw(read_chain_jsonl(first.as_slice(), Path::new("x")).unwrap()).unwrap();
        let mut second = Vec::new();
        write_chain_jsonl(&again, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(String::from_utf8(first).unwrap(), two_tx_jsonl());
    }

    #[test]
    fn malformed_row_names_line_and_field() {
        let text = format!(
            "{}{{\"txid\":\"{}\",\"timestamp\":1,\"height\":-1,\"inputs\":[],\"outputs\":[]}}\n",
            two_tx_jsonl(),
            id("t3")
        );
        let err = read_chain_jsonl(text.as_bytes(), Path::new("c.jsonl")).unwrap_err().to_string();
        assert!(err.starts_with("c.jsonl:3: field `height`"), "{err}");

        let err = read_chain_jsonl("{\"txid\":\"zz\"}\n".as_bytes(), Path::new("c.jsonl"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("c.jsonl:1") && err.contains("`txid`"), "{err}");

        let err = read_chain_jsonl("not json\n".as_bytes(), Path::new("c.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_txid_is_an_error() {
        let text = two_tx_jsonl() + two_tx_jsonl().lines().next().unwrap() + "\n";
        let raw = read_chain_jsonl(text.as_bytes(), Path::new("c.jsonl")).unwrap();
        assert!(matches!(Chain::from_raw(raw), Err(Error::DuplicateTxid(_))));
    }

    #[test]
    fn csv_matches_jsonl() {
        let csv = format!(
            "txid,timestamp,height,direction,vout,prev_txid,address,value_sat\n\
             {t2},200,2,in,0,{t1},,\n\
             {t1},100,1,out,1,,c,50\n\
             {t1},100,1,in,0,,a,1000\n\
             {t2},200,2,out,0,,d,890\n\
             {t1},100,1,out,0,,b,900\n",
            t1 = id("t1"),
            t2 = id("t2")
        );
        let from_csv = Chain::from_raw(read_chain_csv(csv.as_bytes(), Path::new("c.csv")).unwrap()).unwrap();
        let from_json =
            Chain::from_raw(read_chain_jsonl(two_tx_jsonl().as_bytes(), Path::new("c.jsonl")).unwrap()).unwrap();
        assert_eq!(from_csv.to_raw(), from_json.to_raw());
    }

    #[test]
    fn csv_rejects_gapped_outputs() {
        let csv = format!(
            "txid,timestamp,height,direction,vout,prev_txid,address,value_sat\n{t1},100,1,out,1,,c,50\n",
            t1 = id("t1")
        );
        let err = read_chain_csv(csv.as_bytes(), Path::new("c.csv")).unwrap_err().to_string();
        assert!(err.contains("vout"), "{err}");
    }
}
