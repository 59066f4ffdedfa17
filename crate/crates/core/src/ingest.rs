//! Transaction and label file parsing, deduplication, and construction of the
//! homogeneous graph and the transaction-hash hypergraph.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    intern_accounts, AccountId, AccountIndex, Class, EdgeStats, HomogeneousGraph, Hypergraph,
    LabelSet, ModelError, TransactionRecord, TxHash,
};

/// Lines parsed per parallel batch.
const PARSE_BATCH: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read input: {0}")]
    Io(#[from] io::Error),
    #[error("label file: {0}")]
    Csv(#[from] csv::Error),
    #[error("label file must have header `address,label`, found {0:?}")]
    LabelHeader(Vec<String>),
    #[error("conflicting labels for {address} (line {line})")]
    ConflictingLabel { address: AccountId, line: usize },
    #[error("account {0} is not in the account index")]
    UnknownAccount(AccountId),
    #[error("no valid transaction records")]
    NoRecords,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A rejected input line and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: usize,
    pub records_rejected: usize,
    pub duplicates_removed: usize,
    pub n_accounts: usize,
    pub n_edges: usize,
    pub n_hyperedges: usize,
    pub hyperedges_dropped_singleton: usize,
    /// Records with `from == to`; they add no homogeneous edge.
    pub self_transfers: usize,
}

#[derive(Debug, Default)]
pub struct ParsedTransactions {
    pub records: Vec<TransactionRecord>,
    pub rejects: Vec<Reject>,
    /// Non-blank lines seen, accepted or not.
    pub records_read: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    hash: String,
    from: String,
    to: String,
    value: serde_json::Value,
    timestamp: serde_json::Value,
    is_trace: bool,
}

fn parse_value(v: &serde_json::Value) -> Result<u128, String> {
    match v {
        serde_json::Value::String(s) => {
            let s = s.trim();
            if s.starts_with('-') {
                return Err(format!("negative value {s}"));
            }
            if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("value {s:?} is not a decimal integer"));
            }
            s.parse().map_err(|_| format!("value {s} overflows 128 bits"))
        }
        serde_json::Value::Number(n) => match n.as_u64() {
            Some(x) => Ok(x as u128),
            None if n.as_i64().is_some() => Err(format!("negative value {n}")),
            None => Err(format!("value {n} is not an integer")),
        },
        other => Err(format!("value must be a decimal string, found {other}")),
    }
}

fn parse_timestamp(v: &serde_json::Value) -> Result<u64, String> {
    match v.as_u64() {
        Some(0) => Err("timestamp must be positive".into()),
        Some(t) => Ok(t),
        None => Err(format!("timestamp {v} is not a positive integer")),
    }
}

/// Parses one JSON-lines record.
pub fn parse_line(line: &str) -> Result<TransactionRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tx_hash: TxHash = raw.hash.parse().map_err(|e| format!("hash: {e}"))?;
    let from: AccountId = raw.from.parse().map_err(|e| format!("from: {e}"))?;
    let to: AccountId = raw.to.parse().map_err(|e| format!("to: {e}"))?;
    Ok(TransactionRecord {
        tx_hash,
        from,
        to,
        value: parse_value(&raw.value)?,
        timestamp: parse_timestamp(&raw.timestamp)?,
        is_trace: raw.is_trace,
    })
}

/// Serializes a record in the same JSON-lines schema [`parse_line`] reads.
pub fn format_line(r: &TransactionRecord) -> String {
    format!(
        r#"{{"hash":"{}","from":"{}","to":"{}","value":"{}","timestamp":{},"is_trace":{}}}"#,
        r.tx_hash, r.from, r.to, r.value, r.timestamp, r.is_trace
    )
}

/// Parses a JSON-lines stream. Malformed lines are rejected individually and
/// never stop the stream; only read failures are fatal.
pub fn parse_transactions<R: BufRead>(reader: R) -> Result<ParsedTransactions, IngestError> {
    let mut out = ParsedTransactions::default();
    let mut batch: Vec<(usize, String)> = Vec::with_capacity(PARSE_BATCH);
    let flush = |batch: &mut Vec<(usize, String)>, out: &mut ParsedTransactions| {
        let parsed: Vec<_> = batch
            .par_iter()
            .map(|(line_no, line)| (*line_no, parse_line(line)))
            .collect();
        for (line, result) in parsed {
            match result {
                Ok(r) => out.records.push(r),
                Err(reason) => {
                    log::debug!("rejected line {line}: {reason}");
                    out.rejects.push(Reject { line, reason })
                }
            }
        }
        batch.clear();
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.records_read += 1;
        batch.push((i + 1, line));
        if batch.len() == PARSE_BATCH {
            flush(&mut batch, &mut out);
        }
    }
    flush(&mut batch, &mut out);
    Ok(out)
}

/// Drops records whose `(tx_hash, from, to, value, is_trace)` was already seen,
/// keeping the first occurrence. Returns the retained records and the number removed.
pub fn deduplicate(records: Vec<TransactionRecord>) -> (Vec<TransactionRecord>, usize) {
    let before = records.len();
    let mut seen = HashSet::with_capacity(records.len());
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| seen.insert((r.tx_hash, r.from, r.to, r.value, r.is_trace)))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

fn node(index: &AccountIndex, id: &AccountId) -> Result<u32, IngestError> {
    index.get(id).ok_or(IngestError::UnknownAccount(*id))
}

/// One undirected edge per account pair with at least one transfer between them.
/// Returns the graph and the number of self-transfers skipped.
pub fn build_homogeneous(
    records: &[TransactionRecord],
    index: &AccountIndex,
) -> Result<(HomogeneousGraph, usize), IngestError> {
    let mut pairs: HashMap<(u32, u32), EdgeStats> = HashMap::new();
    let mut self_transfers = 0;
    for r in records {
        let a = node(index, &r.from)?;
        let b = node(index, &r.to)?;
        if a == b {
            self_transfers += 1;
            continue;
        }
        let e = pairs.entry((a.min(b), a.max(b))).or_default();
        e.count += 1;
        e.total_value = e.total_value.saturating_add(r.value);
    }
    let g = HomogeneousGraph::from_edges(index.len(), pairs.into_iter().map(|((a, b), s)| (a, b, s)))?;
    Ok((g, self_transfers))
}

/// Transaction-hash hypergraph: one hyperedge per hash holding every sender and
/// receiver of every record under it.
#[derive(Debug, Clone)]
pub struct TransactionHypergraph {
    pub graph: Hypergraph,
    /// Hash of hyperedge `e`.
    pub hashes: Vec<TxHash>,
    /// Hashes whose records involve fewer than two distinct accounts.
    pub dropped_singleton: usize,
}

/// Hyperedges are numbered by first appearance of their hash.
pub fn build_hypergraph(
    records: &[TransactionRecord],
    index: &AccountIndex,
) -> Result<TransactionHypergraph, IngestError> {
    let mut group_of: HashMap<TxHash, usize> = HashMap::new();
    let mut groups: Vec<(TxHash, Vec<u32>)> = Vec::new();
    for r in records {
        let g = *group_of.entry(r.tx_hash).or_insert_with(|| {
            groups.push((r.tx_hash, Vec::new()));
            groups.len() - 1
        });
        let members = &mut groups[g].1;
        members.push(node(index, &r.from)?);
        members.push(node(index, &r.to)?);
    }
    let mut hashes = Vec::with_capacity(groups.len());
    let mut edges = Vec::with_capacity(groups.len());
    let mut dropped = 0;
    for (hash, mut members) in groups {
        members.sort_unstable();
        members.dedup();
        if members.len() < 2 {
            dropped += 1;
            continue;
        }
        hashes.push(hash);
        edges.push(members);
    }
    let graph = Hypergraph::from_edges(index.len(), edges)?;
    Ok(TransactionHypergraph {
        graph,
        hashes,
        dropped_singleton: dropped,
    })
}

/// Everything built from one transaction file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub accounts: AccountIndex,
    pub records: Vec<TransactionRecord>,
    pub homogeneous: HomogeneousGraph,
    pub hypergraph: TransactionHypergraph,
    pub report: IngestReport,
    pub rejects: Vec<Reject>,
}

impl Dataset {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let file = File::open(path)?;
        Self::from_reader(BufReader::with_capacity(1 << 20, file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let parsed = parse_transactions(reader)?;
        Self::from_parsed(parsed)
    }

    pub fn from_parsed(parsed: ParsedTransactions) -> Result<Self, IngestError> {
        let ParsedTransactions {
            records,
            rejects,
            records_read,
        } = parsed;
        let (records, duplicates_removed) = deduplicate(records);
        if records.is_empty() {
            return Err(IngestError::NoRecords);
        }
        let accounts = intern_accounts(&records)?;
        let (homogeneous, self_transfers) = build_homogeneous(&records, &accounts)?;
        let hypergraph = build_hypergraph(&records, &accounts)?;
        let report = IngestReport {
            records_read,
            records_rejected: rejects.len(),
            duplicates_removed,
            n_accounts: accounts.len(),
            n_edges: homogeneous.edge_count(),
            n_hyperedges: hypergraph.graph.m(),
            hyperedges_dropped_singleton: hypergraph.dropped_singleton,
            self_transfers,
        };
        Ok(Self {
            accounts,
            records,
            homogeneous,
            hypergraph,
            report,
            rejects,
        })
    }
}

#[derive(Debug, Default)]
pub struct LoadedLabels {
    pub labels: LabelSet,
    pub rejects: Vec<Reject>,
}

/// Reads a CSV with header `address,label`. Rows with a bad address, a label
/// outside {0, 1}, or an address not present in `index` are rejected; the same
/// address labeled twice with different classes is fatal.
pub fn load_labels<R: Read>(reader: R, index: &AccountIndex) -> Result<LoadedLabels, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != ["address", "label"] {
        return Err(IngestError::LabelHeader(headers));
    }
    let mut out = LoadedLabels::default();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = row?;
        let reject = |reason: String| Reject { line, reason };
        let (Some(addr), Some(label)) = (row.get(0), row.get(1)) else {
            out.rejects.push(reject("expected two columns".into()));
            continue;
        };
        let address: AccountId = match addr.parse() {
            Ok(a) => a,
            Err(e) => {
                out.rejects.push(reject(format!("address {addr:?}: {e}")));
                continue;
            }
        };
        let class = match label.parse::<u8>().ok().map(Class::try_from) {
            Some(Ok(c)) => c,
            _ => {
                out.rejects.push(reject(format!("label {label:?} is not 0 or 1")));
                continue;
            }
        };
        let Some(node) = index.get(&address) else {
            out.rejects.push(reject(format!("unknown address {address}")));
            continue;
        };
        match out.labels.labels.insert(node, class) {
            Some(prev) if prev != class => {
                return Err(IngestError::ConflictingLabel { address, line });
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn load_labels_path(path: impl AsRef<Path>, index: &AccountIndex) -> Result<LoadedLabels, IngestError> {
    load_labels(File::open(path)?, index)
}
