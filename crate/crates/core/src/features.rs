//! The 17 per-account behavioral features and their train-fitted z-scoring.
//!
//! Column layout:
//!
//! | cols  | meaning                                                          |
//! |-------|------------------------------------------------------------------|
//! | 0-4   | received value total, mean, max, min, population std (ether)     |
//! | 5-9   | the same for sent values                                         |
//! | 10/11 | mean absolute value change between consecutive received / sent   |
//! | 12/13 | mean time gap between consecutive received / sent (seconds)      |
//! | 14    | lifecycle: last minus first timestamp over all the account's txs |
//! | 15/16 | sent count / received count                                      |
//!
//! Consecutive means consecutive after sorting by `(timestamp, value)`; empty
//! statistics are 0.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::learning::Tensor;
use crate::model::{AccountId, AccountIndex, TransactionRecord};

pub const N_FEATURES: usize = 17;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "recv_total",
    "recv_mean",
    "recv_max",
    "recv_min",
    "recv_std",
    "sent_total",
    "sent_mean",
    "sent_max",
    "sent_min",
    "sent_std",
    "recv_value_gap",
    "sent_value_gap",
    "recv_time_gap",
    "sent_time_gap",
    "lifecycle",
    "sent_count",
    "recv_count",
];

const WEI_PER_ETHER: f64 = 1e18;
const CACHE_MAGIC: &[u8; 4] = b"HDFM";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit normalization on an empty training mask")]
    EmptyTrainMask,
    #[error("training row {row} out of range for {n} rows")]
    RowOutOfRange { row: usize, n: usize },
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `(timestamp, wei)` of one transfer seen from one side.
type Event = (u64, u128);

fn ether(wei: u128) -> f64 {
    wei as f64 / WEI_PER_ETHER
}

fn side_stats(events: &[Event]) -> [f64; 5] {
    if events.is_empty() {
        return [0.0; 5];
    }
    let values: Vec<f64> = events.iter().map(|&(_, v)| ether(v)).collect();
    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    let mean = total / n;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    [total, mean, max, min, var.sqrt()]
}

/// Mean |value change| and mean time gap between consecutive events.
fn gaps(events: &[Event]) -> (f64, f64) {
    if events.len() < 2 {
        return (0.0, 0.0);
    }
    let pairs = (events.len() - 1) as f64;
    let mut value_gap = 0.0;
    let mut time_gap = 0.0;
    for w in events.windows(2) {
        value_gap += ether(w[1].1.abs_diff(w[0].1));
        time_gap += (w[1].0 - w[0].0) as f64;
    }
    (value_gap / pairs, time_gap / pairs)
}

fn features_from_events(mut received: Vec<Event>, mut sent: Vec<Event>) -> [f64; N_FEATURES] {
    // A total order on integer keys makes every later float reduction independent
    // of input record order.
    received.sort_unstable();
    sent.sort_unstable();
    let mut f = [0.0; N_FEATURES];
    f[0..5].copy_from_slice(&side_stats(&received));
    f[5..10].copy_from_slice(&side_stats(&sent));
    let (recv_vgap, recv_tgap) = gaps(&received);
    let (sent_vgap, sent_tgap) = gaps(&sent);
    f[10] = recv_vgap;
    f[11] = sent_vgap;
    f[12] = recv_tgap;
    f[13] = sent_tgap;
    let times = received.iter().chain(&sent).map(|&(t, _)| t);
    if let (Some(first), Some(last)) = (times.clone().min(), times.max()) {
        f[14] = (last - first) as f64;
    }
    f[15] = sent.len() as f64;
    f[16] = received.len() as f64;
    f
}

/// Features of one account computed directly from the record list.
pub fn extract_account_features(account: &AccountId, records: &[TransactionRecord]) -> [f64; N_FEATURES] {
    let received = records
        .iter()
        .filter(|r| r.to == *account)
        .map(|r| (r.timestamp, r.value))
        .collect();
    let sent = records
        .iter()
        .filter(|r| r.from == *account)
        .map(|r| (r.timestamp, r.value))
        .collect();
    features_from_events(received, sent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `n x 17` feature table whose rows follow the account index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    /// Present once fitted; `values` is then normalized.
    pub norm: Option<NormStats>,
}

impl FeatureMatrix {
    pub fn names(&self) -> &'static [&'static str; N_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    /// CSV with an `address` column followed by the 17 feature columns.
    pub fn write_csv<W: Write>(&self, accounts: &AccountIndex, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["address"];
        header.extend(FEATURE_NAMES);
        wtr.write_record(&header)?;
        for (i, id) in accounts.ids().iter().enumerate().take(self.n()) {
            let mut row = vec![id.to_string()];
            row.extend(self.values.row(i).iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Binary cache: `HDFM`, version, rows, cols, norm flag, optional mean/std,
    /// then row-major values. All little-endian.
    pub fn write_cache<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.values.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.values.cols() as u64).to_le_bytes())?;
        w.write_all(&[self.norm.is_some() as u8])?;
        if let Some(norm) = &self.norm {
            for v in norm.mean.iter().chain(&norm.std) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in self.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(FeatureError::Cache("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CACHE_VERSION {
            return Err(FeatureError::Cache(format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        if cols != N_FEATURES {
            return Err(FeatureError::Cache(format!("expected {N_FEATURES} columns, found {cols}")));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let mut read_f64s = |count: usize| -> io::Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let norm = match flag[0] {
            0 => None,
            1 => {
                let mean = read_f64s(cols)?;
                let std = read_f64s(cols)?;
                Some(NormStats { mean, std })
            }
            other => return Err(FeatureError::Cache(format!("bad norm flag {other}"))),
        };
        let values = Tensor::from_vec(rows, cols, read_f64s(rows * cols)?);
        Ok(Self { values, norm })
    }
}

/// Row `i` holds the features of account `i` of `accounts`.
pub fn build_feature_matrix(accounts: &AccountIndex, records: &[TransactionRecord]) -> FeatureMatrix {
    let n = accounts.len();
    let mut received: Vec<Vec<Event>> = vec![Vec::new(); n];
    let mut sent: Vec<Vec<Event>> = vec![Vec::new(); n];
    for r in records {
        if let Some(i) = accounts.get(&r.to) {
            received[i as usize].push((r.timestamp, r.value));
        }
        if let Some(i) = accounts.get(&r.from) {
            sent[i as usize].push((r.timestamp, r.value));
        }
    }
    let rows: Vec<[f64; N_FEATURES]> = received
        .into_par_iter()
        .zip(sent)
        .map(|(recv, snt)| features_from_events(recv, snt))
        .collect();
    let data = rows.into_iter().flatten().collect();
    FeatureMatrix {
        values: Tensor::from_vec(n, N_FEATURES, data),
        norm: None,
    }
}

/// Z-scores every column with the mean and population std of the training
/// rows, applied to all rows. Columns constant on the training rows are only
/// centered.
pub fn fit_and_normalize(matrix: &FeatureMatrix, train_rows: &[usize]) -> Result<FeatureMatrix, FeatureError> {
    if train_rows.is_empty() {
        return Err(FeatureError::EmptyTrainMask);
    }
    let n = matrix.values.rows();
    if let Some(&row) = train_rows.iter().find(|&&r| r >= n) {
        return Err(FeatureError::RowOutOfRange { row, n });
    }
    let raw = match &matrix.norm {
        // refitting starts from the raw values
        Some(norm) => denormalize(&matrix.values, norm),
        None => matrix.values.clone(),
    };
    let cols = raw.cols();
    let count = train_rows.len() as f64;
    let mut mean = vec![0.0; cols];
    for &r in train_rows {
        for (m, v) in mean.iter_mut().zip(raw.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut std = vec![0.0; cols];
    for &r in train_rows {
        for ((s, v), m) in std.iter_mut().zip(raw.row(r)).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / count).sqrt());

    let mut values = raw;
    for r in 0..n {
        for (c, v) in values.row_mut(r).iter_mut().enumerate() {
            *v -= mean[c];
            if !is_constant(std[c], mean[c]) {
                *v /= std[c];
            }
        }
    }
    Ok(FeatureMatrix {
        values,
        norm: Some(NormStats { mean, std }),
    })
}

fn is_constant(std: f64, mean: f64) -> bool {
    std <= 1e-12 * mean.abs().max(1.0)
}

fn denormalize(values: &Tensor, norm: &NormStats) -> Tensor {
    let mut out = values.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            if !is_constant(norm.std[c], norm.mean[c]) {
                *v *= norm.std[c];
            }
            *v += norm.mean[c];
        }
    }
    out
}
