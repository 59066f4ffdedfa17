//! Labeled synthetic transaction corpora with planted Ponzi schemes.
//!
//! A scheme is a contract account that receives many small deposits from
//! distinct investors. Each deposit is one transaction hash: the investor's
//! top-level transfer into the contract plus trace transfers from the contract
//! to earlier investors and the scheme owner, with payouts shrinking by
//! `payout_decay` per position in the investor queue. Normal accounts make
//! memoryless pairwise transfers and occasional multi-party service calls.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ingest::format_line;
use crate::model::{AccountId, TransactionRecord, TxHash};

const WEI_PER_ETHER: f64 = 1e18;
const DAY: u64 = 86_400;
pub const MAX_FANOUT: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_normal: usize,
    pub n_ponzi: usize,
    /// Unlabeled accounts that act as counterparties and investors.
    pub n_background: usize,
    /// Unlabeled contracts that fan calls out to several accounts.
    pub n_services: usize,
    /// Mean investors per scheme; actual counts are uniform on [mean/4, 2*mean].
    pub investors_per_scheme: usize,
    /// Mean deposits per investor (at least one each).
    pub deposits_per_investor: f64,
    /// Mean outgoing transactions per normal account (at least one each).
    pub normal_tx_rate: f64,
    /// Mean outgoing transfers per background account.
    pub background_tx_rate: f64,
    /// Fraction of normal transactions that are multi-party service calls.
    pub service_call_rate: f64,
    /// Ratio between consecutive payouts along the investor queue, in (0, 1].
    pub payout_decay: f64,
    /// Share of each deposit paid out again, in [0, 1].
    pub payout_share: f64,
    /// Mean participants per multi-party hash.
    pub fanout_mean: f64,
    /// Upper bound on participants per hash, in [2, 64].
    pub fanout_max: usize,
    pub deposit_eth_median: f64,
    pub transfer_eth_median: f64,
    pub horizon_days: u64,
    pub start_timestamp: u64,
    /// Pads up to exactly this many records with transfers from fresh
    /// background accounts, about one new account per two records.
    pub total_records: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_normal: 1406,
            n_ponzi: 197,
            n_background: 6000,
            n_services: 40,
            investors_per_scheme: 24,
            deposits_per_investor: 1.5,
            normal_tx_rate: 6.0,
            background_tx_rate: 1.0,
            service_call_rate: 0.25,
            payout_decay: 0.85,
            payout_share: 0.9,
            fanout_mean: 4.0,
            fanout_max: 16,
            deposit_eth_median: 0.3,
            transfer_eth_median: 2.0,
            horizon_days: 365,
            start_timestamp: 1_500_000_000,
            total_records: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if !(2..=MAX_FANOUT).contains(&self.fanout_max) {
            return bad(format!("fanout_max {} outside [2, {MAX_FANOUT}]", self.fanout_max));
        }
        if !(self.fanout_mean.is_finite() && self.fanout_mean >= 2.0) {
            return bad(format!("fanout_mean {} must be >= 2", self.fanout_mean));
        }
        if !(self.payout_decay > 0.0 && self.payout_decay <= 1.0) {
            return bad(format!("payout_decay {} outside (0, 1]", self.payout_decay));
        }
        for (name, v) in [
            ("payout_share", self.payout_share),
            ("service_call_rate", self.service_call_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("deposits_per_investor", self.deposits_per_investor),
            ("normal_tx_rate", self.normal_tx_rate),
            ("background_tx_rate", self.background_tx_rate),
            ("deposit_eth_median", self.deposit_eth_median),
            ("transfer_eth_median", self.transfer_eth_median),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if self.horizon_days == 0 || self.start_timestamp == 0 {
            return bad("horizon_days and start_timestamp must be positive".into());
        }
        if self.n_normal + self.n_background < 2 && self.n_ponzi > 0 {
            return bad("schemes need at least two normal or background accounts".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ponzi,
    Normal,
    Background,
    Service,
    Owner,
}

impl Role {
    pub fn label(self) -> Option<u8> {
        match self {
            Role::Ponzi => Some(1),
            Role::Normal => Some(0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountStats {
    pub in_count: u64,
    pub out_count: u64,
    pub distinct_in: u64,
    pub distinct_out: u64,
    /// Decimal wei.
    pub total_in: String,
    pub total_out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestAccount {
    pub address: AccountId,
    pub role: Role,
    pub label: Option<u8>,
    pub stats: AccountStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub n_records: usize,
    pub n_hashes: usize,
    /// Distinct accounts that occur in at least one record.
    pub n_accounts: usize,
    pub n_ponzi: usize,
    pub n_normal: usize,
    pub n_self_transfers: usize,
    pub accounts: Vec<ManifestAccount>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<TransactionRecord>,
    /// Every generated account in generation order with its role.
    pub accounts: Vec<(AccountId, Role)>,
    pub manifest: Manifest,
}

struct Gen {
    rng: ChaCha8Rng,
    seen: HashSet<AccountId>,
    start: u64,
    horizon: u64,
}

impl Gen {
    fn address(&mut self) -> AccountId {
        loop {
            let id = AccountId(self.rng.random());
            if self.seen.insert(id) {
                return id;
            }
        }
    }

    fn hash(&mut self) -> TxHash {
        TxHash(self.rng.random())
    }

    fn eth(&mut self, median: f64, sigma: f64) -> u128 {
        let d = LogNormal::new(median.max(1e-9).ln(), sigma).expect("finite lognormal parameters");
        let v: f64 = d.sample(&mut self.rng);
        (v * WEI_PER_ETHER).max(1.0) as u128
    }

    fn time(&mut self) -> u64 {
        self.start + self.rng.random_range(0..self.horizon)
    }

    fn poisson(&mut self, mean: f64) -> usize {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).expect("positive mean").sample(&mut self.rng) as usize
    }

    fn fanout(&mut self, mean: f64, max: usize) -> usize {
        (2 + self.poisson(mean - 2.0)).min(max)
    }
}

fn transfer(hash: TxHash, from: AccountId, to: AccountId, value: u128, timestamp: u64, is_trace: bool) -> TransactionRecord {
    TransactionRecord {
        tx_hash: hash,
        from,
        to,
        value,
        timestamp,
        is_trace,
    }
}

/// Picks an element of `pool` different from `not`; `pool` must hold two distinct entries.
fn pick_other(rng: &mut ChaCha8Rng, pool: &[AccountId], not: AccountId) -> AccountId {
    loop {
        let c = *pool.choose(rng).expect("nonempty pool");
        if c != not {
            return c;
        }
    }
}

fn scheme(g: &mut Gen, cfg: &SynthConfig, contract: AccountId, owner: AccountId, pool: &[AccountId]) -> Vec<Vec<TransactionRecord>> {
    let mut groups = Vec::new();
    let horizon = g.horizon;
    let open = g.start + g.rng.random_range(0..horizon * 7 / 10);
    let span = (horizon as f64 * g.rng.random_range(0.1..0.3)) as u64 + 1;

    let seed_hash = g.hash();
    let seed_value = g.eth(cfg.deposit_eth_median * 5.0, 0.5);
    groups.push(vec![transfer(seed_hash, owner, contract, seed_value, open, false)]);

    let k = cfg.investors_per_scheme.max(1);
    let n_investors = g.rng.random_range((k / 4).max(2)..=2 * k).min(pool.len());
    let investors: Vec<AccountId> = pool.choose_multiple(&mut g.rng, n_investors).copied().collect();
    let mut deposits: Vec<(u64, usize)> = Vec::new();
    for i in 0..investors.len() {
        let n = 1 + g.poisson(cfg.deposits_per_investor - 1.0);
        for _ in 0..n {
            deposits.push((open + 1 + g.rng.random_range(0..span), i));
        }
    }
    deposits.sort_unstable();

    // queue of investors in order of first deposit
    let mut queue: Vec<AccountId> = Vec::new();
    let mut joined = HashSet::new();
    for (ts, i) in deposits {
        let investor = investors[i];
        let hash = g.hash();
        let value = g.eth(cfg.deposit_eth_median, 0.6);
        let mut group = vec![transfer(hash, investor, contract, value, ts, false)];

        let fanout = g.fanout(cfg.fanout_mean, cfg.fanout_max);
        let mut payees = vec![owner];
        payees.extend(queue.iter().filter(|&&a| a != investor).take(fanout.saturating_sub(2)));
        let budget = value as f64 * cfg.payout_share;
        let weights: Vec<f64> = (0..payees.len()).map(|r| cfg.payout_decay.powi(r as i32)).collect();
        let total: f64 = weights.iter().sum();
        for (payee, w) in payees.iter().zip(&weights) {
            let paid = (budget * w / total) as u128;
            if paid > 0 {
                group.push(transfer(hash, contract, *payee, paid, ts, true));
            }
        }
        groups.push(group);
        if joined.insert(investor) {
            queue.push(investor);
        }
    }
    groups
}

/// Generates a corpus. Identical configurations give identical corpora.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus, SynthError> {
    cfg.validate()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        seen: HashSet::new(),
        start: cfg.start_timestamp,
        horizon: cfg.horizon_days * DAY,
    };
    let mut accounts = Vec::new();
    let mut make = |g: &mut Gen, n: usize, role: Role| -> Vec<AccountId> {
        let ids: Vec<AccountId> = (0..n).map(|_| g.address()).collect();
        accounts.extend(ids.iter().map(|&a| (a, role)));
        ids
    };
    let ponzi = make(&mut g, cfg.n_ponzi, Role::Ponzi);
    let owners = make(&mut g, cfg.n_ponzi, Role::Owner);
    let normal = make(&mut g, cfg.n_normal, Role::Normal);
    let background = make(&mut g, cfg.n_background, Role::Background);
    let services = make(&mut g, cfg.n_services, Role::Service);
    let pool: Vec<AccountId> = normal.iter().chain(&background).copied().collect();

    let mut groups: Vec<Vec<TransactionRecord>> = Vec::new();
    for (&contract, &owner) in ponzi.iter().zip(&owners) {
        groups.extend(scheme(&mut g, cfg, contract, owner, &pool));
    }

    if pool.len() >= 2 {
        for &from in &normal {
            let n = 1 + g.poisson(cfg.normal_tx_rate - 1.0);
            for _ in 0..n {
                let hash = g.hash();
                let ts = g.time();
                let value = g.eth(cfg.transfer_eth_median, 1.5);
                if !services.is_empty() && g.rng.random_bool(cfg.service_call_rate) {
                    let service = *services.choose(&mut g.rng).expect("nonempty");
                    let mut group = vec![transfer(hash, from, service, value, ts, false)];
                    let fanout = g.fanout(cfg.fanout_mean, cfg.fanout_max);
                    let mut outs = BTreeSet::new();
                    for _ in 1..fanout {
                        outs.insert(pick_other(&mut g.rng, &pool, from));
                    }
                    for to in outs {
                        let v = g.eth(cfg.transfer_eth_median / 2.0, 1.0);
                        group.push(transfer(hash, service, to, v, ts, true));
                    }
                    groups.push(group);
                } else {
                    let to = pick_other(&mut g.rng, &pool, from);
                    groups.push(vec![transfer(hash, from, to, value, ts, false)]);
                }
            }
        }
        for &from in &background {
            let n = g.poisson(cfg.background_tx_rate);
            for _ in 0..n {
                let to = pick_other(&mut g.rng, &pool, from);
                let hash = g.hash();
                let ts = g.time();
                let value = g.eth(cfg.transfer_eth_median, 1.5);
                groups.push(vec![transfer(hash, from, to, value, ts, false)]);
            }
        }
    }

    let mut n_records: usize = groups.iter().map(Vec::len).sum();
    if let Some(target) = cfg.total_records {
        if target < n_records {
            return Err(SynthError::Config(format!(
                "total_records {target} is below the {n_records} records the schemes and accounts already need"
            )));
        }
        let fresh = make(&mut g, ((target - n_records) / 2).max(2), Role::Background);
        let receivers: Vec<AccountId> = pool.iter().chain(&fresh).copied().collect();
        while n_records < target {
            let from = *fresh.choose(&mut g.rng).expect("nonempty");
            let to = pick_other(&mut g.rng, &receivers, from);
            let hash = g.hash();
            let ts = g.time();
            let value = g.eth(cfg.transfer_eth_median, 1.5);
            groups.push(vec![transfer(hash, from, to, value, ts, false)]);
            n_records += 1;
        }
    }

    groups.sort_by_key(|grp| grp[0].timestamp);
    let n_hashes = groups.len();
    let records: Vec<TransactionRecord> = groups.into_iter().flatten().collect();
    let manifest = build_manifest(cfg, &records, &accounts, n_hashes);
    Ok(Corpus {
        records,
        accounts,
        manifest,
    })
}

#[derive(Default)]
struct Tally {
    in_count: u64,
    out_count: u64,
    ins: HashSet<AccountId>,
    outs: HashSet<AccountId>,
    total_in: u128,
    total_out: u128,
}

fn build_manifest(cfg: &SynthConfig, records: &[TransactionRecord], accounts: &[(AccountId, Role)], n_hashes: usize) -> Manifest {
    let mut tally: BTreeMap<AccountId, Tally> = BTreeMap::new();
    let mut self_transfers = 0;
    for r in records {
        if r.from == r.to {
            self_transfers += 1;
        }
        let f = tally.entry(r.from).or_default();
        f.out_count += 1;
        f.outs.insert(r.to);
        f.total_out += r.value;
        let t = tally.entry(r.to).or_default();
        t.in_count += 1;
        t.ins.insert(r.from);
        t.total_in += r.value;
    }
    let n_accounts = tally.len();
    let list = accounts
        .iter()
        .filter_map(|&(address, role)| {
            let t = tally.get(&address)?;
            Some(ManifestAccount {
                address,
                role,
                label: role.label(),
                stats: AccountStats {
                    in_count: t.in_count,
                    out_count: t.out_count,
                    distinct_in: t.ins.len() as u64,
                    distinct_out: t.outs.len() as u64,
                    total_in: t.total_in.to_string(),
                    total_out: t.total_out.to_string(),
                },
            })
        })
        .collect();
    Manifest {
        config: cfg.clone(),
        n_records: records.len(),
        n_hashes,
        n_accounts,
        n_ponzi: cfg.n_ponzi,
        n_normal: cfg.n_normal,
        n_self_transfers: self_transfers,
        accounts: list,
    }
}

impl Corpus {
    pub fn write_transactions<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = BufWriter::new(w);
        for r in &self.records {
            w.write_all(format_line(r).as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// `address,label` for every labeled account.
    pub fn write_labels<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "address,label")?;
        for (a, role) in &self.accounts {
            if let Some(l) = role.label() {
                writeln!(w, "{a},{l}")?;
            }
        }
        w.flush()
    }

    pub fn write_manifest<W: Write>(&self, w: W) -> Result<(), SynthError> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Writes `transactions.jsonl`, `labels.csv` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        self.write_transactions(File::create(dir.join(TRANSACTIONS_FILE))?)?;
        self.write_labels(File::create(dir.join(LABELS_FILE))?)?;
        self.write_manifest(File::create(dir.join(MANIFEST_FILE))?)?;
        Ok(())
    }
}

pub const TRANSACTIONS_FILE: &str = "transactions.jsonl";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
