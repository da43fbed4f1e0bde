//! Flat `key = value` run configuration.
//!
//! One pair per line; `#` starts a comment. Required keys: `dataset`,
//! `distribution`, `strategy`, `seed`. Everything else has a default:
//!
//! | key                         | default          |
//! |-----------------------------|------------------|
//! | `mode`                      | `B`              |
//! | `n`                         | unset (explicit N overrides `mode`) |
//! | `rounds`                    | 50               |
//! | `learning_rate`             | 0.003            |
//! | `batch_size`                | 32               |
//! | `local_epochs`              | 1                |
//! | `num_clients`               | 100              |
//! | `samples_per_client`        | 600              |
//! | `client_fraction`           | 0.1              |
//! | `metadata_pool`             | unset (all clients) |
//! | `refresh_metadata`          | true             |
//! | `imbalance_minority_count`  | 0 (disabled)     |
//! | `imbalance_ratio`           | 0.1              |
//! | `imbalance_categories`      | unset (lowest ids) |
//! | `per_client_cost`           | 1                |
//! | `server_cost`               | 0                |
//! | `mask_cost`                 | 0                |
//! | `seeds`                     | 1                |
//! | `output`                    | `results.csv`    |
//! | `data_root`                 | `$CATFED_DATA_ROOT`, else `data` |
//! | `partition_file`            | unset (generate) |

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datasets::DatasetName;
use crate::distributions::{DistributionKind, ImbalanceSpec};
use crate::error::{Error, Result};
use crate::federation::Strategy;
use crate::selection::Mode;

pub const DATA_ROOT_ENV: &str = "CATFED_DATA_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub distribution: DistributionKind,
    pub strategy: Strategy,
    pub mode: Mode,
    pub n: Option<usize>,
    pub rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub client_fraction: f64,
    pub metadata_pool: Option<usize>,
    pub refresh_metadata: bool,
    pub imbalance_minority_count: usize,
    pub imbalance_ratio: f64,
    pub imbalance_categories: Option<Vec<usize>>,
    pub per_client_cost: f64,
    pub server_cost: f64,
    pub mask_cost: f64,
    pub seed: u64,
    pub seeds: usize,
    pub output: PathBuf,
    pub data_root: Option<PathBuf>,
    pub partition_file: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(dataset: DatasetName, distribution: DistributionKind, strategy: Strategy, seed: u64) -> Self {
        Self {
            dataset,
            distribution,
            strategy,
            mode: Mode::B,
            n: None,
            rounds: 50,
            learning_rate: 0.003,
            batch_size: 32,
            local_epochs: 1,
            num_clients: 100,
            samples_per_client: 600,
            client_fraction: 0.1,
            metadata_pool: None,
            refresh_metadata: true,
            imbalance_minority_count: 0,
            imbalance_ratio: 0.1,
            imbalance_categories: None,
            per_client_cost: 1.0,
            server_cost: 0.0,
            mask_cost: 0.0,
            seed,
            seeds: 1,
            output: PathBuf::from("results.csv"),
            data_root: None,
            partition_file: None,
        }
    }

    pub fn imbalance(&self) -> Option<ImbalanceSpec> {
        (self.imbalance_minority_count > 0).then(|| ImbalanceSpec {
            minority_count: self.imbalance_minority_count,
            ratio: self.imbalance_ratio,
            categories: self.imbalance_categories.clone(),
        })
    }

    /// Config key, then `$CATFED_DATA_ROOT`, then `./data`.
    pub fn resolved_data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::Config { line: 0, reason });
        let positive = [
            ("rounds", self.rounds),
            ("batch_size", self.batch_size),
            ("local_epochs", self.local_epochs),
            ("num_clients", self.num_clients),
            ("samples_per_client", self.samples_per_client),
            ("seeds", self.seeds),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{key} must be positive"));
        }
        if self.n == Some(0) {
            return fail("n must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate must be finite and non-negative".into());
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return fail("client_fraction must be in (0, 1]".into());
        }
        if let Some(m) = self.metadata_pool {
            if m == 0 || m > self.num_clients {
                return fail(format!("metadata_pool must be in [1, {}]", self.num_clients));
            }
        }
        if self.imbalance_minority_count > 0 && !(self.imbalance_ratio > 0.0 && self.imbalance_ratio < 1.0) {
            return fail("imbalance_ratio must be in (0, 1)".into());
        }
        if self.imbalance_minority_count >= self.dataset.num_categories() {
            return fail("imbalance_minority_count must be below the category count".into());
        }
        if let Some(cats) = &self.imbalance_categories {
            if cats.len() != self.imbalance_minority_count {
                return fail("imbalance_categories must list imbalance_minority_count ids".into());
            }
            if cats.iter().any(|&c| c >= self.dataset.num_categories()) {
                return fail("imbalance_categories has an out-of-range id".into());
            }
        }
        for (key, v) in [
            ("per_client_cost", self.per_client_cost),
            ("server_cost", self.server_cost),
            ("mask_cost", self.mask_cost),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{key} must be finite and non-negative"));
            }
        }
        if let Some(k) = self.distribution.required_categories() {
            if k != self.dataset.num_categories() {
                return fail(format!(
                    "distribution {} needs a {k}-category dataset, {} has {}",
                    self.distribution,
                    self.dataset,
                    self.dataset.num_categories()
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dataset = None;
        let mut distribution = None;
        let mut strategy = None;
        let mut seed = None;
        let mut pending = Vec::new();
        let mut seen = BTreeSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, found {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key {key:?}"),
                });
            }
            match key {
                "dataset" => dataset = Some(parse_value(line, key, value)?),
                "distribution" => distribution = Some(parse_value(line, key, value)?),
                "strategy" => strategy = Some(parse_value(line, key, value)?),
                "seed" => seed = Some(parse_value(line, key, value)?),
                _ => pending.push((line, key.to_string(), value.to_string())),
            }
        }

        let missing = |key: &str| Error::Config {
            line: 0,
            reason: format!("missing required key {key:?}"),
        };
        let mut cfg = RunConfig::new(
            dataset.ok_or_else(|| missing("dataset"))?,
            distribution.ok_or_else(|| missing("distribution"))?,
            strategy.ok_or_else(|| missing("strategy"))?,
            seed.ok_or_else(|| missing("seed"))?,
        );
        for (line, key, value) in pending {
            cfg.set(line, &key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = parse_value(line, key, value)?,
            "n" => self.n = Some(parse_value(line, key, value)?),
            "rounds" => self.rounds = parse_value(line, key, value)?,
            "learning_rate" => self.learning_rate = parse_value(line, key, value)?,
            "batch_size" => self.batch_size = parse_value(line, key, value)?,
            "local_epochs" => self.local_epochs = parse_value(line, key, value)?,
            "num_clients" => self.num_clients = parse_value(line, key, value)?,
            "samples_per_client" => self.samples_per_client = parse_value(line, key, value)?,
            "client_fraction" => self.client_fraction = parse_value(line, key, value)?,
            "metadata_pool" => self.metadata_pool = Some(parse_value(line, key, value)?),
            "refresh_metadata" => self.refresh_metadata = parse_value(line, key, value)?,
            "imbalance_minority_count" => self.imbalance_minority_count = parse_value(line, key, value)?,
            "imbalance_ratio" => self.imbalance_ratio = parse_value(line, key, value)?,
            "imbalance_categories" => {
                self.imbalance_categories = Some(
                    value
                        .split(',')
                        .map(|v| parse_value(line, key, v.trim()))
                        .collect::<Result<Vec<usize>>>()?,
                )
            }
            "per_client_cost" => self.per_client_cost = parse_value(line, key, value)?,
            "server_cost" => self.server_cost = parse_value(line, key, value)?,
            "mask_cost" => self.mask_cost = parse_value(line, key, value)?,
            "seeds" => self.seeds = parse_value(line, key, value)?,
            "output" => self.output = PathBuf::from(value),
            "data_root" => self.data_root = Some(PathBuf::from(value)),
            "partition_file" => self.partition_file = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key {other:?}"),
                })
            }
        }
        Ok(())
    }

    /// Renders every field; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("dataset = {}", self.dataset),
            format!("distribution = {}", self.distribution),
            format!("strategy = {}", self.strategy),
            format!("seed = {}", self.seed),
            format!("mode = {}", self.mode),
        ];
        if let Some(n) = self.n {
            lines.push(format!("n = {n}"));
        }
        lines.extend([
            format!("rounds = {}", self.rounds),
            format!("learning_rate = {}", self.learning_rate),
            format!("batch_size = {}", self.batch_size),
            format!("local_epochs = {}", self.local_epochs),
            format!("num_clients = {}", self.num_clients),
            format!("samples_per_client = {}", self.samples_per_client),
            format!("client_fraction = {}", self.client_fraction),
        ]);
        if let Some(m) = self.metadata_pool {
            lines.push(format!("metadata_pool = {m}"));
        }
        lines.extend([
            format!("refresh_metadata = {}", self.refresh_metadata),
            format!("imbalance_minority_count = {}", self.imbalance_minority_count),
            format!("imbalance_ratio = {}", self.imbalance_ratio),
        ]);
        if let Some(cats) = &self.imbalance_categories {
            let list: Vec<String> = cats.iter().map(usize::to_string).collect();
            lines.push(format!("imbalance_categories = {}", list.join(",")));
        }
        lines.extend([
            format!("per_client_cost = {}", self.per_client_cost),
            format!("server_cost = {}", self.server_cost),
            format!("mask_cost = {}", self.mask_cost),
            format!("seeds = {}", self.seeds),
            format!("output = {}", self.output.display()),
        ]);
        if let Some(root) = &self.data_root {
            lines.push(format!("data_root = {}", root.display()));
        }
        if let Some(p) = &self.partition_file {
            lines.push(format!("partition_file = {}", p.display()));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

fn parse_value<T>(line: usize, key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        line,
        reason: format!("bad value {value:?} for {key}: {e}"),
    })
}
