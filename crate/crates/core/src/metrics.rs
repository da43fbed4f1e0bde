//! Communication-cost accounting and loss-decomposition checks.
//!
//! A round with `K` participating clients costs `K * C_c + C_s`; `R` rounds
//! cost the sum of their round costs, which collapses to `R*K*C_c + R*C_s`
//! when `K` is constant. Cost units are abstract.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::EvalReport;

/// Relative tolerance for the client-major vs category-major loss sums.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    /// Server-side cost of interacting with one client.
    pub per_client: f64,
    /// Cost of one global update.
    pub server: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            per_client: 1.0,
            server: 0.0,
        }
    }
}

impl CostModel {
    pub fn new(per_client: f64, server: f64) -> Result<Self> {
        if !(per_client.is_finite() && per_client >= 0.0 && server.is_finite() && server >= 0.0) {
            return Err(Error::invalid(format!(
                "costs must be finite and non-negative, got C_c={per_client}, C_s={server}"
            )));
        }
        Ok(Self { per_client, server })
    }
}

pub fn round_cost(model: &CostModel, k: usize) -> f64 {
    k as f64 * model.per_client + model.server
}

pub fn cumulative_cost(model: &CostModel, k_per_round: &[usize]) -> f64 {
    k_per_round.iter().map(|&k| round_cost(model, k)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MarginalCost {
    /// Every round had the same `K`.
    Constant(usize),
    /// `K` varied; mean and population variance across rounds.
    Varying { mean: f64, variance: f64 },
}

/// `(1/R) dC_R/dC_c`: the per-round cost sensitivity to the per-client cost.
pub fn marginal_cost_per_client_per_round(k_per_round: &[usize]) -> Result<MarginalCost> {
    let first = *k_per_round
        .first()
        .ok_or_else(|| Error::invalid("no rounds recorded"))?;
    if k_per_round.iter().all(|&k| k == first) {
        return Ok(MarginalCost::Constant(first));
    }
    let n = k_per_round.len() as f64;
    let mean = k_per_round.iter().sum::<usize>() as f64 / n;
    let variance = k_per_round
        .iter()
        .map(|&k| (k as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(MarginalCost::Varying { mean, variance })
}

pub fn data_seen(counts: &[usize]) -> u64 {
    counts.iter().map(|&n| n as u64).sum()
}

/// Running totals kept by the orchestrator, updated once per round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostLedger {
    pub model: CostModel,
    pub k_per_round: Vec<usize>,
    pub cumulative_cost: f64,
    pub data_seen: u64,
    /// Charges for metadata (mask) transfers, kept apart from the round costs.
    pub metadata_cost: f64,
}

impl CostLedger {
    pub fn new(model: CostModel) -> Self {
        Self {
            model,
            ..Self::default()
        }
    }

    pub fn rounds_completed(&self) -> usize {
        self.k_per_round.len()
    }

    /// Records one round; returns its cost.
    pub fn record_round(&mut self, sample_counts: &[usize]) -> f64 {
        let k = sample_counts.len();
        let cost = round_cost(&self.model, k);
        self.k_per_round.push(k);
        self.cumulative_cost += cost;
        self.data_seen += data_seen(sample_counts);
        cost
    }

    pub fn record_metadata(&mut self, masks_collected: usize, cost_per_mask: f64) {
        self.metadata_cost += masks_collected as f64 * cost_per_mask;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionReport {
    /// `K F_s`: per-client totals summed over clients.
    pub client_major: f64,
    /// `K G_s`: per-category totals (summed over clients) summed over categories.
    pub category_major: f64,
    pub num_clients: usize,
    /// Categories no report has samples for.
    pub undefined_categories: Vec<usize>,
}

impl DecompositionReport {
    pub fn relative_gap(&self) -> f64 {
        let scale = self.client_major.abs().max(self.category_major.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.client_major - self.category_major).abs() / scale
        }
    }

    pub fn holds(&self) -> bool {
        self.relative_gap() <= DECOMPOSITION_TOLERANCE
    }

    /// Server loss `F_s`, the unweighted mean of client losses.
    pub fn server_loss(&self) -> f64 {
        self.client_major / self.num_clients as f64
    }
}

/// Compares the two orders of summing per-client, per-category losses.
///
/// Each report is one client's evaluation. Means are unweighted over clients.
pub fn check_loss_decomposition(reports: &[EvalReport], num_categories: usize) -> Result<DecompositionReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no evaluation reports"));
    }
    let client_major: f64 = reports.iter().map(EvalReport::total_loss).sum();
    let mut category_major = 0.0;
    let mut defined = BTreeSet::new();
    for category in 0..num_categories {
        let mut per_category = 0.0;
        for report in reports {
            if let Some(c) = report.per_category_loss.get(&category) {
                per_category += c.summed_loss;
                defined.insert(category);
            }
        }
        category_major += per_category;
    }
    if let Some(&extra) = reports
        .iter()
        .flat_map(|r| r.per_category_loss.keys())
        .find(|&&c| c >= num_categories)
    {
        return Err(Error::invalid(format!(
            "report has category {extra} beyond {num_categories}"
        )));
    }
    Ok(DecompositionReport {
        client_major,
        category_major,
        num_clients: reports.len(),
        undefined_categories: (0..num_categories).filter(|c| !defined.contains(c)).collect(),
    })
}
