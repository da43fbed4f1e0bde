//! Federated round loop: metadata collection, client selection, local
//! training, weighted aggregation and evaluation.
//!
//! Local updates run in parallel. Each client draws from its own stream keyed
//! by `(seed, round, client_id)` and the server reduces updates in ascending
//! client-id order, so records are bit-identical however the work is scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::datasets::LabeledDataset;
use crate::distributions::ClientPartition;
use crate::error::{Error, Result};
use crate::mask::CategoryMask;
use crate::metrics::{check_loss_decomposition, CostLedger, CostModel, DecompositionReport};
use crate::nn::{client_update, evaluate, init_model, CategoryLoss, EvalReport, ModelParams, TrainConfig};
use crate::rng::{self, Purpose};
use crate::selection::{select_cost, select_performance, select_random, SelectionConfig, SelectionResult};

const EVAL_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    FedAvgRandom,
    CatPerformance,
    CatCost,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::FedAvgRandom => "fedavg_random",
            Strategy::CatPerformance => "cat_performance",
            Strategy::CatCost => "cat_cost",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg_random" => Ok(Strategy::FedAvgRandom),
            "cat_performance" => Ok(Strategy::CatPerformance),
            "cat_cost" => Ok(Strategy::CatCost),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientState {
    pub id: usize,
    /// Indices into the training dataset.
    pub indices: Vec<usize>,
    pub mask: CategoryMask,
}

impl ClientState {
    pub fn sample_count(&self) -> usize {
        self.indices.len()
    }

    pub fn from_partition(partition: &ClientPartition) -> Result<Vec<Self>> {
        partition
            .assignments
            .iter()
            .zip(&partition.masks)
            .enumerate()
            .map(|(id, (indices, mask))| {
                if indices.is_empty() || mask.is_empty() {
                    return Err(Error::invalid(format!("client {id} holds no samples")));
                }
                Ok(Self {
                    id,
                    indices: indices.clone(),
                    mask: *mask,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub selection: SelectionConfig,
    pub rounds: usize,
    pub train: TrainConfig,
    /// Fraction of clients drawn by `fedavg_random`.
    pub client_fraction: f64,
    /// Clients asked for their mask each round; `None` means all.
    pub metadata_pool: Option<usize>,
    /// Re-collect masks every round (otherwise once per experiment).
    pub refresh_metadata: bool,
    pub cost: CostModel,
    /// Charge per collected mask; kept out of the round costs.
    pub mask_cost: f64,
    pub architecture: Vec<usize>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(strategy: Strategy, selection: SelectionConfig, architecture: Vec<usize>, seed: u64) -> Self {
        Self {
            strategy,
            selection,
            rounds: 50,
            train: TrainConfig::default(),
            client_fraction: 0.1,
            metadata_pool: None,
            refresh_metadata: true,
            cost: CostModel::default(),
            mask_cost: 0.0,
            architecture,
            seed,
        }
    }

    fn validate(&self, num_clients: usize) -> Result<()> {
        self.train.validate()?;
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be positive"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "client_fraction must be in (0, 1], got {}",
                self.client_fraction
            )));
        }
        if let Some(m) = self.metadata_pool {
            if m == 0 || m > num_clients {
                return Err(Error::invalid(format!(
                    "metadata pool {m} must be in [1, {num_clients}]"
                )));
            }
        }
        if !(self.mask_cost.is_finite() && self.mask_cost >= 0.0) {
            return Err(Error::invalid("mask_cost must be finite and non-negative"));
        }
        Ok(())
    }

    /// `K` used by random selection: `max(round(fraction * clients), 1)`.
    pub fn random_k(&self, num_clients: usize) -> usize {
        ((self.client_fraction * num_clients as f64).round() as usize).clamp(1, num_clients)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub strategy: Strategy,
    /// Client ids in selection order.
    pub selected: Vec<usize>,
    pub categories_covered: usize,
    pub accuracy: f64,
    /// Mean test cross-entropy.
    pub test_loss: f64,
    pub per_category_loss: BTreeMap<usize, CategoryLoss>,
    pub round_cost: f64,
    pub cumulative_cost: f64,
    /// Samples held by all clients selected so far, summed over rounds.
    pub data_seen: u64,
    /// Local losses of the selected clients, summed client-major vs category-major.
    pub client_decomposition: DecompositionReport,
    /// Test loss, summed sample-category-wise vs total.
    pub test_decomposition: DecompositionReport,
}

impl RoundRecord {
    pub fn k(&self) -> usize {
        self.selected.len()
    }
}

/// Samples `pool_size` clients uniformly and returns their `(id, mask)`, sorted by id.
pub fn metadata_round<R: rand::Rng + ?Sized>(
    clients: &[ClientState],
    pool_size: usize,
    rng: &mut R,
) -> Result<Vec<(usize, CategoryMask)>> {
    if pool_size == 0 {
        return Err(Error::invalid("metadata pool must be positive"));
    }
    if pool_size > clients.len() {
        return Err(Error::invalid(format!(
            "metadata pool {pool_size} exceeds {} clients",
            clients.len()
        )));
    }
    let mut picked = select_random(clients.len(), pool_size, rng)?;
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| (clients[i].id, clients[i].mask))
        .collect())
}

/// `n_k`-weighted mean of the updates.
///
/// Accumulated as a running mean (`m += (w_k - m) * n_k / n_so_far`), so a
/// single update or identical updates come back bit-exact.
pub fn aggregate_weighted(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::invalid("no updates to aggregate"))?;
    if updates.iter().any(|(m, _)| !m.same_shape(first)) {
        return Err(Error::invalid("updates have mismatched architectures"));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("total sample count is zero"));
    }

    let mut mean = first.clone();
    let mut seen = 0usize;
    for (model, n) in updates {
        if *n == 0 {
            continue;
        }
        if seen == 0 {
            mean = model.clone();
            seen = *n;
            continue;
        }
        seen += n;
        let weight = *n as f64 / seen as f64;
        for (acc, src) in mean.layers_mut().iter_mut().zip(model.layers()) {
            acc.weights.zip_mut_with(&src.weights, |m, &w| *m += (w - *m) * weight);
            acc.bias.zip_mut_with(&src.bias, |m, &w| *m += (w - *m) * weight);
        }
    }
    Ok(mean)
}

pub fn evaluate_dataset(model: &ModelParams, dataset: &LabeledDataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut report = EvalReport::default();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let samples = dataset.samples(chunk);
        report.absorb(model, samples.features.view(), &samples.labels)?;
    }
    Ok(report)
}

struct LocalUpdate {
    id: usize,
    model: ModelParams,
    samples: usize,
    local_eval: EvalReport,
}

/// Runs rounds of one experiment against fixed clients and data.
pub struct Federation<'a> {
    config: ExperimentConfig,
    clients: Vec<ClientState>,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    ledger: CostLedger,
    metadata: Option<Vec<(usize, CategoryMask)>>,
}

impl<'a> Federation<'a> {
    pub fn new(
        config: ExperimentConfig,
        clients: Vec<ClientState>,
        train: &'a LabeledDataset,
        test: &'a LabeledDataset,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::invalid("no clients"));
        }
        config.validate(clients.len())?;
        if config.selection.num_categories != train.num_categories
            || test.num_categories != train.num_categories
        {
            return Err(Error::invalid(format!(
                "category counts disagree: selection {}, train {}, test {}",
                config.selection.num_categories, train.num_categories, test.num_categories
            )));
        }
        if let Some(c) = clients.iter().find(|c| c.indices.iter().any(|&i| i >= train.len())) {
            return Err(Error::invalid(format!(
                "client {} references samples beyond the training set",
                c.id
            )));
        }
        if clients.iter().any(|c| c.sample_count() == 0) {
            return Err(Error::invalid("every client needs at least one sample"));
        }
        let ledger = CostLedger::new(config.cost);
        Ok(Self {
            config,
            clients,
            train,
            test,
            ledger,
            metadata: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn initial_model(&self) -> Result<ModelParams> {
        let mut rng = rng::stream(self.config.seed, Purpose::Init, &[]);
        init_model(&self.config.architecture, &mut rng)
    }

    fn collect_metadata(&mut self, round: usize) -> Result<Vec<(usize, CategoryMask)>> {
        if !self.config.refresh_metadata {
            if let Some(cached) = &self.metadata {
                return Ok(cached.clone());
            }
        }
        let pool = self.config.metadata_pool.unwrap_or(self.clients.len());
        let key = if self.config.refresh_metadata { round as u64 } else { 0 };
        let mut rng = rng::stream(self.config.seed, Purpose::Metadata, &[key]);
        let masks = metadata_round(&self.clients, pool, &mut rng)?;
        self.ledger.record_metadata(masks.len(), self.config.mask_cost);
        self.metadata = Some(masks.clone());
        Ok(masks)
    }

    /// Client positions chosen for `round`, in selection order, plus their coverage.
    fn select(&mut self, round: usize) -> Result<(Vec<usize>, CategoryMask)> {
        let all_masks: Vec<CategoryMask> = self.clients.iter().map(|c| c.mask).collect();
        let result = match self.config.strategy {
            Strategy::FedAvgRandom => {
                let k = self.config.random_k(self.clients.len());
                let mut rng = rng::stream(self.config.seed, Purpose::RandomSelection, &[round as u64]);
                let picked = select_random(self.clients.len(), k, &mut rng)?;
                SelectionResult::from_indices(picked, &all_masks)?
            }
            strategy => {
                let metadata = self.collect_metadata(round)?;
                let masks: Vec<CategoryMask> = metadata.iter().map(|(_, m)| *m).collect();
                let mut result = if strategy == Strategy::CatPerformance {
                    select_performance(&masks, &self.config.selection)?
                } else {
                    select_cost(&masks, &self.config.selection)?
                };
                // positions in the metadata list -> positions in the client list
                let position: BTreeMap<usize, usize> =
                    self.clients.iter().enumerate().map(|(p, c)| (c.id, p)).collect();
                result.selected = result
                    .selected
                    .iter()
                    .map(|&i| position[&metadata[i].0])
                    .collect();
                result
            }
        };
        if result.selected.is_empty() {
            return Err(Error::Round {
                round,
                reason: format!("{} selected no clients", self.config.strategy),
            });
        }
        Ok((result.selected, result.coverage))
    }

    fn train_selected(&self, global: &ModelParams, round: usize, positions: &[usize]) -> Result<Vec<LocalUpdate>> {
        let mut ordered: Vec<&ClientState> = positions.iter().map(|&p| &self.clients[p]).collect();
        ordered.sort_by_key(|c| c.id);
        ordered
            .par_iter()
            .map(|client| {
                let samples = self.train.samples(&client.indices);
                let mut rng = rng::stream(
                    self.config.seed,
                    Purpose::ClientUpdate,
                    &[round as u64, client.id as u64],
                );
                let model = client_update(global, &samples, &self.config.train, &mut rng)?;
                let local_eval = evaluate(&model, &samples)?;
                Ok(LocalUpdate {
                    id: client.id,
                    model,
                    samples: client.sample_count(),
                    local_eval,
                })
            })
            .collect()
    }

    /// One select / train / aggregate / evaluate cycle. `round` is 1-based.
    pub fn run_round(&mut self, global: &ModelParams, round: usize) -> Result<(ModelParams, RoundRecord)> {
        let (positions, coverage) = self.select(round)?;
        let updates = self.train_selected(global, round, &positions)?;
        debug_assert!(updates.windows(2).all(|w| w[0].id < w[1].id));

        let weighted: Vec<(ModelParams, usize)> =
            updates.iter().map(|u| (u.model.clone(), u.samples)).collect();
        let next = aggregate_weighted(&weighted)?;

        let num_categories = self.config.selection.num_categories;
        let local_reports: Vec<EvalReport> = updates.iter().map(|u| u.local_eval.clone()).collect();
        let client_decomposition = check_loss_decomposition(&local_reports, num_categories)?;

        let test_report = evaluate_dataset(&next, self.test)?;
        let test_decomposition =
            check_loss_decomposition(std::slice::from_ref(&test_report), num_categories)?;

        let counts: Vec<usize> = updates.iter().map(|u| u.samples).collect();
        let round_cost = self.ledger.record_round(&counts);

        let record = RoundRecord {
            round,
            strategy: self.config.strategy,
            selected: positions.iter().map(|&p| self.clients[p].id).collect(),
            categories_covered: coverage.popcount(),
            accuracy: test_report.accuracy(),
            test_loss: test_report.mean_loss(),
            per_category_loss: test_report.per_category_loss.clone(),
            round_cost,
            cumulative_cost: self.ledger.cumulative_cost,
            data_seen: self.ledger.data_seen,
            client_decomposition,
            test_decomposition,
        };
        Ok((next, record))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
    pub ledger: CostLedger,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.accuracy)
    }
}

/// Runs `config.rounds` rounds from a seeded initial model.
pub fn run_experiment(
    config: &ExperimentConfig,
    partition: &ClientPartition,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<ExperimentOutcome> {
    let clients = ClientState::from_partition(partition)?;
    let mut federation = Federation::new(config.clone(), clients, train, test)?;
    let mut model = federation.initial_model()?;
    let mut records = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let (next, record) = federation.run_round(&model, round)?;
        model = next;
        records.push(record);
    }
    Ok(ExperimentOutcome {
        records,
        final_model: model,
        ledger: federation.ledger.clone(),
    })
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::DenseLayer;

    fn scalar(w: f64) -> ModelParams {
        ModelParams::from_layers(vec![DenseLayer {
            weights: array![[w]],
            bias: Array1::zeros(1),
        }])
        .unwrap()
    }

    fn clients(n: usize) -> Vec<ClientState> {
        (0..n)
            .map(|id| ClientState {
                id,
                indices: vec![id],
                mask: CategoryMask::from_categories([id % 4], 4).unwrap(),
            })
            .collect()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::FedAvgRandom, Strategy::CatPerformance, Strategy::CatCost] {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("fedprox".parse::<Strategy>().is_err());
    }

    #[test]
    fn weighted_mean_of_scalars() {
        let out = aggregate_weighted(&[(scalar(0.0), 1), (scalar(4.0), 3)]).unwrap();
        assert_eq!(out.layers()[0].weights[[0, 0]], 3.0);
    }

    #[test]
    fn single_update_is_returned_unchanged() {
        let m = ModelParams::from_layers(vec![DenseLayer {
            weights: Array2::from_shape_fn((3, 2), |(i, j)| 0.1 * i as f64 - 0.37 * j as f64),
            bias: array![0.1, 0.2, 0.3],
        }])
        .unwrap();
        assert_eq!(aggregate_weighted(&[(m.clone(), 17)]).unwrap(), m);
    }

    #[test]
    fn identical_updates_are_a_fixed_point() {
        let m = scalar(0.1);
        let out = aggregate_weighted(&[(m.clone(), 1), (m.clone(), 2), (m.clone(), 7)]).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn aggregation_errors() {
        assert!(aggregate_weighted(&[]).is_err());
        assert!(aggregate_weighted(&[(scalar(1.0), 0)]).is_err());
        let other = ModelParams::zeros(&[2, 1]).unwrap();
        assert!(aggregate_weighted(&[(scalar(1.0), 1), (other, 1)]).is_err());
    }

    #[test]
    fn metadata_all_and_one() {
        let cs = clients(10);
        let all = metadata_round(&cs, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(all.iter().map(|(id, _)| *id).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        let one = metadata_round(&cs, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(metadata_round(&cs, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(metadata_round(&cs, 11, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn metadata_is_seeded() {
        let cs = clients(100);
        let a = metadata_round(&cs, 30, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for _ in 0..5 {
            let b = metadata_round(&cs, 30, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn random_k_rounds_fraction() {
        let cfg = ExperimentConfig::new(
            Strategy::FedAvgRandom,
            SelectionConfig::new(crate::selection::Mode::A, 10),
            vec![784, 10],
            0,
        );
        assert_eq!(cfg.random_k(100), 10);
        assert_eq!(cfg.random_k(3), 1);
        let full = ExperimentConfig {
            client_fraction: 1.0,
            ..cfg
        };
        assert_eq!(full.random_k(7), 7);
    }
}
