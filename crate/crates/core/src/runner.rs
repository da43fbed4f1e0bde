//! Pipelines behind the CLI subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::datasets::{histogram_moments, load_dataset, DatasetName, DatasetSpec, LabeledDataset, Split};
use crate::distributions::{
    apply_global_imbalance, export_partition, generate_partition, import_partition, partition_stats,
    validate_partition, ClientPartition, DistributionSpec,
};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, ExperimentConfig, ExperimentOutcome, RoundRecord, Strategy};
use crate::mask::CategoryMask;
use crate::metrics::CostModel;
use crate::nn::TrainConfig;
use crate::selection::{resolve_limit, select_cost, select_performance, trace_cost, trace_performance, SelectionConfig};

pub const CSV_HEADER: &str =
    "round,strategy,selected_k,categories_covered,accuracy,test_loss,round_cost,cumulative_cost,data_seen";

pub const SWEEP_HEADER: &str = "n,strategy,selected_k,categories_covered,final_accuracy,cumulative_cost";

pub fn csv_row(r: &RoundRecord) -> String {
    format!(
        "{},{},{},{},{:.6},{:.6},{},{},{}",
        r.round,
        r.strategy,
        r.k(),
        r.categories_covered,
        r.accuracy,
        r.test_loss,
        r.round_cost,
        r.cumulative_cost,
        r.data_seen
    )
}

pub fn records_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `results.csv` -> `results<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn load_splits(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let root = cfg.resolved_data_root();
    let train = load_dataset(&DatasetSpec::new(cfg.dataset, Split::Train, &root))?;
    let test = load_dataset(&DatasetSpec::new(cfg.dataset, Split::Test, &root))?;
    Ok((train, test))
}

/// Training data after the optional global imbalance.
pub fn prepare_train(cfg: &RunConfig, train: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    match cfg.imbalance() {
        Some(im) => apply_global_imbalance(train, &im, seed),
        None => Ok(train.clone()),
    }
}

pub fn distribution_spec(cfg: &RunConfig, seed: u64) -> DistributionSpec {
    DistributionSpec {
        kind: cfg.distribution,
        num_clients: cfg.num_clients,
        samples_per_client: cfg.samples_per_client,
        imbalance: cfg.imbalance(),
        seed,
    }
}

pub fn build_partition(cfg: &RunConfig, train: &LabeledDataset, seed: u64) -> Result<ClientPartition> {
    match &cfg.partition_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            import_partition(&text, train)
        }
        None => generate_partition(&distribution_spec(cfg, seed), train),
    }
}

pub fn selection_config(cfg: &RunConfig) -> SelectionConfig {
    SelectionConfig {
        mode: cfg.mode,
        limit: cfg.n,
        num_categories: cfg.dataset.num_categories(),
    }
}

pub fn experiment_config(cfg: &RunConfig, seed: u64) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig {
        strategy: cfg.strategy,
        selection: selection_config(cfg),
        rounds: cfg.rounds,
        train: TrainConfig {
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            local_epochs: cfg.local_epochs,
        },
        client_fraction: cfg.client_fraction,
        metadata_pool: cfg.metadata_pool,
        refresh_metadata: cfg.refresh_metadata,
        cost: CostModel::new(cfg.per_client_cost, cfg.server_cost)?,
        mask_cost: cfg.mask_cost,
        architecture: cfg.dataset.architecture(),
        seed,
    })
}

/// Seed of replicate `i`.
pub fn replicate_seed(cfg: &RunConfig, i: usize) -> u64 {
    cfg.seed.wrapping_add(i as u64)
}

/// One full experiment (imbalance, partition, rounds) for a given seed.
pub fn run_single(cfg: &RunConfig, train: &LabeledDataset, test: &LabeledDataset, seed: u64) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let train = prepare_train(cfg, train, seed)?;
    let partition = build_partition(cfg, &train, seed)?;
    run_experiment(&experiment_config(cfg, seed)?, &partition, &train, test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub final_accuracies: Vec<f64>,
    pub total_costs: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summary_line(strategy: Strategy, seed: u64, outcome: &ExperimentOutcome) -> String {
    let last = outcome.records.last().expect("at least one round");
    format!(
        "strategy={} seed={} rounds={} final_accuracy={:.6} total_cost={} data_seen={} metadata_cost={}",
        strategy,
        seed,
        outcome.records.len(),
        last.accuracy,
        last.cumulative_cost,
        last.data_seen,
        outcome.ledger.metadata_cost
    )
}

/// `run`: writes one CSV per replicate plus a summary sidecar.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (train, test) = load_splits(cfg)?;
    run_with_data(cfg, &train, &test)
}

pub fn run_with_data(cfg: &RunConfig, train: &LabeledDataset, test: &LabeledDataset) -> Result<RunSummary> {
    let mut csv_paths = Vec::new();
    let mut summary = String::new();
    let mut final_accuracies = Vec::new();
    let mut total_costs = Vec::new();
    for i in 0..cfg.seeds {
        let seed = replicate_seed(cfg, i);
        let outcome = run_single(cfg, train, test, seed)?;
        let path = if cfg.seeds == 1 {
            cfg.output.clone()
        } else {
            sibling(&cfg.output, &format!("-seed{i}.csv"))
        };
        write(&path, &records_csv(&outcome.records))?;
        csv_paths.push(path);
        summary.push_str(&summary_line(cfg.strategy, seed, &outcome));
        summary.push('\n');
        final_accuracies.push(outcome.final_accuracy());
        total_costs.push(outcome.ledger.cumulative_cost);
    }
    if cfg.seeds > 1 {
        let (acc_mean, acc_std) = mean_std(&final_accuracies);
        let (cost_mean, cost_std) = mean_std(&total_costs);
        let _ = writeln!(
            summary,
            "strategy={} seeds={} final_accuracy={acc_mean:.6}±{acc_std:.6} total_cost={cost_mean}±{cost_std:.6}",
            cfg.strategy, cfg.seeds
        );
    }
    let summary_path = sibling(&cfg.output, ".summary.txt");
    write(&summary_path, &summary)?;
    Ok(RunSummary {
        csv_paths,
        summary_path,
        final_accuracies,
        total_costs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOutput {
    pub partition_path: PathBuf,
    pub stats_path: PathBuf,
    pub violations: Vec<String>,
}

/// `partition`: exports the partition and its presence/count histograms.
pub fn cmd_partition(cfg: &RunConfig) -> Result<PartitionOutput> {
    cfg.validate()?;
    let root = cfg.resolved_data_root();
    let train = load_dataset(&DatasetSpec::new(cfg.dataset, Split::Train, &root))?;
    partition_with_data(cfg, &train)
}

pub fn partition_with_data(cfg: &RunConfig, train: &LabeledDataset) -> Result<PartitionOutput> {
    let train = prepare_train(cfg, train, cfg.seed)?;
    let partition = generate_partition(&distribution_spec(cfg, cfg.seed), &train)?;
    let violations = validate_partition(&partition, &train)?;
    let partition_path = sibling(&cfg.output, ".partition.txt");
    let stats_path = sibling(&cfg.output, ".stats.csv");
    write(&partition_path, &export_partition(&partition))?;
    write(&stats_path, &partition_stats(&partition).to_csv())?;
    Ok(PartitionOutput {
        partition_path,
        stats_path,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub n: usize,
    pub selected_k: usize,
    pub categories_covered: usize,
    /// `None` for coverage-only sweeps.
    pub final_accuracy: Option<f64>,
    pub cumulative_cost: Option<f64>,
}

/// Selection size and coverage for each `N`, masks fixed.
pub fn coverage_sweep(masks: &[CategoryMask], strategy: Strategy, num_categories: usize, n_values: &[usize]) -> Result<Vec<SweepPoint>> {
    n_values
        .iter()
        .map(|&n| {
            let sel = SelectionConfig::with_limit(num_categories, n);
            let result = match strategy {
                Strategy::CatPerformance => select_performance(masks, &sel)?,
                Strategy::CatCost => select_cost(masks, &sel)?,
                Strategy::FedAvgRandom => {
                    return Err(Error::invalid("N sweeps need a category strategy"));
                }
            };
            Ok(SweepPoint {
                n,
                selected_k: result.count(),
                categories_covered: result.coverage.popcount(),
                final_accuracy: None,
                cumulative_cost: None,
            })
        })
        .collect()
}

pub fn smallest_full_coverage(points: &[SweepPoint], num_categories: usize) -> Option<usize> {
    points
        .iter()
        .filter(|p| p.categories_covered == num_categories)
        .map(|p| p.n)
        .min()
}

pub fn sweep_csv(strategy: Strategy, points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>, precise: bool| match v {
        Some(x) if precise => format!("{x:.6}"),
        Some(x) => x.to_string(),
        None => String::new(),
    };
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.n,
            strategy,
            p.selected_k,
            p.categories_covered,
            opt(p.final_accuracy, true),
            opt(p.cumulative_cost, false)
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    pub smallest_full_n: Option<usize>,
    pub csv_path: PathBuf,
}

/// `sweep-n`: one experiment per `N` over a shared partition and seed.
pub fn cmd_sweep_n(cfg: &RunConfig, n_values: &[usize], coverage_only: bool) -> Result<SweepOutput> {
    cfg.validate()?;
    let (train, test) = load_splits(cfg)?;
    sweep_with_data(cfg, n_values, coverage_only, &train, &test)
}

pub fn sweep_with_data(
    cfg: &RunConfig,
    n_values: &[usize],
    coverage_only: bool,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<SweepOutput> {
    if cfg.strategy == Strategy::FedAvgRandom {
        return Err(Error::invalid("sweep-n needs strategy cat_performance or cat_cost"));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::invalid("N values must be non-empty and positive"));
    }
    let c = cfg.dataset.num_categories();
    let train = prepare_train(cfg, train, cfg.seed)?;
    let partition = build_partition(cfg, &train, cfg.seed)?;
    let mut points = coverage_sweep(&partition.masks, cfg.strategy, c, n_values)?;
    if !coverage_only {
        for p in &mut points {
            let mut exp = experiment_config(cfg, cfg.seed)?;
            exp.selection = SelectionConfig::with_limit(c, p.n);
            let outcome = run_experiment(&exp, &partition, &train, test)?;
            p.final_accuracy = Some(outcome.final_accuracy());
            p.cumulative_cost = Some(outcome.ledger.cumulative_cost);
        }
    }
    let smallest_full_n = smallest_full_coverage(&points, c);
    let csv_path = cfg.output.clone();
    write(&csv_path, &sweep_csv(cfg.strategy, &points))?;
    let note = match smallest_full_n {
        Some(n) => format!("smallest_full_coverage_n={n}\n"),
        None => "smallest_full_coverage_n=none\n".to_string(),
    };
    write(&sibling(&cfg.output, ".summary.txt"), &note)?;
    Ok(SweepOutput {
        points,
        smallest_full_n,
        csv_path,
    })
}

/// `inspect-dataset`: per-class histogram as text.
pub fn inspect_dataset(name: DatasetName, split: Split, root: &Path) -> Result<String> {
    let ds = load_dataset(&DatasetSpec::new(name, split, root))?;
    Ok(describe_histogram(&ds))
}

pub fn describe_histogram(ds: &LabeledDataset) -> String {
    let hist = ds.class_histogram();
    let (mean, std) = histogram_moments(&hist);
    let mut out = format!(
        "# {} samples={} classes={} mean={mean:.1} std={std:.1}\ncategory,count\n",
        ds.name,
        ds.len(),
        ds.num_categories
    );
    for (c, n) in hist.iter().enumerate() {
        let _ = writeln!(out, "{c},{n}");
    }
    out
}

/// `trace-selection`: sorted order and per-step coverage for the configured strategy.
pub fn trace_selection(cfg: &RunConfig, train: &LabeledDataset) -> Result<String> {
    let train = prepare_train(cfg, train, cfg.seed)?;
    let partition = build_partition(cfg, &train, cfg.seed)?;
    let sel = selection_config(cfg);
    let (result, trace) = match cfg.strategy {
        Strategy::CatPerformance => trace_performance(&partition.masks, &sel)?,
        Strategy::CatCost => trace_cost(&partition.masks, &sel)?,
        Strategy::FedAvgRandom => {
            return Err(Error::invalid("trace-selection needs a category strategy"));
        }
    };
    let mut out = format!(
        "# strategy={} N={} clients={} categories={}\n# sorted order (client:popcount)\n",
        cfg.strategy,
        resolve_limit(&sel)?,
        partition.num_clients(),
        partition.num_categories
    );
    let order: Vec<String> = trace
        .sorted_order
        .iter()
        .map(|&i| format!("{i}:{}", partition.masks[i].popcount()))
        .collect();
    out.push_str(&order.join(" "));
    out.push_str("\n# steps\n");
    for (step, s) in trace.steps.iter().enumerate() {
        let category = s.category.map_or("-".to_string(), |c| c.to_string());
        let _ = writeln!(
            out,
            "step={} client={} category={} mask={} coverage={} covered={}",
            step + 1,
            s.client,
            category,
            partition.masks[s.client],
            s.coverage_after,
            s.coverage_after.popcount()
        );
    }
    let _ = writeln!(
        out,
        "# selected={} covered={}/{} uncoverable={}",
        result.count(),
        result.coverage.popcount(),
        partition.num_categories,
        result.uncoverable
    );
    Ok(out)
}
