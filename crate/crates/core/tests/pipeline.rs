mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use catfed::config::RunConfig;
use catfed::datasets::DatasetName;
use catfed::distributions::{
    apply_global_imbalance, constraints_for, generate_partition, validate_partition, DistributionKind, DistributionSpec,
    ImbalanceSpec,
};
use catfed::federation::{run_experiment, ExperimentConfig, Strategy};
use catfed::runner::{records_csv, CSV_HEADER};
use catfed::selection::{Mode, SelectionConfig};

fn catfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catfed")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("data_root = {}\n{body}", dir.display())).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn every_kind_meets_its_constraints() {
    let ten = common::label_dataset("mnist", &[6000; 10]);
    let wide47 = common::label_dataset("femnist47", &[2400; 47]);
    let wide49 = common::label_dataset("kmnist49", &[4700; 49]);
    for kind in DistributionKind::ALL {
        let ds = match kind.required_categories() {
            Some(47) => &wide47,
            Some(49) => &wide49,
            _ => &ten,
        };
        let spec = DistributionSpec::new(kind, 3);
        let p = generate_partition(&spec, ds).unwrap();
        assert!(validate_partition(&p, ds).unwrap().is_empty(), "{kind}");
        assert_eq!(p, generate_partition(&spec, ds).unwrap(), "{kind} not deterministic");
        let bounds = constraints_for(kind, ds.num_categories, 100).unwrap();
        for m in &p.masks {
            let k = m.popcount();
            assert!((bounds.categories_per_client.0..=bounds.categories_per_client.1).contains(&k));
        }
        for a in &p.assignments {
            assert_eq!(a.len(), 600);
        }
    }
}

#[test]
fn d1_presence_decreases_toward_high_ids() {
    let ds = common::label_dataset("mnist", &[6000; 10]);
    let p = generate_partition(&DistributionSpec::new(DistributionKind::D1, 0), &ds).unwrap();
    assert!(p.category_presence.windows(2).all(|w| w[0] >= w[1]), "{:?}", p.category_presence);
}

#[test]
fn default_imbalance_keeps_a_tenth_of_four_classes() {
    let ds = common::label_dataset("mnist", &[6000; 10]);
    let out = apply_global_imbalance(&ds, &ImbalanceSpec::default(), 1).unwrap();
    assert_eq!(out.class_histogram(), vec![600, 600, 600, 600, 6000, 6000, 6000, 6000, 6000, 6000]);
}

#[test]
fn cost_strategy_on_single_category_clients() {
    let gen = common::SyntheticImages::new(10, 60.0, 4);
    let train = gen.dataset("mnist", &[200; 10], 5);
    let test = gen.dataset("mnist", &[10; 10], 6);
    let mut spec = DistributionSpec::new(DistributionKind::D6, 2);
    spec.samples_per_client = 20;
    let partition = generate_partition(&spec, &train).unwrap();
    let mut cfg = ExperimentConfig::new(
        Strategy::CatCost,
        SelectionConfig::new(Mode::B, 10),
        DatasetName::Mnist.architecture(),
        2,
    );
    cfg.rounds = 2;
    let outcome = run_experiment(&cfg, &partition, &train, &test).unwrap();
    for rec in &outcome.records {
        assert_eq!(rec.k(), 10);
        assert_eq!(rec.categories_covered, 10);
        assert_eq!(rec.data_seen, 200 * rec.round as u64);
    }
    assert_eq!(outcome.ledger.cumulative_cost, 20.0);
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    common::write_synthetic_mnist(dir.path(), 200, 10, 1);
    let out = dir.path().join("res.csv");
    let cfg = write_config(
        dir.path(),
        "a.cfg",
        "dataset = mnist\ndistribution = D1\nstrategy = cat_cost\nseed = 4\nrounds = 2\nsamples_per_client = 40\nseeds = 2\n",
    );
    let result = catfed(&["run", &cfg, "--output", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for i in 0..2 {
        let csv = fs::read_to_string(dir.path().join(format!("res-seed{i}.csv"))).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,cat_cost,"));
    }
    let summary = fs::read_to_string(dir.path().join("res.summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains("seeds=2"));
}

#[test]
fn imported_partition_reproduces_generated_run() {
    let dir = tempfile::tempdir().unwrap();
    common::write_synthetic_mnist(dir.path(), 200, 10, 2);
    let body = "dataset = mnist\ndistribution = D1\nstrategy = cat_performance\nseed = 9\nrounds = 2\nsamples_per_client = 30\n";
    let cfg = write_config(dir.path(), "p.cfg", body);
    let base = dir.path().join("gen");
    let result = catfed(&["partition", &cfg, "--output", base.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let stats = fs::read_to_string(dir.path().join("gen.stats.csv")).unwrap();
    assert!(stats.starts_with("series,key,clients"));

    let generated = dir.path().join("generated.csv");
    assert!(catfed(&["run", &cfg, "--output", generated.to_str().unwrap()]).status.success());
    let imported_cfg = write_config(
        dir.path(),
        "q.cfg",
        &format!("{body}partition_file = {}\n", dir.path().join("gen.partition.txt").display()),
    );
    let imported = dir.path().join("imported.csv");
    assert!(catfed(&["run", &imported_cfg, "--output", imported.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(generated).unwrap(), fs::read(imported).unwrap());
}

#[test]
fn sweep_inspect_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    common::write_synthetic_mnist(dir.path(), 200, 10, 3);
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "dataset = mnist\ndistribution = D1\nstrategy = cat_cost\nseed = 1\nsamples_per_client = 30\n",
    );
    let out = dir.path().join("sweep.csv");
    let result = catfed(&["sweep-n", &cfg, "--values", "1,2,3,10", "--coverage-only", "--output", out.to_str().unwrap()]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let covered: Vec<usize> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(covered.len(), 4);
    assert!(covered.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(covered[3], 10);

    let result = catfed(&["inspect-dataset", "mnist", "--split", "test", "--data-root", dir.path().to_str().unwrap()]);
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.contains("samples=100"));
    assert!(text.contains("\n9,10\n"));

    let result = catfed(&["trace-selection", &cfg]);
    assert!(result.status.success());
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.contains("# steps"));
    assert!(text.contains("covered=10/10"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "dataset = mnist\ndistribution = D1\nstrategy = cat_cost\nseed = 1\nrounds = -3\n");
    let result = catfed(&["run", &cfg]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("line 6"));

    let cfg = write_config(dir.path(), "nodata.cfg", "dataset = mnist\ndistribution = D1\nstrategy = cat_cost\nseed = 1\n");
    let result = catfed(&["run", &cfg]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("mnist-train-images.idx"));
}

#[test]
fn config_round_trips_through_text() {
    let mut cfg = RunConfig::new(DatasetName::Kmnist49, DistributionKind::D5, Strategy::CatCost, 77);
    cfg.n = Some(19);
    cfg.imbalance_categories = Some(vec![1, 2]);
    cfg.imbalance_minority_count = 2;
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn csv_rows_use_fixed_precision() {
    let gen = common::SyntheticImages::new(10, 60.0, 8);
    let train = gen.dataset("mnist", &[50; 10], 9);
    let test = gen.dataset("mnist", &[5; 10], 10);
    let mut spec = DistributionSpec::new(DistributionKind::D7, 1);
    spec.samples_per_client = 12;
    let partition = generate_partition(&spec, &train).unwrap();
    let mut cfg = ExperimentConfig::new(
        Strategy::FedAvgRandom,
        SelectionConfig::new(Mode::B, 10),
        DatasetName::Mnist.architecture(),
        1,
    );
    cfg.rounds = 1;
    let outcome = run_experiment(&cfg, &partition, &train, &test).unwrap();
    let csv = records_csv(&outcome.records);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "10");
    assert_eq!(row[4].split('.').nth(1).unwrap().len(), 6);
    assert_eq!(row[8], "120");
}
