//! Non-IID client partitions D1-D10 and the global-imbalance transform.
//!
//! Generation runs in two phases:
//!
//! 1. Each client draws how many categories it holds (uniform in the kind's
//!    range, or fixed for D6-D10). The total is spread over categories by a
//!    shape function (linear decay, bell, skewed bell, half-scarce), scaled and
//!    clipped to the kind's per-category presence bounds, then rounded to
//!    integers summing to the same total.
//! 2. Clients, largest first, draw their categories uniformly among those with
//!    unmet per-category demand. A draw that would make the rest of the
//!    assignment unrealizable (Gale-Ryser) is replaced by the highest-demand
//!    choice, which always keeps it realizable.
//!
//! Samples are then drawn per category from a shuffled pool without
//! replacement. A pool that runs dry is reshuffled and reused; every reused draw
//! is counted in [`ClientPartition::reused_draws`].
//!
//! Presence bounds are stated for 100 clients and scale linearly with the
//! client count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::mask::{build_mask, CategoryMask};
use crate::rng::{self, Purpose, StreamRng};

const REFERENCE_CLIENTS: usize = 100;
const MAX_ATTEMPTS: u64 = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistributionKind {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
    D8,
    D9,
    D10,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 10] = [
        DistributionKind::D1,
        DistributionKind::D2,
        DistributionKind::D3,
        DistributionKind::D4,
        DistributionKind::D5,
        DistributionKind::D6,
        DistributionKind::D7,
        DistributionKind::D8,
        DistributionKind::D9,
        DistributionKind::D10,
    ];

    fn ordinal(&self) -> usize {
        Self::ALL.iter().position(|k| k == self).unwrap() + 1
    }

    /// Categories per client for the fixed-count ablation kinds, by dataset width.
    pub fn fixed_count(&self, num_categories: usize) -> Option<usize> {
        let small = num_categories <= 10;
        let k = match self {
            DistributionKind::D6 => 1,
            DistributionKind::D7 => 3,
            DistributionKind::D8 if small => 5,
            DistributionKind::D8 => 10,
            DistributionKind::D9 if small => 7,
            DistributionKind::D9 => 25,
            DistributionKind::D10 if small => 9,
            DistributionKind::D10 => 35,
            _ => return None,
        };
        Some(k)
    }

    /// Category count the kind is defined for; `None` for the ablation kinds.
    pub fn required_categories(&self) -> Option<usize> {
        match self {
            DistributionKind::D1 => Some(10),
            DistributionKind::D2 | DistributionKind::D4 => Some(47),
            DistributionKind::D3 | DistributionKind::D5 => Some(49),
            _ => None,
        }
    }
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.ordinal())
    }
}

impl FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .strip_prefix(['D', 'd'])
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::invalid(format!("unknown distribution {s:?}")))?;
        Self::ALL
            .get(n.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown distribution {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceSpec {
    pub minority_count: usize,
    pub ratio: f64,
    /// Minority categories; defaults to the lowest `minority_count` ids.
    pub categories: Option<Vec<usize>>,
}

impl Default for ImbalanceSpec {
    fn default() -> Self {
        Self {
            minority_count: 4,
            ratio: 0.1,
            categories: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub imbalance: Option<ImbalanceSpec>,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, seed: u64) -> Self {
        Self {
            kind,
            num_clients: 100,
            samples_per_client: 600,
            imbalance: None,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    /// Dense low ids, sparse high ids.
    LinearDecay,
    /// Asymmetric Gaussian bump over intermediate ids.
    Bell { center: f64, left: f64, right: f64 },
    /// Bell over the lower ids; ids from `scarce_from` on get almost no weight.
    HalfScarce { scarce_from: f64 },
    Flat,
}

impl Shape {
    fn weight(&self, category: usize, num_categories: usize) -> f64 {
        let x = if num_categories > 1 {
            category as f64 / (num_categories - 1) as f64
        } else {
            0.0
        };
        let bell = |center: f64, left: f64, right: f64| {
            let sigma = if x < center { left } else { right };
            (-0.5 * ((x - center) / sigma).powi(2)).exp()
        };
        match *self {
            Shape::LinearDecay => 1.0 - 0.95 * x,
            Shape::Bell {
                center,
                left,
                right,
            } => bell(center, left, right),
            Shape::HalfScarce { scarce_from } if x >= scarce_from => 1e-3,
            Shape::HalfScarce { .. } => bell(0.25, 0.2, 0.15),
            Shape::Flat => 1.0,
        }
    }
}

/// Structural constraints a partition of a given kind must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Constraints {
    /// Inclusive range of categories held by each client.
    pub categories_per_client: (usize, usize),
    /// Inclusive range of clients holding each category.
    pub presence: (usize, usize),
}

fn base_profile(kind: DistributionKind, num_categories: usize, num_clients: usize) -> Result<(Constraints, Shape)> {
    if let Some(required) = kind.required_categories() {
        if required != num_categories {
            return Err(Error::invalid(format!(
                "{kind} is defined for {required} categories, dataset has {num_categories}"
            )));
        }
    }
    let scale = |lo: usize, hi: usize| {
        if num_clients == REFERENCE_CLIENTS {
            (lo, hi)
        } else {
            let lo = lo * num_clients / REFERENCE_CLIENTS;
            let hi = (hi * num_clients).div_ceil(REFERENCE_CLIENTS).max(1);
            (lo, hi.min(num_clients))
        }
    };
    let tenth = (num_categories as f64 * 0.1).round() as usize;
    let (counts, presence, shape) = match kind {
        DistributionKind::D1 => ((1, 5), scale(3, 70), Shape::LinearDecay),
        DistributionKind::D2 => (
            (1, 15),
            scale(6, 30),
            Shape::Bell {
                center: 0.5,
                left: 0.2,
                right: 0.2,
            },
        ),
        DistributionKind::D3 => (
            (1, 15),
            scale(6, 30),
            Shape::Bell {
                center: 0.42,
                left: 0.14,
                right: 0.28,
            },
        ),
        DistributionKind::D4 => (
            (1, tenth),
            scale(1, 13),
            Shape::Bell {
                center: 0.25,
                left: 0.12,
                right: 0.3,
            },
        ),
        DistributionKind::D5 => ((1, tenth), scale(1, 18), Shape::HalfScarce { scarce_from: 0.52 }),
        fixed => {
            let k = fixed.fixed_count(num_categories).expect("ablation kind");
            if k > num_categories {
                return Err(Error::invalid(format!(
                    "{fixed} needs {k} categories per client, dataset has {num_categories}"
                )));
            }
            let total = k * num_clients;
            let lo = usize::from(total >= num_categories);
            ((k, k), (lo, num_clients), Shape::Flat)
        }
    };
    Ok((
        Constraints {
            categories_per_client: counts,
            presence,
        },
        shape,
    ))
}

/// Constraints a `kind` partition of `num_clients` clients over `num_categories` must meet.
pub fn constraints_for(kind: DistributionKind, num_categories: usize, num_clients: usize) -> Result<Constraints> {
    base_profile(kind, num_categories, num_clients).map(|(c, _)| c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientPartition {
    pub spec: DistributionSpec,
    pub num_categories: usize,
    /// Per client, indices into the source dataset.
    pub assignments: Vec<Vec<usize>>,
    pub masks: Vec<CategoryMask>,
    /// Per category, number of clients holding it.
    pub category_presence: Vec<usize>,
    /// Draws served from an exhausted (reshuffled) category pool.
    pub reused_draws: usize,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Integer targets in `[lo, hi]` summing to `total`, shaped by `weights`.
fn fit_profile(weights: &[f64], total: usize, lo: usize, hi: usize) -> Option<Vec<usize>> {
    let c = weights.len();
    if total < c * lo || total > c * hi {
        return None;
    }
    let filled = |s: f64| -> f64 {
        weights
            .iter()
            .map(|w| (s * w).clamp(lo as f64, hi as f64))
            .sum()
    };
    let (mut a, mut b) = (0.0, 1.0);
    while filled(b) < total as f64 {
        b *= 2.0;
        if b > 1e18 {
            return None;
        }
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if filled(m) < total as f64 {
            a = m;
        } else {
            b = m;
        }
    }
    let real: Vec<f64> = weights
        .iter()
        .map(|w| (b * w).clamp(lo as f64, hi as f64))
        .collect();
    let mut targets: Vec<usize> = real.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut by_fraction: Vec<usize> = (0..c).collect();
    by_fraction.sort_by(|&i, &j| {
        let fi = real[i] - real[i].floor();
        let fj = real[j] - real[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    let mut sum: usize = targets.iter().sum();
    while sum < total {
        let before = sum;
        for &i in &by_fraction {
            if sum < total && targets[i] < hi {
                targets[i] += 1;
                sum += 1;
            }
        }
        if sum == before {
            return None;
        }
    }
    while sum > total {
        let before = sum;
        for &i in by_fraction.iter().rev() {
            if sum > total && targets[i] > lo {
                targets[i] -= 1;
                sum -= 1;
            }
        }
        if sum == before {
            return None;
        }
    }
    Some(targets)
}

/// Gale-Ryser: can clients with `degrees` be matched to categories with `demand`
/// without any client holding a category twice?
fn realizable(degrees: &[usize], demand: &[usize]) -> bool {
    if degrees.iter().sum::<usize>() != demand.iter().sum::<usize>() {
        return false;
    }
    let mut sorted = degrees.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut lhs = 0;
    for (r, &d) in sorted.iter().enumerate() {
        lhs += d;
        let rhs: usize = demand.iter().map(|&t| t.min(r + 1)).sum();
        if lhs > rhs {
            return false;
        }
    }
    true
}

/// Uniform choice among categories with unmet demand.
fn open_pick(remaining: &[usize], excluded: &[bool], rng: &mut StreamRng) -> Option<usize> {
    let open: Vec<usize> = (0..remaining.len())
        .filter(|&j| remaining[j] > 0 && !excluded[j])
        .collect();
    open.choose(rng).copied()
}

/// Highest remaining demand first; equal demands in random order.
fn top_demand(remaining: &[usize], k: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut cats: Vec<usize> = (0..remaining.len()).filter(|&j| remaining[j] > 0).collect();
    cats.shuffle(rng);
    cats.sort_by(|&a, &b| remaining[b].cmp(&remaining[a]));
    cats.truncate(k);
    cats
}

fn assign_categories(counts: &[usize], demand: &[usize], rng: &mut StreamRng) -> Option<Vec<Vec<usize>>> {
    let c = demand.len();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));

    let mut remaining = demand.to_vec();
    let mut held = vec![Vec::new(); counts.len()];
    for (pos, &client) in order.iter().enumerate() {
        let k = counts[client];
        let mut excluded = vec![false; c];
        let mut picks = Vec::with_capacity(k);
        for _ in 0..k {
            let j = open_pick(&remaining, &excluded, rng)?;
            excluded[j] = true;
            picks.push(j);
        }
        let mut trial = remaining.clone();
        for &j in &picks {
            trial[j] -= 1;
        }
        let rest: Vec<usize> = order[pos + 1..].iter().map(|&i| counts[i]).collect();
        if !realizable(&rest, &trial) {
            picks = top_demand(&remaining, k, rng);
            if picks.len() < k {
                return None;
            }
            trial = remaining.clone();
            for &j in &picks {
                trial[j] -= 1;
            }
        }
        remaining = trial;
        picks.sort_unstable();
        held[client] = picks;
    }
    Some(held)
}

fn category_pools(dataset: &LabeledDataset, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); dataset.num_categories];
    for (i, &l) in dataset.labels().iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    pools
}

pub fn generate_partition(spec: &DistributionSpec, dataset: &LabeledDataset) -> Result<ClientPartition> {
    let c = dataset.num_categories;
    if spec.num_clients == 0 || spec.samples_per_client == 0 {
        return Err(Error::invalid("num_clients and samples_per_client must be positive"));
    }
    let (constraints, shape) = base_profile(spec.kind, c, spec.num_clients)?;
    let (kmin, kmax) = constraints.categories_per_client;
    if kmax > c {
        return Err(Error::invalid(format!(
            "{} allows {kmax} categories per client but dataset has {c}",
            spec.kind
        )));
    }
    if spec.samples_per_client < kmax {
        return Err(Error::invalid(format!(
            "samples_per_client {} cannot spread over {kmax} categories",
            spec.samples_per_client
        )));
    }
    let (plo, phi) = constraints.presence;
    let weights: Vec<f64> = (0..c).map(|j| shape.weight(j, c)).collect();

    let mut held = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::stream(spec.seed, Purpose::Partition, &[0, attempt]);
        let counts: Vec<usize> = (0..spec.num_clients)
            .map(|_| rng.random_range(kmin..=kmax))
            .collect();
        let Some(demand) = fit_profile(&weights, counts.iter().sum(), plo, phi) else {
            continue;
        };
        if !realizable(&counts, &demand) {
            continue;
        }
        if let Some(h) = assign_categories(&counts, &demand, &mut rng) {
            held = Some(h);
            break;
        }
    }
    let held = held.ok_or_else(|| {
        Error::Generation(format!(
            "{}: no feasible assignment after {MAX_ATTEMPTS} attempts \
             ({} clients, {kmin}-{kmax} categories each, presence {plo}-{phi}, {c} categories)",
            spec.kind, spec.num_clients
        ))
    })?;

    let mut rng = rng::stream(spec.seed, Purpose::Partition, &[1]);
    let mut pools = category_pools(dataset, &mut rng);
    if let Some(empty) = held.iter().flatten().find(|&&j| pools[j].is_empty()) {
        return Err(Error::Generation(format!(
            "category {empty} has no samples in {}",
            dataset.name
        )));
    }
    let mut cursor = vec![0usize; c];
    let mut reused = vec![false; c];
    let mut reused_draws = 0;
    let mut assignments = Vec::with_capacity(spec.num_clients);
    for cats in &held {
        let base = spec.samples_per_client / cats.len();
        let extra = spec.samples_per_client % cats.len();
        let mut bonus: Vec<usize> = cats.clone();
        bonus.shuffle(&mut rng);
        bonus.truncate(extra);
        let mut samples = Vec::with_capacity(spec.samples_per_client);
        for &j in cats {
            let take = base + usize::from(bonus.contains(&j));
            for _ in 0..take {
                if cursor[j] == pools[j].len() {
                    pools[j].shuffle(&mut rng);
                    cursor[j] = 0;
                    reused[j] = true;
                }
                if reused[j] {
                    reused_draws += 1;
                }
                samples.push(pools[j][cursor[j]]);
                cursor[j] += 1;
            }
        }
        assignments.push(samples);
    }

    let masks = assignments
        .iter()
        .map(|a| build_mask(a.iter().map(|&i| dataset.label(i)), c))
        .collect::<Result<Vec<_>>>()?;
    let category_presence = presence_of(&masks, c);
    Ok(ClientPartition {
        spec: spec.clone(),
        num_categories: c,
        assignments,
        masks,
        category_presence,
        reused_draws,
    })
}

fn presence_of(masks: &[CategoryMask], num_categories: usize) -> Vec<usize> {
    (0..num_categories)
        .map(|j| masks.iter().filter(|m| m.contains(j)).count())
        .collect()
}

/// Checks a partition against its kind's constraints and the source labels.
/// Returns one message per violation.
pub fn validate_partition(partition: &ClientPartition, dataset: &LabeledDataset) -> Result<Vec<String>> {
    let spec = &partition.spec;
    let c = partition.num_categories;
    let constraints = constraints_for(spec.kind, c, spec.num_clients)?;
    let mut violations = Vec::new();
    if partition.num_clients() != spec.num_clients {
        violations.push(format!(
            "{} clients, expected {}",
            partition.num_clients(),
            spec.num_clients
        ));
    }
    let (kmin, kmax) = constraints.categories_per_client;
    for (i, (samples, mask)) in partition.assignments.iter().zip(&partition.masks).enumerate() {
        if samples.len() != spec.samples_per_client {
            violations.push(format!("client {i}: {} samples", samples.len()));
        }
        let rebuilt = build_mask(samples.iter().map(|&s| dataset.label(s)), c)?;
        if rebuilt != *mask {
            violations.push(format!("client {i}: stored mask {mask} != labels {rebuilt}"));
        }
        if !(kmin..=kmax).contains(&mask.popcount()) {
            violations.push(format!(
                "client {i}: {} categories outside [{kmin}, {kmax}]",
                mask.popcount()
            ));
        }
        if mask.is_full() && c > 1 && spec.kind.fixed_count(c) != Some(c) {
            violations.push(format!("client {i}: holds every category"));
        }
    }
    let presence = presence_of(&partition.masks, c);
    if presence != partition.category_presence {
        violations.push("stored category presence disagrees with masks".to_string());
    }
    let (plo, phi) = constraints.presence;
    for (j, &p) in presence.iter().enumerate() {
        if !(plo..=phi).contains(&p) {
            violations.push(format!(
                "category {j}: present on {p} clients, outside [{plo}, {phi}]"
            ));
        }
    }
    Ok(violations)
}

/// Subsamples the minority categories to `ratio` of their size.
pub fn apply_global_imbalance(dataset: &LabeledDataset, imbalance: &ImbalanceSpec, seed: u64) -> Result<LabeledDataset> {
    if !(imbalance.ratio > 0.0 && imbalance.ratio < 1.0) {
        return Err(Error::invalid(format!(
            "imbalance ratio must be in (0, 1), got {}",
            imbalance.ratio
        )));
    }
    let c = dataset.num_categories;
    let minority: Vec<usize> = match &imbalance.categories {
        Some(cats) => {
            if cats.len() != imbalance.minority_count {
                return Err(Error::invalid(format!(
                    "{} minority categories listed, minority_count is {}",
                    cats.len(),
                    imbalance.minority_count
                )));
            }
            cats.clone()
        }
        None => (0..imbalance.minority_count).collect(),
    };
    if imbalance.minority_count >= c {
        return Err(Error::invalid(format!(
            "minority_count {} must be below {c} categories",
            imbalance.minority_count
        )));
    }
    if let Some(bad) = minority.iter().find(|&&j| j >= c) {
        return Err(Error::invalid(format!("minority category {bad} out of range")));
    }
    if minority.is_empty() {
        return Ok(dataset.clone());
    }

    let mut rng = rng::stream(seed, Purpose::Imbalance, &[]);
    let mut keep = vec![true; dataset.len()];
    for &j in &minority {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.label(i) == j).collect();
        let kept = ((members.len() as f64 * imbalance.ratio).round() as usize)
            .max(usize::from(!members.is_empty()));
        members.shuffle(&mut rng);
        for &i in &members[kept..] {
            keep[i] = false;
        }
    }
    let indices: Vec<usize> = (0..dataset.len()).filter(|&i| keep[i]).collect();
    Ok(dataset.subset(&indices))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionStats {
    /// Per category, clients holding it.
    pub presence: Vec<usize>,
    /// `histogram[k]` = clients holding exactly `k` categories.
    pub categories_per_client: Vec<usize>,
}

impl PartitionStats {
    pub const CSV_HEADER: &'static str = "series,key,clients";

    pub fn csv_rows(&self) -> Vec<String> {
        let presence = self
            .presence
            .iter()
            .enumerate()
            .map(|(j, p)| format!("presence,{j},{p}"));
        let counts = self
            .categories_per_client
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(k, n)| format!("categories_per_client,{k},{n}"));
        presence.chain(counts).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

pub fn partition_stats(partition: &ClientPartition) -> PartitionStats {
    let mut categories_per_client = vec![0; partition.num_categories + 1];
    for m in &partition.masks {
        categories_per_client[m.popcount()] += 1;
    }
    PartitionStats {
        presence: presence_of(&partition.masks, partition.num_categories),
        categories_per_client,
    }
}

const EXPORT_MAGIC: &str = "# catfed-partition";

/// Text export: a header line with the spec, then `client_id: indices...` per client.
pub fn export_partition(partition: &ClientPartition) -> String {
    let spec = &partition.spec;
    let imbalance = match &spec.imbalance {
        None => "none".to_string(),
        Some(im) => {
            let cats = im
                .categories
                .as_ref()
                .map(|c| {
                    c.iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join("+")
                })
                .unwrap_or_else(|| "lowest".to_string());
            format!("{}:{}:{}", im.minority_count, im.ratio, cats)
        }
    };
    let mut out = format!(
        "{EXPORT_MAGIC} kind={} num_clients={} samples_per_client={} seed={} num_categories={} imbalance={}\n",
        spec.kind, spec.num_clients, spec.samples_per_client, spec.seed, partition.num_categories, imbalance
    );
    for (i, samples) in partition.assignments.iter().enumerate() {
        out.push_str(&i.to_string());
        out.push(':');
        for s in samples {
            out.push(' ');
            out.push_str(&s.to_string());
        }
        out.push('\n');
    }
    out
}

fn parse_imbalance(value: &str) -> Result<Option<ImbalanceSpec>> {
    if value == "none" {
        return Ok(None);
    }
    let bad = || Error::invalid(format!("bad imbalance field {value:?}"));
    let mut parts = value.split(':');
    let minority_count = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let ratio = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let categories = match parts.next().ok_or_else(bad)? {
        "lowest" => None,
        list => Some(
            list.split('+')
                .map(|c| c.parse().map_err(|_| bad()))
                .collect::<Result<Vec<usize>>>()?,
        ),
    };
    Ok(Some(ImbalanceSpec {
        minority_count,
        ratio,
        categories,
    }))
}

/// Parses [`export_partition`] output; masks are rebuilt from `dataset` labels.
pub fn import_partition(text: &str, dataset: &LabeledDataset) -> Result<ClientPartition> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix(EXPORT_MAGIC))
        .ok_or_else(|| Error::invalid("partition file lacks header line"))?;
    let mut fields = BTreeMap::new();
    for token in header.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("bad header token {token:?}")))?;
        fields.insert(k, v);
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::invalid(format!("partition header missing {k}")))
    };
    let number = |k: &str| -> Result<u64> {
        field(k)?
            .parse()
            .map_err(|_| Error::invalid(format!("partition header field {k} is not a number")))
    };
    let spec = DistributionSpec {
        kind: field("kind")?.parse()?,
        num_clients: number("num_clients")? as usize,
        samples_per_client: number("samples_per_client")? as usize,
        imbalance: parse_imbalance(field("imbalance")?)?,
        seed: number("seed")?,
    };
    let num_categories = number("num_categories")? as usize;
    if num_categories != dataset.num_categories {
        return Err(Error::invalid(format!(
            "partition has {num_categories} categories, dataset has {}",
            dataset.num_categories
        )));
    }

    let mut assignments = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("partition line {}: missing ':'", n + 2)))?;
        if id.trim().parse::<usize>().ok() != Some(assignments.len()) {
            return Err(Error::invalid(format!(
                "partition line {}: expected client {}",
                n + 2,
                assignments.len()
            )));
        }
        let samples = rest
            .split_whitespace()
            .map(|s| match s.parse::<usize>() {
                Ok(i) if i < dataset.len() => Ok(i),
                _ => Err(Error::invalid(format!(
                    "partition line {}: bad sample index {s:?}",
                    n + 2
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        assignments.push(samples);
    }
    let masks = assignments
        .iter()
        .map(|a| build_mask(a.iter().map(|&i| dataset.label(i)), num_categories))
        .collect::<Result<Vec<_>>>()?;
    let category_presence = presence_of(&masks, num_categories);
    Ok(ClientPartition {
        spec,
        num_categories,
        assignments,
        masks,
        category_presence,
        reused_draws: 0,
    })
}
