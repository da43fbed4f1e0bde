//! Client selection over category masks.
//!
//! Three strategies are provided: the uniform random draw used by plain
//! federated averaging, the *performance* strategy that picks one client per
//! category (redundant coverage allowed), and the *cost* strategy that only
//! picks clients contributing at least one uncovered category.
//!
//! Both category strategies start from the same ordering: clients sorted by
//! descending popcount, ties broken by ascending position in the input list.
//! Indices in a [`SelectionResult`] are positions in the mask slice passed in.

use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::CategoryMask;

/// Client limit used by mode A.
pub const MODE_A_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// `N` fixed at ten clients.
    A,
    /// `N` equal to the number of categories.
    B,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::A => "A",
            Mode::B => "B",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Mode::A),
            "B" | "b" => Ok(Mode::B),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionConfig {
    pub mode: Mode,
    /// Explicit `N`; overrides the mode when set.
    pub limit: Option<usize>,
    pub num_categories: usize,
}

impl SelectionConfig {
    pub fn new(mode: Mode, num_categories: usize) -> Self {
        Self {
            mode,
            limit: None,
            num_categories,
        }
    }

    pub fn with_limit(num_categories: usize, limit: usize) -> Self {
        Self {
            mode: Mode::B,
            limit: Some(limit),
            num_categories,
        }
    }
}

pub fn resolve_limit(config: &SelectionConfig) -> Result<usize> {
    if config.num_categories == 0 {
        return Err(Error::invalid("num_categories must be positive"));
    }
    match (config.limit, config.mode) {
        (Some(0), _) => Err(Error::invalid("selection limit N must be positive")),
        (Some(n), _) => Ok(n),
        (None, Mode::A) => Ok(MODE_A_LIMIT),
        (None, Mode::B) => Ok(config.num_categories),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionResult {
    /// Selected positions, in selection order.
    pub selected: Vec<usize>,
    /// Union of the selected masks.
    pub coverage: CategoryMask,
    /// Categories no mask contains; the performance strategy skips them.
    pub uncoverable: usize,
}

impl SelectionResult {
    pub fn count(&self) -> usize {
        self.selected.len()
    }

    /// Wraps an externally chosen index list, computing its coverage.
    pub fn from_indices(selected: Vec<usize>, masks: &[CategoryMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::invalid("mask list is empty"))?;
        let mut coverage = CategoryMask::empty(first.num_categories())?;
        for &i in &selected {
            let mask = masks
                .get(i)
                .ok_or_else(|| Error::invalid(format!("selected index {i} out of range")))?;
            coverage = coverage.union(mask);
        }
        Ok(Self {
            selected,
            coverage,
            uncoverable: 0,
        })
    }
}

/// One selection event, recorded for the `trace-selection` command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub client: usize,
    /// Category being served (performance strategy only).
    pub category: Option<usize>,
    pub coverage_after: CategoryMask,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SelectionTrace {
    pub sorted_order: Vec<usize>,
    pub steps: Vec<TraceStep>,
}

/// Draws `k` distinct client indices uniformly from `0..num_clients`.
pub fn select_random<R: Rng + ?Sized>(num_clients: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k > num_clients {
        return Err(Error::invalid(format!(
            "cannot select {k} of {num_clients} clients"
        )));
    }
    Ok(index::sample(rng, num_clients, k).into_vec())
}

fn validate(masks: &[CategoryMask], config: &SelectionConfig) -> Result<usize> {
    if masks.is_empty() {
        return Err(Error::invalid("mask list is empty"));
    }
    if let Some(bad) = masks
        .iter()
        .position(|m| m.num_categories() != config.num_categories)
    {
        return Err(Error::invalid(format!(
            "mask {bad} has {} categories, config expects {}",
            masks[bad].num_categories(),
            config.num_categories
        )));
    }
    resolve_limit(config)
}

/// Positions sorted by descending popcount; stable, so ties keep input order.
pub fn popcount_order(masks: &[CategoryMask]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by_key(|&i| Reverse(masks[i].popcount()));
    order
}

pub fn select_performance(masks: &[CategoryMask], config: &SelectionConfig) -> Result<SelectionResult> {
    performance_inner(masks, config, None)
}

pub fn trace_performance(
    masks: &[CategoryMask],
    config: &SelectionConfig,
) -> Result<(SelectionResult, SelectionTrace)> {
    let mut trace = SelectionTrace::default();
    let result = performance_inner(masks, config, Some(&mut trace))?;
    Ok((result, trace))
}

fn performance_inner(
    masks: &[CategoryMask],
    config: &SelectionConfig,
    mut trace: Option<&mut SelectionTrace>,
) -> Result<SelectionResult> {
    let limit = validate(masks, config)?;
    let order = popcount_order(masks);
    let mut taken = vec![false; masks.len()];
    let mut selected = Vec::new();
    let mut coverage = CategoryMask::empty(config.num_categories)?;
    let present = masks.iter().fold(coverage, |acc, m| acc.union(m));

    for category in 0..config.num_categories {
        if selected.len() == limit {
            break;
        }
        let pick = order
            .iter()
            .copied()
            .find(|&j| masks[j].contains(category) && !taken[j]);
        if let Some(j) = pick {
            taken[j] = true;
            selected.push(j);
            coverage = coverage.union(&masks[j]);
            if let Some(t) = trace.as_deref_mut() {
                t.steps.push(TraceStep {
                    client: j,
                    category: Some(category),
                    coverage_after: coverage,
                });
            }
        }
    }

    if let Some(t) = trace {
        t.sorted_order = order;
    }
    Ok(SelectionResult {
        selected,
        coverage,
        uncoverable: config.num_categories - present.popcount(),
    })
}

pub fn select_cost(masks: &[CategoryMask], config: &SelectionConfig) -> Result<SelectionResult> {
    cost_inner(masks, config, None)
}

pub fn trace_cost(
    masks: &[CategoryMask],
    config: &SelectionConfig,
) -> Result<(SelectionResult, SelectionTrace)> {
    let mut trace = SelectionTrace::default();
    let result = cost_inner(masks, config, Some(&mut trace))?;
    Ok((result, trace))
}

fn cost_inner(
    masks: &[CategoryMask],
    config: &SelectionConfig,
    mut trace: Option<&mut SelectionTrace>,
) -> Result<SelectionResult> {
    let limit = validate(masks, config)?;
    let order = popcount_order(masks);
    let mut selected = Vec::new();
    let mut coverage = CategoryMask::empty(config.num_categories)?;
    let present = masks.iter().fold(coverage, |acc, m| acc.union(m));

    for &j in &order {
        if selected.len() == limit || coverage.is_full() {
            break;
        }
        if coverage.gains_from(&masks[j]) {
            selected.push(j);
            coverage = coverage.union(&masks[j]);
            if let Some(t) = trace.as_deref_mut() {
                t.steps.push(TraceStep {
                    client: j,
                    category: None,
                    coverage_after: coverage,
                });
            }
        }
    }

    if let Some(t) = trace {
        t.sorted_order = order;
    }
    Ok(SelectionResult {
        selected,
        coverage,
        uncoverable: config.num_categories - present.popcount(),
    })
}
