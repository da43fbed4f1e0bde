//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use catfed::datasets::{encode_idx_images, encode_idx_labels, LabeledDataset, PIXELS};
use catfed::CategoryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random nonempty masks as raw bit patterns.
pub fn random_instance(rng: &mut impl Rng, max_clients: usize, max_categories: usize) -> (Vec<u128>, usize) {
    let c = rng.random_range(1..=max_categories);
    let m = rng.random_range(1..=max_clients);
    let density = rng.random_range(0.05..0.6);
    let bits = (0..m)
        .map(|_| loop {
            let mut b = 0u128;
            for i in 0..c {
                if rng.random_bool(density) {
                    b |= 1 << i;
                }
            }
            if b != 0 {
                break b;
            }
        })
        .collect();
    (bits, c)
}

pub fn to_masks(bits: &[u128], c: usize) -> Vec<CategoryMask> {
    bits.iter()
        .map(|&b| CategoryMask::from_bits(b, c).unwrap())
        .collect()
}

fn popcount(x: u128) -> u32 {
    let mut n = 0;
    let mut v = x;
    while v != 0 {
        v &= v - 1;
        n += 1;
    }
    n
}

/// "Sort masks in decreasing order of set bits", by insertion so equal keys keep input order.
fn sorted_by_set_bits(masks: &[u128]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::with_capacity(masks.len());
    for j in 0..masks.len() {
        let mut pos = order.len();
        while pos > 0 && popcount(masks[order[pos - 1]]) < popcount(masks[j]) {
            pos -= 1;
        }
        order.insert(pos, j);
    }
    order
}

/// Performance strategy, line by line: for each category, take the first
/// sorted client holding it that is not yet in S.
pub fn oracle_performance(masks: &[u128], c: usize, n: usize) -> Vec<usize> {
    let eta = sorted_by_set_bits(masks);
    let mut s: Vec<usize> = Vec::new();
    let mut k = 0;
    for i in 1..=c {
        if k == n {
            break;
        }
        for j in 1..=eta.len() {
            let client = eta[j - 1];
            let has_bit = (masks[client] >> (i - 1)) & 1 == 1;
            if has_bit && !s.contains(&client) {
                s.push(client);
                k += 1;
                break;
            }
        }
    }
    s
}

/// Cost strategy, line by line: take a client iff `(Psi AND eta) < eta`.
pub fn oracle_cost(masks: &[u128], c: usize, n: usize) -> Vec<usize> {
    let eta = sorted_by_set_bits(masks);
    let full: u128 = if c == 128 { u128::MAX } else { (1u128 << c) - 1 };
    let mut psi: u128 = 0;
    let mut s = Vec::new();
    let mut k = 0;
    for j in 1..=eta.len() {
        if k == n || psi == full {
            break;
        }
        let client = eta[j - 1];
        if (psi & masks[client]) < masks[client] {
            s.push(client);
            k += 1;
            psi |= masks[client];
        }
    }
    s
}

/// Smallest number of masks whose union covers every coverable category,
/// by exhaustive search over subsets in increasing size.
pub fn brute_force_min_cover(masks: &[u128]) -> usize {
    let target = masks.iter().fold(0u128, |a, &b| a | b);
    let m = masks.len();
    assert!(m <= 20, "brute force is exponential");
    let mut best = m;
    for subset in 0u32..(1 << m) {
        let size = subset.count_ones() as usize;
        if size >= best {
            continue;
        }
        let mut union = 0u128;
        for (j, &mask) in masks.iter().enumerate() {
            if subset >> j & 1 == 1 {
                union |= mask;
            }
        }
        if union == target {
            best = size;
        }
    }
    best
}

/// Label-only dataset (all-zero pixels) with the given per-class counts.
pub fn label_dataset(name: &str, per_class: &[usize]) -> LabeledDataset {
    let labels: Vec<u8> = per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u8, n))
        .collect();
    LabeledDataset::new(name, per_class.len(), vec![0; labels.len() * PIXELS], labels).unwrap()
}

/// Class-conditional blob images: each class has a fixed random prototype,
/// samples add a random shift and pixel noise.
pub struct SyntheticImages {
    prototypes: Vec<Vec<f64>>,
    noise: f64,
}

impl SyntheticImages {
    pub fn new(num_classes: usize, noise: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let prototypes = (0..num_classes)
            .map(|_| {
                let mut img = vec![0.0; PIXELS];
                for _ in 0..6 {
                    let (cy, cx) = (r.random_range(5.0..23.0), r.random_range(5.0..23.0));
                    let radius: f64 = r.random_range(2.0..5.0);
                    for y in 0..28 {
                        for x in 0..28 {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            img[y * 28 + x] += 200.0 * (-d2 / (2.0 * radius * radius)).exp();
                        }
                    }
                }
                img
            })
            .collect();
        Self { prototypes, noise }
    }

    pub fn sample(&self, class: usize, r: &mut impl Rng) -> Vec<u8> {
        let (dy, dx) = (r.random_range(-2i32..=2), r.random_range(-2i32..=2));
        let proto = &self.prototypes[class];
        let mut out = vec![0u8; PIXELS];
        for y in 0..28i32 {
            for x in 0..28i32 {
                let (sy, sx) = (y - dy, x - dx);
                let base = if (0..28).contains(&sy) && (0..28).contains(&sx) {
                    proto[(sy * 28 + sx) as usize]
                } else {
                    0.0
                };
                let v = base + r.random_range(-self.noise..=self.noise);
                out[(y * 28 + x) as usize] = v.clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    pub fn dataset(&self, name: &str, per_class: &[usize], seed: u64) -> LabeledDataset {
        let mut r = rng(seed);
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                pixels.extend(self.sample(c, &mut r));
                labels.push(c as u8);
            }
        }
        LabeledDataset::new(name, per_class.len(), pixels, labels).unwrap()
    }
}

/// Writes `<name>-<split>-{images,labels}.idx` under `root`.
pub fn write_split(root: &Path, name: &str, split: &str, ds: &LabeledDataset) {
    let count = ds.len();
    let mut pixels = Vec::with_capacity(count * PIXELS);
    for i in 0..count {
        pixels.extend_from_slice(ds.image(i));
    }
    std::fs::write(
        root.join(format!("{name}-{split}-images.idx")),
        encode_idx_images(count, &pixels),
    )
    .unwrap();
    std::fs::write(
        root.join(format!("{name}-{split}-labels.idx")),
        encode_idx_labels(ds.labels()),
    )
    .unwrap();
}

/// Small MNIST-shaped train/test pair written under `root`.
pub fn write_synthetic_mnist(root: &Path, train_per_class: usize, test_per_class: usize, seed: u64) {
    let gen = SyntheticImages::new(10, 90.0, seed);
    write_split(root, "mnist", "train", &gen.dataset("mnist", &[train_per_class; 10], seed + 1));
    write_split(root, "mnist", "test", &gen.dataset("mnist", &[test_per_class; 10], seed + 2));
}
