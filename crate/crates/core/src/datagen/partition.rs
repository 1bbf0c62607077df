//! Client partitioning: IID, Qua(q) quantity skew, Dir(μ) distribution skew.
//!
//! All three modes give every client exactly `mean_size` samples (the
//! scarcity budget); what differs is the label mixture. Unused samples
//! (dataset size minus `num_clients · mean_size`) simply stay on the server —
//! that is the knob that makes local data scarce.
//!
//! Determinism: one ChaCha8 stream derived from the spec seed drives pool
//! shuffles and Dirichlet draws in a fixed order, so identical (dataset,
//! spec) always produce identical partitions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, tag};

use super::{ClientDataset, Dataset, PartitionMode, PartitionSpec};

/// Split a dataset across clients according to the spec. Index sets are
/// disjoint; every client receives exactly `spec.mean_size` samples.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientDataset>> {
    spec.validate(dataset)?;
    let mut rng = derive_rng(spec.seed, &[tag::PARTITION]);
    let mut pools = dataset.class_indices();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let counts = match spec.mode {
        PartitionMode::Iid => iid_counts(spec, dataset.num_classes),
        PartitionMode::Qua(q) => qua_counts(spec, dataset.num_classes, q, &mut rng),
        PartitionMode::Dir(mu) => dir_counts(spec, dataset.num_classes, mu, &pools, &mut rng),
    };
    // Feasibility: per-class demand must not exceed inventory. (Dir quotas
    // are already capped against inventories.)
    for class in 0..dataset.num_classes {
        let demand: usize = counts.iter().map(|row| row[class]).sum();
        if demand > pools[class].len() {
            return Err(Error::Partition(format!(
                "class {class} exhausted: demand {demand} exceeds inventory {}",
                pools[class].len()
            )));
        }
    }
    let mut cursors = vec![0usize; dataset.num_classes];
    let clients = counts
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut indices = Vec::with_capacity(spec.mean_size);
            for (class, &take) in row.iter().enumerate() {
                let start = cursors[class];
                indices.extend_from_slice(&pools[class][start..start + take]);
                cursors[class] += take;
            }
            debug_assert_eq!(indices.len(), spec.mean_size);
            ClientDataset { client_id: k, indices }
        })
        .collect();
    Ok(clients)
}

/// IID: per client, `mean_size` is spread across all classes within ±1; the
/// remainder classes rotate with the client id so class usage stays balanced
/// across the cohort.
fn iid_counts(spec: &PartitionSpec, num_classes: usize) -> Vec<Vec<usize>> {
    let base = spec.mean_size / num_classes;
    let rem = spec.mean_size % num_classes;
    (0..spec.num_clients)
        .map(|k| {
            let mut row = vec![base; num_classes];
            for j in 0..rem {
                row[(k + j) % num_classes] += 1;
            }
            row
        })
        .collect()
}

/// Qua(q): client k draws its q classes from a seeded class permutation via
/// consecutive windows (offset k·q mod C), so every class lands in nearly the
/// same number of clients; the per-class share of `mean_size` is ±1 balanced.
fn qua_counts(
    spec: &PartitionSpec,
    num_classes: usize,
    q: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..num_classes).collect();
    perm.shuffle(rng);
    let base = spec.mean_size / q;
    let rem = spec.mean_size % q;
    (0..spec.num_clients)
        .map(|k| {
            let mut row = vec![0usize; num_classes];
            for j in 0..q {
                let class = perm[(k * q + j) % num_classes];
                row[class] = base + usize::from(j < rem);
            }
            row
        })
        .collect()
}

/// Dir(μ): draw per-client class proportions from a symmetric Dirichlet
/// (via C Gamma(μ,1) draws), convert to integer quotas by largest-remainder
/// rounding, cap them against remaining class inventories, then top the
/// smallest clients back up to `mean_size` from whatever classes still have
/// stock. The budget precondition (`K·mean_size ≤ n`) guarantees the top-up
/// always completes, so |D_k| ≥ 1 holds structurally.
fn dir_counts(
    spec: &PartitionSpec,
    num_classes: usize,
    mu: f64,
    pools: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let gamma = Gamma::new(mu, 1.0).expect("μ > 0 validated");
    let mut remaining: Vec<usize> = pools.iter().map(Vec::len).collect();
    let mut counts = vec![vec![0usize; num_classes]; spec.num_clients];
    for row in counts.iter_mut() {
        let mut draws: Vec<f64> = (0..num_classes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total <= 0.0 {
            // All Gamma draws underflowed (possible at tiny μ): fall back to
            // uniform proportions rather than dividing by zero.
            draws = vec![1.0; num_classes];
        }
        let total: f64 = draws.iter().sum();
        let targets: Vec<f64> = draws
            .iter()
            .map(|&g| spec.mean_size as f64 * g / total)
            .collect();
        largest_remainder(&targets, spec.mean_size, row);
        // Cap against inventories; any shortfall is made up in the top-up
        // pass below.
        for (class, want) in row.iter_mut().enumerate() {
            let take = (*want).min(remaining[class]);
            remaining[class] -= take;
            *want = take;
        }
    }
    // Top-up: bring every short client back to mean_size, smallest client
    // first, drawing from the class with the most remaining inventory.
    loop {
        let short = (0..spec.num_clients)
            .map(|k| (counts[k].iter().sum::<usize>(), k))
            .filter(|&(size, _)| size < spec.mean_size)
            .min();
        let Some((_, k)) = short else { break };
        let class = (0..num_classes)
            .max_by_key(|&c| remaining[c])
            .expect("num_classes ≥ 1");
        debug_assert!(remaining[class] > 0, "budget precondition violated");
        remaining[class] -= 1;
        counts[k][class] += 1;
    }
    counts
}

/// Round real targets to integers summing to `total`: floor everything, then
/// hand the leftover units to the largest fractional parts (ties broken by
/// lower index for determinism).
fn largest_remainder(targets: &[f64], total: usize, out: &mut [usize]) {
    let mut leftover = total;
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        let floor = t.floor() as usize;
        out[i] = floor;
        leftover = leftover.saturating_sub(floor);
        fracs.push((t - floor as f64, i));
    }
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter().cycle().take(leftover) {
        out[i] += 1;
    }
}

/// A reproducible record of one partition: the spec plus every client's
/// index list, exportable as JSON for exact experiment replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub spec: PartitionSpec,
    pub clients: Vec<ClientDataset>,
}

impl PartitionManifest {
    pub fn new(spec: PartitionSpec, clients: Vec<ClientDataset>) -> Self {
        PartitionManifest { spec, clients }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
