//! Keep-best-N simulation pools.
//!
//! Tasks are indexed `0, 1, 2, ...` and each owns the RNG substream with its
//! index. The first `pool_size` tasks (in index order) that produce a finite
//! distance form the pool, and the `keep` closest of them are retained, ties
//! broken by task index. The result therefore does not depend on how the
//! batches are scheduled.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::rng::{StreamSeed, TaskRng};

/// Runs a batch of indexed tasks and returns their results in index order.
pub trait Executor: Sync {
    fn map<T, F>(&self, indices: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send;
}

/// Runs every task on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, indices: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        indices.map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    /// Number of comparable simulations making up the pool.
    pub pool_size: usize,
    /// Number of closest simulations retained.
    pub keep: usize,
    /// Hard cap on the number of tasks run.
    pub max_attempts: u64,
}

impl PoolConfig {
    /// Caps attempts at `max_discard_ratio` times the pool size.
    pub fn new(pool_size: usize, keep: usize, max_discard_ratio: f64) -> Result<Self> {
        if keep == 0 || keep > pool_size {
            return Err(Error::Config(format!(
                "need 0 < keep <= pool size, got keep={keep}, pool={pool_size}"
            )));
        }
        if !(max_discard_ratio >= 1.0) {
            return Err(Error::Config(format!(
                "max_discard_ratio must be at least 1, got {max_discard_ratio}"
            )));
        }
        let max_attempts = libm::ceil(pool_size as f64 * max_discard_ratio);
        Ok(Self {
            pool_size,
            keep,
            max_attempts: if max_attempts >= u64::MAX as f64 {
                u64::MAX
            } else {
                max_attempts as u64
            },
        })
    }
}

/// A retained simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<T> {
    pub index: u64,
    pub distance: f64,
    pub item: T,
}

impl<T> Scored<T> {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

impl<T> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}

impl<T> Eq for HeapEntry<T> {}

impl<T> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for HeapEntry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

struct HeapEntry<T>(Scored<T>);

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutcome<T> {
    /// Sorted by `(distance, index)`.
    pub retained: Vec<Scored<T>>,
    /// Largest retained distance.
    pub epsilon: f64,
    /// Tasks run, including discarded ones.
    pub attempts: u64,
}

/// Fills a pool and keeps the best `cfg.keep` results.
///
/// `task(index, rng)` returns `None` for a discarded proposal, or a distance
/// with its payload. Non-finite distances are discarded.
pub fn run_pool<T, E, F>(executor: &E, seed: &StreamSeed, cfg: &PoolConfig, task: F) -> Result<PoolOutcome<T>>
where
    T: Send,
    E: Executor + ?Sized,
    F: Fn(u64, &mut TaskRng) -> Option<(f64, T)> + Sync + Send,
{
    let mut heap: BinaryHeap<HeapEntry<T>> = BinaryHeap::with_capacity(cfg.keep + 1);
    let mut accepted = 0usize;
    let mut next = 0u64;
    let mut batch = (cfg.pool_size as u64).clamp(64, 4096);

    while accepted < cfg.pool_size {
        if next >= cfg.max_attempts {
            return Err(Error::BudgetExceeded {
                attempts: next,
                accepted,
                required: cfg.pool_size,
            });
        }
        let end = next.saturating_add(batch).min(cfg.max_attempts);
        let results = executor.map(next..end, |index| {
            let mut rng = seed.stream(index);
            task(index, &mut rng).filter(|(d, _)| d.is_finite())
        });
        for (index, result) in (next..end).zip(results) {
            if accepted == cfg.pool_size {
                break;
            }
            let Some((distance, item)) = result else {
                continue;
            };
            accepted += 1;
            let entry = HeapEntry(Scored { index, distance, item });
            if heap.len() < cfg.keep {
                heap.push(entry);
            } else if let Some(mut worst) = heap.peek_mut() {
                if entry < *worst {
                    *worst = entry;
                }
            }
        }
        let ran = end - next;
        next = end;
        // Aim the next batch at the remaining shortfall, given the acceptance
        // rate so far.
        let remaining = (cfg.pool_size - accepted) as f64;
        let rate = (accepted.max(1) as f64) / next as f64;
        batch = (libm::ceil(remaining / rate * 1.1) as u64).clamp(64, ran.max(64) * 4);
    }

    let mut retained: Vec<Scored<T>> = heap.into_vec().into_iter().map(|e| e.0).collect();
    retained.sort_by(Scored::key_cmp);
    let epsilon = retained.last().map_or(0.0, |s| s.distance);
    Ok(PoolOutcome {
        retained,
        epsilon,
        attempts: next,
    })
}

/// Pool sizes per iteration with the implied quantile orders `N / pool`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceSchedule {
    pub quantile_orders: Vec<f64>,
    pub pool_sizes: Vec<usize>,
}

impl ToleranceSchedule {
    pub fn from_pools(pool_sizes: &[usize], particles: usize) -> Result<Self> {
        if pool_sizes.is_empty() {
            return Err(Error::Config("at least one pool size is required".into()));
        }
        if particles == 0 {
            return Err(Error::Config("particle count must be positive".into()));
        }
        for (t, &pool) in pool_sizes.iter().enumerate() {
            if pool < particles {
                return Err(Error::Config(format!(
                    "pool {} has size {pool}, smaller than the {particles} particles",
                    t + 1
                )));
            }
            if t > 0 && pool <= pool_sizes[t - 1] {
                return Err(Error::Config(
                    "pool sizes must strictly increase so that quantile orders decrease".into(),
                ));
            }
        }
        Ok(Self {
            quantile_orders: pool_sizes.iter().map(|&p| particles as f64 / p as f64).collect(),
            pool_sizes: pool_sizes.to_vec(),
        })
    }

    pub fn iterations(&self) -> usize {
        self.pool_sizes.len()
    }
}
