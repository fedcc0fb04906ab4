//! Buckets of consecutive examples, per-epoch shuffling, and the static and
//! dynamic assignment of buckets to threads.
//!
//! A bucket is a run of consecutive example indices sized so that the model
//! coordinates it touches fill one cache line. Shuffling happens at bucket
//! granularity only; examples inside a bucket keep their order.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Reproducible per-stream generator: ChaCha8 seeded with
/// `master_seed + stream_id`. Stream 0 is the main shuffle stream; worker
/// threads and topology groups get their own ids.
pub fn stream_rng(master_seed: u64, stream_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master_seed.wrapping_add(stream_id))
}

/// Grouping of the `n` example indices into cache-line-sized buckets plus
/// the epoch's bucket permutation.
#[derive(Clone, Debug)]
pub struct BucketPlan {
    pub n: usize,
    pub bucket_size: usize,
    pub num_buckets: usize,
    pub order: Vec<usize>,
}

impl BucketPlan {
    pub fn new(n: usize, bucket_size: usize) -> Result<Self> {
        if bucket_size == 0 {
            return Err(Error::InvalidConfig("bucket_size must be >= 1".into()));
        }
        let num_buckets = n.div_ceil(bucket_size);
        Ok(BucketPlan {
            n,
            bucket_size,
            num_buckets,
            order: (0..num_buckets).collect(),
        })
    }

    /// Example indices covered by bucket `b`; the last bucket may be partial.
    pub fn bucket_range(&self, b: usize) -> Range<usize> {
        let start = b * self.bucket_size;
        start..((b + 1) * self.bucket_size).min(self.n)
    }
}

/// Bucket size so that one bucket's worth of model entries fills one cache
/// line.
pub fn compute_bucket_size(cache_line_bytes: usize, entry_bytes: usize) -> Result<usize> {
    if !cache_line_bytes.is_power_of_two() || !entry_bytes.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "cache line ({cache_line_bytes}) and entry ({entry_bytes}) sizes must be powers of two"
        )));
    }
    if cache_line_bytes < entry_bytes {
        return Err(Error::InvalidConfig(format!(
            "cache line size {cache_line_bytes} smaller than entry size {entry_bytes}"
        )));
    }
    Ok(cache_line_bytes / entry_bytes)
}

/// Fallback cut-off when the LLC size is unknown: bucketing pays off once the
/// model vector exceeds roughly this many entries.
pub const LLC_FALLBACK_ENTRIES: usize = 500_000;

/// Bucketing is worthwhile only when the model vector does not fit in the
/// last-level cache.
pub fn buckets_enabled(n: usize, llc_bytes: Option<usize>, entry_bytes: usize) -> bool {
    match llc_bytes {
        Some(llc) => n * entry_bytes > llc,
        None => n > LLC_FALLBACK_ENTRIES,
    }
}

/// In-place Fisher-Yates shuffle; uniform given an ideal generator and
/// deterministic per seed.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Split `[0, num_buckets)` into `k` contiguous ranges with sizes differing
/// by at most one; ranges with index < num_buckets % k get the extra bucket.
pub fn static_partition(num_buckets: usize, k: usize) -> Vec<Range<usize>> {
    assert!(k >= 1, "thread count must be >= 1");
    let base = num_buckets / k;
    let extra = num_buckets % k;
    let mut ranges = Vec::with_capacity(k);
    let mut start = 0;
    for t in 0..k {
        let len = base + usize::from(t < extra);
        ranges.push(start..start + len);
        start += len;
    }
    ranges
}

/// Shared claim queue over an epoch's shuffled bucket order. `claim_next` is
/// linearizable and lock-free; each bucket is handed out exactly once.
pub struct WorkQueue<'a> {
    order: &'a [usize],
    cursor: AtomicUsize,
}

impl<'a> WorkQueue<'a> {
    pub fn new(order: &'a [usize]) -> Self {
        WorkQueue {
            order,
            cursor: AtomicUsize::new(0),
        }
    }

    /// Next bucket index, or `None` once the epoch is exhausted.
    pub fn claim_next(&self) -> Option<usize> {
        let slot = self.cursor.fetch_add(1, Ordering::Relaxed);
        self.order.get(slot).copied()
    }
}
