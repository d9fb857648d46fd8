//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool.
//! Without it, or after [`force_sequential`], everything runs in order on the
//! calling thread. Results are always returned in input order.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Disable parallel execution process-wide, even when the feature is on.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Map `f` over `items` where items sharing a lane key run one after another
/// in input order, and distinct lanes run concurrently. Items whose key is
/// `None` each get a lane of their own.
///
/// Scripted mock endpoints hand out replies in call order, so calls to the
/// same mock must stay serialized for a run to be reproducible.
pub fn map_in_lanes<T, K, R, KF, F>(items: &[T], lane: KF, f: F) -> Vec<R>
where
    T: Sync,
    K: Eq + Hash,
    R: Send,
    KF: Fn(&T) -> Option<K>,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    let mut lanes: Vec<Vec<usize>> = Vec::new();
    let mut by_key: HashMap<K, usize> = HashMap::new();
    for (i, item) in items.iter().enumerate() {
        match lane(item) {
            Some(k) => {
                let slot = *by_key.entry(k).or_insert_with(|| {
                    lanes.push(Vec::new());
                    lanes.len() - 1
                });
                lanes[slot].push(i);
            }
            None => lanes.push(vec![i]),
        }
    }
    let run_lane = |idxs: &Vec<usize>| -> Vec<(usize, R)> {
        idxs.iter().map(|&i| (i, f(i, &items[i]))).collect()
    };
    let mut out: Vec<(usize, R)> = map(&lanes, |_, l| run_lane(l)).into_iter().flatten().collect();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Run `f` inside a pool limited to `workers` threads (ignored when sequential).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if is_parallel() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = workers;
    f()
}
