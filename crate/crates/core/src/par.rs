//! Order-preserving parallel map; sequential when the `parallel` feature is off.

/// Maps `f` over `items`, returning results in input order regardless of
/// how the work was scheduled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Caps the global worker pool. Only the first call has any effect.
#[cfg(feature = "parallel")]
pub fn limit_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn limit_threads(_n: usize) {}

#[cfg(test)]
mod tests {
    #[test]
    fn preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = super::map_indexed(&xs, |i, x| (i as u64) * 1000 + x);
        assert!(ys.iter().enumerate().all(|(i, &y)| y == i as u64 * 1001));
    }
}
