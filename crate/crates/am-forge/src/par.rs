//! Data-parallel map helpers. With the default `parallel` feature the maps
//! run on the rayon pool; without it they fall back to the serial versions.

/// Maps `f` over `items`, preserving order. Serial fallback implementation.
pub fn map_serial<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
    T: Sync,
    U: Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
    T: Sync,
    U: Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
    T: Sync,
    U: Send,
{
    map_serial(items, f)
}
