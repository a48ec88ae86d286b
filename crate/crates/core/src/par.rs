//! Order-preserving parallel map over a slice. Worker count comes from
//! `XTF_THREADS` (0 or unset = all cores).

use std::num::NonZeroUsize;

pub const THREADS_ENV: &str = "XTF_THREADS";

pub fn parse_threads(value: Option<&str>) -> Result<usize, String> {
    let auto = || std::thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1);
    match value.map(str::trim) {
        None | Some("") => Ok(auto()),
        Some(v) => match v.parse::<usize>() {
            Ok(0) => Ok(auto()),
            Ok(n) => Ok(n),
            Err(_) => Err(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")),
        },
    }
}

/// Worker count from the environment; an unparsable value falls back to 1.
pub fn threads() -> usize {
    parse_threads(std::env::var(THREADS_ENV).ok().as_deref()).unwrap_or(1)
}

/// `items.iter().map(f).collect()`, fanned out over contiguous chunks.
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let n = threads().min(items.len());
    if n <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(n);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
