//! Small shared utilities: edit distance, quantiles, hashing, CSV output,
//! and a deterministic thread-pool map.

use std::path::Path;

use sha2::{Digest, Sha256};

/// Shortest round-trip decimal form of a float, for CSV cells.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Renders rows (header included) as CSV text.
pub fn csv_string(rows: &[Vec<String>]) -> crate::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row).map_err(|e| crate::Error::Other(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Other(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Other(e.to_string()))
}

/// Writes rows (header included) to a CSV file.
pub(crate) fn write_csv(path: &Path, rows: &[Vec<String>]) -> crate::Result<()> {
    std::fs::write(path, csv_string(rows)?)?;
    Ok(())
}

/// Levenshtein distance between two character slices.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Linear-interpolation quantile (the common "type 7" estimator) over a
/// sorted slice. `q` is clamped to `[0, 1]`; an empty slice yields NaN.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Median of a sorted slice; NaN when empty.
pub fn median(sorted: &[f64]) -> f64 {
    quantile(sorted, 0.5)
}

/// Hex-encoded SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Applies `f` to every item on up to `jobs` threads, returning results in
/// input order.
pub fn parallel_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(|t| f(t)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut collected: Vec<(usize, R)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(&items[i])));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}
