//! Frame selection and the frame worker pool.

use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

/// Sorted stems of the files in `dir` with the given extension.
pub fn list_ids(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Expands a frame selector.
///
/// Comma-separated items, each one of: `N` (zero-padded to six digits),
/// `A-B` (inclusive numeric range), `@file` (one id per line, `#` comments),
/// or a literal frame id.
pub fn parse_selector(sel: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for item in sel.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some(path) = item.strip_prefix('@') {
            let text = fs::read_to_string(path).with_context(|| format!("reading frame list {path}"))?;
            out.extend(
                text.lines()
                    .map(|l| l.split('#').next().unwrap_or("").trim())
                    .filter(|l| !l.is_empty())
                    .map(String::from),
            );
        } else if let Some((a, b)) = item.split_once('-').filter(|(a, b)| is_num(a) && is_num(b)) {
            let (a, b): (u64, u64) = (a.parse()?, b.parse()?);
            if a > b {
                bail!("empty frame range `{item}`");
            }
            out.extend((a..=b).map(kitti_id));
        } else if is_num(item) {
            out.push(kitti_id(item.parse()?));
        } else {
            out.push(item.to_string());
        }
    }
    Ok(out)
}

fn is_num(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

pub fn kitti_id(n: u64) -> String {
    format!("{n:06}")
}

/// Selected ids, or every id found in `dir` when no selector is given.
pub fn resolve(selector: Option<&str>, dir: &Path, ext: &str) -> Result<Vec<String>> {
    match selector {
        Some(s) => parse_selector(s),
        None => list_ids(dir, ext),
    }
}

/// Maps `f` over `items` on a pool of `workers` threads (0 = one per core).
/// Results come back in input order regardless of the pool width.
pub fn run_ordered<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

pub fn median(mut v: Vec<Duration>) -> Duration {
    if v.is_empty() {
        return Duration::ZERO;
    }
    v.sort();
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2
    } else {
        v[mid]
    }
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
