//! Scenario suites: directories of `*.scenario.json` plus manifest/suite
//! files listing scenario ids.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use planlab_core::scenario::{load_scenario, Scenario};
use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA: &str = "planlab.manifest.v1";
pub const SUITE_SCHEMA: &str = "planlab.suite.v1";

/// Written by `gen-data` next to the scenario files.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub families: Vec<String>,
    pub count: usize,
    pub scenarios: Vec<String>,
}

/// A derived suite: scenario ids resolved against a scenario directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct SuiteFile {
    pub schema: String,
    /// Directory holding the scenario files (relative paths resolve against
    /// the suite file's parent).
    pub dir: String,
    pub scenarios: Vec<String>,
}

/// Loads every scenario a `--suite` argument refers to: either a directory
/// (manifest order if present, otherwise sorted files) or a suite file.
pub fn load_suite(path: &Path) -> Result<Vec<Scenario>> {
    let entries = suite_entries(path)?;
    entries
        .iter()
        .map(|p| load_scenario(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn suite_entries(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let manifest_path = path.join("manifest.json");
        if manifest_path.is_file() {
            let manifest: Manifest = read_json(&manifest_path)?;
            if manifest.schema != MANIFEST_SCHEMA {
                bail!(
                    "{}: unexpected schema `{}`",
                    manifest_path.display(),
                    manifest.schema
                );
            }
            return Ok(manifest
                .scenarios
                .iter()
                .map(|id| path.join(format!("{id}.scenario.json")))
                .collect());
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(".scenario.json"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("{}: no scenario files found", path.display());
        }
        Ok(files)
    } else {
        let suite: SuiteFile = read_json(path)?;
        if suite.schema != SUITE_SCHEMA {
            bail!("{}: unexpected schema `{}`", path.display(), suite.schema);
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let dir = base.join(&suite.dir);
        Ok(suite
            .scenarios
            .iter()
            .map(|id| dir.join(format!("{id}.scenario.json")))
            .collect())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs `work` over the items on up to `jobs` threads, preserving input
/// order in the output.
pub fn parallel_map<T, R, F>(items: Vec<T>, jobs: usize, work: F) -> Vec<R>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.iter().map(&work).collect();
    }
    let n = items.len();
    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<R>>> =
        results.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = work(&items[i]);
                **slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    drop(slots);
    results.into_iter().map(|r| r.expect("slot filled")).collect()
}
