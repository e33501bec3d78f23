//! Simple `key = value` hyperparameter files.
//!
//! Lines starting with `#` are comments. Recognized keys override defaults;
//! explicit command-line flags still win over the file.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use planlab_core::control::{diag, LqrConfig};
use planlab_core::planner::TrainConfig;

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), n + 1);
            };
            let key = key.trim().to_string();
            let value: f64 = value
                .trim()
                .parse()
                .with_context(|| format!("{}:{}: bad number for `{key}`", path.display(), n + 1))?;
            values.insert(key, value);
        }
        Ok(FileConfig { values })
    }

    fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.get("train.epochs") {
            cfg.epochs = v as usize;
        }
        if let Some(v) = self.get("train.batch_size") {
            cfg.batch_size = v as usize;
        }
        if let Some(v) = self.get("train.lr") {
            cfg.base_lr = v;
        }
        if let Some(v) = self.get("train.weight_decay") {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.get("train.agent_loss_weight") {
            cfg.agent_loss_weight = v;
        }
        cfg
    }

    pub fn lqr_config(&self) -> LqrConfig {
        let mut cfg = LqrConfig::default();
        let q_lat = (
            self.get("lqr.q_lat_y").unwrap_or(cfg.q_lat[0][0]),
            self.get("lqr.q_lat_yaw").unwrap_or(cfg.q_lat[1][1]),
        );
        cfg.q_lat = diag(q_lat.0, q_lat.1);
        let q_lon = (
            self.get("lqr.q_lon_s").unwrap_or(cfg.q_lon[0][0]),
            self.get("lqr.q_lon_v").unwrap_or(cfg.q_lon[1][1]),
        );
        cfg.q_lon = diag(q_lon.0, q_lon.1);
        if let Some(v) = self.get("lqr.r_lat") {
            cfg.r_lat = v;
        }
        if let Some(v) = self.get("lqr.r_lon") {
            cfg.r_lon = v;
        }
        if let Some(v) = self.get("lqr.lookahead") {
            cfg.lookahead = v;
        }
        cfg
    }

    pub fn replan_interval(&self) -> Option<usize> {
        self.get("sim.replan_interval").map(|v| (v as usize).max(1))
    }
}
