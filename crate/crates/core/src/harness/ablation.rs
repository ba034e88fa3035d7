use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::train::{evaluate_model, train, TrainConfig};
use crate::complexity::model_report;
use crate::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub shuffle: bool,
    pub rescale: bool,
    pub macs: u64,
    pub params: u64,
    pub accuracy: f64,
}

/// The three variants of `base`: shuffle off, shuffle on, shuffle and
/// rescale on. Everything else is shared.
pub fn ablation_variants(base: &ModelConfig) -> [(&'static str, ModelConfig); 3] {
    let with = |shuffle, rescale| ModelConfig {
        shuffle_enabled: shuffle,
        rescale_enabled: rescale,
        ..base.clone()
    };
    [
        ("baseline", with(false, false)),
        ("+shuffle", with(true, false)),
        ("+shuffle+rescale", with(true, true)),
    ]
}

/// Train and evaluate each variant with the same recipe. Fails with a
/// contract error if the two shuffled rows differ in MACs.
pub fn run_ablation(
    base: &ModelConfig,
    tc: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(3);
    for (name, config) in ablation_variants(base) {
        config.validate()?;
        let report = model_report(&config)?;
        let out = train(&config, tc, train_set, None, None)?;
        rows.push(AblationRow {
            variant: name.to_string(),
            shuffle: config.shuffle_enabled,
            rescale: config.rescale_enabled,
            macs: report.totals.total_macs as u64,
            params: report.totals.total_params as u64,
            accuracy: evaluate_model(&out.model, eval_set)?,
        });
    }
    if rows[1].macs != rows[2].macs {
        return Err(Error::contract(format!(
            "shuffled ablation rows differ in MACs: {} vs {}",
            rows[1].macs, rows[2].macs
        )));
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ablation_csv(path: &Path) -> Result<Vec<AblationRow>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
