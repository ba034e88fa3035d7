use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::train::EVAL_BATCH;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::shuffle::{shuffled_forward_traced, Boundary, Trace};
use crate::tensor::Tape;
use crate::vit::vit_forward_traced;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupTag {
    Attended,
    Idle,
    NA,
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupTag::Attended => "attended",
            GroupTag::Idle => "idle",
            GroupTag::NA => "n-a",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub channel: usize,
    pub group: GroupTag,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Parses `embed`, `layer:<i>` and `stage:<s>`.
impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown selector {s:?}, expected embed, layer:<i> or stage:<s>"));
        if s == "embed" {
            return Ok(Boundary::Embed);
        }
        let (kind, index) = s.split_once(':').ok_or_else(bad)?;
        let index: usize = index.parse().map_err(|_| bad())?;
        match kind {
            "layer" => Ok(Boundary::Layer(index)),
            "stage" => Ok(Boundary::Stage(index)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Embed => f.write_str("embed"),
            Boundary::Layer(i) => write!(f, "layer:{i}"),
            Boundary::Stage(s) => write!(f, "stage:{s}"),
        }
    }
}

fn check_selector(model: &Model, b: Boundary) -> Result<()> {
    let ok = match b {
        Boundary::Embed => true,
        Boundary::Layer(i) => i < model.layer_count(),
        Boundary::Stage(s) => s < model.stages.len(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("selector {b} does not name a boundary of this model")))
    }
}

/// Per-channel statistics over every token of every sample at `boundary`.
/// On shuffled models the first half of the channels is the group attended
/// next.
pub fn channel_stats(model: &Model, data: &Dataset, boundary: Boundary) -> Result<Vec<ChannelStat>> {
    check_selector(model, boundary)?;
    if data.image_size != model.config.image_size {
        return Err(Error::config("dataset geometry does not match the model"));
    }
    let mut acc: Vec<Welford> = Vec::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let x = tape.input(data.batch(chunk).0);
        let mut trace = Trace::new();
        if model.config.shuffle_enabled {
            shuffled_forward_traced(&mut tape, model, &vars, x, Some(&mut trace))?;
        } else {
            vit_forward_traced(&mut tape, model, &vars, x, Some(&mut trace))?;
        }
        let var = trace
            .iter()
            .find(|(b, _)| *b == boundary)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::config(format!("selector {boundary} not reached")))?;
        let t = tape.value(var);
        let width = t.last_dim();
        if acc.is_empty() {
            acc = vec![Welford::default(); width];
        }
        for row in t.data().chunks(width) {
            for (a, &v) in acc.iter_mut().zip(row) {
                a.push(v);
            }
        }
    }
    let width = acc.len();
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(channel, w)| ChannelStat {
            channel,
            group: match (model.config.shuffle_enabled, channel < width / 2) {
                (false, _) => GroupTag::NA,
                (true, true) => GroupTag::Attended,
                (true, false) => GroupTag::Idle,
            },
            mean: w.mean,
            std: w.std(),
            min: w.min,
            max: w.max,
        })
        .collect())
}

pub fn write_stats_csv(stats: &[ChannelStat], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in stats {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv(path: &Path) -> Result<Vec<ChannelStat>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Compute statistics and write them as CSV.
pub fn export_channel_stats(
    model: &Model,
    data: &Dataset,
    boundary: Boundary,
    path: &Path,
) -> Result<Vec<ChannelStat>> {
    let stats = channel_stats(model, data, boundary)?;
    write_stats_csv(&stats, path)?;
    Ok(stats)
}

/// Coefficient of variation of the per-channel std vector.
pub fn std_dispersion(stats: &[ChannelStat]) -> f64 {
    let mut w = Welford::default();
    for s in stats {
        w.push(s.std);
    }
    if w.mean == 0.0 {
        0.0
    } else {
        w.std() / w.mean
    }
}

#[derive(Debug, Clone, Copy)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Default for Welford {
    fn default() -> Self {
        Welford {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    /// Population standard deviation.
    fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}
