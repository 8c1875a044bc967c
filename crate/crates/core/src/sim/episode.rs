use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::MazeEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Hierarchical,
    Maze,
    Fluid,
}

impl Process {
    pub fn name(self) -> &'static str {
        match self {
            Process::Hierarchical => "hierarchical",
            Process::Maze => "maze",
            Process::Fluid => "fluid",
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Process {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(Process::Hierarchical),
            "maze" => Ok(Process::Maze),
            "fluid" => Ok(Process::Fluid),
            other => Err(Error::Config(format!(
                "unknown process {other:?} (expected hierarchical, maze or fluid)"
            ))),
        }
    }
}

/// Optional per-episode metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    /// Latent mode of the hierarchical process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<u8>,
    /// Decisions taken at maze nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<MazeEvent>>,
    /// Whether the agent reached the goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reached_goal: Option<bool>,
    /// Side length of a fluid field; samples are row-major flattened grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Leading generated steps produced while the model warmed up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub process: Process,
    pub id: u64,
    pub seed: u64,
    #[serde(default)]
    pub labels: Labels,
    pub samples: Vec<Vec<f64>>,
}

impl Episode {
    pub fn new(process: Process, samples: Vec<Vec<f64>>) -> Self {
        Episode {
            process,
            id: 0,
            seed: 0,
            labels: Labels::default(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Common sample dimension, or an error if samples disagree.
    pub fn dim(&self) -> Result<usize> {
        let k = self.samples.first().map_or(0, Vec::len);
        if let Some(bad) = self.samples.iter().position(|s| s.len() != k) {
            return Err(Error::Format(format!(
                "episode {}: sample {bad} has dimension {}, expected {k}",
                self.id,
                self.samples[bad].len()
            )));
        }
        Ok(k)
    }
}
