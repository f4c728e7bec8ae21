use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

/// CSV rows `episode, step, cost, action…, obs…`.
pub struct TrajectoryWriter {
    inner: csv::Writer<File>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

impl TrajectoryWriter {
    pub fn create(path: impl AsRef<Path>, act_dim: usize, obs_dim: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["episode".to_string(), "step".to_string(), "cost".to_string()];
        header.extend((0..act_dim).map(|i| format!("action_{i}")));
        header.extend((0..obs_dim).map(|i| format!("obs_{i}")));
        inner.write_record(&header).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, episode: usize, step: usize, cost: f64, action: &[f64], obs: &[f64]) -> Result<()> {
        let mut row = vec![episode.to_string(), step.to_string(), cost.to_string()];
        row.extend(action.iter().chain(obs).map(f64::to_string));
        self.inner.write_record(&row).map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
