//! On-disk run state: `checkpoint_<episodes>/` holds the model, the Adam
//! moments, the replay buffer, the per-episode history and the phase counter.

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::diffcore::{AdamState, Tensor};
use crate::error::{Error, Result};
use crate::koopman::LatentModel;
use crate::training::ReplayBuffer;

use super::run::{EpisodeSummary, RunState};

const ADAM_MAGIC: &[u8; 8] = b"LKADAM01";

pub fn adam_to_bytes(state: &AdamState<f64>) -> Vec<u8> {
    let mut out = ADAM_MAGIC.to_vec();
    out.extend_from_slice(&state.step.to_le_bytes());
    for v in [state.beta1, state.beta2, state.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    for t in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn adam_from_bytes(buf: &[u8]) -> Result<AdamState<f64>> {
    let mut words = buf
        .get(8..)
        .filter(|_| &buf[..8] == ADAM_MAGIC && buf.len() % 8 == 0)
        .ok_or_else(|| Error::Format("not an optimizer state file".into()))?
        .chunks_exact(8)
        .map(|c| <[u8; 8]>::try_from(c).expect("8 bytes"));
    let mut next = || words.next().ok_or_else(|| Error::Format("truncated optimizer state".into()));
    let step = u64::from_le_bytes(next()?);
    let beta1 = f64::from_le_bytes(next()?);
    let beta2 = f64::from_le_bytes(next()?);
    let eps = f64::from_le_bytes(next()?);
    let count = u64::from_le_bytes(next()?) as usize;
    let mut tensors = Vec::with_capacity(2 * count);
    for _ in 0..2 * count {
        let rank = u64::from_le_bytes(next()?) as usize;
        let shape = (0..rank).map(|_| Ok(u64::from_le_bytes(next()?) as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product();
        let data = (0..len).map(|_| Ok(f64::from_le_bytes(next()?))).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if next().is_ok() {
        return Err(Error::Format("trailing bytes in optimizer state".into()));
    }
    let v = tensors.split_off(count);
    Ok(AdamState {
        step,
        m: tensors,
        v,
        beta1,
        beta2,
        eps,
    })
}

pub fn checkpoint_dir(out: &Path, episodes: usize) -> PathBuf {
    out.join(format!("checkpoint_{episodes}"))
}

/// The checkpoint with the most episodes under `out`, if any.
pub fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>> {
    if !out.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(out)? {
        let path = entry?.path();
        let n = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("checkpoint_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(n) = n {
            if path.is_dir() && best.as_ref().is_none_or(|(b, _)| n > *b) {
                best = Some((n, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

impl RunState {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.model.save(dir.join("model.bin"))?;
        std::fs::write(dir.join("adam.bin"), adam_to_bytes(&self.adam))?;
        self.buffer.save(dir.join("buffer.bin"))?;
        let mut w = csv::Writer::from_path(dir.join("history.csv")).map_err(csv_err)?;
        w.write_record(["episode", "cumulative_cost", "sigma2"]).map_err(csv_err)?;
        for h in &self.history {
            w.write_record([h.episode.to_string(), h.cumulative_cost.to_string(), h.sigma2.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        std::fs::write(dir.join("run.txt"), format!("seed = {}\nphases = {}\n", self.seed, self.phases))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let model = LatentModel::load(dir.join("model.bin"))?;
        let mut buf = Vec::new();
        std::fs::File::open(dir.join("adam.bin"))?.read_to_end(&mut buf)?;
        let adam = adam_from_bytes(&buf)?;
        let buffer = ReplayBuffer::load(dir.join("buffer.bin"), None)?;
        let mut history = Vec::new();
        let mut r = csv::Reader::from_path(dir.join("history.csv")).map_err(csv_err)?;
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short history row".into()));
            let bad = |_| Error::Format("malformed history row".into());
            history.push(EpisodeSummary {
                episode: field(0)?.parse().map_err(|_| Error::Format("malformed history row".into()))?,
                cumulative_cost: field(1)?.parse().map_err(bad)?,
                sigma2: field(2)?.parse().map_err(bad)?,
            });
        }
        let (mut seed, mut phases) = (None, None);
        for line in std::fs::read_to_string(dir.join("run.txt"))?.lines() {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("phases", v)) => phases = v.parse().ok(),
                _ => {}
            }
        }
        Ok(Self {
            seed: seed.ok_or_else(|| Error::Format("run.txt lacks a seed".into()))?,
            phases: phases.ok_or_else(|| Error::Format("run.txt lacks a phase count".into()))?,
            model,
            adam,
            buffer,
            history,
        })
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
