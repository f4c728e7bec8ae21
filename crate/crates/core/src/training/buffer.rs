use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// `t_k = (o_k, a_k, Δa_k, c_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub o: Vec<T>,
    pub a: Vec<T>,
    pub da: Vec<T>,
    pub c: T,
}

/// `T + 1` consecutive transitions of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence<T> {
    pub transitions: Vec<Transition<T>>,
}

impl<T: Real> Sequence<T> {
    pub fn new(transitions: Vec<Transition<T>>) -> Result<Self> {
        if transitions.len() < 2 {
            return Err(Error::Contract("a sequence needs at least two transitions".into()));
        }
        let (n, m) = (transitions[0].o.len(), transitions[0].a.len());
        if let Some(t) = transitions.iter().find(|t| t.o.len() != n || t.a.len() != m || t.da.len() != m) {
            return Err(dim_err(
                "Sequence::new",
                format!("transition dims ({}, {}, {}) vs ({n}, {m}, {m})", t.o.len(), t.a.len(), t.da.len()),
            ));
        }
        Ok(Self { transitions })
    }

    /// Number of steps `T`.
    pub fn horizon(&self) -> usize {
        self.transitions.len() - 1
    }

    pub fn obs_dim(&self) -> usize {
        self.transitions[0].o.len()
    }

    pub fn act_dim(&self) -> usize {
        self.transitions[0].a.len()
    }

    /// `a_{k+1} = a_k + Δa_k` holds bit-exactly for every step.
    pub fn is_consistent(&self) -> bool {
        self.transitions.windows(2).all(|w| {
            w[0].a
                .iter()
                .zip(&w[0].da)
                .zip(&w[1].a)
                .all(|((&a, &d), &next)| a + d == next)
        })
    }
}

/// Non-overlapping windows of `horizon + 1` transitions; the trailing remainder is dropped.
pub fn create_sequences<T: Real>(episode: &[Transition<T>], horizon: usize) -> Vec<Sequence<T>> {
    if horizon == 0 {
        return Vec::new();
    }
    episode
        .chunks_exact(horizon + 1)
        .map(|w| Sequence {
            transitions: w.to_vec(),
        })
        .collect()
}

/// Sequence store. Unbounded unless a capacity is set, in which case the oldest
/// sequences are evicted first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T> {
    sequences: VecDeque<Sequence<T>>,
    capacity: Option<usize>,
}

impl<T: Real> Default for ReplayBuffer<T> {
    fn default() -> Self {
        Self::new(None)
    }
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            sequences: VecDeque::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Sequence<T> {
        &self.sequences[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sequence<T>> {
        self.sequences.iter()
    }

    pub fn push(&mut self, seq: Sequence<T>) -> Result<()> {
        if let Some(first) = self.sequences.front() {
            if first.obs_dim() != seq.obs_dim() || first.act_dim() != seq.act_dim() || first.horizon() != seq.horizon() {
                return Err(dim_err(
                    "ReplayBuffer::push",
                    format!(
                        "(N, m, T) = ({}, {}, {}) into a buffer of ({}, {}, {})",
                        seq.obs_dim(),
                        seq.act_dim(),
                        seq.horizon(),
                        first.obs_dim(),
                        first.act_dim(),
                        first.horizon()
                    ),
                ));
            }
        }
        self.sequences.push_back(seq);
        if let Some(cap) = self.capacity {
            while self.sequences.len() > cap {
                self.sequences.pop_front();
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, seqs: impl IntoIterator<Item = Sequence<T>>) -> Result<()> {
        for s in seqs {
            self.push(s)?;
        }
        Ok(())
    }

    /// One epoch's worth of shuffled index batches.
    pub fn shuffled_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Flat little-endian `f64` records behind a header `(magic, N, m, T, count)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, m, t) = self
            .sequences
            .front()
            .map_or((0, 0, 0), |s| (s.obs_dim(), s.act_dim(), s.horizon()));
        let mut out = Vec::new();
        out.extend_from_slice(BUFFER_MAGIC);
        for v in [n, m, t, self.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for seq in &self.sequences {
            for tr in &seq.transitions {
                for &v in tr.o.iter().chain(&tr.a).chain(&tr.da).chain(std::iter::once(&tr.c)) {
                    out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8], capacity: Option<usize>) -> Result<Self> {
        if buf.len() < 40 || &buf[..8] != BUFFER_MAGIC {
            return Err(Error::Format("not a replay buffer file".into()));
        }
        let header: Vec<usize> = (0..4)
            .map(|i| u64::from_le_bytes(buf[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize)
            .collect();
        let (n, m, t, count) = (header[0], header[1], header[2], header[3]);
        let record = n + 2 * m + 1;
        let expected = 40 + 8 * record * (t + 1) * count;
        if buf.len() != expected {
            return Err(Error::Format(format!("buffer file has {} bytes, header implies {expected}", buf.len())));
        }
        let mut vals = buf[40..]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
        let mut out = Self::new(capacity);
        for _ in 0..count {
            let transitions = (0..=t)
                .map(|_| {
                    let o: Vec<T> = vals.by_ref().take(n).collect();
                    let a: Vec<T> = vals.by_ref().take(m).collect();
                    let da: Vec<T> = vals.by_ref().take(m).collect();
                    let c = vals.next().expect("length checked");
                    Transition { o, a, da, c }
                })
                .collect();
            out.push(Sequence::new(transitions)?)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, capacity: Option<usize>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf, capacity)
    }
}

const BUFFER_MAGIC: &[u8; 8] = b"LKBUFR01";
