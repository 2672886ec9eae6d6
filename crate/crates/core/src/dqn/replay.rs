use ndarray::Array2;
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f64,
    /// Recorded even when `done`; masked out of the target.
    pub next_obs: Vec<f32>,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct Slot {
    t: Transition,
    /// Global insertion number.
    seq: u64,
    episode: u64,
}

/// Ring buffer of transitions tagged with their episode, so sequences can be
/// drawn without crossing episode boundaries.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Slot>,
    pushed: u64,
}

/// Sampled transitions; rows are time-major (`t * batch + b`) with
/// `steps == 1` for plain transition batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    pub batch: usize,
    pub steps: usize,
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Padding rows past the end of a short episode are false.
    pub mask: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition, episode: u64) {
        let slot = Slot {
            t,
            seq: self.pushed,
            episode,
        };
        let i = (self.pushed % self.capacity as u64) as usize;
        if self.slots.len() < self.capacity {
            self.slots.push(slot);
        } else {
            self.slots[i] = slot;
        }
        self.pushed += 1;
    }

    fn obs_len(&self) -> usize {
        self.slots.first().map_or(0, |s| s.t.obs.len())
    }

    fn check(&self, batch: usize) -> Result<()> {
        if self.slots.is_empty() || batch == 0 {
            return Err(Error::Usage("sampling from an empty replay buffer".into()));
        }
        Ok(())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<ReplayBatch> {
        self.check(batch)?;
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.slots.len())).collect();
        Ok(self.assemble(&idx.iter().map(|&i| Some(i)).collect::<Vec<_>>(), batch, 1))
    }

    /// `batch` sequences of up to `seq_len` consecutive steps of one episode,
    /// each starting at a uniformly drawn stored step; shorter sequences are
    /// padded and masked.
    pub fn sample_sequences<R: Rng + ?Sized>(&self, batch: usize, seq_len: usize, rng: &mut R) -> Result<ReplayBatch> {
        self.check(batch)?;
        let mut table = vec![None; batch * seq_len];
        for b in 0..batch {
            let mut i = rng.random_range(0..self.slots.len());
            table[b] = Some(i);
            for t in 1..seq_len {
                let cur = &self.slots[i];
                if cur.t.done {
                    break;
                }
                let j = (i + 1) % self.capacity;
                match self.slots.get(j) {
                    Some(next) if next.seq == cur.seq + 1 && next.episode == cur.episode => {
                        table[t * batch + b] = Some(j);
                        i = j;
                    }
                    _ => break,
                }
            }
        }
        Ok(self.assemble(&table, batch, seq_len))
    }

    /// Episode ids of the rows of a sequence draw (tests and diagnostics).
    pub fn episode_of(&self, slot: usize) -> u64 {
        self.slots[slot].episode
    }

    fn assemble(&self, table: &[Option<usize>], batch: usize, steps: usize) -> ReplayBatch {
        let n = table.len();
        let len = self.obs_len();
        let mut out = ReplayBatch {
            batch,
            steps,
            obs: Array2::zeros((n, len)),
            next_obs: Array2::zeros((n, len)),
            actions: vec![0; n],
            rewards: vec![0.0; n],
            dones: vec![true; n],
            mask: vec![false; n],
        };
        for (r, slot) in table.iter().enumerate() {
            let Some(i) = *slot else { continue };
            let t = &self.slots[i].t;
            for (d, s) in out.obs.row_mut(r).iter_mut().zip(&t.obs) {
                *d = f64::from(*s);
            }
            for (d, s) in out.next_obs.row_mut(r).iter_mut().zip(&t.next_obs) {
                *d = f64::from(*s);
            }
            out.actions[r] = t.action;
            out.rewards[r] = t.reward;
            out.dones[r] = t.done;
            out.mask[r] = true;
        }
        out
    }
}
