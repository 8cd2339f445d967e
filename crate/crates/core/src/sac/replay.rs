//! Fixed-capacity FIFO replay buffer.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::Archive;
use crate::nn::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Terminal only; truncation is not stored as done.
    pub done: bool,
    pub context_id: usize,
}

#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub obs: Tensor<F>,
    pub action: Tensor<F>,
    pub reward: Tensor<F>,
    pub next_obs: Tensor<F>,
    pub done: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<F> {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<F>,
    action: Vec<F>,
    reward: Vec<F>,
    next_obs: Vec<F>,
    done: Vec<F>,
    context: Vec<u64>,
    len: usize,
    /// Slot the next push writes.
    head: usize,
}

impl<F: Real> ReplayBuffer<F> {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            obs_dim,
            act_dim,
            obs: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
            context: Vec::new(),
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::ShapeMismatch(format!(
                "transition dims ({}, {}, {}), buffer expects ({}, {})",
                t.obs.len(),
                t.action.len(),
                t.next_obs.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if !t.reward.is_finite() {
            return Err(Error::NonFiniteLoss(format!("reward {}", t.reward)));
        }
        let conv = |v: &[f64]| v.iter().map(|&x| F::c(x)).collect::<Vec<_>>();
        let d = F::c(if t.done { 1.0 } else { 0.0 });
        if self.len < self.capacity {
            self.obs.extend(conv(&t.obs));
            self.action.extend(conv(&t.action));
            self.next_obs.extend(conv(&t.next_obs));
            self.reward.push(F::c(t.reward));
            self.done.push(d);
            self.context.push(t.context_id as u64);
            self.len += 1;
        } else {
            let i = self.head;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[i * o..(i + 1) * o].copy_from_slice(&conv(&t.obs));
            self.action[i * a..(i + 1) * a].copy_from_slice(&conv(&t.action));
            self.next_obs[i * o..(i + 1) * o].copy_from_slice(&conv(&t.next_obs));
            self.reward[i] = F::c(t.reward);
            self.done[i] = d;
            self.context[i] = t.context_id as u64;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Slot indices in insertion order, oldest first.
    pub fn order(&self) -> Vec<usize> {
        if self.len < self.capacity {
            (0..self.len).collect()
        } else {
            (0..self.capacity).map(|k| (self.head + k) % self.capacity).collect()
        }
    }

    pub fn reward_at(&self, slot: usize) -> F {
        self.reward[slot]
    }

    pub fn context_at(&self, slot: usize) -> usize {
        self.context[slot] as usize
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Batch<F>> {
        if batch > self.len || batch == 0 {
            return Err(Error::Config(format!(
                "cannot sample {batch} transitions from {}",
                self.len
            )));
        }
        let idx = index::sample(rng, self.len, batch);
        Ok(self.gather(&idx.into_vec()))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch<F> {
        let (o, a) = (self.obs_dim, self.act_dim);
        let b = idx.len();
        let pick = |src: &[F], w: usize| Tensor::from_fn(b, w, |r, c| src[idx[r] * w + c]);
        Batch {
            obs: pick(&self.obs, o),
            action: pick(&self.action, a),
            reward: pick(&self.reward, 1),
            next_obs: pick(&self.next_obs, o),
            done: pick(&self.done, 1),
        }
    }

    pub fn save_to(&self, ar: &mut Archive, prefix: &str) {
        ar.put_u64(
            &format!("{prefix}/meta"),
            &[
                self.capacity as u64,
                self.obs_dim as u64,
                self.act_dim as u64,
                self.len as u64,
                self.head as u64,
            ],
        );
        ar.put_real(&format!("{prefix}/obs"), vec![self.len, self.obs_dim], &self.obs);
        ar.put_real(&format!("{prefix}/action"), vec![self.len, self.act_dim], &self.action);
        ar.put_real(&format!("{prefix}/reward"), vec![self.len], &self.reward);
        ar.put_real(&format!("{prefix}/next_obs"), vec![self.len, self.obs_dim], &self.next_obs);
        ar.put_real(&format!("{prefix}/done"), vec![self.len], &self.done);
        ar.put_u64(&format!("{prefix}/context"), &self.context);
    }

    pub fn load_from(ar: &Archive, prefix: &str) -> Result<Self> {
        let m = ar.get_u64(&format!("{prefix}/meta"))?;
        if m.len() != 5 {
            return Err(Error::BadCheckpoint("replay buffer header".into()));
        }
        let buf = Self {
            capacity: m[0] as usize,
            obs_dim: m[1] as usize,
            act_dim: m[2] as usize,
            len: m[3] as usize,
            head: m[4] as usize,
            obs: ar.get_real(&format!("{prefix}/obs"))?.1,
            action: ar.get_real(&format!("{prefix}/action"))?.1,
            reward: ar.get_real(&format!("{prefix}/reward"))?.1,
            next_obs: ar.get_real(&format!("{prefix}/next_obs"))?.1,
            done: ar.get_real(&format!("{prefix}/done"))?.1,
            context: ar.get_u64(&format!("{prefix}/context"))?,
        };
        if buf.obs.len() != buf.len * buf.obs_dim || buf.reward.len() != buf.len {
            return Err(Error::BadCheckpoint("replay buffer sizes".into()));
        }
        Ok(buf)
    }
}
