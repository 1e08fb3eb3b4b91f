//! Double DQN: MLP Q-network, replay memory, epsilon-greedy selection and
//! Adam updates.

mod mlp;
mod replay;

use std::io::Write;

use ndarray::Array2;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{Adam, AdamParams, Gradients, Mlp, Trace};
pub use replay::{ReplayMemory, Transition};

use crate::error::LearnError;
use crate::netmodel::{ActionSet, NUM_ACTIONS};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Closed transitions between training steps.
    pub c_policy: usize,
    /// Training steps between target synchronizations.
    pub c_target: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Multiplied into epsilon after every episode.
    pub epsilon_decay: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            hidden: vec![512, 256, 128],
            learning_rate: 2.5e-4,
            gamma: 0.95,
            batch_size: 64,
            c_policy: 20,
            c_target: 2000,
            replay_capacity: 50_000,
            epsilon_start: 1.0,
            epsilon_min: 0.01,
            epsilon_decay: 0.99,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |what: &str| Err(LearnError::InvalidShape(what.to_string()));
        if self.hidden.contains(&0) {
            return bad("hidden layer of width 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.c_policy == 0 || self.c_target == 0 || self.replay_capacity < self.batch_size {
            return bad("batch_size, c_policy, c_target must be positive and replay_capacity >= batch_size");
        }
        if !(0.0 < self.epsilon_min && self.epsilon_min <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("need 0 < epsilon_min <= epsilon_start <= 1");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay must lie in (0, 1]");
        }
        Ok(())
    }

    /// Exploration rate for a zero-based episode index.
    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_min)
    }

    pub fn layer_sizes(&self, d_in: usize) -> Vec<usize> {
        std::iter::once(d_in).chain(self.hidden.iter().copied()).chain(std::iter::once(NUM_ACTIONS)).collect()
    }
}

/// Index of the largest admissible entry; lowest index on ties.
pub fn masked_argmax<S: Scalar>(q: &[S], mask: ActionSet) -> Result<usize, LearnError> {
    let mut best: Option<(usize, S)> = None;
    for a in mask.iter().filter(|&a| a < q.len()) {
        match best {
            Some((_, v)) if q[a] <= v => {}
            _ => best = Some((a, q[a])),
        }
    }
    best.map(|(a, _)| a).ok_or(LearnError::EmptyMask)
}

/// Epsilon-greedy over the admissible entries only.
pub fn select_action<S: Scalar, R: Rng + ?Sized>(q: &[S], mask: ActionSet, epsilon: f64, rng: &mut R) -> Result<usize, LearnError> {
    if mask.is_empty() {
        return Err(LearnError::EmptyMask);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return mask.iter().choose(rng).ok_or(LearnError::EmptyMask);
    }
    masked_argmax(q, mask)
}

fn stack<S: Scalar>(rows: impl ExactSizeIterator<Item = impl AsRef<[S]>>, width: usize) -> Result<Array2<S>, LearnError> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        let r = r.as_ref();
        if r.len() != width {
            return Err(LearnError::DimensionMismatch { expected: width, got: r.len() });
        }
        data.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((n, width), data).expect("rows have equal width"))
}

/// Double DQN targets: the online net picks the admissible argmax in
/// `s_next`, the target net evaluates it.
pub fn ddqn_targets<S: Scalar>(batch: &[&Transition<S>], online: &Mlp<S>, target: &Mlp<S>, gamma: S) -> Result<Vec<S>, LearnError> {
    let next = stack(batch.iter().map(|t| &t.s_next), online.input_dim())?;
    let q_online = online.forward(next.view())?;
    let q_target = target.forward(next.view())?;
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                return Ok(t.r);
            }
            let row = q_online.row(i);
            let a = masked_argmax(row.as_slice().expect("standard layout"), t.next_mask)?;
            Ok(t.r + gamma * q_target[[i, a]])
        })
        .collect()
}

/// Online/target pair with its own replay memory, optimizer and sampling stream.
#[derive(Clone, Debug)]
pub struct DoubleDqn<S> {
    pub online: Mlp<S>,
    pub target: Mlp<S>,
    pub memory: ReplayMemory<S>,
    adam: Adam<S>,
    config: TrainerConfig,
    rng: ChaCha8Rng,
    train_steps: u64,
    closed: u64,
}

impl<S: Scalar> DoubleDqn<S> {
    pub fn new(d_in: usize, config: TrainerConfig, seed: u64) -> Result<Self, LearnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(&config.layer_sizes(d_in), &mut rng)?;
        Ok(Self::from_network(online, config, rng))
    }

    pub fn from_network(online: Mlp<S>, config: TrainerConfig, rng: ChaCha8Rng) -> Self {
        let adam = Adam::new(&online, AdamParams { lr: config.learning_rate, ..AdamParams::default() });
        DoubleDqn {
            target: online.clone(),
            memory: ReplayMemory::new(config.replay_capacity),
            online,
            adam,
            config,
            rng,
            train_steps: 0,
            closed: 0,
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.online.input_dim()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn q_values(&self, s: &[S]) -> Result<Vec<S>, LearnError> {
        self.online.forward_one(s)
    }

    /// One minibatch gradient step; syncs the target every `c_target` steps.
    pub fn train_step(&mut self) -> Result<S, LearnError> {
        let batch = self.memory.sample(self.config.batch_size, &mut self.rng)?;
        let gamma = S::of(self.config.gamma);
        let y = ddqn_targets(&batch, &self.online, &self.target, gamma)?;
        let x = stack(batch.iter().map(|t| &t.s), self.online.input_dim())?;
        let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();
        let (loss, grads) = self.online.selected_mse(x.view(), &actions, &y)?;
        self.adam.step(&mut self.online, &grads);
        self.train_steps += 1;
        if self.train_steps % self.config.c_target as u64 == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }

    /// Store a closed transition. Every `c_policy` closed transitions a
    /// training step runs (once the memory holds a batch); its loss is returned.
    pub fn observe(&mut self, t: Transition<S>) -> Result<Option<S>, LearnError> {
        if t.s.len() != self.input_dim() || t.s_next.len() != self.input_dim() {
            return Err(LearnError::DimensionMismatch { expected: self.input_dim(), got: t.s.len().max(t.s_next.len()) });
        }
        self.memory.push(t);
        self.closed += 1;
        if self.closed % self.config.c_policy as u64 == 0 && self.memory.len() >= self.config.batch_size {
            return self.train_step().map(Some);
        }
        Ok(None)
    }
}

/// `step,loss` rows.
pub fn write_loss_csv<W: Write>(losses: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,loss")?;
    for (k, l) in losses.iter().enumerate() {
        writeln!(out, "{},{}", k + 1, crate::mesosim::fmt_g6(*l))?;
    }
    Ok(())
}
