use ndarray::{Array1, Array2};
use rand::Rng;

/// One environment interaction. `action` is the raw policy output, before the
/// environment's smoothing filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Cuts bootstrapping. Horizon truncation does not set this.
    pub done: bool,
}

/// Mini-batch laid out row-per-sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[Transition]) -> Self {
        let b = items.len();
        let od = items[0].obs.len();
        let ad = items[0].action.len();
        Self {
            obs: Array2::from_shape_fn((b, od), |(i, j)| items[i].obs[j]),
            actions: Array2::from_shape_fn((b, ad), |(i, j)| items[i].action[j]),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_obs: Array2::from_shape_fn((b, od), |(i, j)| items[i].next_obs[j]),
            dones: items.iter().map(|t| f64::from(u8::from(t.done))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring of transitions, stored column-wise in flat vectors.
/// Storage grows lazily up to the capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<f64>,
    len: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            len: 0,
            cursor: 0,
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

    pub fn push(&mut self, t: &Transition) {
        assert_eq!(t.obs.len(), self.obs_dim);
        assert_eq!(t.next_obs.len(), self.obs_dim);
        assert_eq!(t.action.len(), self.act_dim);
        let done = f64::from(u8::from(t.done));
        if self.len < self.capacity && self.cursor == self.len {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.dones.push(done);
        } else {
            let i = self.cursor;
            let (od, ad) = (self.obs_dim, self.act_dim);
            self.obs[i * od..(i + 1) * od].copy_from_slice(&t.obs);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_obs[i * od..(i + 1) * od].copy_from_slice(&t.next_obs);
            self.dones[i] = done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn get(&self, i: usize) -> Transition {
        assert!(i < self.len);
        let (od, ad) = (self.obs_dim, self.act_dim);
        Transition {
            obs: self.obs[i * od..(i + 1) * od].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * od..(i + 1) * od].to_vec(),
            done: self.dones[i] != 0.0,
        }
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.len)).collect()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (od, ad) = (self.obs_dim, self.act_dim);
        let b = idx.len();
        let mut obs = Array2::zeros((b, od));
        let mut next = Array2::zeros((b, od));
        let mut act = Array2::zeros((b, ad));
        for (r, &i) in idx.iter().enumerate() {
            obs.row_mut(r)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.obs[i * od..(i + 1) * od]);
            next.row_mut(r)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.next_obs[i * od..(i + 1) * od]);
            act.row_mut(r)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.actions[i * ad..(i + 1) * ad]);
        }
        Batch {
            obs,
            actions: act,
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: next,
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(batch, rng);
        self.gather(&idx)
    }
}
