//! Per-round run records.

/// State of a run after one communication round (or before the first, for `round == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean of the per-task objectives over all `m` tasks.
    pub avg_train_loss: f64,
    /// Certified epsilon after this round; `f64::INFINITY` once a noiseless release happened.
    pub epsilon_spent: f64,
    /// Per-task objective values `f_k`.
    pub task_objectives: Vec<f64>,
    pub avg_val_acc: Option<f64>,
    pub task_val_acc: Option<Vec<f64>>,
    /// Mean over tasks of the squared gradient norm of `f_k`, when recorded.
    pub avg_grad_norm_sq: Option<f64>,
}

impl RoundRecord {
    /// `B_t = max_k f_k`.
    pub fn max_objective(&self) -> f64 {
        self.task_objectives
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Round-by-round history of a run. `records` holds exactly `T` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub initial: RoundRecord,
    pub records: Vec<RoundRecord>,
}

impl RunTrace {
    pub fn new(initial: RoundRecord) -> Self {
        Self {
            initial,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: RoundRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> &RoundRecord {
        self.records.last().unwrap_or(&self.initial)
    }

    pub fn final_epsilon(&self) -> f64 {
        self.last().epsilon_spent
    }

    pub fn epsilon_nondecreasing(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].epsilon_spent <= w[1].epsilon_spent)
    }
}
