//! Training loop, evaluation metrics and comparison tables.

mod compare;
mod eval;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::BlockSample;
use crate::error::{Error, Result};
use crate::net::{init_params, ChromaNet, ModelConfig, ModelInput, Variant};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tensor};

pub use compare::{compare, Comparison, ComparisonRow, COMPARISON_HEADER};
pub use eval::{
    aggregate, evaluate, psnr, Aggregate, BlockRecord, EvalReport, MeanScores, ModeCounts, Predictor, Scores, PSNR_CAP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Seeds both initialization and batch shuffling.
    pub seed: u64,
    /// Validate every this many steps; 0 disables periodic validation.
    pub val_interval: usize,
    pub train_path: Option<String>,
    pub val_path: Option<String>,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            model: ModelConfig::new(variant),
            batch_size: 16,
            learning_rate: 1e-4,
            max_steps: 200_000,
            seed: 0,
            val_interval: 1000,
            train_path: None,
            val_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.model.validate()
    }

    /// Model configuration with the run seed applied.
    pub fn model_config(&self) -> ModelConfig {
        self.model.with_seed(self.seed)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub block_size: Option<usize>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (or the final ones when
    /// there is no validation set).
    pub best: ChromaNet<f32>,
    pub best_step: usize,
    pub last: ChromaNet<f32>,
    pub log: Vec<LogRecord>,
}

pub fn write_log(log: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in log {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

type Group = (Vec<ModelInput<f32>>, Vec<Tensor<f32>>);

/// Network inputs and targets for a set of blocks, grouped by block side.
pub struct PreparedSet {
    groups: BTreeMap<usize, Group>,
}

impl PreparedSet {
    pub fn new(variant: Variant, samples: &[BlockSample]) -> Result<Self> {
        let mut groups: BTreeMap<usize, (Vec<_>, Vec<_>)> = BTreeMap::new();
        for s in samples {
            let g = groups.entry(s.n).or_default();
            g.0.push(ModelInput::from_sample(variant, s)?);
            g.1.push(s.target());
        }
        Ok(Self { groups })
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(|g| g.0.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean per-block loss over the whole set.
    pub fn mean_loss(&self, net: &ChromaNet<f32>, chunk: usize) -> Result<f64> {
        let mut total = 0.0;
        for (inputs, targets) in self.groups.values() {
            for (xs, ts) in inputs.chunks(chunk).zip(targets.chunks(chunk)) {
                total += net.loss(xs, ts)? as f64 * xs.len() as f64;
            }
        }
        Ok(total / self.len() as f64)
    }
}

/// Cycles through block sizes; within a size, walks a seeded permutation
/// and reshuffles when it runs out.
struct BatchSampler {
    sizes: Vec<usize>,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    turn: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(set: &PreparedSet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c);
        let sizes: Vec<usize> = set.groups.keys().copied().collect();
        let orders = set
            .groups
            .values()
            .map(|g| {
                let mut o: Vec<usize> = (0..g.0.len()).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        Self {
            cursors: vec![0; sizes.len()],
            sizes,
            orders,
            turn: 0,
            rng,
        }
    }

    fn next(&mut self, batch: usize) -> (usize, Vec<usize>) {
        let g = self.turn % self.sizes.len();
        self.turn += 1;
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if self.cursors[g] == self.orders[g].len() {
                self.orders[g].shuffle(&mut self.rng);
                self.cursors[g] = 0;
            }
            picked.push(self.orders[g][self.cursors[g]]);
            self.cursors[g] += 1;
        }
        (self.sizes[g], picked)
    }
}

pub fn train(config: &TrainConfig, train_set: &[BlockSample], val_set: &[BlockSample]) -> Result<TrainOutcome> {
    train_with(config, train_set, val_set, |_| {})
}

/// [`train`] with a callback invoked for every log record as it is produced.
pub fn train_with(
    config: &TrainConfig,
    train_set: &[BlockSample],
    val_set: &[BlockSample],
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let variant = config.model.variant;
    let train_data = PreparedSet::new(variant, train_set)?;
    let val_data = PreparedSet::new(variant, val_set)?;

    let model_cfg = config.model_config();
    let mut net = ChromaNet::new(model_cfg, init_params(&model_cfg)?)?;
    let adam_cfg = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, net.params.tensors());
    let mut sampler = BatchSampler::new(&train_data, config.seed);
    let mut log = Vec::new();
    let mut emit = |r: LogRecord, log: &mut Vec<LogRecord>| {
        on_log(&r);
        log.push(r);
    };

    let eval_chunk = 64;
    let mut best = (f64::INFINITY, 0usize, net.clone());
    if !val_data.is_empty() {
        let v = val_data.mean_loss(&net, eval_chunk)?;
        best = (v, 0, net.clone());
        emit(
            LogRecord {
                step: 0,
                block_size: None,
                train_loss: None,
                val_loss: Some(v),
            },
            &mut log,
        );
    }

    for step in 1..=config.max_steps {
        let (n, idx) = sampler.next(config.batch_size);
        let (inputs, targets) = &train_data.groups[&n];
        let xs: Vec<ModelInput<f32>> = idx.iter().map(|&i| inputs[i].clone()).collect();
        let ts: Vec<Tensor<f32>> = idx.iter().map(|&i| targets[i].clone()).collect();
        let (loss, grads) = net.loss_and_grads(&xs, &ts)?;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at step {step} (loss {loss})"
            )));
        }
        adam_step(net.params.tensors_mut(), grads.tensors(), &mut adam)?;

        let validate = !val_data.is_empty()
            && ((config.val_interval > 0 && step % config.val_interval == 0) || step == config.max_steps);
        let val_loss = if validate {
            let v = val_data.mean_loss(&net, eval_chunk)?;
            if v < best.0 {
                best = (v, step, net.clone());
            }
            Some(v)
        } else {
            None
        };
        emit(
            LogRecord {
                step,
                block_size: Some(n),
                train_loss: Some(loss as f64),
                val_loss,
            },
            &mut log,
        );
    }

    let (best_net, best_step) = if val_data.is_empty() {
        (net.clone(), config.max_steps)
    } else {
        (best.2, best.1)
    };
    Ok(TrainOutcome {
        best: best_net,
        best_step,
        last: net,
        log,
    })
}
