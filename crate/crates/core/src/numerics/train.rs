//! Mini-batch training loop shared by the touch and slip tasks.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::{cross_entropy, softmax_rows};
use super::network::{Mode, Network};
use super::rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// How long a training run may go on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Steps(u64),
    WallClock(#[serde(with = "duration_ms")] Duration),
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Fixed-shape samples with integer labels, stored contiguously.
#[derive(Clone, Debug)]
pub struct SampleSet {
    sample_shape: Vec<usize>,
    data: Vec<f32>,
    labels: Vec<usize>,
}

impl SampleSet {
    pub fn new(sample_shape: Vec<usize>) -> Self {
        SampleSet {
            sample_shape,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn with_capacity(sample_shape: Vec<usize>, n: usize) -> Self {
        let per: usize = sample_shape.iter().product();
        SampleSet {
            sample_shape,
            data: Vec::with_capacity(per * n),
            labels: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, sample: &[f32], label: usize) -> Result<()> {
        if sample.len() != self.sample_len() {
            return Err(Error::Shape(format!(
                "sample of {} values does not fit shape {:?}",
                sample.len(),
                self.sample_shape
            )));
        }
        self.data.extend_from_slice(sample);
        self.labels.push(label);
        Ok(())
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.sample_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Stacks the selected samples into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(shape, data)?, labels))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub budget: Budget,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub wall_ms: f64,
}

/// Class decision and the softmax mass of that class. Ties go to the lower
/// class index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub certainty: f64,
}

pub fn decide(probabilities: &[f64]) -> Prediction {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    Prediction {
        class: best,
        certainty: probabilities[best],
    }
}

/// Trains on `indices` of `data` until the budget runs out. Each epoch walks
/// the training indices in a freshly seeded shuffle.
pub fn train_classifier(
    network: &mut Network,
    data: &SampleSet,
    indices: &[usize],
    options: &TrainOptions,
) -> Result<TrainLog> {
    if options.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if indices.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let start = Instant::now();
    let mut adam = AdamState::for_network(network, options.learning_rate);
    let mut order = indices.to_vec();
    let mut shuffle = rng::stream(options.seed, 0x5348);
    let mut log = TrainLog {
        epochs: Vec::new(),
        steps: 0,
        wall_ms: 0.0,
    };
    let exhausted = |steps: u64| match options.budget {
        Budget::Steps(n) => steps >= n,
        Budget::WallClock(d) => start.elapsed() >= d,
    };
    'outer: for epoch in 0.. {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut correct, mut seen, mut batches) = (0.0, 0usize, 0usize, 0u64);
        for chunk in order.chunks(options.batch_size) {
            if exhausted(log.steps) {
                if batches > 0 {
                    log.epochs.push(epoch_stats(epoch, log.steps, loss_sum, batches, correct, seen));
                }
                break 'outer;
            }
            let (batch, labels) = data.batch(chunk)?;
            let (logits, tape) = network.forward(&batch, Mode::Train)?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            for (probs, &label) in softmax_rows(&logits).iter().zip(&labels) {
                if decide(probs).class == label {
                    correct += 1;
                }
            }
            seen += labels.len();
            loss_sum += loss;
            batches += 1;
            let grads = network.backward(&tape, &grad)?;
            network.commit_batch_statistics(&tape)?;
            drop(tape);
            network.apply_adam(&grads, &mut adam)?;
            log.steps += 1;
        }
        log.epochs.push(epoch_stats(epoch, log.steps, loss_sum, batches, correct, seen));
    }
    log.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(log)
}

fn epoch_stats(epoch: usize, steps: u64, loss_sum: f64, batches: u64, correct: usize, seen: usize) -> EpochStats {
    EpochStats {
        epoch,
        steps,
        mean_loss: loss_sum / batches.max(1) as f64,
        accuracy: correct as f64 / seen.max(1) as f64,
    }
}

/// Eval-mode predictions for the selected samples.
pub fn predict(network: &Network, data: &SampleSet, indices: &[usize], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, _) = data.batch(chunk)?;
        let logits = network.infer(&batch)?;
        out.extend(softmax_rows(&logits).iter().map(|p| decide(p)));
    }
    Ok(out)
}

pub fn accuracy(network: &Network, data: &SampleSet, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Dataset("cannot evaluate on zero samples".into()));
    }
    let preds = predict(network, data, indices, 32)?;
    let correct = preds
        .iter()
        .zip(indices)
        .filter(|(p, &i)| p.class == data.labels()[i])
        .count();
    Ok(correct as f64 / indices.len() as f64)
}
