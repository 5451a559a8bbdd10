//! Optimization loop, validation-driven early stopping, metrics and
//! checkpoint persistence.

use std::io::{Read, Write};
use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowSolverConfig;
use crate::model::{ModelConfig, Sample, TwoStreamModel};
use crate::nn::ForwardCtx;
use crate::rng::{seeded, stream_id};
use crate::tensor::{Adam, AdamConfig, AdamState, ParamId, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Classifier-head dropout.
    pub dropout: f64,
    /// Shuffling and dropout seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 8,
            max_epochs: 200,
            patience: 10,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `logits[B×K]` whose argmax equals the label.
pub fn top1_accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::dim("top1_accuracy", s, &[labels.len()]));
    }
    if labels.is_empty() {
        return Err(Error::Input("top-1 accuracy of an empty set".into()));
    }
    let hits = logits
        .data()
        .chunks(s[1])
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    pub mean_loss: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    pub count: usize,
}

/// Eval-mode metrics over labelled samples.
pub fn evaluate(model: &TwoStreamModel, samples: &[Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Input("cannot evaluate an empty set".into()));
    }
    let k = model.config.num_classes;
    let labels = samples
        .iter()
        .map(|s| {
            s.label
                .filter(|&l| l < k)
                .ok_or_else(|| Error::Input(format!("sample {} has no valid label", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| model.logits(s))
        .collect::<Result<_>>()?;
    let logits = Tensor::new([samples.len(), k], rows.concat())?;
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, &labels)?;
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (row, &y) in logits.data().chunks(k).zip(&labels) {
        totals[y] += 1;
        hits[y] += usize::from(argmax(row) == y);
    }
    Ok(Metrics {
        top1: top1_accuracy(&logits, &labels)?,
        mean_loss: tape.value(loss).data()[0],
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect(),
        count: samples.len(),
    })
}

/// Patience counter over validation losses; an epoch improves only when its
/// loss is strictly below the best so far.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the loss of 1-based `epoch`; returns whether it was the best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_top1: f64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log entry serializes")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation-loss parameters and the optimizer state of that epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Last epoch run (1-based).
    pub epochs_run: usize,
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Trains `model` in place and leaves it holding the best-validation weights.
/// `on_epoch` sees every log entry and may end training early.
pub fn train(
    model: &mut TwoStreamModel,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and validation splits must be non-empty".into()));
    }
    if train_set.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "training split has {} clips, fewer than one batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    let k = model.config.num_classes;
    let labels = train_set
        .iter()
        .map(|s| {
            s.label
                .filter(|&l| l < k)
                .ok_or_else(|| Error::Input(format!("sample {} has no valid label", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(&model.store, cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<(Vec<Tensor>, Adam, usize)> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs_run = 0;
    let scale = 1.0 / cfg.batch_size as f64;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut seeded(cfg.seed, stream_id(&[SHUFFLE_STREAM, epoch as u64])));
        let mut loss_sum = 0.0;
        let batches = order.len() / cfg.batch_size;
        for (b, batch) in order.chunks_exact(cfg.batch_size).enumerate() {
            let model_ref = &*model;
            let results: Vec<(f64, Vec<(ParamId, Vec<f64>)>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut ctx = ForwardCtx::train(
                        cfg.seed,
                        stream_id(&[DROPOUT_STREAM, epoch as u64, b as u64, i as u64]),
                    );
                    let mut tape = Tape::new();
                    let logits = model_ref.forward(&mut tape, &train_set[i], cfg.dropout, &mut ctx)?;
                    let loss = tape.cross_entropy(logits, &[labels[i]])?;
                    let value = tape.value(loss).data()[0];
                    if !value.is_finite() {
                        return Ok((value, Vec::new()));
                    }
                    tape.backward(loss)?;
                    let grads = tape.param_grads().map(|(id, g)| (id, g.to_vec())).collect();
                    Ok((value, grads))
                })
                .collect::<Result<_>>()?;
            let batch_loss = results.iter().map(|r| r.0).sum::<f64>() * scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            model.store.zero_grads();
            for (_, grads) in &results {
                for (id, g) in grads {
                    model.store.add_grad(*id, g, scale);
                }
            }
            adam.step(&mut model.store)?;
            loss_sum += batch_loss;
        }
        let val = evaluate(model, val_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss: val.mean_loss,
            val_top1: val.top1,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_top1 {:.3}",
            entry.train_loss,
            entry.val_loss,
            entry.val_top1
        );
        if !entry.val_loss.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: batches,
                loss: entry.val_loss,
            });
        }
        if stopper.observe(epoch, entry.val_loss) {
            let values = model.store.iter().map(|(_, _, t)| t.detached()).collect();
            best = Some((values, adam.clone(), epoch));
        }
        let flow = on_epoch(&entry);
        log.push(entry);
        if flow.is_break() || stopper.should_stop() {
            break;
        }
    }

    let (values, best_adam, best_epoch) = best.expect("at least one epoch ran");
    for (id, v) in model.store.ids().collect::<Vec<_>>().into_iter().zip(&values) {
        model.store.get_mut(id).data_mut().copy_from_slice(v.data());
    }
    let checkpoint = Checkpoint::from_model(model, Some(&best_adam), best_epoch, stopper.best);
    Ok(TrainOutcome {
        checkpoint,
        log,
        epochs_run,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSVT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable snapshot of a model, optionally with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub flow: FlowSolverConfig,
    pub class_names: Vec<String>,
    pub params: Vec<(String, Tensor)>,
    pub adam: Option<Adam>,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    flow: FlowSolverConfig,
    class_names: Vec<String>,
    epoch: usize,
    best_val_loss: Option<f64>,
    adam: Option<AdamHeader>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of the values into the data section.
    offset: u64,
    /// Byte offsets of the first and second Adam moments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    moments: Option<[u64; 2]>,
}

impl Checkpoint {
    pub fn from_model(model: &TwoStreamModel, adam: Option<&Adam>, epoch: usize, best_val_loss: Option<f64>) -> Self {
        Checkpoint {
            model: model.config.clone(),
            flow: FlowSolverConfig::default(),
            class_names: Vec::new(),
            params: model
                .store
                .iter()
                .map(|(_, n, t)| (n.to_string(), t.detached()))
                .collect(),
            adam: adam.cloned(),
            epoch,
            best_val_loss,
        }
    }

    /// Rebuilds the model and loads the stored parameter values.
    pub fn to_model(&self) -> Result<TwoStreamModel> {
        let mut model = TwoStreamModel::new(&self.model)?;
        model
            .store
            .load_values(self.params.iter().map(|(n, t)| (n.as_str(), t)))?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blocks: Vec<u8> = Vec::new();
        let mut push = |data: &[f64]| {
            let offset = blocks.len() as u64;
            for v in data {
                blocks.extend_from_slice(&v.to_le_bytes());
            }
            offset
        };
        let mut entries: Vec<ParamEntry> = self
            .params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: push(t.data()),
                moments: None,
            })
            .collect();
        let adam = self.adam.as_ref().map(|a| {
            for (e, s) in entries.iter_mut().zip(&a.states) {
                e.moments = Some([push(&s.m), push(&s.v)]);
            }
            AdamHeader {
                config: a.states.first().map_or_else(AdamConfig::default, |s| s.config),
                step: a.steps(),
            }
        });
        let header = Header {
            model: self.model.clone(),
            flow: self.flow.clone(),
            class_names: self.class_names.clone(),
            epoch: self.epoch,
            best_val_loss: self.best_val_loss,
            adam,
            params: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + blocks.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blocks);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = word(8) as usize;
        let json = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        let data = &bytes[12 + hlen..];
        let read = |offset: u64, n: usize| -> Result<Vec<f64>> {
            let start = usize::try_from(offset).map_err(|_| bad("offset overflow".into()))?;
            let block = data
                .get(start..start + n * 8)
                .ok_or_else(|| bad(format!("block at {offset} runs past end of file")))?;
            Ok(block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut params = Vec::with_capacity(header.params.len());
        let mut states = Vec::new();
        for e in &header.params {
            let n: usize = e.shape.iter().product();
            params.push((e.name.clone(), Tensor::new(e.shape.clone(), read(e.offset, n)?)?));
            if let (Some(a), Some([m, v])) = (&header.adam, e.moments) {
                states.push(AdamState {
                    config: a.config,
                    m: read(m, n)?,
                    v: read(v, n)?,
                    t: a.step,
                });
            }
        }
        let adam = match header.adam {
            Some(_) if states.len() != params.len() => {
                return Err(bad("optimizer moments missing for some parameters".into()))
            }
            Some(_) => Some(Adam { states }),
            None => None,
        };
        Ok(Checkpoint {
            model: header.model,
            flow: header.flow,
            class_names: header.class_names,
            params,
            adam,
            epoch: header.epoch,
            best_val_loss: header.best_val_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top1_examples() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 3.0], vec![5.0, -1.0]]).unwrap();
        assert_eq!(top1_accuracy(&logits, &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&logits, &[1, 0, 1]).unwrap(), 0.0);
        assert!(top1_accuracy(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn constant_trace_stops_at_epoch_eleven() {
        let mut es = EarlyStopping::new(10);
        let mut stop = None;
        for epoch in 1..=200 {
            es.observe(epoch, 1.0);
            if es.should_stop() {
                stop = Some(epoch);
                break;
            }
        }
        assert_eq!(stop, Some(11));
        assert_eq!(es.best_epoch, 1);
    }

    #[test]
    fn improving_trace_never_stops() {
        let mut es = EarlyStopping::new(10);
        for epoch in 1..=200 {
            assert!(es.observe(epoch, 1.0 / epoch as f64));
            assert!(!es.should_stop());
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 300,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let err = serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(Checkpoint::from_bytes(b"NOPE\0\0\0\0\0\0\0\0"), Err(Error::Format(_))));
        let mut bytes = b"TSVT".to_vec();
        bytes.extend_from_slice(&7u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 7"), "{err}");
    }
}
