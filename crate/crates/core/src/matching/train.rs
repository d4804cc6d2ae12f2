//! Inference-stage training: SGD with momentum and weight decay, a
//! validation-loss plateau schedule and per-epoch checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use voxface_nn::checkpoint;
use voxface_nn::optim::{PlateauAction, PlateauScheduler, Sgd};
use voxface_nn::{Binder, Tape, Tensor};

use super::{materialize_batch, matching_loss, EmbeddingCache, Encoders};
use crate::data_pipeline::{derive_seed, Dataset, Mode, Splits};
use crate::encoders::{EncoderPair, SPEECH_PREFIX};
use crate::error::{Error, Result};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_STATE: &str = "train_state.ckpt";
const STATE_KIND: &str = "inference_state";
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceTrainConfig {
    pub mode: Mode,
    pub k: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub patience_epochs: usize,
    pub max_decays: usize,
    /// Hard cap in case the schedule never stops training.
    pub max_epochs: usize,
    /// Keep the speech encoder at its initial weights.
    pub freeze_speech: bool,
    pub seed: u64,
}

impl Default for InferenceTrainConfig {
    fn default() -> Self {
        Self::for_mode(Mode::VoiceToFace)
    }
}

impl InferenceTrainConfig {
    /// Defaults with the mode-specific batch size (32 for V-F, 12 for F-V).
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            k: 10,
            batch_size: match mode {
                Mode::VoiceToFace => 32,
                Mode::FaceToVoice => 12,
            },
            lr_init: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_factor: 10.0,
            patience_epochs: 1,
            max_decays: 3,
            max_epochs: 100,
            freeze_speech: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 2 {
            return bad("K must be at least 2");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience_epochs == 0 || self.max_decays == 0 {
            return bad("batch_size, max_epochs, patience_epochs and max_decays must be positive");
        }
        if !(self.lr_init > 0.0 && self.decay_factor > 1.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return bad("lr_init must be positive, decay_factor above 1, momentum and weight_decay non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// K-way validation accuracy.
    pub val_acc: f64,
    pub val_acc_2: f64,
}

#[derive(Clone, Debug)]
pub struct InferenceTrainOutcome {
    pub encoders: EncoderPair,
    pub log: Vec<LogEntry>,
    /// True when the plateau schedule ended training.
    pub stopped_by_schedule: bool,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    next_epoch: usize,
    scheduler: PlateauScheduler,
    stopped: bool,
}

fn save_state(path: &Path, enc: &EncoderPair, sgd: &Sgd<f32>, meta: &StateMeta) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor<f32>)> = enc.store.iter().map(|(_, p)| (p.name.clone(), p.value.as_ref())).collect();
    for (id, p) in enc.store.iter() {
        if let Some(Some(v)) = sgd.velocity().get(id.0) {
            tensors.push((format!("{VELOCITY_PREFIX}{}", p.name), v));
        }
    }
    let meta = serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?;
    checkpoint::save(path, STATE_KIND, &serde_json::Value::Null, &meta, &tensors)?;
    Ok(())
}

fn load_state(path: &Path, enc: &mut EncoderPair, sgd: &mut Sgd<f32>) -> Result<StateMeta> {
    let ckpt = checkpoint::load(path)?;
    ckpt.expect_kind(STATE_KIND)?;
    let meta: StateMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| voxface_nn::NnError::Malformed(format!("training state metadata: {e}")))?;
    let mut velocity = vec![None; enc.store.len()];
    let ids: Vec<_> = enc.store.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
    for (id, name, shape) in ids {
        let t = ckpt.tensor::<f32>(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(voxface_nn::NnError::ArchMismatch(format!("`{name}` changed shape")).into());
        }
        enc.store.set(id, t);
        let vname = format!("{VELOCITY_PREFIX}{name}");
        if ckpt.tensors.iter().any(|(n, _, _)| *n == vname) {
            velocity[id.0] = Some(ckpt.tensor::<f32>(&vname)?);
        }
    }
    sgd.set_velocity(velocity);
    Ok(meta)
}

fn write_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for e in log {
        let line = serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// Trains both encoders on the train split, validating on the persisted
/// validation examples after every epoch. With `resume`, continues from the
/// state saved in `out_dir`.
pub fn train_inference(
    cfg: &InferenceTrainConfig,
    mut enc: EncoderPair,
    ds: &Dataset,
    splits: &Splits,
    out_dir: &Path,
    resume: bool,
) -> Result<InferenceTrainOutcome> {
    cfg.validate()?;
    let train_pool = ds.resolve(&splits.train)?;
    if train_pool.is_empty() || splits.val.is_empty() || splits.val_examples.is_empty() {
        return Err(Error::Config("train and validation splits must both be non-empty".into()));
    }
    let k_val = cfg.k.min(splits.val_k);
    let val_k = splits.val_examples(ds, cfg.mode, k_val)?;
    let val_2 = splits.val_examples(ds, cfg.mode, 2)?;
    if val_k.is_empty() {
        return Err(Error::Config(format!("no {} validation examples in the splits", cfg.mode)));
    }
    ds.check_kway(&train_pool, cfg.k)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    enc.store.set_trainable(SPEECH_PREFIX, !cfg.freeze_speech);
    let mut sgd = Sgd::new(cfg.lr_init, cfg.momentum, cfg.weight_decay);
    let mut sched = PlateauScheduler::new(cfg.lr_init, cfg.decay_factor, cfg.patience_epochs, cfg.max_decays);
    let (state_path, log_path) = (out_dir.join(TRAIN_STATE), out_dir.join(TRAIN_LOG));
    let mut log = Vec::new();
    let mut start = 0;
    let mut stopped = false;
    if resume {
        let meta = load_state(&state_path, &mut enc, &mut sgd)?;
        sched = meta.scheduler;
        start = meta.next_epoch;
        stopped = meta.stopped;
        log = read_log(&log_path)?;
        log.retain(|e| e.epoch < start);
    }

    let mut epoch = start;
    while !stopped && epoch < cfg.max_epochs {
        sgd.lr = sched.lr;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64]));
        let examples = ds.epoch_examples(&train_pool, cfg.k, cfg.mode, &mut rng)?;
        let mut total = 0.0;
        for chunk in examples.chunks(cfg.batch_size) {
            let batch = materialize_batch::<f32>(ds, chunk, true, &mut rng)?;
            let (grads, updates, loss) = {
                let tape = Tape::new();
                let binder = Binder::new(&tape, &enc.store, true);
                let frozen = cfg.freeze_speech.then(|| Binder::frozen(&tape, &enc.store, false));
                let encs = Encoders {
                    speech: &enc.speech,
                    face: &enc.face,
                };
                let loss = matching_loss(encs, &binder, frozen.as_ref(), &batch)?;
                let value = loss.item();
                let grads = binder.grads(&tape.backward(loss));
                (grads, binder.take_updates(), value)
            };
            if !loss.is_finite() {
                return Err(Error::InvalidInput(format!("training loss became non-finite at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            sgd.step(&mut enc.store, &grads);
            enc.store.apply_updates(updates);
        }
        let encs = Encoders {
            speech: &enc.speech,
            face: &enc.face,
        };
        let items: Vec<_> = val_k.iter().flat_map(|e| std::iter::once(e.anchor).chain(e.candidates.iter().copied())).collect();
        let cache = EmbeddingCache::build(encs, &enc.store, ds, &items)?;
        let (val_loss, val_acc) = cache.loss_and_accuracy(&val_k)?;
        let (_, val_acc_2) = cache.loss_and_accuracy(&val_2)?;
        log.push(LogEntry {
            epoch,
            lr: sgd.lr,
            train_loss: total / examples.len() as f64,
            val_loss,
            val_acc,
            val_acc_2,
        });
        stopped = sched.observe(val_loss) == PlateauAction::Stop;
        epoch += 1;
        let meta = StateMeta {
            next_epoch: epoch,
            scheduler: sched.clone(),
            stopped,
        };
        save_state(&state_path, &enc, &sgd, &meta)?;
        write_log(&log_path, &log)?;
        enc.save(out_dir, &json!({ "mode": cfg.mode, "k": cfg.k, "epochs": epoch }))?;
    }
    Ok(InferenceTrainOutcome {
        encoders: enc,
        log,
        stopped_by_schedule: stopped,
    })
}
