//! Alternating GAN optimization with Adam, R1 on real faces and periodic
//! sample grids.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use voxface_nn::optim::Adam;
use voxface_nn::{Binder, ParamStore, Tape, Tensor, Var};

use super::discriminator::{d_loss, g_loss, r1_penalty_with_grads, relid_scores, Condition, Discriminator};
use super::generator::{stack_rows, Generator, GeneratorArch, Z_DIM};
use super::model::{GanModel, DiscriminatorArch, DISCRIMINATOR_KIND, GENERATOR_KIND, GEN_PREFIX};
use crate::data_pipeline::{derive_seed, mosaic, write_png, Dataset, FaceImage, ItemRef};
use crate::encoders::{
    save_prefixed, stack_faces, stack_waves, EncoderPair, FaceEncoderArch, SpeechEncoder, SpeechEncoderArch, FACE_PREFIX,
    SPEECH_KIND, SPEECH_PREFIX,
};
use crate::error::{Error, Result};

pub const GAN_LOG: &str = "gan_log.jsonl";
pub const SAMPLES_DIR: &str = "samples";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub d_steps_per_g: usize,
    pub r1_gamma: f64,
    /// Apply R1 on every n-th discriminator step.
    pub r1_every: usize,
    /// Generator updates.
    pub max_iters: usize,
    /// Add the mismatched-identity term to the relativistic scores.
    pub use_mismatched_identity_loss: bool,
    /// Start from random encoders instead of the inference-stage ones.
    pub skip_transfer: bool,
    pub freeze_speech: bool,
    /// Fine-tune the transferred face trunk inside the discriminator.
    pub train_face_trunk: bool,
    pub log_every: usize,
    /// Sample grid period in iterations; 0 disables intermediate grids.
    pub sample_every: usize,
    pub sample_grid: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.9,
            batch_size: 24,
            d_steps_per_g: 2,
            r1_gamma: 10.0,
            r1_every: 1,
            max_iters: 500_000,
            use_mismatched_identity_loss: true,
            skip_transfer: false,
            freeze_speech: true,
            train_face_trunk: true,
            log_every: 10,
            sample_every: 1000,
            sample_grid: 16,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size < 2 || self.d_steps_per_g == 0 || self.r1_every == 0 || self.log_every == 0 || self.sample_grid == 0 {
            return Err(Error::Config(
                "batch_size must be at least 2; d_steps_per_g, r1_every, log_every and sample_grid positive".into(),
            ));
        }
        if self.r1_gamma.is_nan() || self.r1_gamma < 0.0 {
            return Err(Error::Config("r1_gamma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradNorms {
    pub d: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanLogEntry {
    pub iter: usize,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    #[serde(rename = "L_G")]
    pub l_g: f64,
    pub r1: f64,
    pub grad_norms: GradNorms,
}

/// Architectures of every network involved in the GAN stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanArchs {
    pub speech: SpeechEncoderArch,
    pub face: FaceEncoderArch,
    pub generator: GeneratorArch,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub model: GanModel,
    pub discriminator: Discriminator,
    pub disc_store: ParamStore<f32>,
    pub log: Vec<GanLogEntry>,
}

struct TripletBatch {
    faces: Tensor<f32>,
    pos: Vec<ItemRef>,
    neg: Vec<ItemRef>,
}

fn random_item(ds: &Dataset, clip: usize, rng: &mut impl Rng) -> ItemRef {
    ItemRef {
        clip,
        index: rng.random_range(0..ds.clips[clip].n_items()),
    }
}

/// Real faces with same-clip conditions taken from another time position,
/// and mismatched conditions from another batch element of a different
/// identity (or the dataset when the batch has none).
fn sample_triplets(ds: &Dataset, pool: &[usize], n: usize, rng: &mut impl Rng) -> Result<TripletBatch> {
    let mut frames = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    for _ in 0..n {
        let clip = pool[rng.random_range(0..pool.len())];
        let f = random_item(ds, clip, rng);
        let items = ds.clips[clip].n_items();
        let j = if items < 2 {
            f.index
        } else {
            let j = rng.random_range(0..items - 1);
            j + usize::from(j >= f.index)
        };
        frames.push(f);
        pos.push(ItemRef { clip, index: j });
    }
    let mut neg = Vec::with_capacity(n);
    for i in 0..n {
        let id = ds.identity_of(pos[i].clip);
        let others: Vec<usize> = (0..n).filter(|&j| ds.identity_of(pos[j].clip) != id).collect();
        if others.is_empty() {
            let candidates: Vec<usize> = pool.iter().copied().filter(|&c| ds.identity_of(c) != id).collect();
            if candidates.is_empty() {
                return Err(Error::InsufficientData("mismatched conditions need at least two identities".into()));
            }
            let clip = candidates[rng.random_range(0..candidates.len())];
            neg.push(random_item(ds, clip, rng));
        } else {
            neg.push(pos[others[rng.random_range(0..others.len())]]);
        }
    }
    let faces: Vec<FaceImage> = frames.iter().map(|&f| ds.face_augmented(f, rng)).collect();
    let refs: Vec<&FaceImage> = faces.iter().collect();
    Ok(TripletBatch {
        faces: stack_faces(&refs)?,
        pos,
        neg,
    })
}

/// Speech conditioning, either a frozen encoder with cached outputs or an
/// encoder trained inside the discriminator store.
enum Conditioner {
    Frozen {
        encoder: SpeechEncoder,
        store: ParamStore<f32>,
        cache: HashMap<ItemRef, Vec<f32>>,
    },
    Trained {
        encoder: SpeechEncoder,
    },
}

impl Conditioner {
    fn fill_cache(&mut self, ds: &Dataset, items: &[ItemRef]) -> Result<()> {
        if let Conditioner::Frozen { encoder, store, cache } = self {
            let mut missing: Vec<ItemRef> = items.iter().copied().filter(|i| !cache.contains_key(i)).collect();
            missing.sort();
            missing.dedup();
            if missing.is_empty() {
                return Ok(());
            }
            let waves = missing.iter().map(|&i| ds.speech_fixed(i).map(|w| w.samples)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
            for (item, e) in missing.into_iter().zip(encoder.embed(store, &refs)?) {
                cache.insert(item, e);
            }
        }
        Ok(())
    }

    fn cached(&self, items: &[ItemRef]) -> Tensor<f32> {
        let Conditioner::Frozen { cache, .. } = self else {
            unreachable!("only frozen conditioners cache")
        };
        let rows: Vec<&[f32]> = items.iter().map(|i| cache[i].as_slice()).collect();
        stack_rows(&rows, rows[0].len()).expect("cached embeddings share a dimension")
    }

    /// `(c⁺, c⁻)` as tape variables plus, for a trained encoder, the raw
    /// waveforms of `c⁺` (needed again by R1).
    fn conditions<'t>(
        &mut self,
        ds: &Dataset,
        b: &Binder<'t, '_, f32>,
        batch: &TripletBatch,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t, f32>, Var<'t, f32>, Option<Tensor<f32>>)> {
        let n = batch.pos.len();
        match self {
            Conditioner::Frozen { .. } => {
                let all: Vec<ItemRef> = batch.pos.iter().chain(&batch.neg).copied().collect();
                self.fill_cache(ds, &all)?;
                let tape = b.tape();
                Ok((tape.constant(self.cached(&batch.pos)), tape.constant(self.cached(&batch.neg)), None))
            }
            Conditioner::Trained { encoder } => {
                let waves = batch
                    .pos
                    .iter()
                    .chain(&batch.neg)
                    .map(|&i| ds.speech(i, rng).map(|w| w.samples))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
                let all = stack_waves::<f32>(&refs)?;
                let c = encoder.forward(b, b.tape().constant(all.clone()))?;
                let pos_waves = all.slice_rows(0, n);
                Ok((c.slice_rows(0, n), c.slice_rows(n, n), Some(pos_waves)))
            }
        }
    }
}

fn gaussian(n: usize, rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::new(&[n, Z_DIM], (0..n * Z_DIM).map(|_| rng.sample(StandardNormal)).collect())
}

fn append_log(path: &Path, e: &GanLogEntry) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|err| Error::io(path, err))?;
    let line = serde_json::to_string(e).map_err(|err| Error::Format(err.to_string()))?;
    writeln!(f, "{line}").map_err(|err| Error::io(path, err))
}

/// Trains generator and discriminator. Without `skip_transfer`, the speech
/// and face encoders are read from `encoders_dir`.
pub fn train_gan(
    cfg: &GanTrainConfig,
    archs: &GanArchs,
    ds: &Dataset,
    pool: &[usize],
    encoders_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<GanOutcome> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Config("the GAN training split is empty".into()));
    }
    if archs.generator.image_size() != archs.face.image_size || ds.image_cfg.size != archs.face.image_size {
        return Err(Error::Config(format!(
            "generator resolution {} must equal the face resolution {} and the data resolution {}",
            archs.generator.image_size(),
            archs.face.image_size,
            ds.image_cfg.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6A4]));
    let pair = if cfg.skip_transfer {
        EncoderPair::new(archs.speech.clone(), archs.face.clone(), derive_seed(cfg.seed, &[0xAB1]))?
    } else {
        let dir = encoders_dir.ok_or_else(|| Error::Config("GAN training needs inference-stage encoder checkpoints".into()))?;
        for p in [EncoderPair::speech_path(dir), EncoderPair::face_path(dir)] {
            if !p.is_file() {
                return Err(Error::Config(format!("encoder checkpoint {} not found", p.display())));
            }
        }
        EncoderPair::load(dir, Some((&archs.speech, &archs.face)))?
    };

    let mut dstore = ParamStore::<f32>::new();
    let disc = Discriminator::new(archs.face.clone(), &mut dstore, &mut rng)?;
    dstore.copy_prefix_from(&pair.store, FACE_PREFIX, FACE_PREFIX)?;
    dstore.set_trainable(FACE_PREFIX, cfg.train_face_trunk);
    let mut cond = if cfg.freeze_speech {
        let mut store = ParamStore::new();
        let encoder = SpeechEncoder::new(archs.speech.clone(), &mut store, SPEECH_PREFIX, &mut rng)?;
        store.copy_prefix_from(&pair.store, SPEECH_PREFIX, SPEECH_PREFIX)?;
        Conditioner::Frozen {
            encoder,
            store,
            cache: HashMap::new(),
        }
    } else {
        let encoder = SpeechEncoder::new(archs.speech.clone(), &mut dstore, SPEECH_PREFIX, &mut rng)?;
        dstore.copy_prefix_from(&pair.store, SPEECH_PREFIX, SPEECH_PREFIX)?;
        Conditioner::Trained { encoder }
    };
    let mut gstore = ParamStore::<f32>::new();
    let generator = Generator::new(archs.generator.clone(), &mut gstore, GEN_PREFIX, &mut rng)?;
    let mut adam_d = Adam::new(cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2);
    let mut adam_g = Adam::new(cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2);

    fs::create_dir_all(out_dir.join(SAMPLES_DIR)).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(GAN_LOG);
    if log_path.exists() {
        fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    }
    // Fixed latents and conditions for the sample grids.
    let grid_items: Vec<ItemRef> = {
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6E1D]));
        (0..cfg.sample_grid).map(|i| random_item(ds, pool[i % pool.len()], &mut r)).collect()
    };
    let grid_z = gaussian(cfg.sample_grid, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6E1E])));
    let grid_waves = grid_items.iter().map(|&i| ds.speech_fixed(i).map(|w| w.samples)).collect::<Result<Vec<_>>>()?;

    let mut log = Vec::new();
    let mut d_steps = 0usize;
    for iter in 0..cfg.max_iters {
        let mut l_d = 0.0;
        let mut r1_val = 0.0;
        let mut d_norm = 0.0;
        for _ in 0..cfg.d_steps_per_g {
            let batch = sample_triplets(ds, pool, cfg.batch_size, &mut rng)?;
            let z = gaussian(cfg.batch_size, &mut rng);
            let apply_r1 = cfg.r1_gamma > 0.0 && d_steps.is_multiple_of(cfg.r1_every);
            d_steps += 1;
            let (mut grads, updates, loss, c_fixed, pos_waves) = {
                let tape = Tape::new();
                let bd = Binder::new(&tape, &dstore, true);
                let bg = Binder::frozen(&tape, &gstore, false);
                let (c_pos, c_neg, pos_waves) = cond.conditions(ds, &bd, &batch, &mut rng)?;
                let c_in = tape.constant(c_pos.value().as_ref().clone());
                let fake = generator.forward(&bg, tape.constant(z), c_in)?;
                let fake = tape.constant(fake.value().as_ref().clone());
                let real = tape.constant(batch.faces.clone());
                let s = relid_scores(&disc, &bd, real, fake, c_pos, c_neg, cfg.use_mismatched_identity_loss)?;
                let loss = d_loss(&s);
                let value = loss.item();
                let grads = bd.grads(&tape.backward(loss));
                (grads, bd.take_updates(), value, c_pos.value().as_ref().clone(), pos_waves)
            };
            if apply_r1 {
                let condition = match (&cond, &pos_waves) {
                    (Conditioner::Trained { encoder }, Some(w)) => Condition::Speech { encoder, waves: w },
                    _ => Condition::Fixed(&c_fixed),
                };
                let (r1, r1_grads) = r1_penalty_with_grads(&disc, &dstore, &batch.faces, condition, cfg.r1_gamma * cfg.r1_every as f64)?;
                grads.accumulate(&r1_grads);
                r1_val = r1;
            }
            if !loss.is_finite() {
                return Err(Error::InvalidInput(format!("discriminator loss became non-finite at iteration {iter}")));
            }
            l_d = loss;
            d_norm = grads.global_norm();
            adam_d.step(&mut dstore, &grads);
            dstore.apply_updates(updates);
        }

        let batch = sample_triplets(ds, pool, cfg.batch_size, &mut rng)?;
        let z = gaussian(cfg.batch_size, &mut rng);
        let (grads, l_g) = {
            let tape = Tape::new();
            let bg = Binder::new(&tape, &gstore, true);
            let bd = Binder::frozen(&tape, &dstore, true);
            let (c_pos, c_neg, _) = cond.conditions(ds, &bd, &batch, &mut rng)?;
            let fake = generator.forward(&bg, tape.constant(z), c_pos)?;
            let real = tape.constant(batch.faces.clone());
            let s = relid_scores(&disc, &bd, real, fake, c_pos, c_neg, cfg.use_mismatched_identity_loss)?;
            let loss = g_loss(&s);
            let value = loss.item();
            (bg.grads(&tape.backward(loss)), value)
        };
        if !l_g.is_finite() {
            return Err(Error::InvalidInput(format!("generator loss became non-finite at iteration {iter}")));
        }
        let g_norm = grads.global_norm();
        adam_g.step(&mut gstore, &grads);

        let last = iter + 1 == cfg.max_iters;
        if iter % cfg.log_every == 0 || last {
            let entry = GanLogEntry {
                iter,
                l_d,
                l_g,
                r1: r1_val,
                grad_norms: GradNorms { d: d_norm, g: g_norm },
            };
            append_log(&log_path, &entry)?;
            log.push(entry);
        }
        if (cfg.sample_every > 0 && iter % cfg.sample_every == 0) || last {
            let model = snapshot(&generator, &gstore, &cond, &dstore, archs)?;
            let refs: Vec<&[f32]> = grid_waves.iter().map(|w| w.as_slice()).collect();
            let c = model.speech.embed(&model.speech_store, &refs)?;
            let zr: Vec<&[f32]> = grid_z.data().chunks(Z_DIM).collect();
            let cr: Vec<&[f32]> = c.iter().map(|v| v.as_slice()).collect();
            let imgs = generator.generate(&gstore, &zr, &cr)?;
            let cols = (cfg.sample_grid as f64).sqrt().ceil() as usize;
            let (w, h, data) = mosaic(&imgs, cols);
            write_png(&out_dir.join(SAMPLES_DIR).join(format!("iter_{iter:07}.png")), w, h, &data)?;
        }
    }

    let model = snapshot(&generator, &gstore, &cond, &dstore, archs)?;
    let meta = json!({
        "iters": cfg.max_iters,
        "use_mismatched_identity_loss": cfg.use_mismatched_identity_loss,
        "skip_transfer": cfg.skip_transfer,
    });
    save_prefixed(&out_dir.join(GanModel::GENERATOR_FILE), GENERATOR_KIND, &archs.generator, &meta, &gstore, GEN_PREFIX)?;
    let darch = DiscriminatorArch {
        face: archs.face.clone(),
        speech: (!cfg.freeze_speech).then(|| archs.speech.clone()),
    };
    save_prefixed(&out_dir.join(GanModel::DISCRIMINATOR_FILE), DISCRIMINATOR_KIND, &darch, &meta, &dstore, "")?;
    save_prefixed(&out_dir.join(GanModel::SPEECH_FILE), SPEECH_KIND, &archs.speech, &meta, &model.speech_store, SPEECH_PREFIX)?;
    Ok(GanOutcome {
        model,
        discriminator: disc,
        disc_store: dstore,
        log,
    })
}

/// Generator plus the speech encoder currently used for conditioning.
fn snapshot(
    generator: &Generator,
    gstore: &ParamStore<f32>,
    cond: &Conditioner,
    dstore: &ParamStore<f32>,
    archs: &GanArchs,
) -> Result<GanModel> {
    let mut speech_store = ParamStore::new();
    let speech = SpeechEncoder::new(archs.speech.clone(), &mut speech_store, SPEECH_PREFIX, &mut ChaCha8Rng::seed_from_u64(0))?;
    let src = match cond {
        Conditioner::Frozen { store, .. } => store,
        Conditioner::Trained { .. } => dstore,
    };
    speech_store.copy_prefix_from(src, SPEECH_PREFIX, SPEECH_PREFIX)?;
    Ok(GanModel {
        generator: generator.clone(),
        gen_store: gstore.clone(),
        speech,
        speech_store,
    })
}

