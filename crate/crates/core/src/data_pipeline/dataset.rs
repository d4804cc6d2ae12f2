//! In-memory paired dataset, clip splits and K-way example sampling.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::audio::{preprocess_audio, read_wav, resample, AudioConfig, AudioWaveform};
use super::image::{preprocess_image, read_png, FaceImage, ImageConfig, RawImage};
use super::manifest::{validate_records, ClipRecord};
use crate::error::{Error, Result};

/// Matching direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Given a voice, pick the face.
    #[serde(rename = "V-F")]
    VoiceToFace,
    /// Given a face, pick the voice.
    #[serde(rename = "F-V")]
    FaceToVoice,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "vf" => Ok(Mode::VoiceToFace),
            "fv" => Ok(Mode::FaceToVoice),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected vf or fv)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::VoiceToFace => "V-F",
            Mode::FaceToVoice => "F-V",
        })
    }
}

/// A time position within a clip: audio window `index` or frame `index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemRef {
    pub clip: usize,
    pub index: usize,
}

/// One anchor and K candidates. In V-F mode the anchor is an audio window
/// and candidates are frames; in F-V mode the roles swap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingExample {
    pub mode: Mode,
    pub anchor: ItemRef,
    pub candidates: Vec<ItemRef>,
    pub positive_index: usize,
}

pub struct Clip {
    pub record: ClipRecord,
    pub identity: usize,
    audio: Vec<f32>,
    frames: Vec<FaceImage>,
}

impl Clip {
    pub fn n_items(&self) -> usize {
        self.frames.len()
    }
}

/// Preloaded clips. Clip audio is split into as many equal windows as the
/// clip has frames; window `i` and frame `i` cover the same time span.
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub identities: Vec<String>,
    pub audio_cfg: AudioConfig,
    pub image_cfg: ImageConfig,
    clip_index: HashMap<String, usize>,
}

/// Raw material for one clip before preprocessing.
pub struct ClipSource {
    pub record: ClipRecord,
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub frames: Vec<RawImage>,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derived from a base seed and a sequence of keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(base), |acc, &k| mix64(acc ^ k))
}

impl Dataset {
    pub fn from_sources(
        sources: Vec<ClipSource>,
        audio_cfg: AudioConfig,
        image_cfg: ImageConfig,
        frames_per_clip: Option<usize>,
    ) -> Result<Self> {
        let records: Vec<ClipRecord> = sources.iter().map(|s| s.record.clone()).collect();
        validate_records(&records)?;
        let mut identities: Vec<String> = Vec::new();
        let mut ident_index: HashMap<String, usize> = HashMap::new();
        let mut clips = Vec::with_capacity(sources.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for src in sources {
            let key = src.record.identity_key().to_string();
            let identity = *ident_index.entry(key.clone()).or_insert_with(|| {
                identities.push(key);
                identities.len() - 1
            });
            let n = frames_per_clip.map_or(src.frames.len(), |f| f.min(src.frames.len()));
            if n < 2 {
                return Err(Error::InsufficientData(format!(
                    "clip `{}` needs at least two frames so positives can come from different times",
                    src.record.clip_id
                )));
            }
            let frames = src.frames[..n]
                .iter()
                .map(|raw| preprocess_image(raw, &image_cfg, false, &mut rng))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::InvalidInput(format!("clip `{}`: {e}", src.record.clip_id)))?;
            if src.sample_rate == 0 {
                return Err(Error::InvalidInput(format!("clip `{}`: zero sample rate", src.record.clip_id)));
            }
            let audio = resample(&src.audio, src.sample_rate, audio_cfg.sample_rate);
            if audio.len() < n {
                return Err(Error::InsufficientData(format!(
                    "clip `{}`: audio too short to split into {n} windows",
                    src.record.clip_id
                )));
            }
            clips.push(Clip {
                record: src.record,
                identity,
                audio,
                frames,
            });
        }
        let clip_index = clips
            .iter()
            .enumerate()
            .map(|(i, c)| (c.record.clip_id.clone(), i))
            .collect();
        Ok(Self {
            clips,
            identities,
            audio_cfg,
            image_cfg,
            clip_index,
        })
    }

    /// Loads every clip of a manifest; relative paths resolve against `root`.
    pub fn load(
        records: &[ClipRecord],
        root: &Path,
        audio_cfg: AudioConfig,
        image_cfg: ImageConfig,
        frames_per_clip: Option<usize>,
    ) -> Result<Self> {
        let sources = records
            .iter()
            .map(|r| {
                let apath = root.join(&r.audio_path);
                if !apath.exists() {
                    return Err(Error::io(&apath, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
                let (audio, sample_rate) = read_wav(&apath)?;
                let limit = frames_per_clip.unwrap_or(usize::MAX);
                let frames = r
                    .frame_paths
                    .iter()
                    .take(limit)
                    .map(|p| read_png(&root.join(p)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ClipSource {
                    record: r.clone(),
                    audio,
                    sample_rate,
                    frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sources(sources, audio_cfg, image_cfg, frames_per_clip)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip_by_id(&self, id: &str) -> Option<usize> {
        self.clip_index.get(id).copied()
    }

    pub fn identity_of(&self, clip: usize) -> usize {
        self.clips[clip].identity
    }

    pub fn attribute_of(&self, clip: usize) -> Option<&str> {
        self.clips[clip].record.attribute.as_deref()
    }

    /// Raw audio of window `index` at the configured sample rate.
    pub fn window(&self, item: ItemRef) -> &[f32] {
        let c = &self.clips[item.clip];
        let n = c.n_items();
        let len = c.audio.len() / n;
        &c.audio[item.index * len..(item.index + 1) * len]
    }

    pub fn speech(&self, item: ItemRef, rng: &mut impl Rng) -> Result<AudioWaveform> {
        preprocess_audio(self.window(item), self.audio_cfg.sample_rate, &self.audio_cfg, rng)
    }

    /// Preprocessed window with a crop offset fixed per item, for evaluation.
    pub fn speech_fixed(&self, item: ItemRef) -> Result<AudioWaveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x5EED, &[item.clip as u64, item.index as u64]));
        self.speech(item, &mut rng)
    }

    pub fn face(&self, item: ItemRef) -> &FaceImage {
        &self.clips[item.clip].frames[item.index]
    }

    /// Frame with the training-time random flip applied.
    pub fn face_augmented(&self, item: ItemRef, rng: &mut impl Rng) -> FaceImage {
        let f = self.face(item);
        if self.image_cfg.flip && rng.random_bool(0.5) {
            f.flipped()
        } else {
            f.clone()
        }
    }

    pub fn resolve(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.clip_by_id(id)
                    .ok_or_else(|| Error::InvalidInput(format!("split references unknown clip `{id}`")))
            })
            .collect()
    }

    /// Every `(clip, index)` position of the given clips.
    pub fn items(&self, pool: &[usize]) -> Vec<ItemRef> {
        pool.iter()
            .flat_map(|&clip| (0..self.clips[clip].n_items()).map(move |index| ItemRef { clip, index }))
            .collect()
    }

    fn negatives_for(&self, pool: &[usize], clip: usize) -> Vec<usize> {
        let id = self.identity_of(clip);
        pool.iter().copied().filter(|&c| self.identity_of(c) != id).collect()
    }

    /// Checks that every anchor in `pool` has at least `k - 1` negative clips.
    pub fn check_kway(&self, pool: &[usize], k: usize) -> Result<()> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("K must be at least 2, got {k}")));
        }
        if pool.len() < k {
            return Err(Error::InsufficientData(format!("{} clips cannot form {k}-way examples", pool.len())));
        }
        let mut per_identity: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in pool {
            *per_identity.entry(self.identity_of(c)).or_default() += 1;
        }
        let largest = per_identity.values().max().copied().unwrap_or(0);
        if pool.len() - largest < k - 1 {
            return Err(Error::InsufficientData(format!(
                "some identity has only {} clips of other identities, {k}-way needs {}",
                pool.len() - largest,
                k - 1
            )));
        }
        Ok(())
    }

    /// Builds one example around `anchor`: the positive comes from the same
    /// clip at a different time, negatives from distinct clips of other
    /// identities, and the positive lands at a uniform random position.
    pub fn example_for(
        &self,
        pool: &[usize],
        anchor: ItemRef,
        k: usize,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<MatchingExample> {
        let n = self.clips[anchor.clip].n_items();
        let mut pos = rng.random_range(0..n - 1);
        if pos >= anchor.index {
            pos += 1;
        }
        let neg_pool = self.negatives_for(pool, anchor.clip);
        if neg_pool.len() < k - 1 {
            return Err(Error::InsufficientData(format!(
                "{} negative clips available, {k}-way needs {}",
                neg_pool.len(),
                k - 1
            )));
        }
        let mut candidates: Vec<ItemRef> = index::sample(rng, neg_pool.len(), k - 1)
            .into_iter()
            .map(|i| {
                let clip = neg_pool[i];
                ItemRef {
                    clip,
                    index: rng.random_range(0..self.clips[clip].n_items()),
                }
            })
            .collect();
        let positive_index = rng.random_range(0..k);
        candidates.insert(
            positive_index,
            ItemRef {
                clip: anchor.clip,
                index: pos,
            },
        );
        Ok(MatchingExample {
            mode,
            anchor,
            candidates,
            positive_index,
        })
    }

    /// Independent examples with uniformly drawn anchors.
    pub fn sample_kway_batch(
        &self,
        pool: &[usize],
        k: usize,
        mode: Mode,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<MatchingExample>> {
        self.check_kway(pool, k)?;
        (0..batch_size)
            .map(|_| {
                let clip = pool[rng.random_range(0..pool.len())];
                let index = rng.random_range(0..self.clips[clip].n_items());
                self.example_for(pool, ItemRef { clip, index }, k, mode, rng)
            })
            .collect()
    }

    /// One example per anchor position of `pool`, in shuffled order.
    pub fn epoch_examples(&self, pool: &[usize], k: usize, mode: Mode, rng: &mut impl Rng) -> Result<Vec<MatchingExample>> {
        self.check_kway(pool, k)?;
        let mut anchors = self.items(pool);
        anchors.shuffle(rng);
        anchors
            .into_iter()
            .map(|a| self.example_for(pool, a, k, mode, rng))
            .collect()
    }
}

/// Example stored by clip id so it survives reloading.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredItem {
    pub clip_id: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredExample {
    pub mode: Mode,
    pub anchor: StoredItem,
    pub candidates: Vec<StoredItem>,
    pub positive_index: usize,
}

/// Clip-level train/val/test partition plus fixed validation examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub val_k: usize,
    pub val_examples: Vec<StoredExample>,
}

impl Splits {
    /// Partitions clips within each identity (or identities themselves when
    /// every identity has a single clip) and draws the validation negatives
    /// once, for both directions.
    pub fn create(ds: &Dataset, val_fraction: f64, test_fraction: f64, val_k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_identity: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in ds.clips.iter().enumerate() {
            by_identity.entry(c.identity).or_default().push(i);
        }
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        let split_counts = |n: usize| {
            let nv = ((n as f64 * val_fraction).round() as usize).max(usize::from(val_fraction > 0.0));
            let nt = ((n as f64 * test_fraction).round() as usize).max(usize::from(test_fraction > 0.0));
            (nv, nt)
        };
        if by_identity.values().any(|v| v.len() >= 3) {
            for clips in by_identity.values_mut() {
                clips.shuffle(&mut rng);
                if clips.len() < 3 {
                    train.extend_from_slice(clips);
                    continue;
                }
                let (nv, nt) = split_counts(clips.len());
                val.extend_from_slice(&clips[..nv]);
                test.extend_from_slice(&clips[nv..nv + nt]);
                train.extend_from_slice(&clips[nv + nt..]);
            }
        } else {
            let mut groups: Vec<Vec<usize>> = by_identity.into_values().collect();
            groups.shuffle(&mut rng);
            let (nv, nt) = split_counts(groups.len());
            for (g, clips) in groups.into_iter().enumerate() {
                let dst = if g < nv {
                    &mut val
                } else if g < nv + nt {
                    &mut test
                } else {
                    &mut train
                };
                dst.extend(clips);
            }
        }
        if train.is_empty() || val.is_empty() {
            return Err(Error::InsufficientData("too few clips for a train/val split".into()));
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        ds.check_kway(&val, val_k)?;
        let mut val_examples = Vec::new();
        for mode in [Mode::VoiceToFace, Mode::FaceToVoice] {
            for anchor in ds.items(&val) {
                let ex = ds.example_for(&val, anchor, val_k, mode, &mut rng)?;
                val_examples.push(StoredExample {
                    mode,
                    anchor: stored(ds, ex.anchor),
                    candidates: ex.candidates.iter().map(|&c| stored(ds, c)).collect(),
                    positive_index: ex.positive_index,
                });
            }
        }
        let ids = |v: Vec<usize>| v.into_iter().map(|i| ds.clips[i].record.clip_id.clone()).collect();
        Ok(Self {
            seed,
            train: ids(train),
            val: ids(val),
            test: ids(test),
            val_k,
            val_examples,
        })
    }

    /// Fixed validation examples for `mode`, truncated to `k` candidates
    /// (the positive is always kept).
    pub fn val_examples(&self, ds: &Dataset, mode: Mode, k: usize) -> Result<Vec<MatchingExample>> {
        if k > self.val_k || k < 2 {
            return Err(Error::Config(format!("validation examples hold {} candidates, {k} requested", self.val_k)));
        }
        let item = |s: &StoredItem| -> Result<ItemRef> {
            let clip = ds
                .clip_by_id(&s.clip_id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown clip `{}`", s.clip_id)))?;
            if s.index >= ds.clips[clip].n_items() {
                return Err(Error::InvalidInput(format!("clip `{}` has no item {}", s.clip_id, s.index)));
            }
            Ok(ItemRef { clip, index: s.index })
        };
        self.val_examples
            .iter()
            .filter(|e| e.mode == mode)
            .map(|e| {
                let all = e.candidates.iter().map(item).collect::<Result<Vec<_>>>()?;
                // Keep the positive plus the first k - 1 negatives in order.
                let mut candidates = Vec::with_capacity(k);
                let mut positive_index = 0;
                let mut negatives = 0;
                for (j, c) in all.into_iter().enumerate() {
                    if j == e.positive_index {
                        positive_index = candidates.len();
                        candidates.push(c);
                    } else if negatives < k - 1 {
                        negatives += 1;
                        candidates.push(c);
                    }
                }
                Ok(MatchingExample {
                    mode,
                    anchor: item(&e.anchor)?,
                    candidates,
                    positive_index,
                })
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("splits serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn stored(ds: &Dataset, r: ItemRef) -> StoredItem {
    StoredItem {
        clip_id: ds.clips[r.clip].record.clip_id.clone(),
        index: r.index,
    }
}
