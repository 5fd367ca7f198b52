//! Synthetic untrimmed-video generation.
//!
//! Each video is a length-N sequence of image/audio feature pairs plus a
//! per-timestamp clip window of F frame features for the teacher. A short
//! key segment of L consecutive timestamps carries the class signal; all
//! other timestamps draw from a shared pool of distracter prototypes, so a
//! classifier that cannot find the segment is stuck near chance.
//!
//! Two regimes:
//!
//! - plain: every class has its own image prototype, audio prototype, and
//!   motion pattern, so either modality alone identifies the class.
//! - audio-precursor: classes are grouped in appearance pairs. The image
//!   stream reveals only the pair, the audio stream (and the frame-to-frame
//!   motion it summarizes) only the within-pair identity, so the class is
//!   recoverable from frame-1 + audio but from neither alone. The audio
//!   class signal additionally leaks into the two timestamps before the
//!   segment, which lets a listener find the moment before a viewer can.

pub mod audio;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::numerics::{argmax, Tensor};
use crate::seeds;

const MAGIC: &[u8; 4] = b"SKND";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("config error: {0}")]
    Config(String),
    #[error("container error: {0}")]
    Container(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    /// Timestamps per video (N).
    pub sequence_len: usize,
    /// Frames per clip window (F).
    pub clip_window: usize,
    pub image_dim: usize,
    pub audio_dim: usize,
    /// Key-segment length (L).
    pub key_len: usize,
    /// Noise scale outside the key segment.
    pub background_noise: f64,
    pub visual_snr: f64,
    pub audio_snr: f64,
    pub audio_precursor: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            videos_per_class: 20,
            sequence_len: 64,
            clip_window: 8,
            image_dim: 16,
            audio_dim: 12,
            key_len: 10,
            background_noise: 0.25,
            visual_snr: 5.0,
            audio_snr: 5.0,
            audio_precursor: true,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.videos_per_class == 0 {
            return Err(DataError::Config("need at least one class and one video per class".into()));
        }
        if self.key_len == 0 || self.key_len > self.sequence_len {
            return Err(DataError::Config(format!(
                "key_len {} must satisfy 1 <= L <= N = {}",
                self.key_len, self.sequence_len
            )));
        }
        if self.clip_window == 0 {
            return Err(DataError::Config("clip_window must be >= 1".into()));
        }
        if self.image_dim == 0 || self.audio_dim == 0 {
            return Err(DataError::Config("feature dims must be >= 1".into()));
        }
        if self.background_noise < 0.0 {
            return Err(DataError::Config("background_noise must be >= 0".into()));
        }
        if self.visual_snr <= 0.0 || self.audio_snr <= 0.0 || self.visual_snr.is_nan() || self.audio_snr.is_nan() {
            return Err(DataError::Config(
                "SNRs must be positive; use a large or infinite value for noiseless".into(),
            ));
        }
        Ok(())
    }

    /// Per-class split sizes (train, val, test).
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let held = self.videos_per_class / 5;
        (self.videos_per_class - 2 * held, held, held)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub label: usize,
    /// N x D_I.
    pub image_feats: Tensor,
    /// N x D_A.
    pub audio_feats: Tensor,
    /// N x (F * D_I); row t is the flattened frame window at timestamp t.
    pub frame_feats: Tensor,
    pub key_mask: Vec<bool>,
}

impl SyntheticVideo {
    pub fn key_positions(&self) -> Vec<usize> {
        self.key_mask
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<SyntheticVideo>,
    pub val: Vec<SyntheticVideo>,
    pub test: Vec<SyntheticVideo>,
}

impl Dataset {
    pub fn total_videos(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// All fixed random vectors a dataset is built from. Derived solely from the
/// seed, so oracles can reconstruct them.
#[derive(Debug, Clone)]
pub struct Prototypes {
    /// Per-class image prototypes (plain regime).
    pub class_image: Vec<Vec<f64>>,
    /// Per-class audio prototypes (plain regime).
    pub class_audio: Vec<Vec<f64>>,
    /// Per-class motion directions (plain regime).
    pub class_motion: Vec<Vec<f64>>,
    /// Appearance-pair image prototypes (precursor regime).
    pub pair_image: Vec<Vec<f64>>,
    /// Within-pair audio prototypes (precursor regime).
    pub parity_audio: Vec<Vec<f64>>,
    /// Within-pair motion directions (precursor regime).
    pub parity_motion: Vec<Vec<f64>>,
    /// Shared distracter pool: image, audio, motion triples.
    pub distracter_image: Vec<Vec<f64>>,
    pub distracter_audio: Vec<Vec<f64>>,
    pub distracter_motion: Vec<Vec<f64>>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

pub fn prototypes(cfg: &DatasetConfig) -> Prototypes {
    let mut rng = seeds::stream(cfg.seed, seeds::STREAM_PROTOTYPES);
    let c = cfg.num_classes;
    let pairs = c.div_ceil(2);
    let pool = 4 * c;
    Prototypes {
        class_image: (0..c).map(|_| unit_vector(&mut rng, cfg.image_dim)).collect(),
        class_audio: (0..c).map(|_| unit_vector(&mut rng, cfg.audio_dim)).collect(),
        class_motion: (0..c).map(|_| unit_vector(&mut rng, cfg.image_dim)).collect(),
        pair_image: (0..pairs).map(|_| unit_vector(&mut rng, cfg.image_dim)).collect(),
        parity_audio: (0..2).map(|_| unit_vector(&mut rng, cfg.audio_dim)).collect(),
        parity_motion: (0..2).map(|_| unit_vector(&mut rng, cfg.image_dim)).collect(),
        distracter_image: (0..pool).map(|_| unit_vector(&mut rng, cfg.image_dim)).collect(),
        distracter_audio: (0..pool).map(|_| unit_vector(&mut rng, cfg.audio_dim)).collect(),
        distracter_motion: (0..pool).map(|_| unit_vector(&mut rng, cfg.image_dim)).collect(),
    }
}

impl Prototypes {
    /// Image prototype seen inside the key segment of class `c`.
    pub fn segment_image(&self, cfg: &DatasetConfig, c: usize) -> &[f64] {
        if cfg.audio_precursor {
            &self.pair_image[c / 2]
        } else {
            &self.class_image[c]
        }
    }

    pub fn segment_audio(&self, cfg: &DatasetConfig, c: usize) -> &[f64] {
        if cfg.audio_precursor {
            &self.parity_audio[c % 2]
        } else {
            &self.class_audio[c]
        }
    }

    pub fn segment_motion(&self, cfg: &DatasetConfig, c: usize) -> &[f64] {
        if cfg.audio_precursor {
            &self.parity_motion[c % 2]
        } else {
            &self.class_motion[c]
        }
    }
}

fn noisy<R: Rng>(rng: &mut R, proto: &[f64], std: f64) -> Vec<f64> {
    proto
        .iter()
        .map(|p| p + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Noise scale for a signal stream at the given SNR; infinite SNR is
/// noiseless.
fn snr_std(snr: f64) -> f64 {
    if snr.is_infinite() {
        0.0
    } else {
        1.0 / snr
    }
}

fn generate_video(cfg: &DatasetConfig, protos: &Prototypes, label: usize, video_index: u64) -> SyntheticVideo {
    let mut rng = seeds::video_stream(cfg.seed, video_index);
    let (n, f, di, da) = (cfg.sequence_len, cfg.clip_window, cfg.image_dim, cfg.audio_dim);
    let std_v = snr_std(cfg.visual_snr);
    let std_a = snr_std(cfg.audio_snr);

    let start = rng.gen_range(0..=(n - cfg.key_len));
    let mut key_mask = vec![false; n];
    for m in key_mask.iter_mut().skip(start).take(cfg.key_len) {
        *m = true;
    }

    let seg_img = protos.segment_image(cfg, label);
    let seg_aud = protos.segment_audio(cfg, label);
    let seg_mot = protos.segment_motion(cfg, label);

    let mut image = Vec::with_capacity(n * di);
    let mut audio_feats = Vec::with_capacity(n * da);
    let mut frames = Vec::with_capacity(n * f * di);

    // Background scenes persist for several timestamps: untrimmed video is
    // locally smooth in time, which is also what makes linear interpolation
    // of subsampled features a faithful reconstruction.
    let mut distracter = 0usize;
    let mut run_left = 0usize;

    for t in 0..n {
        let (img_t, aud_t, mot_t, std_t) = if key_mask[t] {
            (
                noisy(&mut rng, seg_img, std_v),
                noisy(&mut rng, seg_aud, std_a),
                seg_mot.to_vec(),
                std_v,
            )
        } else {
            if run_left == 0 {
                distracter = rng.gen_range(0..protos.distracter_image.len());
                run_left = rng.gen_range(5..=12);
            }
            run_left -= 1;
            let j = distracter;
            (
                noisy(&mut rng, &protos.distracter_image[j], cfg.background_noise),
                noisy(&mut rng, &protos.distracter_audio[j], cfg.background_noise),
                protos.distracter_motion[j].clone(),
                cfg.background_noise,
            )
        };
        // Frame 1 is the timestamp's image feature; later frames drift along
        // the motion direction with fresh per-frame noise.
        frames.extend_from_slice(&img_t);
        for k in 1..f {
            let alpha = k as f64 / (f - 1).max(1) as f64;
            for (d, base) in img_t.iter().enumerate() {
                frames.push(base + alpha * mot_t[d] + std_t * rng.sample::<f64, _>(StandardNormal));
            }
        }
        image.extend_from_slice(&img_t);
        audio_feats.extend_from_slice(&aud_t);
    }

    if cfg.audio_precursor {
        // Class audio leaks into the two timestamps before the segment.
        for t in start.saturating_sub(2)..start {
            let leak = noisy(&mut rng, seg_aud, std_a);
            audio_feats[t * da..(t + 1) * da].copy_from_slice(&leak);
        }
    }

    SyntheticVideo {
        label,
        image_feats: Tensor::from_parts_unchecked(vec![n, di], image),
        audio_feats: Tensor::from_parts_unchecked(vec![n, da], audio_feats),
        frame_feats: Tensor::from_parts_unchecked(vec![n, f * di], frames),
        key_mask,
    }
}

/// Generate train/val/test splits, fully determined by `cfg.seed`.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let (n_train, n_val, _) = cfg.split_sizes();
    let mut dataset = Dataset {
        config: cfg.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..cfg.num_classes {
        for v in 0..cfg.videos_per_class {
            let index = (class * cfg.videos_per_class + v) as u64;
            let video = generate_video(cfg, &protos, class, index);
            if v < n_train {
                dataset.train.push(video);
            } else if v < n_train + n_val {
                dataset.val.push(video);
            } else {
                dataset.test.push(video);
            }
        }
    }
    Ok(dataset)
}

// --- container ---------------------------------------------------------

fn write_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serialize one split; the config is echoed into the header for provenance.
pub fn save_split(videos: &[SyntheticVideo], cfg: &DatasetConfig, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg_json = serde_json::to_vec(cfg).map_err(|e| DataError::Container(e.to_string()))?;
    write_u64(&mut buf, cfg_json.len() as u64);
    buf.extend_from_slice(&cfg_json);
    write_u64(&mut buf, videos.len() as u64);
    for v in videos {
        write_u64(&mut buf, v.label as u64);
        write_u64(&mut buf, cfg.sequence_len as u64);
        write_u64(&mut buf, cfg.image_dim as u64);
        write_u64(&mut buf, cfg.audio_dim as u64);
        write_u64(&mut buf, cfg.clip_window as u64);
        let mut mask_bytes = vec![0u8; cfg.sequence_len.div_ceil(8)];
        for (t, m) in v.key_mask.iter().enumerate() {
            if *m {
                mask_bytes[t / 8] |= 1 << (t % 8);
            }
        }
        buf.extend_from_slice(&mask_bytes);
        for x in v.image_feats.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in v.audio_feats.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for x in v.frame_feats.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<(DatasetConfig, Vec<SyntheticVideo>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
        if *pos + n > bytes.len() {
            return Err(DataError::Container("truncated dataset file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    }
    fn u64_at(bytes: &[u8], pos: &mut usize) -> Result<u64> {
        let b = take(bytes, pos, 8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn read_floats(bytes: &[u8], pos: &mut usize, count: usize) -> Result<Vec<f64>> {
        let raw = take(bytes, pos, count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    if take(&bytes, &mut pos, 4)? != MAGIC {
        return Err(DataError::Container("bad magic, expected SKND".into()));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(DataError::Container(format!("unsupported version {version}")));
    }
    let cfg_len = u64_at(&bytes, &mut pos)? as usize;
    let cfg: DatasetConfig = serde_json::from_slice(take(&bytes, &mut pos, cfg_len)?)
        .map_err(|e| DataError::Container(format!("config echo: {e}")))?;

    let count = u64_at(&bytes, &mut pos)? as usize;
    let mut videos = Vec::with_capacity(count);
    for _ in 0..count {
        let label = u64_at(&bytes, &mut pos)? as usize;
        let n = u64_at(&bytes, &mut pos)? as usize;
        let di = u64_at(&bytes, &mut pos)? as usize;
        let da = u64_at(&bytes, &mut pos)? as usize;
        let f = u64_at(&bytes, &mut pos)? as usize;
        let mask_bytes = take(&bytes, &mut pos, n.div_ceil(8))?.to_vec();
        let key_mask: Vec<bool> = (0..n).map(|t| mask_bytes[t / 8] & (1 << (t % 8)) != 0).collect();
        let image = read_floats(&bytes, &mut pos, n * di)?;
        let audio_d = read_floats(&bytes, &mut pos, n * da)?;
        let frames = read_floats(&bytes, &mut pos, n * f * di)?;
        videos.push(SyntheticVideo {
            label,
            image_feats: Tensor::from_parts_unchecked(vec![n, di], image),
            audio_feats: Tensor::from_parts_unchecked(vec![n, da], audio_d),
            frame_feats: Tensor::from_parts_unchecked(vec![n, f * di], frames),
            key_mask,
        });
    }
    if pos != bytes.len() {
        return Err(DataError::Container("trailing bytes".into()));
    }
    Ok((cfg, videos))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_split(&dataset.train, &dataset.config, &dir.join("train.sknd"))?;
    save_split(&dataset.val, &dataset.config, &dir.join("val.sknd"))?;
    save_split(&dataset.test, &dataset.config, &dir.join("test.sknd"))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (cfg, train) = load_split(&dir.join("train.sknd"))?;
    let (cfg_v, val) = load_split(&dir.join("val.sknd"))?;
    let (cfg_t, test) = load_split(&dir.join("test.sknd"))?;
    if cfg_v != cfg || cfg_t != cfg {
        return Err(DataError::Container("splits were generated from different configs".into()));
    }
    Ok(Dataset { config: cfg, train, val, test })
}

// --- generator self-test -------------------------------------------------

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub in_segment_val_accuracy: f64,
    pub out_segment_val_accuracy: f64,
    pub chance: f64,
}

/// Train a softmax linear probe on per-timestamp image features and report
/// validation accuracy, separately for in-segment and out-of-segment
/// features. In-segment features should be informative, out-of-segment ones
/// at chance.
pub fn probe_self_test(dataset: &Dataset) -> Result<ProbeReport> {
    let in_seg = probe_accuracy(dataset, true)?;
    let out_seg = probe_accuracy(dataset, false)?;
    Ok(ProbeReport {
        in_segment_val_accuracy: in_seg,
        out_segment_val_accuracy: out_seg,
        chance: 1.0 / dataset.config.num_classes as f64,
    })
}

fn collect_probe_samples(videos: &[SyntheticVideo], in_segment: bool) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for v in videos {
        for (t, m) in v.key_mask.iter().enumerate() {
            if *m == in_segment {
                xs.push(v.image_feats.row(t).to_vec());
                ys.push(v.label);
            }
        }
    }
    (xs, ys)
}

fn probe_accuracy(dataset: &Dataset, in_segment: bool) -> Result<f64> {
    use crate::numerics::params::{Adam, ParamStore};
    use crate::numerics::tape::Tape;

    let c = dataset.config.num_classes;
    let di = dataset.config.image_dim;
    let (train_x, train_y) = collect_probe_samples(&dataset.train, in_segment);
    let (val_x, val_y) = collect_probe_samples(&dataset.val, in_segment);
    if train_x.is_empty() || val_x.is_empty() {
        return Err(DataError::Config("probe needs non-empty train and val splits".into()));
    }

    let mut store = ParamStore::new();
    store.insert("probe.w", Tensor::zeros(vec![c, di]))?;
    store.insert("probe.b", Tensor::zeros(vec![c]))?;
    let mut opt = Adam::new(0.05);

    // Full-batch updates; the probe is tiny.
    for _ in 0..120 {
        let mut tape = Tape::new();
        let w = tape.param(&store, "probe.w")?;
        let b = tape.param(&store, "probe.b")?;
        let mut losses = Vec::with_capacity(train_x.len());
        for (x, y) in train_x.iter().zip(&train_y) {
            let xi = tape.leaf(Tensor::vector(x.clone())?)?;
            let logits = tape.affine(xi, w, b)?;
            let p = tape.softmax(logits)?;
            let p = tape.clamp_min(p, 1e-12)?;
            let logp = tape.log(p)?;
            let nll = tape.extract(logp, *y)?;
            losses.push(nll);
        }
        let total = tape.add_n(losses)?;
        let loss = tape.scale(total, -1.0 / train_x.len() as f64)?;
        tape.backward(loss)?;
        tape.accumulate_grads(&mut store)?;
        opt.step(&mut store, &|_| true)?;
    }

    let w = store.get("probe.w")?;
    let b = store.get("probe.b")?;
    let mut correct = 0usize;
    for (x, y) in val_x.iter().zip(&val_y) {
        let mut logits = vec![0.0; c];
        for (k, slot) in logits.iter_mut().enumerate() {
            let row = w.row(k);
            *slot = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.data()[k];
        }
        if argmax(&logits) == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / val_x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            num_classes: 3,
            videos_per_class: 10,
            sequence_len: 16,
            clip_window: 4,
            image_dim: 8,
            audio_dim: 6,
            key_len: 4,
            background_noise: 0.2,
            visual_snr: 5.0,
            audio_snr: 5.0,
            audio_precursor: false,
            seed: 11,
        }
    }

    #[test]
    fn counting_and_mask_density() {
        let cfg = small_cfg();
        let ds = gen_dataset(&cfg).unwrap();
        assert_eq!(ds.total_videos(), 30);
        for v in ds.train.iter().chain(&ds.val).chain(&ds.test) {
            let l = v.key_mask.iter().filter(|m| **m).count();
            assert_eq!(l, cfg.key_len);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = small_cfg();
        let a = gen_dataset(&cfg).unwrap();
        let b = gen_dataset(&cfg).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.image_feats.data(), y.image_feats.data());
            assert_eq!(x.audio_feats.data(), y.audio_feats.data());
            assert_eq!(x.frame_feats.data(), y.frame_feats.data());
            assert_eq!(x.key_mask, y.key_mask);
        }
    }

    #[test]
    fn rejects_key_longer_than_sequence() {
        let mut cfg = small_cfg();
        cfg.key_len = 17;
        assert!(matches!(gen_dataset(&cfg), Err(DataError::Config(_))));
    }

    #[test]
    fn frame_one_equals_image_feature() {
        let cfg = small_cfg();
        let ds = gen_dataset(&cfg).unwrap();
        let v = &ds.train[0];
        for t in 0..cfg.sequence_len {
            let img = v.image_feats.row(t);
            let window = v.frame_feats.row(t);
            assert_eq!(&window[..cfg.image_dim], img);
        }
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let cfg = small_cfg();
        let ds = gen_dataset(&cfg).unwrap();
        let dir = std::env::temp_dir().join("sknd_roundtrip_test");
        std::fs::create_dir_all(&dir).unwrap();
        save_dataset(&ds, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.train.len(), ds.train.len());
        for (a, b) in ds.train.iter().zip(&loaded.train) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.key_mask, b.key_mask);
            for (x, y) in a.image_feats.data().iter().zip(b.image_feats.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.frame_feats.data().iter().zip(b.frame_feats.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn nearest_prototype_oracle_is_perfect_at_infinite_snr() {
        // Noiseless segment covering the whole video: per-timestamp image
        // features are exactly the class prototype, so a nearest-prototype
        // classifier must be perfect on the test split.
        let mut cfg = small_cfg();
        cfg.visual_snr = f64::INFINITY;
        cfg.key_len = cfg.sequence_len;
        let ds = gen_dataset(&cfg).unwrap();
        let protos = prototypes(&cfg);
        let mut correct = 0;
        for v in &ds.test {
            let mut mean = vec![0.0; cfg.image_dim];
            for t in 0..cfg.sequence_len {
                for (d, x) in v.image_feats.row(t).iter().enumerate() {
                    mean[d] += x / cfg.sequence_len as f64;
                }
            }
            let mut best = (f64::INFINITY, 0);
            for (c, p) in protos.class_image.iter().enumerate() {
                let dist: f64 = p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if best.1 == v.label {
                correct += 1;
            }
        }
        assert_eq!(correct, ds.test.len());
    }

    #[test]
    fn precursor_leak_appears_before_segment() {
        let mut cfg = small_cfg();
        cfg.audio_precursor = true;
        cfg.audio_snr = f64::INFINITY;
        let ds = gen_dataset(&cfg).unwrap();
        let protos = prototypes(&cfg);
        for v in &ds.train {
            let start = v.key_mask.iter().position(|m| *m).unwrap();
            let proto = protos.segment_audio(&cfg, v.label);
            for t in start.saturating_sub(2)..start {
                let row = v.audio_feats.row(t);
                let dist: f64 = row.iter().zip(proto).map(|(a, b)| (a - b).abs()).sum();
                assert!(dist < 1e-12, "leak missing at t={t}");
            }
        }
    }
}
