//! Clip-level distillation: train the image+audio student so its fused
//! feature tracks the teacher's clip descriptor (L1) and its class posterior
//! tracks the teacher's soft targets (cross-entropy), combined as
//! L = L1 + lambda * KL with both terms batch-averaged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{self, Arch, Modality, ModelConfig};
use crate::numerics::params::{Adam, ParamStore};
use crate::numerics::tape::{Component, NodeId, Tape};
use crate::numerics::{NumericsError, Tensor};
use crate::seeds;
use crate::synthdata::{Dataset, SyntheticVideo};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}: {source}")]
    NanAbort {
        epoch: usize,
        batch: usize,
        source: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, DistillError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight on the soft-target cross-entropy term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Head-only cross-entropy epochs after distillation.
    pub finetune_epochs: usize,
    /// Softening temperature for both posteriors; 1 = plain softmax.
    pub temperature: f64,
    pub modality: Modality,
    pub teacher_epochs: usize,
    pub teacher_learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            learning_rate: 0.002,
            batch_size: 32,
            epochs: 8,
            finetune_epochs: 3,
            temperature: 1.0,
            modality: Modality::Both,
            teacher_epochs: 6,
            teacher_learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(DistillError::Validation("lambda must be >= 0".into()));
        }
        if self.temperature <= 0.0 {
            return Err(DistillError::Validation("temperature must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(DistillError::Validation("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

// --- losses ---------------------------------------------------------------

fn check_distribution(name: &str, p: &Tensor) -> Result<()> {
    if !p.is_vector() || p.is_empty() {
        return Err(DistillError::Validation(format!("{name} must be a non-empty vector")));
    }
    if p.data().iter().any(|v| *v < 0.0) {
        return Err(DistillError::Validation(format!("{name} has negative entries")));
    }
    let sum: f64 = p.data().iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(DistillError::Validation(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Cross-entropy of the student posterior against the teacher's soft
/// targets: -sum_c teacher_c * log(max(student_c, 1e-12)).
pub fn kl_soft_target_loss(teacher_probs: &Tensor, student_probs: &Tensor) -> Result<f64> {
    check_distribution("teacher_probs", teacher_probs)?;
    check_distribution("student_probs", student_probs)?;
    if teacher_probs.len() != student_probs.len() {
        return Err(DistillError::Validation(format!(
            "class counts differ: {} vs {}",
            teacher_probs.len(),
            student_probs.len()
        )));
    }
    let mut acc = 0.0;
    for (t, s) in teacher_probs.data().iter().zip(student_probs.data()) {
        acc -= t * s.max(1e-12).ln();
    }
    Ok(acc)
}

/// Sum of absolute differences over descriptor dimensions.
pub fn l1_feature_loss(target: &Tensor, fused: &Tensor) -> Result<f64> {
    if target.shape() != fused.shape() {
        return Err(DistillError::Numerics(NumericsError::ShapeMismatch {
            op: "l1_feature_loss".into(),
            detail: format!("{:?} vs {:?}", target.shape(), fused.shape()),
        }));
    }
    Ok(target.data().iter().zip(fused.data()).map(|(a, b)| (a - b).abs()).sum())
}

/// Combined distillation objective from already batch-averaged terms.
pub fn distill_loss(l1_mean: f64, kl_mean: f64, lambda: f64) -> f64 {
    l1_mean + lambda * kl_mean
}

/// Tape version of the soft-target cross-entropy against a constant target.
pub fn kl_loss_node(tape: &mut Tape, teacher_probs: &[f64], student_probs: NodeId) -> crate::numerics::Result<NodeId> {
    tape.scope(Component::Loss);
    let clamped = tape.clamp_min(student_probs, 1e-12)?;
    let logp = tape.log(clamped)?;
    let target = tape.leaf(Tensor::vector(teacher_probs.to_vec())?)?;
    let ce = tape.dot(target, logp)?;
    tape.scale(ce, -1.0)
}

/// Tape version of the L1 feature loss against a constant target.
pub fn l1_loss_node(tape: &mut Tape, target: &[f64], fused: NodeId) -> crate::numerics::Result<NodeId> {
    tape.scope(Component::Loss);
    let t = tape.leaf(Tensor::vector(target.to_vec())?)?;
    let diff = tape.sub(t, fused)?;
    let a = tape.abs(diff)?;
    tape.sum(a)
}

// --- teacher output cache ---------------------------------------------------

/// Teacher descriptor and posterior for every timestamp of one video.
#[derive(Debug, Clone)]
pub struct VideoTeacherOut {
    /// N x D.
    pub descriptors: Tensor,
    /// N x C, at temperature 1.
    pub probs: Tensor,
    /// N x C raw logits, kept so softened targets can be derived.
    pub logits: Tensor,
}

impl VideoTeacherOut {
    pub fn probs_at_temperature(&self, t: usize, temperature: f64) -> Vec<f64> {
        if temperature == 1.0 {
            return self.probs.row(t).to_vec();
        }
        let logits = self.logits.row(t);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }
}

/// Run the frozen teacher over every clip of every video once.
pub fn teacher_outputs(store: &ParamStore, arch: &Arch, videos: &[SyntheticVideo]) -> Result<Vec<VideoTeacherOut>> {
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        let n = v.key_mask.len();
        let mut descriptors = Vec::with_capacity(n * arch.descriptor_dim);
        let mut probs = Vec::with_capacity(n * arch.num_classes);
        let mut logits_all = Vec::with_capacity(n * arch.num_classes);
        let mut tape = Tape::new();
        for t in 0..n {
            let res = models::teacher_forward(&mut tape, store, arch, v.frame_feats.row(t), v.audio_feats.row(t))?;
            descriptors.extend_from_slice(tape.value(res.descriptor).data());
            probs.extend_from_slice(tape.value(res.probs).data());
            // Recover logits from the head output before softmax.
            let head_w = store.get("teacher.head.w")?;
            let head_b = store.get("teacher.head.b")?;
            let z = tape.value(res.descriptor).data();
            for k in 0..arch.num_classes {
                let row = head_w.row(k);
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(z) {
                    acc += a * b;
                }
                logits_all.push(acc + head_b.data()[k]);
            }
        }
        out.push(VideoTeacherOut {
            descriptors: Tensor::new(vec![n, arch.descriptor_dim], descriptors)?,
            probs: Tensor::new(vec![n, arch.num_classes], probs)?,
            logits: Tensor::new(vec![n, arch.num_classes], logits_all)?,
        });
    }
    Ok(out)
}

// --- training ---------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct LogRow {
    pub epoch: usize,
    pub l1: f64,
    pub kl: f64,
    pub total: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn final_val_acc(&self) -> f64 {
        self.rows.last().map(|r| r.val_acc).unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l1,kl,total,val_acc\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.l1, r.kl, r.total, r.val_acc
            ));
        }
        s
    }
}

/// Per-clip accuracy of the student on in-segment clips: the class signal
/// only exists inside the planted segment, so that is where clip-level
/// correctness is measurable.
pub fn clip_val_accuracy(store: &ParamStore, arch: &Arch, videos: &[SyntheticVideo], modality: Modality) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for v in videos {
        let mut tape = Tape::new();
        for t in 0..v.key_mask.len() {
            if !v.key_mask[t] {
                continue;
            }
            let out = models::student_forward(&mut tape, store, arch, modality, v.image_feats.row(t), v.audio_feats.row(t))?;
            if tape.value(out.probs).argmax() == v.label {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(DistillError::Validation("no in-segment validation clips".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Distill the student against the frozen teacher, then fine-tune the
/// classifier head with cross-entropy on the video labels.
///
/// Every epoch trains on all in-segment clips plus an equally sized fresh
/// sample of distracter clips, so class signal is not drowned out at small
/// key densities.
pub fn train_distill(
    store: &mut ParamStore,
    arch: &Arch,
    dataset: &Dataset,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<TrainLog> {
    cfg.validate()?;
    let teacher_before = models::teacher_fingerprint(store);
    let teacher_cache = teacher_outputs(store, arch, &dataset.train)?;

    let mut signal: Vec<(usize, usize)> = Vec::new();
    let mut background: Vec<(usize, usize)> = Vec::new();
    for (vi, v) in dataset.train.iter().enumerate() {
        for (t, m) in v.key_mask.iter().enumerate() {
            if *m {
                signal.push((vi, t));
            } else {
                background.push((vi, t));
            }
        }
    }

    let mut rng = seeds::stream(seed, seeds::STREAM_DISTILL_SHUFFLE);
    let mut opt = Adam::new(cfg.learning_rate);
    let trainable = |name: &str| name.starts_with("student.");
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut clips = signal.clone();
        for _ in 0..signal.len().min(background.len()) {
            clips.push(background[rand::Rng::gen_range(&mut rng, 0..background.len())]);
        }
        models::shuffle(&mut clips, &mut rng);

        let mut l1_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in clips.chunks(cfg.batch_size).enumerate() {
            let step = |store: &mut ParamStore| -> crate::numerics::Result<(f64, f64)> {
                let mut tape = Tape::new();
                let mut l1_nodes = Vec::with_capacity(batch.len());
                let mut kl_nodes = Vec::with_capacity(batch.len());
                for (vi, t) in batch {
                    let video = &dataset.train[*vi];
                    let out = models::student_forward(
                        &mut tape,
                        store,
                        arch,
                        cfg.modality,
                        video.image_feats.row(*t),
                        video.audio_feats.row(*t),
                    )?;
                    let cache = &teacher_cache[*vi];
                    l1_nodes.push(l1_loss_node(&mut tape, cache.descriptors.row(*t), out.fused)?);
                    let student_probs = if cfg.temperature == 1.0 {
                        out.probs
                    } else {
                        let scaled = tape.scale(out.logits, 1.0 / cfg.temperature)?;
                        tape.softmax(scaled)?
                    };
                    let targets = cache.probs_at_temperature(*t, cfg.temperature);
                    kl_nodes.push(kl_loss_node(&mut tape, &targets, student_probs)?);
                }
                tape.scope(Component::Loss);
                let inv = 1.0 / batch.len() as f64;
                let l1_total = tape.add_n(l1_nodes)?;
                let l1_mean = tape.scale(l1_total, inv)?;
                let kl_total = tape.add_n(kl_nodes)?;
                let kl_mean = tape.scale(kl_total, inv)?;
                let kl_weighted = tape.scale(kl_mean, cfg.lambda)?;
                let loss = tape.add(l1_mean, kl_weighted)?;
                tape.backward(loss)?;
                tape.accumulate_grads(store)?;
                Ok((tape.value(l1_mean).item(), tape.value(kl_mean).item()))
            };
            let (l1, kl) = step(store).map_err(|source| DistillError::NanAbort {
                epoch,
                batch: batch_idx,
                source,
            })?;
            opt.step(store, &trainable)?;
            l1_sum += l1 * batch.len() as f64;
            kl_sum += kl * batch.len() as f64;
            seen += batch.len();
        }

        let l1 = l1_sum / seen.max(1) as f64;
        let kl = kl_sum / seen.max(1) as f64;
        log.rows.push(LogRow {
            epoch,
            l1,
            kl,
            total: distill_loss(l1, kl, cfg.lambda),
            val_acc: clip_val_accuracy(store, arch, &dataset.val, cfg.modality)?,
        });
    }

    finetune_head(store, arch, dataset, cfg, &mut log)?;

    if models::teacher_fingerprint(store) != teacher_before {
        return Err(DistillError::Validation("teacher parameters moved during distillation".into()));
    }
    Ok(log)
}

/// Cross-entropy fine-tuning of the classifier head on cached fused
/// features; encoders and fusion stay frozen so the features are computed
/// once.
fn finetune_head(
    store: &mut ParamStore,
    arch: &Arch,
    dataset: &Dataset,
    cfg: &DistillConfig,
    log: &mut TrainLog,
) -> Result<()> {
    if cfg.finetune_epochs == 0 {
        return Ok(());
    }
    let cache_fused = |store: &ParamStore, videos: &[SyntheticVideo]| -> Result<Vec<(Vec<f64>, usize, bool)>> {
        let mut out = Vec::new();
        for v in videos {
            let mut tape = Tape::new();
            for t in 0..v.key_mask.len() {
                let res = models::student_forward(&mut tape, store, arch, cfg.modality, v.image_feats.row(t), v.audio_feats.row(t))?;
                out.push((tape.value(res.fused).data().to_vec(), v.label, v.key_mask[t]));
            }
        }
        Ok(out)
    };
    let train_fused = cache_fused(store, &dataset.train)?;
    let val_fused = cache_fused(store, &dataset.val)?;

    // Balanced set: all in-segment clips plus an equal count of distracters.
    let signal: Vec<usize> = (0..train_fused.len()).filter(|i| train_fused[*i].2).collect();
    let background: Vec<usize> = (0..train_fused.len()).filter(|i| !train_fused[*i].2).collect();
    let mut rng = seeds::stream(cfg.seed ^ 0x5eed, seeds::STREAM_DISTILL_SHUFFLE);

    let last_l1 = log.rows.last().map(|r| r.l1).unwrap_or(0.0);
    let mut opt = Adam::new(cfg.learning_rate);
    let trainable = |name: &str| name.starts_with("student.head");
    let base_epoch = log.rows.len();

    for e in 0..cfg.finetune_epochs {
        let mut set = signal.clone();
        for _ in 0..signal.len().min(background.len()) {
            set.push(background[rand::Rng::gen_range(&mut rng, 0..background.len())]);
        }
        models::shuffle(&mut set, &mut rng);
        for batch in set.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(batch.len());
            for idx in batch {
                let (fused, label, in_seg) = &train_fused[*idx];
                let x = tape.leaf(Tensor::vector(fused.clone())?)?;
                tape.scope(Component::Classifier);
                let w = tape.param(store, "student.head.w")?;
                let b = tape.param(store, "student.head.b")?;
                let logits = tape.affine(x, w, b)?;
                let probs = tape.softmax(logits)?;
                tape.scope(Component::Loss);
                let p = tape.clamp_min(probs, 1e-12)?;
                let logp = tape.log(p)?;
                // Distracter clips carry no class signal: train them toward
                // the uniform posterior rather than the video label.
                let target = if *in_seg {
                    let mut t = vec![0.0; arch.num_classes];
                    t[*label] = 1.0;
                    t
                } else {
                    vec![1.0 / arch.num_classes as f64; arch.num_classes]
                };
                let tgt = tape.leaf(Tensor::vector(target)?)?;
                let ce = tape.dot(tgt, logp)?;
                losses.push(tape.scale(ce, -1.0)?);
            }
            let total = tape.add_n(losses)?;
            let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
            tape.backward(loss)?;
            tape.accumulate_grads(store)?;
            opt.step(store, &trainable)?;
        }

        // Head-only metrics on cached features.
        let head_w = store.get("student.head.w")?.clone();
        let head_b = store.get("student.head.b")?.clone();
        let posterior = |fused: &[f64]| -> Vec<f64> {
            let c = arch.num_classes;
            let mut logits = vec![0.0; c];
            for k in 0..c {
                let row = head_w.row(k);
                logits[k] = row.iter().zip(fused).map(|(a, b)| a * b).sum::<f64>() + head_b.data()[k];
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        };
        let mut correct = 0usize;
        let mut total_clips = 0usize;
        for (fused, label, in_seg) in &val_fused {
            if !in_seg {
                continue;
            }
            let p = posterior(fused);
            if crate::numerics::argmax(&p) == *label {
                correct += 1;
            }
            total_clips += 1;
        }
        let mut kl_sum = 0.0;
        for idx in &signal {
            let (fused, _, _) = &train_fused[*idx];
            let p = posterior(fused);
            // Against the hard label this is plain cross-entropy.
            kl_sum -= p[train_fused[*idx].1].max(1e-12).ln();
        }
        let kl = kl_sum / signal.len().max(1) as f64;
        log.rows.push(LogRow {
            epoch: base_epoch + e,
            l1: last_l1,
            kl,
            total: distill_loss(last_l1, kl, cfg.lambda),
            val_acc: correct as f64 / total_clips.max(1) as f64,
        });
    }
    Ok(())
}

/// Generate the teacher, train it, freeze it, then distill a fresh student.
/// Returns the populated store plus the training log.
pub fn distill_pipeline(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(ParamStore, Arch, TrainLog)> {
    let arch = Arch::new(model_cfg, &dataset.config)?;
    let mut store = ParamStore::new();
    models::init_teacher(&mut store, &arch, seed)?;
    models::train_teacher(
        &mut store,
        &arch,
        dataset,
        cfg.teacher_epochs,
        cfg.teacher_learning_rate,
        cfg.batch_size,
        seed,
    )?;
    models::init_student(&mut store, &arch, seed)?;
    let log = train_distill(&mut store, &arch, dataset, cfg, seed)?;
    Ok((store, arch, log))
}
