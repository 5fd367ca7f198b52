//! Recurrent soft-attention skimming over indexing-feature sequences.
//!
//! The selector never takes a hard index. Each step queries the key
//! sequence, softmax-normalizes the scores into attention weights, and
//! fetches a weighted average of the feature sequence, so the whole
//! selection loop trains by ordinary backpropagation. A two-way gate decides
//! per step how much to trust the visually versus acoustically chosen
//! moment. Inference can stop early and can run from sparse indexing
//! features reconstructed by linear interpolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{self, Arch, Modality};
use crate::numerics::params::{Adam, ParamStore};
use crate::numerics::tape::{Component, MacCount, NodeId, Tape};
use crate::numerics::{NumericsError, Tensor};
use crate::seeds;
use crate::synthdata::{Dataset, SyntheticVideo};

#[derive(Debug, Error)]
pub enum SkimError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("training aborted: non-finite value at epoch {epoch}, batch {batch}: {source}")]
    NanAbort {
        epoch: usize,
        batch: usize,
        source: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, SkimError>;

pub type CountsMap = BTreeMap<Component, MacCount>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SkimConfig {
    /// Unrolled steps T during training.
    pub train_steps: usize,
    pub learning_rate: f64,
    /// Videos per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Also train the fusion network instead of keeping the student's.
    pub finetune_fusion: bool,
    pub modality: Modality,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SkimConfig {
    fn default() -> Self {
        Self {
            train_steps: 10,
            learning_rate: 0.003,
            batch_size: 4,
            epochs: 30,
            finetune_fusion: false,
            modality: Modality::Both,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InferenceBudget {
    /// Recurrent steps to execute.
    pub t_stop: usize,
    /// Stride over indexing features; 1 = dense.
    pub subsample_factor: usize,
    /// Pool the final summary from the recognition-feature sequence using
    /// the indexing-feature attention weights and gates.
    pub use_recognition_features: bool,
}

impl InferenceBudget {
    pub fn dense(t_stop: usize) -> Self {
        Self { t_stop, subsample_factor: 1, use_recognition_features: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_stop == 0 {
            return Err(SkimError::Validation("t_stop must be >= 1".into()));
        }
        if self.subsample_factor == 0 {
            return Err(SkimError::Validation("subsample_factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-video aligned feature sequences the skimmer operates on.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    /// N x (D/2) image indexing features.
    pub image: Tensor,
    /// N x (D/2) audio indexing features.
    pub audio: Tensor,
    /// Optional N x D recognition features (teacher clip descriptors).
    pub recognition: Option<Tensor>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.image.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.image.rows() == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub image_weights: Vec<f64>,
    pub audio_weights: Vec<f64>,
    pub gate_image: f64,
    pub gate_audio: f64,
    /// Argmax of each weight vector; lowest index wins ties.
    pub image_argmax: usize,
    pub audio_argmax: usize,
    pub indexed_image: Vec<f64>,
    pub indexed_audio: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SkimTrace {
    pub steps: Vec<StepTrace>,
}

impl SkimTrace {
    /// Union of per-step argmax indices across both modalities, deduplicated
    /// and sorted.
    pub fn selected_indices(&self) -> Vec<usize> {
        let mut set: Vec<usize> = Vec::new();
        for s in &self.steps {
            for idx in [s.image_argmax, s.audio_argmax] {
                if !set.contains(&idx) {
                    set.push(idx);
                }
            }
        }
        set.sort_unstable();
        set
    }
}

/// Skimmer view: dims plus the contract that it reuses the student's fusion
/// parameters. Construction fails if those parameters are absent and records
/// their fingerprint so later passes can assert they have not been touched.
#[derive(Debug, Clone)]
pub struct Skimmer {
    pub arch: Arch,
    pub modality: Modality,
    pub trained_steps: usize,
    fusion_fingerprint: u64,
}

impl Skimmer {
    pub fn new(store: &ParamStore, arch: &Arch, modality: Modality, trained_steps: usize) -> Result<Self> {
        if modality == Modality::AudioOnly {
            return Err(SkimError::Validation("skimmer supports both-stream or image-only variants".into()));
        }
        // Fusion identity: the exact parameter tensors trained in
        // distillation are the ones the recurrence will use.
        for name in ["student.fusion.0.w", "student.fusion.0.b", "student.fusion.1.w", "student.fusion.1.b"] {
            let t = store.get(name)?;
            let d = arch.descriptor_dim;
            let want: &[usize] = if name.ends_with(".w") { &[d, d] } else { &[d] };
            if t.shape() != want {
                return Err(SkimError::Validation(format!(
                    "fusion parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        for name in ["skim.lstm.i.w", "skim.gate.w", "skim.head.w", "skim.query_img.0.w"] {
            if !store.contains(name) {
                return Err(SkimError::Validation(format!("missing skimmer parameter {name}")));
            }
        }
        let key_name = arch.key_name("img");
        let key = store.get(&format!("{key_name}.w"))?;
        if key.shape() != [arch.key_dim, arch.half_dim] {
            return Err(SkimError::Validation(format!(
                "key layer shape {:?}, expected [{}, {}]",
                key.shape(),
                arch.key_dim,
                arch.half_dim
            )));
        }
        Ok(Self {
            arch: arch.clone(),
            modality,
            trained_steps,
            fusion_fingerprint: models::fusion_fingerprint(store),
        })
    }

    pub fn fusion_unchanged(&self, store: &ParamStore) -> bool {
        models::fusion_fingerprint(store) == self.fusion_fingerprint
    }
}

// --- spec-level operations -------------------------------------------------

/// Attention weights over N keys: softmax(keys . query / sqrt(d)).
pub fn attention_weights(tape: &mut Tape, keys: NodeId, query: NodeId) -> Result<NodeId> {
    let (kshape, qlen) = (tape.value(keys).shape().to_vec(), tape.value(query).len());
    if kshape.len() != 2 || kshape[1] != qlen {
        return Err(SkimError::Numerics(NumericsError::ShapeMismatch {
            op: "attention_weights".into(),
            detail: format!("keys shape {:?} vs query dim {}", kshape, qlen),
        }));
    }
    tape.scope(Component::Querying);
    let scores = tape.matvec(keys, query)?;
    let scaled = tape.scale(scores, 1.0 / (qlen as f64).sqrt())?;
    Ok(tape.softmax(scaled)?)
}

/// Value-level attention weights for direct use and tests.
pub fn attention_weights_values(keys: &Tensor, query: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let k = tape.leaf(keys.clone()).map_err(SkimError::Numerics)?;
    let q = tape.leaf(query.clone()).map_err(SkimError::Numerics)?;
    let w = attention_weights(&mut tape, k, q)?;
    Ok(tape.value(w).data().to_vec())
}

/// Differentiable soft indexing: the attention-weighted average of rows.
pub fn soft_index(tape: &mut Tape, weights: NodeId, feats: NodeId) -> Result<NodeId> {
    tape.scope(Component::Querying);
    Ok(tape.weighted_rows(weights, feats)?)
}

/// Value-level soft indexing with distribution validation.
pub fn soft_index_values(weights: &Tensor, feats: &Tensor) -> Result<Vec<f64>> {
    if weights.data().iter().any(|w| *w < 0.0) {
        return Err(SkimError::Validation("weights must be nonnegative".into()));
    }
    let sum: f64 = weights.data().iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SkimError::Validation(format!("weights sum to {sum}, not 1")));
    }
    let mut tape = Tape::new();
    let w = tape.leaf(weights.clone()).map_err(SkimError::Numerics)?;
    let m = tape.leaf(feats.clone()).map_err(SkimError::Numerics)?;
    let y = soft_index(&mut tape, w, m)?;
    Ok(tape.value(y).data().to_vec())
}

/// Convex mix of the two Index results under the modality gate.
pub fn gate_mix(tape: &mut Tape, gate: NodeId, by_image_weights: NodeId, by_audio_weights: NodeId) -> Result<NodeId> {
    let g = tape.value(gate);
    if g.len() != 2 {
        return Err(SkimError::Numerics(NumericsError::ShapeMismatch {
            op: "gate_mix".into(),
            detail: format!("gate has shape {:?}, expected [2]", g.shape()),
        }));
    }
    let sum = g.data()[0] + g.data()[1];
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SkimError::Validation(format!("gate scores sum to {sum}, not 1")));
    }
    tape.scope(Component::Querying);
    let s_img = tape.extract(gate, 0)?;
    let s_aud = tape.extract(gate, 1)?;
    let a = tape.mul_broadcast(by_image_weights, s_img)?;
    let b = tape.mul_broadcast(by_audio_weights, s_aud)?;
    Ok(tape.add(a, b)?)
}

/// Value-level gate mix.
pub fn gate_mix_values(s_img: f64, s_aud: f64, by_img: &Tensor, by_aud: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let gate = tape.leaf(Tensor::vector(vec![s_img, s_aud]).map_err(SkimError::Numerics)?)?;
    let a = tape.leaf(by_img.clone()).map_err(SkimError::Numerics)?;
    let b = tape.leaf(by_aud.clone()).map_err(SkimError::Numerics)?;
    let y = gate_mix(&mut tape, gate, a, b)?;
    Ok(tape.value(y).data().to_vec())
}

/// Reconstruct a length-`n_target` sequence from rows kept at positions
/// 0, factor, 2*factor, ...: linear interpolation between flanking kept rows,
/// trailing positions clamped to the last kept row.
pub fn interpolate_features(sparse: &Tensor, factor: usize, n_target: usize) -> Result<(Tensor, u64)> {
    if !sparse.is_matrix() || sparse.rows() == 0 {
        return Err(SkimError::Validation("sparse input must be a non-empty matrix".into()));
    }
    if factor == 0 {
        return Err(SkimError::Validation("factor must be >= 1".into()));
    }
    let m = sparse.rows();
    let expected = (n_target - 1) / factor + 1;
    if m != expected || n_target == 0 {
        return Err(SkimError::Validation(format!(
            "{m} kept rows inconsistent with n_target {n_target} at factor {factor} (expected {expected})"
        )));
    }
    if factor == 1 {
        return Ok((sparse.clone(), 0));
    }
    let cols = sparse.cols();
    let mut data = Vec::with_capacity(n_target * cols);
    let mut macs = 0u64;
    let last_kept = (m - 1) * factor;
    for p in 0..n_target {
        if p % factor == 0 && p <= last_kept {
            data.extend_from_slice(sparse.row(p / factor));
        } else if p > last_kept {
            data.extend_from_slice(sparse.row(m - 1));
        } else {
            let j = p / factor;
            let alpha = (p - j * factor) as f64 / factor as f64;
            let (a, b) = (sparse.row(j), sparse.row(j + 1));
            for k in 0..cols {
                data.push(a[k] + alpha * (b[k] - a[k]));
                macs += 1;
            }
        }
    }
    Ok((Tensor::new(vec![n_target, cols], data).map_err(SkimError::Numerics)?, macs))
}

// --- feature extraction ------------------------------------------------------

/// Encode every timestamp of a video into indexing features, optionally with
/// teacher descriptors as recognition features. Ops land on `tape` so the
/// caller's instrumentation sees them.
pub fn extract_features(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &Arch,
    video: &SyntheticVideo,
    positions: &[usize],
    modality: Modality,
    with_recognition: bool,
) -> Result<FeatureSequence> {
    let mut img = Vec::with_capacity(positions.len() * arch.half_dim);
    let mut aud = Vec::with_capacity(positions.len() * arch.half_dim);
    let mut rec = Vec::new();
    let use_audio = modality.uses_audio();
    for &t in positions {
        let x = tape.leaf(Tensor::vector(video.image_feats.row(t).to_vec())?)?;
        let zi = models::encoder_forward(tape, store, arch, "student.img", x)?;
        img.extend_from_slice(tape.value(zi).data());
        if use_audio {
            let a = tape.leaf(Tensor::vector(video.audio_feats.row(t).to_vec())?)?;
            let za = models::encoder_forward(tape, store, arch, "student.aud", a)?;
            aud.extend_from_slice(tape.value(za).data());
        } else {
            aud.extend_from_slice(&vec![0.0; arch.half_dim]);
        }
        if with_recognition {
            let out = models::teacher_forward(tape, store, arch, video.frame_feats.row(t), video.audio_feats.row(t))?;
            rec.extend_from_slice(tape.value(out.descriptor).data());
        }
    }
    Ok(FeatureSequence {
        image: Tensor::new(vec![positions.len(), arch.half_dim], img)?,
        audio: Tensor::new(vec![positions.len(), arch.half_dim], aud)?,
        recognition: if with_recognition {
            Some(Tensor::new(vec![positions.len(), arch.descriptor_dim], rec)?)
        } else {
            None
        },
    })
}

// --- core recurrence ---------------------------------------------------------

pub struct SkimCoreOut {
    pub pooled: NodeId,
    pub probs: NodeId,
    pub trace: SkimTrace,
}

/// Key matrices for the core: either built on-tape from the feature rows
/// (trainable, dense path) or supplied as precomputed constants (sparse
/// inference path).
pub enum KeySource<'a> {
    FromFeatures,
    Precomputed { image: &'a Tensor, audio: Option<&'a Tensor> },
}

/// Unroll the skimming recurrence for `steps` steps over per-timestamp
/// feature row nodes. Row vectors must all have length D/2.
#[allow(clippy::too_many_arguments)]
pub fn skim_core(
    tape: &mut Tape,
    store: &ParamStore,
    skimmer: &Skimmer,
    img_rows: &[NodeId],
    aud_rows: &[NodeId],
    keys: KeySource<'_>,
    recognition: Option<&Tensor>,
    steps: usize,
) -> Result<SkimCoreOut> {
    let arch = &skimmer.arch;
    let n = img_rows.len();
    if n == 0 || steps == 0 {
        return Err(SkimError::Validation("need at least one timestamp and one step".into()));
    }
    let both = skimmer.modality == Modality::Both;

    let img_mat = tape.stack_rows(img_rows.to_vec())?;
    let aud_mat = tape.stack_rows(aud_rows.to_vec())?;
    let (keys_img, keys_aud) = match keys {
        KeySource::FromFeatures => {
            let ki = models::keys_forward(tape, store, &arch.key_name("img"), img_rows)?;
            let ka = if both {
                Some(models::keys_forward(tape, store, &arch.key_name("aud"), aud_rows)?)
            } else {
                None
            };
            (ki, ka)
        }
        KeySource::Precomputed { image, audio } => {
            let ki = tape.leaf(image.clone())?;
            let ka = match (both, audio) {
                (true, Some(a)) => Some(tape.leaf(a.clone())?),
                (true, None) => {
                    return Err(SkimError::Validation("audio keys required for both-stream skimmer".into()))
                }
                (false, _) => None,
            };
            (ki, ka)
        }
    };
    let rec_mat = match recognition {
        Some(r) => {
            if r.rows() != n {
                return Err(SkimError::Validation(format!(
                    "recognition features have {} rows, expected {n}",
                    r.rows()
                )));
            }
            Some(tape.leaf(r.clone())?)
        }
        None => None,
    };

    // Step-1 indexed features: a parameter-free uniform-weight soft index,
    // handing the recurrence a global summary to start from.
    tape.scope(Component::Querying);
    let uniform = tape.leaf(Tensor::vector(vec![1.0 / n as f64; n])?)?;
    let mut z_img = soft_index(tape, uniform, img_mat)?;
    let mut z_aud = if both {
        soft_index(tape, uniform, aud_mat)?
    } else {
        tape.leaf(Tensor::zeros(vec![arch.half_dim]))?
    };
    let mut z_rec = match rec_mat {
        Some(rm) => Some(soft_index(tape, uniform, rm)?),
        None => None,
    };

    let mut h = tape.leaf(Tensor::zeros(vec![arch.lstm_hidden]))?;
    let mut c = tape.leaf(Tensor::zeros(vec![arch.lstm_hidden]))?;
    let mut pooled_parts = Vec::with_capacity(steps);
    let mut trace = SkimTrace::default();

    for _ in 0..steps {
        let fused = models::fusion_forward(tape, store, z_img, z_aud)?;
        pooled_parts.push(match z_rec {
            Some(zr) => zr,
            None => fused,
        });
        let (h_next, c_next) = models::lstm_step(tape, store, "skim.lstm", fused, h, c)?;
        h = h_next;
        c = c_next;

        let q_img = models::query_forward(tape, store, "skim.query_img", h)?;
        let w_img = attention_weights(tape, keys_img, q_img)?;

        if both {
            let q_aud = models::query_forward(tape, store, "skim.query_aud", h)?;
            let w_aud = attention_weights(tape, keys_aud.unwrap(), q_aud)?;
            let gate = models::gate_forward(tape, store, h)?;

            let img_by_wi = soft_index(tape, w_img, img_mat)?;
            let img_by_wa = soft_index(tape, w_aud, img_mat)?;
            let aud_by_wi = soft_index(tape, w_img, aud_mat)?;
            let aud_by_wa = soft_index(tape, w_aud, aud_mat)?;
            z_img = gate_mix(tape, gate, img_by_wi, img_by_wa)?;
            z_aud = gate_mix(tape, gate, aud_by_wi, aud_by_wa)?;
            if let Some(rm) = rec_mat {
                let rec_by_wi = soft_index(tape, w_img, rm)?;
                let rec_by_wa = soft_index(tape, w_aud, rm)?;
                z_rec = Some(gate_mix(tape, gate, rec_by_wi, rec_by_wa)?);
            }

            let gv = tape.value(gate).data();
            trace.steps.push(StepTrace {
                image_weights: tape.value(w_img).data().to_vec(),
                audio_weights: tape.value(w_aud).data().to_vec(),
                gate_image: gv[0],
                gate_audio: gv[1],
                image_argmax: tape.value(w_img).argmax(),
                audio_argmax: tape.value(w_aud).argmax(),
                indexed_image: tape.value(z_img).data().to_vec(),
                indexed_audio: tape.value(z_aud).data().to_vec(),
            });
        } else {
            // Image-only variant: the gate degenerates to s_img = 1 and the
            // mix collapses to indexing under the image weights.
            z_img = soft_index(tape, w_img, img_mat)?;
            if let Some(rm) = rec_mat {
                z_rec = Some(soft_index(tape, w_img, rm)?);
            }
            let wv = tape.value(w_img);
            trace.steps.push(StepTrace {
                image_weights: wv.data().to_vec(),
                audio_weights: Vec::new(),
                gate_image: 1.0,
                gate_audio: 0.0,
                image_argmax: wv.argmax(),
                audio_argmax: tape.value(w_img).argmax(),
                indexed_image: tape.value(z_img).data().to_vec(),
                indexed_audio: Vec::new(),
            });
        }
    }

    tape.scope(Component::Fusion);
    let total = tape.add_n(pooled_parts)?;
    let pooled = tape.scale(total, 1.0 / steps as f64)?;
    tape.scope(Component::Classifier);
    let w = tape.param(store, "skim.head.w")?;
    let b = tape.param(store, "skim.head.b")?;
    let logits = tape.affine(pooled, w, b)?;
    let probs = tape.softmax(logits)?;

    Ok(SkimCoreOut { pooled, probs, trace })
}

/// Turn feature matrices into per-row leaf nodes.
pub fn leaf_rows(tape: &mut Tape, feats: &Tensor) -> Result<Vec<NodeId>> {
    let mut rows = Vec::with_capacity(feats.rows());
    for j in 0..feats.rows() {
        rows.push(tape.leaf(Tensor::vector(feats.row(j).to_vec())?)?);
    }
    Ok(rows)
}

pub struct SkimOut {
    pub pooled: Tensor,
    pub probs: Tensor,
    pub trace: SkimTrace,
    /// Set when t_stop exceeded the trained step count.
    pub extrapolated: bool,
    /// Instrumented multiply-accumulate counts for this call.
    pub counts: CountsMap,
}

/// Training-time forward: encoder features for all timestamps, dense keys,
/// the full T-step recurrence.
pub fn skim_forward(store: &ParamStore, skimmer: &Skimmer, video: &SyntheticVideo, steps: usize) -> Result<SkimOut> {
    skim_infer(store, skimmer, video, &InferenceBudget::dense(steps))
}

/// Budgeted inference. With a subsample factor above 1, encoder features and
/// keys are computed only at the kept positions and linearly interpolated
/// back to full length; with early stopping the summary pools only the
/// executed steps.
pub fn skim_infer(
    store: &ParamStore,
    skimmer: &Skimmer,
    video: &SyntheticVideo,
    budget: &InferenceBudget,
) -> Result<SkimOut> {
    budget.validate()?;
    let arch = &skimmer.arch;
    let n = video.key_mask.len();
    let factor = budget.subsample_factor;
    let mut tape = Tape::new();

    let extrapolated = budget.t_stop > skimmer.trained_steps;
    let both = skimmer.modality == Modality::Both;

    let out = if factor == 1 {
        let positions: Vec<usize> = (0..n).collect();
        let feats = extract_features(&mut tape, store, arch, video, &positions, skimmer.modality, budget.use_recognition_features)?;
        let img_rows = leaf_rows(&mut tape, &feats.image)?;
        let aud_rows = leaf_rows(&mut tape, &feats.audio)?;
        skim_core(
            &mut tape,
            store,
            skimmer,
            &img_rows,
            &aud_rows,
            KeySource::FromFeatures,
            feats.recognition.as_ref(),
            budget.t_stop,
        )?
    } else {
        let kept: Vec<usize> = (0..n).step_by(factor).collect();
        let sparse = extract_features(&mut tape, store, arch, video, &kept, skimmer.modality, budget.use_recognition_features)?;

        // Keys from the sparse features, then interpolated alongside them.
        // The key layer is affine, so interpolating keys equals keying
        // interpolated features.
        let sparse_img_rows = leaf_rows(&mut tape, &sparse.image)?;
        let sparse_aud_rows = leaf_rows(&mut tape, &sparse.audio)?;
        let keys_img_sparse = models::keys_forward(&mut tape, store, &arch.key_name("img"), &sparse_img_rows)?;
        let keys_img_sparse = tape.value(keys_img_sparse).clone();
        let keys_aud_sparse = if both {
            let k = models::keys_forward(&mut tape, store, &arch.key_name("aud"), &sparse_aud_rows)?;
            Some(tape.value(k).clone())
        } else {
            None
        };

        let mut interp_macs = 0u64;
        let (img_full, m1) = interpolate_features(&sparse.image, factor, n)?;
        let (aud_full, m2) = if both {
            interpolate_features(&sparse.audio, factor, n)?
        } else {
            (Tensor::zeros(vec![n, arch.half_dim]), 0)
        };
        let (keys_img_full, m3) = interpolate_features(&keys_img_sparse, factor, n)?;
        interp_macs += m1 + m2 + m3;
        let keys_aud_full = match keys_aud_sparse {
            Some(k) => {
                let (full, m4) = interpolate_features(&k, factor, n)?;
                interp_macs += m4;
                Some(full)
            }
            None => None,
        };
        let rec_full = match sparse.recognition {
            Some(r) => {
                let (full, m5) = interpolate_features(&r, factor, n)?;
                interp_macs += m5;
                Some(full)
            }
            None => None,
        };

        tape.scope(Component::Interpolation);
        tape.tally_external(interp_macs, 0, 0);

        let img_rows = leaf_rows(&mut tape, &img_full)?;
        let aud_rows = leaf_rows(&mut tape, &aud_full)?;
        skim_core(
            &mut tape,
            store,
            skimmer,
            &img_rows,
            &aud_rows,
            KeySource::Precomputed { image: &keys_img_full, audio: keys_aud_full.as_ref() },
            rec_full.as_ref(),
            budget.t_stop,
        )?
    };

    Ok(SkimOut {
        pooled: tape.value(out.pooled).clone(),
        probs: tape.value(out.probs).clone(),
        trace: out.trace,
        extrapolated,
        counts: tape.counts().clone(),
    })
}

// --- training -----------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct SkimLog {
    /// (epoch, mean training cross-entropy, val video accuracy).
    pub rows: Vec<(usize, f64, f64)>,
}

impl SkimLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,ce,val_acc\n");
        for (e, ce, acc) in &self.rows {
            s.push_str(&format!("{},{:.6},{:.6}\n", e, ce, acc));
        }
        s
    }

    pub fn final_val_acc(&self) -> f64 {
        self.rows.last().map(|r| r.2).unwrap_or(0.0)
    }
}

/// Cache of per-video indexing features under frozen encoders.
pub fn cache_features(store: &ParamStore, skimmer: &Skimmer, videos: &[SyntheticVideo]) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        let mut tape = Tape::new();
        let positions: Vec<usize> = (0..v.key_mask.len()).collect();
        out.push(extract_features(&mut tape, store, &skimmer.arch, v, &positions, skimmer.modality, false)?);
    }
    Ok(out)
}

/// Train the selector (LSTM, queries, keys, gate, video head) with
/// cross-entropy on video labels. Encoders are frozen; the fusion network is
/// frozen too unless `finetune_fusion` is set.
pub fn train_skim(
    store: &mut ParamStore,
    skimmer: &Skimmer,
    dataset: &Dataset,
    cfg: &SkimConfig,
    seed: u64,
) -> Result<SkimLog> {
    if cfg.train_steps == 0 || cfg.batch_size == 0 {
        return Err(SkimError::Validation("train_steps and batch_size must be >= 1".into()));
    }
    let train_feats = cache_features(store, skimmer, &dataset.train)?;
    let val_feats = cache_features(store, skimmer, &dataset.val)?;

    let finetune = cfg.finetune_fusion;
    let trainable = move |name: &str| name.starts_with("skim.") || (finetune && name.starts_with("student.fusion."));
    let mut opt = Adam::new(cfg.learning_rate);
    let mut rng = seeds::stream(seed, seeds::STREAM_SKIM_SHUFFLE);
    let mut log = SkimLog::default();

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 0..cfg.epochs {
        models::shuffle(&mut order, &mut rng);
        let mut ce_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = |store: &mut ParamStore| -> Result<f64> {
                let mut tape = Tape::new();
                let mut losses = Vec::with_capacity(batch.len());
                for vi in batch {
                    let feats = &train_feats[*vi];
                    let img_rows = leaf_rows(&mut tape, &feats.image)?;
                    let aud_rows = leaf_rows(&mut tape, &feats.audio)?;
                    let core = skim_core(
                        &mut tape,
                        store,
                        skimmer,
                        &img_rows,
                        &aud_rows,
                        KeySource::FromFeatures,
                        None,
                        cfg.train_steps,
                    )?;
                    tape.scope(Component::Loss);
                    let p = tape.clamp_min(core.probs, 1e-12)?;
                    let logp = tape.log(p)?;
                    let nll = tape.extract(logp, dataset.train[*vi].label)?;
                    losses.push(nll);
                }
                tape.scope(Component::Loss);
                let total = tape.add_n(losses)?;
                let loss = tape.scale(total, -1.0 / batch.len() as f64)?;
                tape.backward(loss)?;
                tape.accumulate_grads(store)?;
                Ok(tape.value(loss).item())
            };
            let ce = step(store).map_err(|e| match e {
                SkimError::Numerics(source) => SkimError::NanAbort { epoch, batch: batch_idx, source },
                other => other,
            })?;
            opt.step(store, &trainable)?;
            ce_sum += ce * batch.len() as f64;
        }

        let val_acc = eval_videos(store, skimmer, &val_feats, &dataset.val, cfg.train_steps)?;
        log.rows.push((epoch, ce_sum / dataset.train.len() as f64, val_acc));
    }

    if !cfg.finetune_fusion && !skimmer.fusion_unchanged(store) {
        return Err(SkimError::Validation("fusion parameters moved while frozen".into()));
    }
    Ok(log)
}

/// Video-level accuracy of the skimmer over cached features.
fn eval_videos(
    store: &ParamStore,
    skimmer: &Skimmer,
    feats: &[FeatureSequence],
    videos: &[SyntheticVideo],
    steps: usize,
) -> Result<f64> {
    if videos.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (f, v) in feats.iter().zip(videos) {
        let mut tape = Tape::new();
        let img_rows = leaf_rows(&mut tape, &f.image)?;
        let aud_rows = leaf_rows(&mut tape, &f.audio)?;
        let core = skim_core(&mut tape, store, skimmer, &img_rows, &aud_rows, KeySource::FromFeatures, None, steps)?;
        if tape.value(core.probs).argmax() == v.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / videos.len() as f64)
}
