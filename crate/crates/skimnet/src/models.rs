//! Network components: the frozen clip teacher, the image+audio student
//! with its fusion network, and the skimmer's recurrent/query machinery.
//!
//! All parameters live in a single [`ParamStore`] under dotted name
//! prefixes (`teacher.`, `student.`, `skim.`, `lstmb.`). Model structs are
//! lightweight views that know the dims and how to lay ops onto a tape;
//! sharing the fusion network between the student and the skimmer is then
//! literal parameter identity, not a copy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::params::{Adam, ParamStore};
use crate::numerics::tape::{Component, NodeId, Tape};
use crate::numerics::{NumericsError, Result, Tensor};
use crate::seeds;
use crate::synthdata::{Dataset, DatasetConfig};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Clip descriptor dimensionality D; the fusion output matches it.
    pub descriptor_dim: usize,
    /// LSTM hidden size.
    pub lstm_hidden: usize,
    /// Indexing key dimensionality.
    pub key_dim: usize,
    /// Hidden widths of the student encoders.
    pub encoder_hidden: Vec<usize>,
    pub teacher_hidden: usize,
    pub query_hidden: usize,
    /// Share one key layer across modalities instead of per-modality keys.
    pub shared_key: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            descriptor_dim: 64,
            lstm_hidden: 128,
            key_dim: 64,
            encoder_hidden: vec![448, 448],
            teacher_hidden: 64,
            query_hidden: 64,
            shared_key: false,
        }
    }
}

/// All dimensions the networks need, combining the model config with the
/// dataset's feature dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    pub num_classes: usize,
    pub image_dim: usize,
    pub audio_dim: usize,
    pub clip_window: usize,
    pub descriptor_dim: usize,
    pub half_dim: usize,
    pub lstm_hidden: usize,
    pub key_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub teacher_hidden: usize,
    pub query_hidden: usize,
    pub shared_key: bool,
}

impl Arch {
    pub fn new(model: &ModelConfig, data: &DatasetConfig) -> Result<Self> {
        if model.descriptor_dim < 2 || model.descriptor_dim % 2 != 0 {
            return Err(NumericsError::InvalidInput {
                op: "Arch".into(),
                detail: format!("descriptor_dim {} must be even and >= 2", model.descriptor_dim),
            });
        }
        for (name, v) in [
            ("lstm_hidden", model.lstm_hidden),
            ("key_dim", model.key_dim),
            ("teacher_hidden", model.teacher_hidden),
            ("query_hidden", model.query_hidden),
        ] {
            if v == 0 {
                return Err(NumericsError::InvalidInput {
                    op: "Arch".into(),
                    detail: format!("{name} must be >= 1"),
                });
            }
        }
        Ok(Self {
            num_classes: data.num_classes,
            image_dim: data.image_dim,
            audio_dim: data.audio_dim,
            clip_window: data.clip_window,
            descriptor_dim: model.descriptor_dim,
            half_dim: model.descriptor_dim / 2,
            lstm_hidden: model.lstm_hidden,
            key_dim: model.key_dim,
            encoder_hidden: model.encoder_hidden.clone(),
            teacher_hidden: model.teacher_hidden,
            query_hidden: model.query_hidden,
            shared_key: model.shared_key,
        })
    }

    pub fn clip_input_dim(&self) -> usize {
        self.clip_window * self.image_dim + self.audio_dim
    }

    /// (out, in) shapes of an encoder's affine layers.
    pub fn encoder_layers(&self, input_dim: usize) -> Vec<(usize, usize)> {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for h in &self.encoder_hidden {
            layers.push((*h, prev));
            prev = *h;
        }
        layers.push((self.half_dim, prev));
        layers
    }

    pub fn key_name(&self, stream: &str) -> String {
        if self.shared_key {
            "skim.key".to_string()
        } else {
            format!("skim.key_{stream}")
        }
    }
}

/// Which student streams are active. Single-modality students replace the
/// missing embedding with zeros so the fusion input keeps its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Both,
    ImageOnly,
    AudioOnly,
}

impl Modality {
    pub fn uses_image(self) -> bool {
        !matches!(self, Modality::AudioOnly)
    }

    pub fn uses_audio(self) -> bool {
        !matches!(self, Modality::ImageOnly)
    }
}

// --- initialization -------------------------------------------------------

fn init_affine<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, out_dim: usize, in_dim: usize) -> Result<()> {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let w: Vec<f64> = (0..out_dim * in_dim).map(|_| rng.gen_range(-bound..bound)).collect();
    let b: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
    store.insert(&format!("{name}.w"), Tensor::new(vec![out_dim, in_dim], w)?)?;
    store.insert(&format!("{name}.b"), Tensor::new(vec![out_dim], b)?)?;
    Ok(())
}

pub fn init_teacher(store: &mut ParamStore, arch: &Arch, seed: u64) -> Result<()> {
    let mut rng = seeds::stream(seed, seeds::STREAM_TEACHER_INIT);
    init_affine(store, &mut rng, "teacher.l1", arch.teacher_hidden, arch.clip_input_dim())?;
    init_affine(store, &mut rng, "teacher.l2", arch.descriptor_dim, arch.teacher_hidden)?;
    init_affine(store, &mut rng, "teacher.head", arch.num_classes, arch.descriptor_dim)?;
    Ok(())
}

pub fn init_student(store: &mut ParamStore, arch: &Arch, seed: u64) -> Result<()> {
    let mut rng = seeds::stream(seed, seeds::STREAM_STUDENT_INIT);
    for (i, (out, inp)) in arch.encoder_layers(arch.image_dim).iter().enumerate() {
        init_affine(store, &mut rng, &format!("student.img.{i}"), *out, *inp)?;
    }
    for (i, (out, inp)) in arch.encoder_layers(arch.audio_dim).iter().enumerate() {
        init_affine(store, &mut rng, &format!("student.aud.{i}"), *out, *inp)?;
    }
    let d = arch.descriptor_dim;
    init_affine(store, &mut rng, "student.fusion.0", d, d)?;
    init_affine(store, &mut rng, "student.fusion.1", d, d)?;
    init_affine(store, &mut rng, "student.head", arch.num_classes, d)?;
    Ok(())
}

pub fn init_skimmer(store: &mut ParamStore, arch: &Arch, seed: u64) -> Result<()> {
    let mut rng = seeds::stream(seed, seeds::STREAM_SKIM_INIT);
    init_lstm(store, &mut rng, "skim.lstm", arch.descriptor_dim, arch.lstm_hidden)?;
    for stream in ["img", "aud"] {
        init_affine(store, &mut rng, &format!("skim.query_{stream}.0"), arch.query_hidden, arch.lstm_hidden)?;
        init_affine(store, &mut rng, &format!("skim.query_{stream}.1"), arch.key_dim, arch.query_hidden)?;
    }
    if arch.shared_key {
        init_affine(store, &mut rng, "skim.key", arch.key_dim, arch.half_dim)?;
    } else {
        init_affine(store, &mut rng, "skim.key_img", arch.key_dim, arch.half_dim)?;
        init_affine(store, &mut rng, "skim.key_aud", arch.key_dim, arch.half_dim)?;
    }
    init_affine(store, &mut rng, "skim.gate", 2, arch.lstm_hidden)?;
    init_affine(store, &mut rng, "skim.head", arch.num_classes, arch.descriptor_dim)?;
    Ok(())
}

pub fn init_lstm_baseline(store: &mut ParamStore, arch: &Arch, seed: u64) -> Result<()> {
    let mut rng = seeds::stream(seed, seeds::STREAM_LSTM_BASELINE_INIT);
    init_lstm(store, &mut rng, "lstmb.lstm", arch.descriptor_dim, arch.lstm_hidden)?;
    init_affine(store, &mut rng, "lstmb.head", arch.num_classes, arch.lstm_hidden)?;
    Ok(())
}

fn init_lstm<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, input: usize, hidden: usize) -> Result<()> {
    for gate in ["i", "f", "g", "o"] {
        init_affine(store, rng, &format!("{prefix}.{gate}"), hidden, input + hidden)?;
    }
    Ok(())
}

// --- forward builders -----------------------------------------------------

fn affine_named(tape: &mut Tape, store: &ParamStore, name: &str, x: NodeId) -> Result<NodeId> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    tape.affine(x, w, b)
}

/// Multi-layer encoder with ReLU between affine layers (none after the last).
pub fn encoder_forward(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &Arch,
    prefix: &str,
    input: NodeId,
) -> Result<NodeId> {
    tape.scope(Component::Encoders);
    let n_layers = arch.encoder_hidden.len() + 1;
    let mut h = input;
    for i in 0..n_layers {
        h = affine_named(tape, store, &format!("{prefix}.{i}"), h)?;
        if i + 1 < n_layers {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Two dense layers on the concatenation of the stream embeddings.
pub fn fusion_forward(tape: &mut Tape, store: &ParamStore, z_img: NodeId, z_aud: NodeId) -> Result<NodeId> {
    tape.scope(Component::Fusion);
    let joint = tape.concat(z_img, z_aud)?;
    let h = affine_named(tape, store, "student.fusion.0", joint)?;
    let h = tape.relu(h)?;
    affine_named(tape, store, "student.fusion.1", h)
}

pub struct StudentOut {
    pub z_img: NodeId,
    pub z_aud: NodeId,
    pub fused: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
}

/// Full student pass from raw per-timestamp features.
pub fn student_forward(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &Arch,
    modality: Modality,
    image: &[f64],
    audio: &[f64],
) -> Result<StudentOut> {
    let z_img = if modality.uses_image() {
        let x = tape.leaf(Tensor::vector(image.to_vec())?)?;
        encoder_forward(tape, store, arch, "student.img", x)?
    } else {
        tape.leaf(Tensor::zeros(vec![arch.half_dim]))?
    };
    let z_aud = if modality.uses_audio() {
        let x = tape.leaf(Tensor::vector(audio.to_vec())?)?;
        encoder_forward(tape, store, arch, "student.aud", x)?
    } else {
        tape.leaf(Tensor::zeros(vec![arch.half_dim]))?
    };
    let fused = fusion_forward(tape, store, z_img, z_aud)?;
    tape.scope(Component::Classifier);
    let logits = affine_named(tape, store, "student.head", fused)?;
    let probs = tape.softmax(logits)?;
    Ok(StudentOut { z_img, z_aud, fused, logits, probs })
}

pub struct TeacherOut {
    pub descriptor: NodeId,
    pub probs: NodeId,
}

/// Teacher pass over one clip window (flattened F frame features) plus its
/// audio feature.
pub fn teacher_forward(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &Arch,
    frame_window: &[f64],
    audio: &[f64],
) -> Result<TeacherOut> {
    if frame_window.len() != arch.clip_window * arch.image_dim || audio.len() != arch.audio_dim {
        return Err(NumericsError::ShapeMismatch {
            op: "teacher_forward".into(),
            detail: format!(
                "window {} (want {}), audio {} (want {})",
                frame_window.len(),
                arch.clip_window * arch.image_dim,
                audio.len(),
                arch.audio_dim
            ),
        });
    }
    tape.scope(Component::Teacher);
    let mut input = frame_window.to_vec();
    input.extend_from_slice(audio);
    let x = tape.leaf(Tensor::vector(input)?)?;
    let h = affine_named(tape, store, "teacher.l1", x)?;
    let h = tape.relu(h)?;
    let descriptor = affine_named(tape, store, "teacher.l2", h)?;
    let logits = affine_named(tape, store, "teacher.head", descriptor)?;
    let probs = tape.softmax(logits)?;
    Ok(TeacherOut { descriptor, probs })
}

/// Standard LSTM gating; c' = f*c + i*g, h' = o*tanh(c').
pub fn lstm_step(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    tape.scope(Component::Lstm);
    let joint = tape.concat(x, h)?;
    let i_gate = affine_named(tape, store, &format!("{prefix}.i"), joint)?;
    let i_gate = tape.sigmoid(i_gate)?;
    let f_gate = affine_named(tape, store, &format!("{prefix}.f"), joint)?;
    let f_gate = tape.sigmoid(f_gate)?;
    let g_cand = affine_named(tape, store, &format!("{prefix}.g"), joint)?;
    let g_cand = tape.tanh(g_cand)?;
    let o_gate = affine_named(tape, store, &format!("{prefix}.o"), joint)?;
    let o_gate = tape.sigmoid(o_gate)?;
    let fc = tape.mul_elem(f_gate, c)?;
    let ig = tape.mul_elem(i_gate, g_cand)?;
    let c_next = tape.add(fc, ig)?;
    let ct = tape.tanh(c_next)?;
    let h_next = tape.mul_elem(o_gate, ct)?;
    Ok((h_next, c_next))
}

/// Two-layer query network from the hidden state.
pub fn query_forward(tape: &mut Tape, store: &ParamStore, prefix: &str, h: NodeId) -> Result<NodeId> {
    tape.scope(Component::Querying);
    let q = affine_named(tape, store, &format!("{prefix}.0"), h)?;
    let q = tape.relu(q)?;
    affine_named(tape, store, &format!("{prefix}.1"), q)
}

/// Key layer applied to each feature vector, stacked into an N x d matrix.
pub fn keys_forward(tape: &mut Tape, store: &ParamStore, key_name: &str, feats: &[NodeId]) -> Result<NodeId> {
    tape.scope(Component::Querying);
    let mut rows = Vec::with_capacity(feats.len());
    for f in feats {
        rows.push(affine_named(tape, store, key_name, *f)?);
    }
    tape.stack_rows(rows)
}

/// Two-way modality gate from the hidden state: softmax over [s_img, s_aud].
pub fn gate_forward(tape: &mut Tape, store: &ParamStore, h: NodeId) -> Result<NodeId> {
    tape.scope(Component::Querying);
    let logits = affine_named(tape, store, "skim.gate", h)?;
    tape.softmax(logits)
}

pub fn teacher_fingerprint(store: &ParamStore) -> u64 {
    store.fingerprint("teacher.")
}

pub fn fusion_fingerprint(store: &ParamStore) -> u64 {
    store.fingerprint("student.fusion.")
}

// --- teacher training -------------------------------------------------------

/// Train the clip teacher on all training clips labeled with their video's
/// class, then treat it as frozen: its soft targets need class structure for
/// distillation to transfer anything.
pub fn train_teacher(
    store: &mut ParamStore,
    arch: &Arch,
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    let mut clips: Vec<(usize, usize)> = Vec::new();
    for (vi, _v) in dataset.train.iter().enumerate() {
        for t in 0..dataset.config.sequence_len {
            clips.push((vi, t));
        }
    }
    let mut rng = seeds::stream(seed, seeds::STREAM_TEACHER_SHUFFLE);
    let mut opt = Adam::new(learning_rate);
    let trainable = |name: &str| name.starts_with("teacher.");

    for _ in 0..epochs {
        shuffle(&mut clips, &mut rng);
        for batch in clips.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(batch.len());
            for (vi, t) in batch {
                let video = &dataset.train[*vi];
                let out = teacher_forward(
                    &mut tape,
                    store,
                    arch,
                    video.frame_feats.row(*t),
                    video.audio_feats.row(*t),
                )?;
                tape.scope(Component::Loss);
                let p = tape.clamp_min(out.probs, 1e-12)?;
                let logp = tape.log(p)?;
                let nll = tape.extract(logp, video.label)?;
                losses.push(nll);
            }
            tape.scope(Component::Loss);
            let total = tape.add_n(losses)?;
            let loss = tape.scale(total, -1.0 / batch.len() as f64)?;
            tape.backward(loss)?;
            tape.accumulate_grads(store)?;
            opt.step(store, &trainable)?;
        }
    }
    Ok(())
}

/// Fisher-Yates with a named stream so training order is seed-determined.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_diff_check;

    fn tiny_data_cfg() -> DatasetConfig {
        DatasetConfig {
            num_classes: 3,
            videos_per_class: 5,
            sequence_len: 6,
            clip_window: 2,
            image_dim: 4,
            audio_dim: 3,
            key_len: 2,
            background_noise: 0.2,
            visual_snr: 5.0,
            audio_snr: 5.0,
            audio_precursor: false,
            seed: 3,
        }
    }

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig {
            descriptor_dim: 8,
            lstm_hidden: 6,
            key_dim: 5,
            encoder_hidden: vec![7],
            teacher_hidden: 6,
            query_hidden: 5,
            shared_key: false,
        }
    }

    fn tiny_arch() -> Arch {
        Arch::new(&tiny_model_cfg(), &tiny_data_cfg()).unwrap()
    }

    #[test]
    fn teacher_is_deterministic_and_normalized() {
        let arch = tiny_arch();
        let mut store = ParamStore::new();
        init_teacher(&mut store, &arch, 5).unwrap();
        let window = vec![0.3; arch.clip_window * arch.image_dim];
        let audio = vec![-0.2; arch.audio_dim];

        let run = || {
            let mut tape = Tape::new();
            let out = teacher_forward(&mut tape, &store, &arch, &window, &audio).unwrap();
            (
                tape.value(out.descriptor).data().to_vec(),
                tape.value(out.probs).data().to_vec(),
            )
        };
        let (z1, p1) = run();
        let (z2, p2) = run();
        assert_eq!(z1, z2);
        assert_eq!(p1, p2);
        let sum: f64 = p1.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_teacher_is_uniform() {
        let arch = tiny_arch();
        let mut store = ParamStore::new();
        store.insert("teacher.l1.w", Tensor::zeros(vec![arch.teacher_hidden, arch.clip_input_dim()])).unwrap();
        store.insert("teacher.l1.b", Tensor::zeros(vec![arch.teacher_hidden])).unwrap();
        store.insert("teacher.l2.w", Tensor::zeros(vec![arch.descriptor_dim, arch.teacher_hidden])).unwrap();
        store.insert("teacher.l2.b", Tensor::zeros(vec![arch.descriptor_dim])).unwrap();
        store.insert("teacher.head.w", Tensor::zeros(vec![arch.num_classes, arch.descriptor_dim])).unwrap();
        store.insert("teacher.head.b", Tensor::zeros(vec![arch.num_classes])).unwrap();
        let mut tape = Tape::new();
        let window = vec![1.0; arch.clip_window * arch.image_dim];
        let audio = vec![1.0; arch.audio_dim];
        let out = teacher_forward(&mut tape, &store, &arch, &window, &audio).unwrap();
        for p in tape.value(out.probs).data() {
            assert!((p - 1.0 / arch.num_classes as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn student_image_stream_ignores_audio() {
        let arch = tiny_arch();
        let mut store = ParamStore::new();
        init_student(&mut store, &arch, 5).unwrap();
        let image = vec![0.1, -0.4, 0.9, 0.0];
        let run = |audio: Vec<f64>| {
            let mut tape = Tape::new();
            let out = student_forward(&mut tape, &store, &arch, Modality::Both, &image, &audio).unwrap();
            tape.value(out.z_img).data().to_vec()
        };
        assert_eq!(run(vec![0.0, 0.0, 0.0]), run(vec![5.0, -2.0, 1.0]));
    }

    #[test]
    fn student_probs_sum_to_one() {
        let arch = tiny_arch();
        let mut store = ParamStore::new();
        init_student(&mut store, &arch, 9).unwrap();
        let mut tape = Tape::new();
        let out = student_forward(&mut tape, &store, &arch, Modality::Both, &[0.2; 4], &[0.1; 3]).unwrap();
        let p = tape.value(out.probs).data();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn lstm_zero_weights_hand_values() {
        // All weights and biases zero: gates are 0.5, candidate tanh(0) = 0.
        let mut store = ParamStore::new();
        for gate in ["i", "f", "g", "o"] {
            store.insert(&format!("lstm.{gate}.w"), Tensor::zeros(vec![1, 2])).unwrap();
            store.insert(&format!("lstm.{gate}.b"), Tensor::zeros(vec![1])).unwrap();
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.7]).unwrap()).unwrap();
        let h0 = tape.leaf(Tensor::zeros(vec![1])).unwrap();

        let c0 = tape.leaf(Tensor::zeros(vec![1])).unwrap();
        let (h1, c1) = lstm_step(&mut tape, &store, "lstm", x, h0, c0).unwrap();
        assert_eq!(tape.value(c1).data(), &[0.0]);
        assert_eq!(tape.value(h1).data(), &[0.0]);

        let c_one = tape.leaf(Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let (h2, c2) = lstm_step(&mut tape, &store, "lstm", x, h0, c_one).unwrap();
        assert!((tape.value(c2).data()[0] - 0.5).abs() < 1e-15);
        let expect_h = 0.5 * 0.5f64.tanh();
        assert!((tape.value(h2).data()[0] - expect_h).abs() < 1e-15);
        assert!((expect_h - 0.23105857863000487).abs() < 1e-12);
    }

    #[test]
    fn lstm_step_passes_fd_check() {
        let mut store = ParamStore::new();
        let mut rng = seeds::stream(77, 99);
        init_lstm(&mut store, &mut rng, "lstm", 3, 4).unwrap();
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        let report = finite_diff_check(&mut store, &names, 1e-5, 1e-4, |tape, store| {
            let x = tape.leaf(Tensor::vector(vec![0.3, -0.8, 0.5])?)?;
            let h = tape.leaf(Tensor::vector(vec![0.1, 0.2, -0.1, 0.4])?)?;
            let c = tape.leaf(Tensor::vector(vec![-0.5, 0.9, 0.0, 0.3])?)?;
            let (h1, c1) = lstm_step(tape, store, "lstm", x, h, c)?;
            let joined = tape.concat(h1, c1)?;
            let weights = tape.leaf(Tensor::vector(vec![0.9, -1.1, 0.3, 0.7, 0.2, -0.6, 1.3, 0.05])?)?;
            tape.dot(joined, weights)
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn student_probs_gradient_passes_fd_check_for_encoder_params() {
        let arch = tiny_arch();
        let mut store = ParamStore::new();
        init_student(&mut store, &arch, 21).unwrap();
        let names: Vec<String> = store.names_with_prefix("student.img").into_iter()
            .chain(store.names_with_prefix("student.aud"))
            .collect();
        let report = finite_diff_check(&mut store, &names, 1e-5, 1e-4, |tape, store| {
            let out = student_forward(tape, store, &arch, Modality::Both, &[0.4, -0.2, 0.7, 0.1], &[0.3, 0.9, -0.5])?;
            let probe = tape.leaf(Tensor::vector(vec![0.2, -1.4, 0.9])?)?;
            tape.dot(out.probs, probe)
        })
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn trained_teacher_separates_classes() {
        let data_cfg = DatasetConfig {
            videos_per_class: 10,
            ..tiny_data_cfg()
        };
        let ds = crate::synthdata::gen_dataset(&data_cfg).unwrap();
        let model_cfg = ModelConfig {
            teacher_hidden: 16,
            ..tiny_model_cfg()
        };
        let arch = Arch::new(&model_cfg, &data_cfg).unwrap();
        let mut store = ParamStore::new();
        init_teacher(&mut store, &arch, 5).unwrap();
        train_teacher(&mut store, &arch, &ds, 12, 0.02, 16, 5).unwrap();

        // In-segment clips of val videos should mostly get their label.
        let mut correct = 0;
        let mut total = 0;
        for v in &ds.val {
            for t in 0..data_cfg.sequence_len {
                if !v.key_mask[t] {
                    continue;
                }
                let mut tape = Tape::new();
                let out = teacher_forward(&mut tape, &store, &arch, v.frame_feats.row(t), v.audio_feats.row(t)).unwrap();
                if tape.value(out.probs).argmax() == v.label {
                    correct += 1;
                }
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.8, "teacher in-segment accuracy {acc}");
    }
}
