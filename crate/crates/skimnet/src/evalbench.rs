//! Comparison strategies, metrics, and the multiply-accumulate ledger.
//!
//! Every strategy answers "which image-audio pairs does a video-level
//! prediction pay for", from fixed selections (front/center/end/uniform/
//! random) through dense averaging and confidence-based sampling to the
//! trained recurrent skimmer. Costs are stated as exact per-video MAC
//! counts from an analytic model, and every evaluation cross-checks that
//! model against the instrumented counter of an actual run.

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::models::{self, Arch, Modality};
use crate::numerics::params::{Adam, ParamStore};
use crate::numerics::tape::{Component, MacCount, NodeId, Tape};
use crate::numerics::{argmax, NumericsError, Tensor};
use crate::seeds;
use crate::skim::{self, InferenceBudget, Skimmer};
use crate::synthdata::{Dataset, SyntheticVideo};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown strategy '{0}'; valid: {1}")]
    UnknownStrategy(String, String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty selection")]
    EmptySelection,
    #[error("validation error: {0}")]
    Validation(String),
    #[error("ledger mismatch for {strategy}: analytic {analytic:?} != instrumented {instrumented:?}")]
    LedgerMismatch {
        strategy: String,
        analytic: Box<CostLedger>,
        instrumented: Box<CostLedger>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Skim(#[from] skim::SkimError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Uniform,
    Front,
    Center,
    End,
    Dense,
    ScSampler,
    Lstm,
    NonRecurrent,
    Ours,
}

pub const ALL_STRATEGIES: [Strategy; 10] = [
    Strategy::Random,
    Strategy::Uniform,
    Strategy::Front,
    Strategy::Center,
    Strategy::End,
    Strategy::Dense,
    Strategy::ScSampler,
    Strategy::Lstm,
    Strategy::NonRecurrent,
    Strategy::Ours,
];

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uniform => "uniform",
            Strategy::Front => "front",
            Strategy::Center => "center",
            Strategy::End => "end",
            Strategy::Dense => "dense",
            Strategy::ScSampler => "scsampler",
            Strategy::Lstm => "lstm",
            Strategy::NonRecurrent => "nonrecurrent",
            Strategy::Ours => "ours",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ALL_STRATEGIES
            .iter()
            .find(|s| s.name() == name)
            .copied()
            .ok_or_else(|| {
                let valid: Vec<&str> = ALL_STRATEGIES.iter().map(|s| s.name()).collect();
                EvalError::UnknownStrategy(name.to_string(), valid.join(", "))
            })
    }

    /// Whether the strategy picks a strict subset of timestamps.
    pub fn selects(self) -> bool {
        !matches!(self, Strategy::Dense | Strategy::Lstm)
    }
}

// --- cost ledger -------------------------------------------------------------

/// Exact per-video multiply-accumulate counts per component. `total` covers
/// the headline MAC fields only; bias adds and elementwise multiplies are
/// tracked separately and excluded from ratios.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CostLedger {
    pub encoders: u64,
    pub fusion: u64,
    pub classifier: u64,
    pub lstm: u64,
    pub querying: u64,
    pub interpolation: u64,
    pub teacher: u64,
    pub total: u64,
    pub bias_adds: u64,
    pub aux_mults: u64,
}

impl CostLedger {
    pub fn finalize(mut self) -> Self {
        self.total = self.encoders
            + self.fusion
            + self.classifier
            + self.lstm
            + self.querying
            + self.interpolation
            + self.teacher;
        self
    }

    pub fn from_counts(counts: &BTreeMap<Component, MacCount>) -> Self {
        let mut ledger = CostLedger::default();
        for (component, c) in counts {
            let slot = match component {
                Component::Encoders => &mut ledger.encoders,
                Component::Fusion => &mut ledger.fusion,
                Component::Classifier => &mut ledger.classifier,
                Component::Lstm => &mut ledger.lstm,
                Component::Querying => &mut ledger.querying,
                Component::Interpolation => &mut ledger.interpolation,
                Component::Teacher => &mut ledger.teacher,
                Component::Loss | Component::Other => {
                    ledger.bias_adds += c.bias_adds;
                    ledger.aux_mults += c.aux_mults;
                    continue;
                }
            };
            *slot += c.macs;
            ledger.bias_adds += c.bias_adds;
            ledger.aux_mults += c.aux_mults;
        }
        ledger.finalize()
    }

    /// Headline MAC ratio against a reference ledger.
    pub fn ratio_vs(&self, reference: &CostLedger) -> f64 {
        self.total as f64 / reference.total as f64
    }

    /// Equality over the modeled fields: MACs per component plus bias
    /// adds. Elementwise multiplies (`aux_mults`) are instrumented but not
    /// analytically modeled.
    pub fn macs_eq(&self, other: &CostLedger) -> bool {
        self.encoders == other.encoders
            && self.fusion == other.fusion
            && self.classifier == other.classifier
            && self.lstm == other.lstm
            && self.querying == other.querying
            && self.interpolation == other.interpolation
            && self.teacher == other.teacher
            && self.total == other.total
            && self.bias_adds == other.bias_adds
    }
}

/// MAC count for one primitive component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopComponent {
    Dense { out: usize, input: usize },
    LstmStep { input: usize, hidden: usize },
    Attention { n: usize, key_dim: usize },
    SoftIndex { n: usize, feat_dim: usize },
}

pub fn flop_count(c: FlopComponent) -> u64 {
    match c {
        FlopComponent::Dense { out, input } => (out * input) as u64,
        FlopComponent::LstmStep { input, hidden } => (4 * hidden * (input + hidden)) as u64,
        FlopComponent::Attention { n, key_dim } => (n * key_dim) as u64,
        FlopComponent::SoftIndex { n, feat_dim } => (n * feat_dim) as u64,
    }
}

/// (macs, bias_adds) for a stack of dense layers.
fn dense_chain(layers: &[(usize, usize)]) -> (u64, u64) {
    let mut macs = 0;
    let mut bias = 0;
    for (out, input) in layers {
        macs += flop_count(FlopComponent::Dense { out: *out, input: *input });
        bias += *out as u64;
    }
    (macs, bias)
}

/// Analytic cost pieces derived from the architecture.
pub struct CostModel {
    pub arch: Arch,
    pub n: usize,
    pub select_count: usize,
    pub train_steps: usize,
}

impl CostModel {
    fn enc_img(&self) -> (u64, u64) {
        dense_chain(&self.arch.encoder_layers(self.arch.image_dim))
    }

    fn enc_aud(&self) -> (u64, u64) {
        dense_chain(&self.arch.encoder_layers(self.arch.audio_dim))
    }

    fn fusion(&self) -> (u64, u64) {
        let d = self.arch.descriptor_dim;
        dense_chain(&[(d, d), (d, d)])
    }

    fn head(&self) -> (u64, u64) {
        dense_chain(&[(self.arch.num_classes, self.arch.descriptor_dim)])
    }

    fn teacher_pair(&self) -> (u64, u64) {
        let a = &self.arch;
        dense_chain(&[
            (a.teacher_hidden, a.clip_input_dim()),
            (a.descriptor_dim, a.teacher_hidden),
            (a.num_classes, a.descriptor_dim),
        ])
    }

    fn query(&self) -> (u64, u64) {
        let a = &self.arch;
        dense_chain(&[(a.query_hidden, a.lstm_hidden), (a.key_dim, a.query_hidden)])
    }

    fn key_per_position(&self) -> (u64, u64) {
        dense_chain(&[(self.arch.key_dim, self.arch.half_dim)])
    }

    fn gate(&self) -> (u64, u64) {
        dense_chain(&[(2, self.arch.lstm_hidden)])
    }

    fn lstm_step(&self) -> (u64, u64) {
        let a = &self.arch;
        (
            flop_count(FlopComponent::LstmStep { input: a.descriptor_dim, hidden: a.lstm_hidden }),
            4 * a.lstm_hidden as u64,
        )
    }

    /// Cost of evaluating the student on `pairs` image-audio pairs.
    fn student_pairs(&self, pairs: usize) -> CostLedger {
        let mut ledger = CostLedger::default();
        let (ei, bi) = self.enc_img();
        let (ea, ba) = self.enc_aud();
        let (f, bf) = self.fusion();
        let (h, bh) = self.head();
        let p = pairs as u64;
        ledger.encoders = p * (ei + ea);
        ledger.fusion = p * f;
        ledger.classifier = p * h;
        ledger.bias_adds = p * (bi + ba + bf + bh);
        ledger.finalize()
    }

    /// Per-video ledger of a strategy under the given inference budget.
    pub fn strategy_cost(&self, strategy: Strategy, budget: &InferenceBudget) -> CostLedger {
        let n = self.n;
        let k = self.select_count.min(n);
        match strategy {
            Strategy::Random | Strategy::Uniform | Strategy::Front | Strategy::Center | Strategy::End => {
                self.student_pairs(k)
            }
            Strategy::Dense | Strategy::ScSampler => self.student_pairs(n),
            Strategy::Lstm => {
                let mut ledger = CostLedger::default();
                let (ei, bi) = self.enc_img();
                let (ea, ba) = self.enc_aud();
                let (f, bf) = self.fusion();
                let (l, bl) = self.lstm_step();
                let head = dense_chain(&[(self.arch.num_classes, self.arch.lstm_hidden)]);
                let p = n as u64;
                ledger.encoders = p * (ei + ea);
                ledger.fusion = p * f;
                ledger.lstm = p * l;
                ledger.classifier = head.0;
                ledger.bias_adds = p * (bi + ba + bf + bl) + head.1;
                ledger.finalize()
            }
            Strategy::NonRecurrent => {
                let mut ledger = CostLedger::default();
                let (ei, bi) = self.enc_img();
                let (ea, ba) = self.enc_aud();
                let (f, bf) = self.fusion();
                let (hd, bhd) = self.head();
                let (q, bq) = self.query();
                let (g, bg) = self.gate();
                let (kf, bk) = self.key_per_position();
                let (l, bl) = self.lstm_step();
                let a = &self.arch;
                ledger.encoders = n as u64 * (ei + ea);
                // One full query step over dense keys, then predictions at
                // the top-k weights only.
                ledger.querying = n as u64 * 2 * kf
                    + 2 * flop_count(FlopComponent::SoftIndex { n, feat_dim: a.half_dim })
                    + 2 * q
                    + g
                    + 2 * flop_count(FlopComponent::Attention { n, key_dim: a.key_dim });
                ledger.lstm = l;
                ledger.fusion = f + k as u64 * f;
                ledger.classifier = k as u64 * hd;
                ledger.bias_adds =
                    n as u64 * (bi + ba + 2 * bk) + 2 * bq + bg + bl + bf + k as u64 * (bf + bhd);
                ledger.finalize()
            }
            Strategy::Ours => self.skim_cost(budget, Modality::Both),
        }
    }

    /// Ledger of the skimmer under a budget.
    pub fn skim_cost(&self, budget: &InferenceBudget, modality: Modality) -> CostLedger {
        let a = &self.arch;
        let n = self.n;
        let factor = budget.subsample_factor;
        let kept = (n - 1) / factor + 1;
        let both = modality == Modality::Both;
        let streams: u64 = if both { 2 } else { 1 };

        let mut ledger = CostLedger::default();
        let (ei, bi) = self.enc_img();
        let (ea, ba) = self.enc_aud();
        let (f, bf) = self.fusion();
        let (hd, bhd) = self.head();
        let (q, bq) = self.query();
        let (g, bg) = self.gate();
        let (kf, bk) = self.key_per_position();
        let (l, bl) = self.lstm_step();
        let t = budget.t_stop as u64;

        ledger.encoders = kept as u64 * if both { ei + ea } else { ei };
        ledger.querying = kept as u64 * streams * kf;
        ledger.bias_adds += kept as u64 * (if both { bi + ba } else { bi } + streams * bk);

        if factor > 1 {
            // Synthesized positions between kept rows; the tail past the
            // last kept row is clamped, not interpolated.
            let last_kept = (kept - 1) * factor;
            let synthesized = (n - kept - (n - 1 - last_kept)) as u64;
            let per_position = streams * (a.half_dim as u64 + a.key_dim as u64)
                + if budget.use_recognition_features { a.descriptor_dim as u64 } else { 0 };
            ledger.interpolation = synthesized * per_position;
        }

        // Step-1 uniform soft index.
        let si_half = flop_count(FlopComponent::SoftIndex { n, feat_dim: a.half_dim });
        ledger.querying += streams * si_half;

        let att = flop_count(FlopComponent::Attention { n, key_dim: a.key_dim });
        let per_step_querying = if both {
            2 * q + g + 2 * att + 4 * si_half
        } else {
            q + att + si_half
        };
        ledger.querying += t * per_step_querying;
        ledger.lstm = t * l;
        ledger.fusion = t * f;
        ledger.classifier = hd;
        ledger.bias_adds += t * (if both { 2 * bq + bg } else { bq } + bl + bf) + bhd;

        if budget.use_recognition_features {
            let (tp, tb) = self.teacher_pair();
            ledger.teacher = kept as u64 * tp;
            ledger.bias_adds += kept as u64 * tb;
            let si_rec = flop_count(FlopComponent::SoftIndex { n, feat_dim: a.descriptor_dim });
            ledger.querying += si_rec + t * streams * si_rec;
        }
        ledger.finalize()
    }
}

// --- selection metrics --------------------------------------------------------

/// Overlap of the selected timestamps with the planted key segment:
/// |selected ∩ key| / min(|selected|, L).
pub fn selection_recall(selected: &[usize], key_mask: &[bool]) -> Result<f64> {
    if selected.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    let l = key_mask.iter().filter(|m| **m).count();
    if l == 0 {
        return Err(EvalError::Validation("key mask has no true entries".into()));
    }
    let mut seen = Vec::new();
    let mut hits = 0usize;
    for &s in selected {
        if seen.contains(&s) {
            continue;
        }
        seen.push(s);
        if s < key_mask.len() && key_mask[s] {
            hits += 1;
        }
    }
    Ok(hits as f64 / seen.len().min(l) as f64)
}

/// Deterministic uniform selection: round(j * (n-1) / (k-1)).
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    if k <= 1 {
        return vec![0];
    }
    (0..k)
        .map(|j| ((j * (n - 1)) as f64 / (k - 1) as f64 + 0.5).floor() as usize)
        .collect()
}

fn random_indices(n: usize, k: usize, seed: u64, video_index: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = seeds::eval_random_stream(seed, video_index);
    let mut pool: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut sel = pool[..k].to_vec();
    sel.sort_unstable();
    sel
}

/// Indices of the k largest values; lowest index wins ties.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*b].partial_cmp(&values[*a]).unwrap().then(a.cmp(b)));
    let mut sel = order[..k.min(values.len())].to_vec();
    sel.sort_unstable();
    sel
}

// --- strategy execution --------------------------------------------------------

pub struct EvalContext<'a> {
    pub store: &'a ParamStore,
    pub arch: &'a Arch,
    pub skimmer: Option<&'a Skimmer>,
    pub budget: InferenceBudget,
    pub select_count: usize,
    pub seed: u64,
}

pub struct StrategyRun {
    pub probs: Vec<f64>,
    pub selected: Option<Vec<usize>>,
    pub counts: BTreeMap<Component, MacCount>,
}

/// Average the student's posterior over the selected timestamps.
fn average_student_probs(
    ctx: &EvalContext<'_>,
    video: &SyntheticVideo,
    indices: &[usize],
) -> Result<(Vec<f64>, BTreeMap<Component, MacCount>)> {
    let mut tape = Tape::new();
    let mut acc = vec![0.0; ctx.arch.num_classes];
    for &t in indices {
        let out = models::student_forward(
            &mut tape,
            ctx.store,
            ctx.arch,
            Modality::Both,
            video.image_feats.row(t),
            video.audio_feats.row(t),
        )?;
        for (a, p) in acc.iter_mut().zip(tape.value(out.probs).data()) {
            *a += p;
        }
    }
    for a in acc.iter_mut() {
        *a /= indices.len() as f64;
    }
    Ok((acc, tape.counts().clone()))
}

/// Run one strategy on one video, returning its posterior, its selected
/// timestamps where applicable, and the instrumented MAC counts.
pub fn run_strategy(
    strategy: Strategy,
    ctx: &EvalContext<'_>,
    video: &SyntheticVideo,
    video_index: u64,
) -> Result<StrategyRun> {
    let n = video.key_mask.len();
    let k = ctx.select_count.min(n);
    match strategy {
        Strategy::Random => {
            let sel = random_indices(n, k, ctx.seed, video_index);
            let (probs, counts) = average_student_probs(ctx, video, &sel)?;
            Ok(StrategyRun { probs, selected: Some(sel), counts })
        }
        Strategy::Uniform => {
            let sel = uniform_indices(n, k);
            let (probs, counts) = average_student_probs(ctx, video, &sel)?;
            Ok(StrategyRun { probs, selected: Some(sel), counts })
        }
        Strategy::Front => {
            let sel: Vec<usize> = (0..k).collect();
            let (probs, counts) = average_student_probs(ctx, video, &sel)?;
            Ok(StrategyRun { probs, selected: Some(sel), counts })
        }
        Strategy::Center => {
            let start = (n - k) / 2;
            let sel: Vec<usize> = (start..start + k).collect();
            let (probs, counts) = average_student_probs(ctx, video, &sel)?;
            Ok(StrategyRun { probs, selected: Some(sel), counts })
        }
        Strategy::End => {
            let sel: Vec<usize> = (n - k..n).collect();
            let (probs, counts) = average_student_probs(ctx, video, &sel)?;
            Ok(StrategyRun { probs, selected: Some(sel), counts })
        }
        Strategy::Dense => {
            let all: Vec<usize> = (0..n).collect();
            let (probs, counts) = average_student_probs(ctx, video, &all)?;
            Ok(StrategyRun { probs, selected: None, counts })
        }
        Strategy::ScSampler => {
            // Confidence = max class probability at each timestamp; keep the
            // k most confident pairs.
            let mut tape = Tape::new();
            let mut per_t: Vec<Vec<f64>> = Vec::with_capacity(n);
            for t in 0..n {
                let out = models::student_forward(
                    &mut tape,
                    ctx.store,
                    ctx.arch,
                    Modality::Both,
                    video.image_feats.row(t),
                    video.audio_feats.row(t),
                )?;
                per_t.push(tape.value(out.probs).data().to_vec());
            }
            let confidence: Vec<f64> = per_t
                .iter()
                .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let sel = top_k_indices(&confidence, k);
            let mut probs = vec![0.0; ctx.arch.num_classes];
            for &t in &sel {
                for (a, p) in probs.iter_mut().zip(&per_t[t]) {
                    *a += p;
                }
            }
            for a in probs.iter_mut() {
                *a /= sel.len() as f64;
            }
            Ok(StrategyRun { probs, selected: Some(sel), counts: tape.counts().clone() })
        }
        Strategy::Lstm => {
            let mut tape = Tape::new();
            let mut h = tape.leaf(Tensor::zeros(vec![ctx.arch.lstm_hidden]))?;
            let mut c = tape.leaf(Tensor::zeros(vec![ctx.arch.lstm_hidden]))?;
            for t in 0..n {
                let x = lstm_baseline_input(&mut tape, ctx.store, ctx.arch, video, t)?;
                let (h2, c2) = models::lstm_step(&mut tape, ctx.store, "lstmb.lstm", x, h, c)?;
                h = h2;
                c = c2;
            }
            tape.scope(Component::Classifier);
            let w = tape.param(ctx.store, "lstmb.head.w")?;
            let b = tape.param(ctx.store, "lstmb.head.b")?;
            let logits = tape.affine(h, w, b)?;
            let probs = tape.softmax(logits)?;
            Ok(StrategyRun {
                probs: tape.value(probs).data().to_vec(),
                selected: None,
                counts: tape.counts().clone(),
            })
        }
        Strategy::NonRecurrent => {
            let skimmer = ctx
                .skimmer
                .ok_or_else(|| EvalError::Validation("nonrecurrent strategy needs a trained skimmer".into()))?;
            non_recurrent_run(ctx, skimmer, video, k)
        }
        Strategy::Ours => {
            let skimmer = ctx
                .skimmer
                .ok_or_else(|| EvalError::Validation("ours strategy needs a trained skimmer".into()))?;
            let out = skim::skim_infer(ctx.store, skimmer, video, &ctx.budget)?;
            Ok(StrategyRun {
                probs: out.probs.data().to_vec(),
                selected: Some(out.trace.selected_indices()),
                counts: out.counts,
            })
        }
    }
}

fn lstm_baseline_input(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &Arch,
    video: &SyntheticVideo,
    t: usize,
) -> Result<NodeId> {
    let x = tape.leaf(Tensor::vector(video.image_feats.row(t).to_vec())?)?;
    let zi = models::encoder_forward(tape, store, arch, "student.img", x)?;
    let a = tape.leaf(Tensor::vector(video.audio_feats.row(t).to_vec())?)?;
    let za = models::encoder_forward(tape, store, arch, "student.aud", a)?;
    Ok(models::fusion_forward(tape, store, zi, za)?)
}

/// Single query step, then average the student's predictions at the top-k
/// gate-mixed attention weights.
fn non_recurrent_run(
    ctx: &EvalContext<'_>,
    skimmer: &Skimmer,
    video: &SyntheticVideo,
    k: usize,
) -> Result<StrategyRun> {
    let arch = &skimmer.arch;
    let n = video.key_mask.len();
    let mut tape = Tape::new();
    let positions: Vec<usize> = (0..n).collect();
    let feats = skim::extract_features(&mut tape, ctx.store, arch, video, &positions, Modality::Both, false)?;
    let img_rows = skim::leaf_rows(&mut tape, &feats.image)?;
    let aud_rows = skim::leaf_rows(&mut tape, &feats.audio)?;

    let keys_img = models::keys_forward(&mut tape, ctx.store, &arch.key_name("img"), &img_rows)?;
    let keys_aud = models::keys_forward(&mut tape, ctx.store, &arch.key_name("aud"), &aud_rows)?;
    let img_mat = tape.stack_rows(img_rows.clone())?;
    let aud_mat = tape.stack_rows(aud_rows.clone())?;

    tape.scope(Component::Querying);
    let uniform = tape.leaf(Tensor::vector(vec![1.0 / n as f64; n])?)?;
    let z_img = skim::soft_index(&mut tape, uniform, img_mat)?;
    let z_aud = skim::soft_index(&mut tape, uniform, aud_mat)?;
    let fused = models::fusion_forward(&mut tape, ctx.store, z_img, z_aud)?;
    let h0 = tape.leaf(Tensor::zeros(vec![arch.lstm_hidden]))?;
    let c0 = tape.leaf(Tensor::zeros(vec![arch.lstm_hidden]))?;
    let (h, _c) = models::lstm_step(&mut tape, ctx.store, "skim.lstm", fused, h0, c0)?;

    let q_img = models::query_forward(&mut tape, ctx.store, "skim.query_img", h)?;
    let w_img = skim::attention_weights(&mut tape, keys_img, q_img)?;
    let q_aud = models::query_forward(&mut tape, ctx.store, "skim.query_aud", h)?;
    let w_aud = skim::attention_weights(&mut tape, keys_aud, q_aud)?;
    let gate = models::gate_forward(&mut tape, ctx.store, h)?;
    let mixed = skim::gate_mix(&mut tape, gate, w_img, w_aud)?;
    let sel = top_k_indices(tape.value(mixed).data(), k);

    let mut probs = vec![0.0; arch.num_classes];
    for &t in &sel {
        let fused = models::fusion_forward(&mut tape, ctx.store, img_rows[t], aud_rows[t])?;
        tape.scope(Component::Classifier);
        let w = tape.param(ctx.store, "student.head.w")?;
        let b = tape.param(ctx.store, "student.head.b")?;
        let logits = tape.affine(fused, w, b)?;
        let p = tape.softmax(logits)?;
        for (a, v) in probs.iter_mut().zip(tape.value(p).data()) {
            *a += v;
        }
    }
    for a in probs.iter_mut() {
        *a /= sel.len() as f64;
    }
    Ok(StrategyRun { probs, selected: Some(sel), counts: tape.counts().clone() })
}

// --- evaluation ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub strategy: String,
    pub seed: u64,
    pub num_videos: usize,
    pub top1_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub mean_selection_recall: Option<f64>,
    pub cost_per_video: CostLedger,
    pub extrapolated_steps: bool,
}

/// Evaluate one strategy over a split. Costs come from the analytic model;
/// the first video additionally cross-checks them against the instrumented
/// counter and errors on any disagreement.
pub fn evaluate(
    strategy: Strategy,
    ctx: &EvalContext<'_>,
    videos: &[SyntheticVideo],
    cost_model: &CostModel,
) -> Result<EvalReport> {
    if videos.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let analytic = cost_model.strategy_cost(strategy, &ctx.budget);

    let first = run_strategy(strategy, ctx, &videos[0], 0)?;
    let instrumented = CostLedger::from_counts(&first.counts);
    if !analytic.macs_eq(&instrumented) {
        return Err(EvalError::LedgerMismatch {
            strategy: strategy.name().to_string(),
            analytic: Box::new(analytic),
            instrumented: Box::new(instrumented),
        });
    }

    let results: Vec<Result<(usize, Option<Vec<usize>>)>> = parallel_map(videos.len(), |i| {
        if i == 0 {
            return Ok((argmax(&first.probs), first.selected.clone()));
        }
        let run = run_strategy(strategy, ctx, &videos[i], i as u64)?;
        Ok((argmax(&run.probs), run.selected))
    });

    let num_classes = ctx.arch.num_classes;
    let mut correct = 0usize;
    let mut class_total = vec![0usize; num_classes];
    let mut class_correct = vec![0usize; num_classes];
    let mut recalls = Vec::new();
    for (video, res) in videos.iter().zip(results) {
        let (pred, selected) = res?;
        class_total[video.label] += 1;
        if pred == video.label {
            correct += 1;
            class_correct[video.label] += 1;
        }
        if strategy.selects() {
            if let Some(sel) = &selected {
                recalls.push(selection_recall(sel, &video.key_mask)?);
            }
        }
    }

    Ok(EvalReport {
        strategy: strategy.name().to_string(),
        seed: ctx.seed,
        num_videos: videos.len(),
        top1_accuracy: correct as f64 / videos.len() as f64,
        per_class_accuracy: class_total
            .iter()
            .zip(&class_correct)
            .map(|(t, c)| if *t == 0 { 0.0 } else { *c as f64 / *t as f64 })
            .collect(),
        mean_selection_recall: if recalls.is_empty() {
            None
        } else {
            Some(recalls.iter().sum::<f64>() / recalls.len() as f64)
        },
        cost_per_video: analytic,
        extrapolated_steps: ctx
            .skimmer
            .map(|s| ctx.budget.t_stop > s.trained_steps)
            .unwrap_or(false),
    })
}

/// Worker cap: SKIMNET_THREADS, else available parallelism, at most 8.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("SKIMNET_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

/// Deterministic indexed parallel map: results land in input order no
/// matter how work is scheduled.
pub fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots_ptr = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                let mut guard = slots_ptr.lock().unwrap();
                guard[i] = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

// --- LSTM baseline training -----------------------------------------------------

/// Train the all-timestamp LSTM baseline end-to-end (its own LSTM and head;
/// the student's features are frozen inputs).
pub fn train_lstm_baseline(
    store: &mut ParamStore,
    arch: &Arch,
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    // Frozen features: compute the fused per-timestamp inputs once.
    let mut inputs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dataset.train.len());
    for v in &dataset.train {
        let mut tape = Tape::new();
        let mut rows = Vec::with_capacity(v.key_mask.len());
        for t in 0..v.key_mask.len() {
            let x = lstm_baseline_input(&mut tape, store, arch, v, t)?;
            rows.push(tape.value(x).data().to_vec());
        }
        inputs.push(rows);
    }

    let mut opt = Adam::new(learning_rate);
    let trainable = |name: &str| name.starts_with("lstmb.");
    let mut rng = seeds::stream(seed, seeds::STREAM_LSTM_BASELINE_SHUFFLE);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    for _ in 0..epochs {
        models::shuffle(&mut order, &mut rng);
        for batch in order.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(batch.len());
            for vi in batch {
                let mut h = tape.leaf(Tensor::zeros(vec![arch.lstm_hidden]))?;
                let mut c = tape.leaf(Tensor::zeros(vec![arch.lstm_hidden]))?;
                for row in &inputs[*vi] {
                    let x = tape.leaf(Tensor::vector(row.clone())?)?;
                    let (h2, c2) = models::lstm_step(&mut tape, store, "lstmb.lstm", x, h, c)?;
                    h = h2;
                    c = c2;
                }
                tape.scope(Component::Classifier);
                let w = tape.param(store, "lstmb.head.w")?;
                let b = tape.param(store, "lstmb.head.b")?;
                let logits = tape.affine(h, w, b)?;
                let probs = tape.softmax(logits)?;
                tape.scope(Component::Loss);
                let p = tape.clamp_min(probs, 1e-12)?;
                let logp = tape.log(p)?;
                losses.push(tape.extract(logp, dataset.train[*vi].label)?);
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
