//! Transformer runtime: weight loading, tokenization, forward passes and
//! greedy generation, with per-head capture and per-head intervention hooks
//! at the attention output projection.
//!
//! A head's "contribution" is its attention-weighted value output multiplied
//! by that head's slice of the output projection. The shared output bias is
//! attributed to the block, not to any head, so summing all head
//! contributions plus the bias reproduces the attention block output.

pub mod config;
pub mod tokenizer;
pub mod weights;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

pub use config::{HeadId, MlpKind, ModelConfig, NormKind, PositionKind};
pub use tokenizer::{TokenSequence, Tokenizer};

use crate::error::{Error, Result};
use weights::{MlpWeights, ModelWeights};

/// Which head contributions to record during a forward pass.
#[derive(Debug, Clone, Default)]
pub enum CaptureSpec {
    #[default]
    None,
    /// Every head, at the final token of the processed sequence.
    AllAtLast,
    /// Explicit `(head, absolute position)` pairs.
    Heads(Vec<(HeadId, usize)>),
}

/// One head's contribution vector at a token position.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadActivation {
    pub vector: Array1<f32>,
    pub position: usize,
    pub head: HeadId,
}

/// Per-head contributions captured from one prompt, keyed by head.
#[derive(Debug, Clone, Default)]
pub struct ActivationBundle {
    pub prompt_id: String,
    pub activations: BTreeMap<HeadId, HeadActivation>,
}

impl ActivationBundle {
    pub fn vector(&self, head: HeadId) -> Option<ArrayView1<'_, f32>> {
        self.activations.get(&head).map(|a| a.vector.view())
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        self.activations.keys().copied()
    }
}

/// Scaled mean-activation substitution applied to a set of heads.
#[derive(Debug, Clone)]
pub struct PatchPlan {
    pub heads: std::collections::BTreeSet<HeadId>,
    pub source: BTreeMap<HeadId, Array1<f32>>,
    pub scale: f32,
}

impl PatchPlan {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if !self.scale.is_finite() {
            return Err(Error::Intervention("patch scale must be finite".into()));
        }
        for head in &self.heads {
            head.check(config)?;
            let src = self.source.get(head).ok_or_else(|| {
                Error::Intervention(format!("no source activation for head {head}"))
            })?;
            if src.len() != config.d_model {
                return Err(Error::Intervention(format!(
                    "source vector for {head} has length {}, expected {}",
                    src.len(),
                    config.d_model
                )));
            }
        }
        Ok(())
    }

    fn heads_in_layer(&self, layer: usize) -> impl Iterator<Item = HeadId> + '_ {
        self.heads.iter().copied().filter(move |h| h.layer == layer)
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub last_logits: Array1<f32>,
    pub captured: Option<ActivationBundle>,
    pub intervened: bool,
}

/// When a [`PatchPlan`] fires during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchSchedule {
    /// Patch once, at the last prompt token.
    PromptLastOnly,
    /// Patch at the final position of every decoding step.
    EveryStep,
}

#[derive(Debug, Clone)]
pub struct StepTrace {
    pub position: usize,
    pub chosen: u32,
    pub logit: f32,
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    /// Detokenized continuation (new tokens only).
    pub text: String,
    pub new_ids: Vec<u32>,
    pub steps: Vec<StepTrace>,
    /// Set when generation stopped early because the context filled up.
    pub truncated: bool,
}

pub struct Model {
    pub config: ModelConfig,
    weights: ModelWeights,
    tokenizer: Tokenizer,
}

impl Model {
    /// Load weights plus tokenizer from a model directory (or weight file
    /// with sibling tokenizer files). With `config: None` the architecture
    /// is inferred from tensor names/shapes and an optional `config.json`.
    pub fn load(path: &Path, config: Option<ModelConfig>) -> Result<Self> {
        let config = match config {
            Some(c) => {
                c.validate()?;
                c
            }
            None => weights::infer_config(path)?,
        };
        let model_weights = weights::load_weights(path, &config)?;
        let dir = if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().unwrap_or(Path::new(".")).to_path_buf()
        };
        let tokenizer = Tokenizer::from_dir(&dir)?;
        Self::from_parts(config, model_weights, tokenizer)
    }

    /// Assemble a model from in-memory parts (synthetic models, tests).
    pub fn from_parts(
        config: ModelConfig,
        weights: ModelWeights,
        tokenizer: Tokenizer,
    ) -> Result<Self> {
        config.validate()?;
        if weights.layers.len() != config.n_layers {
            return Err(Error::InvalidConfig(format!(
                "weights have {} layers, config says {}",
                weights.layers.len(),
                config.n_layers
            )));
        }
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "tokenizer vocab {} exceeds model vocab {}",
                tokenizer.vocab_size(),
                config.vocab_size
            )));
        }
        Ok(Self {
            config,
            weights,
            tokenizer,
        })
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.tokenizer.tokenize(text)
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        self.tokenizer.detokenize(ids)
    }

    /// The model's reserved mask-token string, when the tokenizer has one.
    pub fn mask_token(&self) -> Option<&'static str> {
        for candidate in ["<|reserved_special_token_1|>", "<|mask|>"] {
            if self.tokenizer.special_id(candidate).is_some() {
                return Some(candidate);
            }
        }
        None
    }

    /// Row of the unembedding matrix for a token (as a column view of the
    /// transposed storage).
    pub fn unembed_direction(&self, token: u32) -> ArrayView1<'_, f32> {
        self.weights.unembed.column(token as usize)
    }

    pub(crate) fn unembed(&self) -> &Array2<f32> {
        &self.weights.unembed
    }

    pub(crate) fn final_norm(&self, x: ArrayView1<'_, f32>) -> Array1<f32> {
        match self.config.norm_kind {
            NormKind::PreLayerNorm => layer_norm(
                x,
                self.weights.final_norm_w.view(),
                self.weights
                    .final_norm_b
                    .as_ref()
                    .map(|b| b.view()),
                self.config.norm_eps,
            ),
            NormKind::RmsNorm => rms_norm(
                x,
                self.weights.final_norm_w.view(),
                self.config.norm_eps,
            ),
        }
    }

    /// Full forward pass over `tokens` with optional capture and patching.
    ///
    /// `patch` pairs a plan with the absolute token position whose head
    /// contributions are replaced by `scale * source` before the residual
    /// summation; downstream computation sees the substituted values.
    pub fn forward(
        &self,
        tokens: &TokenSequence,
        capture: &CaptureSpec,
        patch: Option<(&PatchPlan, usize)>,
    ) -> Result<ForwardTrace> {
        if tokens.is_empty() {
            return Err(Error::Prompt("cannot run forward on empty input".into()));
        }
        if tokens.len() > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.config.max_context,
            });
        }
        if let Some((plan, pos)) = patch {
            plan.validate(&self.config)?;
            if pos >= tokens.len() {
                return Err(Error::Intervention(format!(
                    "patch position {pos} outside sequence of {} tokens",
                    tokens.len()
                )));
            }
        }
        let requested = !matches!(capture, CaptureSpec::None);
        let requests = self.expand_capture(capture, tokens.len())?;
        let mut cache = KvCache::new(&self.config, tokens.len());
        let mut hooks = RunHooks::new(requests, patch);
        let last_hidden = self.run_chunk(&tokens.ids, 0, &mut cache, &mut hooks)?;
        let last_logits = self.logits_for(last_hidden.view());
        Ok(ForwardTrace {
            last_logits,
            captured: requested.then(|| hooks.take_bundle(&tokens.source_text)),
            intervened: hooks.intervened,
        })
    }

    /// Greedy decoding. Deterministic: argmax with ties broken by lowest id.
    pub fn generate(
        &self,
        tokens: &TokenSequence,
        max_new: usize,
        plan: Option<&PatchPlan>,
        schedule: PatchSchedule,
    ) -> Result<GenerateOutcome> {
        if max_new == 0 {
            return Err(Error::Prompt("max_new must be >= 1".into()));
        }
        if tokens.is_empty() {
            return Err(Error::Prompt("cannot generate from empty input".into()));
        }
        if tokens.len() > self.config.max_context {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.config.max_context,
            });
        }
        if let Some(p) = plan {
            p.validate(&self.config)?;
        }

        let budget = (self.config.max_context - tokens.len()).min(max_new);
        let truncated = budget < max_new;
        let mut cache = KvCache::new(&self.config, tokens.len() + budget);
        let mut steps = Vec::with_capacity(budget);
        let mut new_ids = Vec::with_capacity(budget);

        // prefill; both schedules patch the last prompt token
        let prefill_patch = plan.map(|p| (p, tokens.len() - 1));
        let mut hooks = RunHooks::new(Vec::new(), prefill_patch);
        let mut hidden = self.run_chunk(&tokens.ids, 0, &mut cache, &mut hooks)?;

        let mut pos = tokens.len();
        for _ in 0..budget {
            let logits = self.logits_for(hidden.view());
            let chosen = argmax(logits.view());
            steps.push(StepTrace {
                position: pos,
                chosen,
                logit: logits[chosen as usize],
            });
            new_ids.push(chosen);
            if new_ids.len() == budget {
                break;
            }
            let step_patch = match schedule {
                PatchSchedule::EveryStep => plan.map(|p| (p, pos)),
                PatchSchedule::PromptLastOnly => None,
            };
            let mut step_hooks = RunHooks::new(Vec::new(), step_patch);
            hidden = self.run_chunk(&[chosen], pos, &mut cache, &mut step_hooks)?;
            pos += 1;
        }

        Ok(GenerateOutcome {
            text: self.detokenize(&new_ids),
            new_ids,
            steps,
            truncated,
        })
    }

    fn logits_for(&self, hidden: ArrayView1<'_, f32>) -> Array1<f32> {
        let normed = self.final_norm(hidden);
        normed.dot(&self.weights.unembed)
    }

    fn expand_capture(
        &self,
        capture: &CaptureSpec,
        seq_len: usize,
    ) -> Result<Vec<(HeadId, usize)>> {
        match capture {
            CaptureSpec::None => Ok(Vec::new()),
            CaptureSpec::AllAtLast => {
                let last = seq_len - 1;
                let mut all = Vec::with_capacity(self.config.n_total_heads());
                for layer in 0..self.config.n_layers {
                    for head in 0..self.config.n_heads {
                        all.push((HeadId::new(layer, head), last));
                    }
                }
                Ok(all)
            }
            CaptureSpec::Heads(pairs) => {
                for (head, pos) in pairs {
                    head.check(&self.config)?;
                    if *pos >= seq_len {
                        return Err(Error::Prompt(format!(
                            "capture position {pos} outside sequence of {seq_len} tokens"
                        )));
                    }
                }
                Ok(pairs.clone())
            }
        }
    }

    /// Process one chunk of tokens starting at absolute `start_pos`,
    /// returning the final hidden state of the chunk.
    fn run_chunk(
        &self,
        ids: &[u32],
        start_pos: usize,
        cache: &mut KvCache,
        hooks: &mut RunHooks<'_>,
    ) -> Result<Array1<f32>> {
        let d = self.config.d_model;
        let t = ids.len();
        let mut x = Array2::<f32>::zeros((t, d));
        for (row, &id) in ids.iter().enumerate() {
            if (id as usize) >= self.config.vocab_size {
                return Err(Error::Prompt(format!(
                    "token id {id} out of vocab range {}",
                    self.config.vocab_size
                )));
            }
            let mut dst = x.row_mut(row);
            dst.assign(&self.weights.wte.row(id as usize));
            if let Some(wpe) = &self.weights.wpe {
                dst += &wpe.row(start_pos + row);
            }
        }

        for (layer_idx, layer) in self.weights.layers.iter().enumerate() {
            let xn = self.norm2(
                &x,
                &layer.attn_norm_w,
                layer.attn_norm_b.as_ref(),
            );
            let attn_out = self.attention(layer_idx, layer, &xn, start_pos, cache, hooks);
            x += &attn_out;
            let xn2 = self.norm2(&x, &layer.mlp_norm_w, layer.mlp_norm_b.as_ref());
            let mlp_out = mlp(&layer.mlp, &xn2);
            x += &mlp_out;
        }
        Ok(x.row(t - 1).to_owned())
    }

    fn norm2(
        &self,
        x: &Array2<f32>,
        w: &Array1<f32>,
        b: Option<&Array1<f32>>,
    ) -> Array2<f32> {
        let mut out = Array2::zeros(x.raw_dim());
        for (row, mut dst) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            let normed = match self.config.norm_kind {
                NormKind::PreLayerNorm => {
                    layer_norm(row, w.view(), b.map(|b| b.view()), self.config.norm_eps)
                }
                NormKind::RmsNorm => rms_norm(row, w.view(), self.config.norm_eps),
            };
            dst.assign(&normed);
        }
        out
    }

    fn attention(
        &self,
        layer_idx: usize,
        layer: &weights::LayerWeights,
        xn: &Array2<f32>,
        start_pos: usize,
        cache: &mut KvCache,
        hooks: &mut RunHooks<'_>,
    ) -> Array2<f32> {
        let cfg = &self.config;
        let (t, dh) = (xn.nrows(), cfg.d_head);
        let mut q = xn.dot(&layer.w_q);
        if let Some(b) = &layer.b_q {
            q += b;
        }
        let mut k_new = xn.dot(&layer.w_k);
        if let Some(b) = &layer.b_k {
            k_new += b;
        }
        let mut v_new = xn.dot(&layer.w_v);
        if let Some(b) = &layer.b_v {
            v_new += b;
        }
        if cfg.position_kind == PositionKind::Rotary {
            apply_rotary(&mut q, cfg.n_heads, dh, start_pos, &cache.inv_freq);
            apply_rotary(&mut k_new, cfg.n_kv_heads, dh, start_pos, &cache.inv_freq);
        }
        cache.append(layer_idx, &k_new, &v_new);
        let total = start_pos + t;
        let k_all = cache.k[layer_idx].slice(s![0..total, ..]);
        let v_all = cache.v[layer_idx].slice(s![0..total, ..]);

        let scale = 1.0 / (dh as f32).sqrt();
        let mut o = Array2::<f32>::zeros((t, cfg.attn_width()));
        for h in 0..cfg.n_heads {
            let kv = h / cfg.group_size();
            let q_h = q.slice(s![.., h * dh..(h + 1) * dh]);
            let k_h = k_all.slice(s![.., kv * dh..(kv + 1) * dh]);
            let v_h = v_all.slice(s![.., kv * dh..(kv + 1) * dh]);
            for row in 0..t {
                let visible = start_pos + row + 1;
                let mut scores: Array1<f32> =
                    k_h.slice(s![0..visible, ..]).dot(&q_h.row(row));
                scores *= scale;
                softmax_inplace(&mut scores);
                let ctx = scores.dot(&v_h.slice(s![0..visible, ..]));
                o.slice_mut(s![row, h * dh..(h + 1) * dh]).assign(&ctx);
            }
        }

        let mut attn_out = o.dot(&layer.w_o);
        if let Some(b) = &layer.b_o {
            attn_out += b;
        }

        // intervention: replace planned heads' contributions at the patch row
        if let Some((plan, pos)) = hooks.patch {
            if pos >= start_pos && pos < start_pos + t {
                let row = pos - start_pos;
                for head in plan.heads_in_layer(layer_idx) {
                    let contrib = head_contribution(layer, &o, row, head.head, dh);
                    let src = &plan.source[&head];
                    let mut dst = attn_out.row_mut(row);
                    dst -= &contrib;
                    dst.scaled_add(plan.scale, src);
                    hooks.intervened = true;
                }
            }
        }

        // capture: read contributions (post-intervention values for patched heads)
        for (head, pos) in hooks.requests_for_layer(layer_idx, start_pos, start_pos + t) {
            let row = pos - start_pos;
            let patched = hooks.patch.and_then(|(plan, ppos)| {
                (ppos == pos && plan.heads.contains(&head))
                    .then(|| &plan.source[&head] * plan.scale)
            });
            let vector = patched
                .unwrap_or_else(|| head_contribution(layer, &o, row, head.head, dh));
            hooks.captured.push(HeadActivation {
                vector,
                position: pos,
                head,
            });
        }

        attn_out
    }
}

/// One head's additive residual update: its value output through its slice
/// of the output projection, bias excluded.
fn head_contribution(
    layer: &weights::LayerWeights,
    o: &Array2<f32>,
    row: usize,
    head: usize,
    dh: usize,
) -> Array1<f32> {
    let o_h = o.slice(s![row, head * dh..(head + 1) * dh]);
    let w_slice = layer.w_o.slice(s![head * dh..(head + 1) * dh, ..]);
    o_h.dot(&w_slice)
}

struct RunHooks<'a> {
    requests: Vec<(HeadId, usize)>,
    patch: Option<(&'a PatchPlan, usize)>,
    captured: Vec<HeadActivation>,
    intervened: bool,
}

impl<'a> RunHooks<'a> {
    fn new(requests: Vec<(HeadId, usize)>, patch: Option<(&'a PatchPlan, usize)>) -> Self {
        Self {
            requests,
            patch,
            captured: Vec::new(),
            intervened: false,
        }
    }

    fn requests_for_layer(
        &self,
        layer: usize,
        lo: usize,
        hi: usize,
    ) -> Vec<(HeadId, usize)> {
        self.requests
            .iter()
            .copied()
            .filter(|(h, p)| h.layer == layer && *p >= lo && *p < hi)
            .collect()
    }

    fn take_bundle(&mut self, prompt_id: &str) -> ActivationBundle {
        let mut activations = BTreeMap::new();
        for act in self.captured.drain(..) {
            activations.insert(act.head, act);
        }
        ActivationBundle {
            prompt_id: prompt_id.to_string(),
            activations,
        }
    }
}

struct KvCache {
    k: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    len: usize,
    inv_freq: Vec<f32>,
}

impl KvCache {
    fn new(config: &ModelConfig, capacity: usize) -> Self {
        let kv_width = config.n_kv_heads * config.d_head;
        let k = (0..config.n_layers)
            .map(|_| Array2::zeros((capacity, kv_width)))
            .collect();
        let v = (0..config.n_layers)
            .map(|_| Array2::zeros((capacity, kv_width)))
            .collect();
        Self {
            k,
            v,
            len: 0,
            inv_freq: rope_inv_freq(config),
        }
    }

    fn append(&mut self, layer: usize, k_new: &Array2<f32>, v_new: &Array2<f32>) {
        let t = k_new.nrows();
        // all layers append the same rows per chunk; track len on layer 0
        let at = if layer == 0 {
            let at = self.len;
            self.len += t;
            at
        } else {
            self.len - t
        };
        self.k[layer].slice_mut(s![at..at + t, ..]).assign(k_new);
        self.v[layer].slice_mut(s![at..at + t, ..]).assign(v_new);
    }
}

fn rope_inv_freq(config: &ModelConfig) -> Vec<f32> {
    if config.position_kind != PositionKind::Rotary {
        return Vec::new();
    }
    let dh = config.d_head;
    (0..dh / 2)
        .map(|i| {
            let base = 1.0 / config.rope_theta.powf(2.0 * i as f32 / dh as f32);
            match &config.rope_scaling {
                Some(scaling) => scaling.apply(base),
                None => base,
            }
        })
        .collect()
}

/// Rotate-half rotary embedding, matching the reference convention:
/// first half pairs with second half of each head's channels.
fn apply_rotary(x: &mut Array2<f32>, n_heads: usize, dh: usize, start_pos: usize, inv_freq: &[f32]) {
    let half = dh / 2;
    for row in 0..x.nrows() {
        let pos = (start_pos + row) as f32;
        for h in 0..n_heads {
            let base = h * dh;
            for i in 0..half {
                let angle = pos * inv_freq[i];
                let (sin, cos) = angle.sin_cos();
                let a = x[[row, base + i]];
                let b = x[[row, base + half + i]];
                x[[row, base + i]] = a * cos - b * sin;
                x[[row, base + half + i]] = b * cos + a * sin;
            }
        }
    }
}

fn softmax_inplace(scores: &mut Array1<f32>) {
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in scores.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    if sum > 0.0 {
        *scores /= sum;
    }
}

pub(crate) fn layer_norm(
    x: ArrayView1<'_, f32>,
    w: ArrayView1<'_, f32>,
    b: Option<ArrayView1<'_, f32>>,
    eps: f32,
) -> Array1<f32> {
    let n = x.len() as f32;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let denom = (var + eps).sqrt();
    let mut out: Array1<f32> = x.iter().zip(w.iter()).map(|(v, w)| (v - mean) / denom * w).collect();
    if let Some(b) = b {
        out += &b;
    }
    out
}

pub(crate) fn rms_norm(x: ArrayView1<'_, f32>, w: ArrayView1<'_, f32>, eps: f32) -> Array1<f32> {
    let n = x.len() as f32;
    let ms = x.iter().map(|v| v * v).sum::<f32>() / n;
    let denom = (ms + eps).sqrt();
    x.iter().zip(w.iter()).map(|(v, w)| v / denom * w).collect()
}

/// Tanh-approximated GELU (the GPT-2 variant).
fn gelu_new(x: f32) -> f32 {
    let c = (2.0 / std::f32::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044_715 * x * x * x)).tanh())
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

fn mlp(mlp: &MlpWeights, xn: &Array2<f32>) -> Array2<f32> {
    match mlp {
        MlpWeights::Gelu {
            w_fc,
            b_fc,
            w_proj,
            b_proj,
        } => {
            let mut h = xn.dot(w_fc);
            h += b_fc;
            h.mapv_inplace(gelu_new);
            let mut out = h.dot(w_proj);
            out += b_proj;
            out
        }
        MlpWeights::GatedSilu { w_gate, w_up, w_down } => {
            let mut g = xn.dot(w_gate);
            g.mapv_inplace(silu);
            let u = xn.dot(w_up);
            (g * u).dot(w_down)
        }
    }
}

fn argmax(logits: ArrayView1<'_, f32>) -> u32 {
    let mut best = 0usize;
    let mut best_val = f32::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best as u32
}
