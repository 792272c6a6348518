//! Deterministic synthetic models for tests, fixtures and demos.
//!
//! Two kinds live here:
//! - randomly initialized models (GPT-2-small shape, tiny Llama shape) whose
//!   weights are a pure function of a seed, so reference fixtures computed
//!   once stay valid without committing hundreds of megabytes;
//! - planted models whose attention heads are wired to write designated
//!   token directions, giving detector tests an exact ground truth.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::{MlpKind, ModelConfig, NormKind, PositionKind};
use crate::model::tokenizer::{train_bpe, Tokenizer};
use crate::model::weights::{LayerWeights, MlpWeights, ModelWeights};
use crate::model::Model;

fn gauss(rng: &mut ChaCha8Rng, std: f32) -> f32 {
    // Box-Muller; avoids a distribution dependency and stays reproducible
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos() * std
}

fn gauss_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f32) -> Array2<f32> {
    Array2::from_shape_simple_fn((rows, cols), || gauss(rng, std))
}

fn gauss_vec(rng: &mut ChaCha8Rng, len: usize, std: f32) -> Array1<f32> {
    Array1::from_shape_simple_fn(len, || gauss(rng, std))
}

/// GPT-2-small shaped config (12 layers, 12 heads, d_model 768) over an
/// arbitrary vocabulary size.
pub fn gpt2_small_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 12,
        n_heads: 12,
        n_kv_heads: 12,
        d_model: 768,
        d_head: 64,
        vocab_size,
        max_context: 1024,
        norm_kind: NormKind::PreLayerNorm,
        position_kind: PositionKind::LearnedAbsolute,
        mlp_kind: MlpKind::Gelu2Layer,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
        rope_scaling: None,
    }
}

/// Tiny Llama-style config exercising RMS norm, rotary positions, grouped
/// attention and the gated MLP.
pub fn tiny_llama_config(vocab_size: usize, n_kv_heads: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        n_heads: 8,
        n_kv_heads,
        d_model: 64,
        d_head: 8,
        vocab_size,
        max_context: 256,
        norm_kind: NormKind::RmsNorm,
        position_kind: PositionKind::Rotary,
        mlp_kind: MlpKind::GatedSilu,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
        rope_scaling: None,
    }
}

/// Randomly initialized weights for `config`, deterministic in `seed`.
pub fn random_weights(config: &ModelConfig, seed: u64) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let std = 0.02;
    let wte = gauss_mat(&mut rng, config.vocab_size, d, std);
    let wpe = (config.position_kind == PositionKind::LearnedAbsolute)
        .then(|| gauss_mat(&mut rng, config.max_context, d, std));
    let has_bias = config.norm_kind == NormKind::PreLayerNorm;
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let q_width = config.attn_width();
        let kv_width = config.n_kv_heads * config.d_head;
        let ff = match config.mlp_kind {
            MlpKind::Gelu2Layer => 4 * d,
            MlpKind::GatedSilu => 2 * d,
        };
        let mlp = match config.mlp_kind {
            MlpKind::Gelu2Layer => MlpWeights::Gelu {
                w_fc: gauss_mat(&mut rng, d, ff, std),
                b_fc: gauss_vec(&mut rng, ff, std),
                w_proj: gauss_mat(&mut rng, ff, d, std),
                b_proj: gauss_vec(&mut rng, d, std),
            },
            MlpKind::GatedSilu => MlpWeights::GatedSilu {
                w_gate: gauss_mat(&mut rng, d, ff, std),
                w_up: gauss_mat(&mut rng, d, ff, std),
                w_down: gauss_mat(&mut rng, ff, d, std),
            },
        };
        layers.push(LayerWeights {
            attn_norm_w: Array1::ones(d),
            attn_norm_b: has_bias.then(|| Array1::zeros(d)),
            w_q: gauss_mat(&mut rng, d, q_width, std),
            b_q: has_bias.then(|| gauss_vec(&mut rng, q_width, std)),
            w_k: gauss_mat(&mut rng, d, kv_width, std),
            b_k: has_bias.then(|| gauss_vec(&mut rng, kv_width, std)),
            w_v: gauss_mat(&mut rng, d, kv_width, std),
            b_v: has_bias.then(|| gauss_vec(&mut rng, kv_width, std)),
            w_o: gauss_mat(&mut rng, q_width, d, std),
            b_o: has_bias.then(|| gauss_vec(&mut rng, d, std)),
            mlp_norm_w: Array1::ones(d),
            mlp_norm_b: has_bias.then(|| Array1::zeros(d)),
            mlp,
        });
    }
    let unembed = wte.t().to_owned();
    ModelWeights {
        wte,
        wpe,
        layers,
        final_norm_w: Array1::ones(d),
        final_norm_b: has_bias.then(|| Array1::zeros(d)),
        unembed,
    }
}

/// Train a small byte-level BPE tokenizer on `corpus` with the crate's
/// default special tokens.
pub fn build_tokenizer(corpus: &str, target_vocab: usize) -> Result<Tokenizer> {
    let (vocab, merges) = train_bpe(corpus, target_vocab, &["<|endoftext|>", "<|mask|>"]);
    Tokenizer::from_parts(vocab, merges)
}

/// Write `vocab.json` and `merges.txt` for a trained vocabulary.
pub fn save_tokenizer_files(
    dir: &Path,
    vocab: &HashMap<String, u32>,
    merges: &[(String, String)],
) -> Result<()> {
    let mut entries: Vec<(&String, &u32)> = vocab.iter().collect();
    entries.sort_by_key(|(_, &id)| id);
    let ordered: serde_json::Map<String, serde_json::Value> = entries
        .into_iter()
        .map(|(tok, &id)| (tok.clone(), serde_json::Value::from(id)))
        .collect();
    let vocab_path = dir.join("vocab.json");
    std::fs::write(
        &vocab_path,
        serde_json::to_string_pretty(&ordered).expect("vocab serializes"),
    )
    .map_err(|e| crate::error::Error::io(vocab_path.display().to_string(), e))?;
    let mut merges_text = String::from("#version: 0.2\n");
    for (a, b) in merges {
        merges_text.push_str(a);
        merges_text.push(' ');
        merges_text.push_str(b);
        merges_text.push('\n');
    }
    let merges_path = dir.join("merges.txt");
    std::fs::write(&merges_path, merges_text)
        .map_err(|e| crate::error::Error::io(merges_path.display().to_string(), e))
}

/// Specification of one planted "lexical" head: it writes the unembedding
/// direction of `token` into the residual stream on every prompt.
#[derive(Debug, Clone, Copy)]
pub struct PlantedLexical {
    pub layer: usize,
    pub head: usize,
    pub token: u32,
}

/// Specification of one planted "retrieval" head: when any of the subject
/// tokens appears in the prompt, the head writes the unembedding direction
/// of the paired answer token.
#[derive(Debug, Clone)]
pub struct PlantedRetrieval {
    pub layer: usize,
    pub head: usize,
    /// `(subject token, answer token)` pairs routed through the head.
    pub pairs: Vec<(u32, u32)>,
}

/// Specification of a gated link: the retrieval head reads the residual
/// component along the gate token's direction (written upstream by a
/// lexical head) at the final position and emits the answer direction
/// proportionally.
#[derive(Debug, Clone, Copy)]
pub struct PlantedGate {
    pub layer: usize,
    pub head: usize,
    pub gate_token: u32,
    pub answer_token: u32,
    /// Token whose presence marks the position the head attends to
    /// (prompts must end with it, uniquely).
    pub marker_token: u32,
}

/// Builder for small planted models with exactly known head behavior.
///
/// Token embeddings are an orthonormal basis (rows past `d_model` are zero),
/// so unembedding logits of non-planted directions are exactly zero and
/// top-k tails resolve by the deterministic tie-break instead of noise.
/// All heads start inert (zero value paths, zero contributions); planted
/// heads get hand-wired value/output projections. Attention is uniform over
/// the causal window except for gate heads, which self-select their marker
/// position.
pub struct PlantedModelBuilder {
    config: ModelConfig,
    lexical: Vec<PlantedLexical>,
    retrieval: Vec<PlantedRetrieval>,
    gates: Vec<PlantedGate>,
}

impl PlantedModelBuilder {
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        let config = ModelConfig {
            n_layers,
            n_heads,
            n_kv_heads: n_heads,
            d_model,
            d_head: d_model / n_heads,
            vocab_size,
            max_context: 128,
            norm_kind: NormKind::PreLayerNorm,
            position_kind: PositionKind::LearnedAbsolute,
            mlp_kind: MlpKind::Gelu2Layer,
            rope_theta: 10_000.0,
            norm_eps: 1e-5,
            rope_scaling: None,
        };
        Self {
            config,
            lexical: Vec::new(),
            retrieval: Vec::new(),
            gates: Vec::new(),
        }
    }

    pub fn lexical(mut self, layer: usize, head: usize, token: u32) -> Self {
        self.lexical.push(PlantedLexical { layer, head, token });
        self
    }

    pub fn retrieval(mut self, layer: usize, head: usize, pairs: Vec<(u32, u32)>) -> Self {
        self.retrieval.push(PlantedRetrieval { layer, head, pairs });
        self
    }

    pub fn gate(
        mut self,
        layer: usize,
        head: usize,
        gate_token: u32,
        answer_token: u32,
        marker_token: u32,
    ) -> Self {
        self.gates.push(PlantedGate {
            layer,
            head,
            gate_token,
            answer_token,
            marker_token,
        });
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Build weights: everything zero except the orthonormal embedding
    /// basis and the planted head wiring.
    pub fn build_weights(&self) -> ModelWeights {
        let cfg = &self.config;
        let d = cfg.d_model;
        let dh = cfg.d_head;
        let mut wte = Array2::zeros((cfg.vocab_size, d));
        for i in 0..cfg.vocab_size.min(d) {
            wte[[i, i]] = 1.0;
        }
        let wpe = Array2::zeros((cfg.max_context, d));

        let mut layers: Vec<LayerWeights> = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                attn_norm_w: Array1::ones(d),
                attn_norm_b: Some(Array1::zeros(d)),
                w_q: Array2::zeros((d, cfg.attn_width())),
                b_q: Some(Array1::zeros(cfg.attn_width())),
                w_k: Array2::zeros((d, cfg.attn_width())),
                b_k: Some(Array1::zeros(cfg.attn_width())),
                w_v: Array2::zeros((d, cfg.attn_width())),
                b_v: Some(Array1::zeros(cfg.attn_width())),
                w_o: Array2::zeros((cfg.attn_width(), d)),
                b_o: Some(Array1::zeros(d)),
                mlp_norm_w: Array1::ones(d),
                mlp_norm_b: Some(Array1::zeros(d)),
                mlp: MlpWeights::Gelu {
                    w_fc: Array2::zeros((d, 4 * d)),
                    b_fc: Array1::zeros(4 * d),
                    w_proj: Array2::zeros((4 * d, d)),
                    b_proj: Array1::zeros(d),
                },
            })
            .collect();

        for plant in &self.lexical {
            // value path is a constant bias along channel 0 of the head,
            // output projection maps that channel to the token's direction
            let layer = &mut layers[plant.layer];
            layer.b_v.as_mut().expect("bias present")[plant.head * dh] = 1.0;
            let dir = wte.row(plant.token as usize);
            layer
                .w_o
                .slice_mut(s![plant.head * dh, ..])
                .assign(&(&dir * 8.0));
        }

        for plant in &self.retrieval {
            // channel c of the head reads the c-th subject direction from the
            // residual and emits the paired answer direction, uniform-attention
            let layer = &mut layers[plant.layer];
            assert!(plant.pairs.len() <= dh, "more pairs than head channels");
            for (c, (subject, answer)) in plant.pairs.iter().enumerate() {
                let subj_dir = wte.row(*subject as usize).to_owned();
                layer
                    .w_v
                    .slice_mut(s![.., plant.head * dh + c])
                    .assign(&(&subj_dir * 8.0));
                let ans_dir = wte.row(*answer as usize).to_owned();
                layer
                    .w_o
                    .slice_mut(s![plant.head * dh + c, ..])
                    .assign(&(&ans_dir * 8.0));
            }
        }

        for plant in &self.gates {
            // query/key both read the marker direction, so attention from the
            // marker position self-selects; the value path reads the gate
            // token's residual component and emits the answer direction
            let layer = &mut layers[plant.layer];
            let marker_dir = wte.row(plant.marker_token as usize).to_owned();
            // gain large enough that self-attention stays saturated even
            // when heavy gate writes shrink the marker's normalized share
            layer
                .w_q
                .slice_mut(s![.., plant.head * dh + 1])
                .assign(&(&marker_dir * 40.0));
            layer
                .w_k
                .slice_mut(s![.., plant.head * dh + 1])
                .assign(&(&marker_dir * 40.0));
            let gate_dir = wte.row(plant.gate_token as usize).to_owned();
            layer
                .w_v
                .slice_mut(s![.., plant.head * dh])
                .assign(&gate_dir);
            let ans_dir = wte.row(plant.answer_token as usize).to_owned();
            layer
                .w_o
                .slice_mut(s![plant.head * dh, ..])
                .assign(&(&ans_dir * 8.0));
        }

        let unembed = wte.t().to_owned();
        ModelWeights {
            wte,
            wpe: Some(wpe),
            layers,
            final_norm_w: Array1::ones(d),
            final_norm_b: Some(Array1::zeros(d)),
            unembed,
        }
    }

    /// Build the model with a byte-range tokenizer padded to the vocab size.
    pub fn build(&self) -> Result<Model> {
        let weights = self.build_weights();
        let tokenizer = byte_tokenizer()?;
        Model::from_parts(self.config.clone(), weights, tokenizer)
    }
}

/// A merge-free tokenizer over the 256 byte glyphs plus default specials
/// (258 entries), for planted models addressed by raw token ids.
pub fn byte_tokenizer() -> Result<Tokenizer> {
    let (vocab, merges) = train_bpe("", 256, &["<|endoftext|>", "<|mask|>"]);
    Tokenizer::from_parts(vocab, merges)
}

/// Deterministic tokenizer-training corpus assembled from the shipped task
/// files: every pair, term and template, in sorted file order.
pub fn corpus_from_tasks(tasks_dir: &Path) -> Result<String> {
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(tasks_dir)
        .map_err(|e| crate::error::Error::io(tasks_dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut corpus = String::new();
    for file in files {
        let task = crate::task::load_task(&file)?;
        for pair in &task.pairs {
            corpus.push_str(&format!("{}: {}\n", pair.input, pair.output));
        }
        for term in &task.terms {
            corpus.push_str(term.trim_start_matches('_'));
            corpus.push('\n');
        }
        for template in &task.instruction_templates {
            corpus.push_str(&template.text.replace("{input}", "thing"));
            corpus.push('\n');
        }
    }
    Ok(corpus)
}

/// Materialize a synthetic model directory: weights, tokenizer files and a
/// sidecar `config.json`, loadable with [`Model::load`].
pub fn write_model_dir(
    dir: &Path,
    config: &ModelConfig,
    weights: &ModelWeights,
    vocab: &HashMap<String, u32>,
    merges: &[(String, String)],
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| crate::error::Error::io(dir.display().to_string(), e))?;
    crate::model::weights::save_weights(&dir.join("model.safetensors"), config, weights)?;
    save_tokenizer_files(dir, vocab, merges)?;
    let sidecar = serde_json::json!({
        "n_head": config.n_heads,
        "num_attention_heads": config.n_heads,
        "num_key_value_heads": config.n_kv_heads,
        "head_dim": config.d_head,
        "max_position_embeddings": config.max_context,
        "rope_theta": config.rope_theta,
        "rms_norm_eps": config.norm_eps,
        "layer_norm_epsilon": config.norm_eps,
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar).expect("sidecar"))
        .map_err(|e| crate::error::Error::io(path.display().to_string(), e))
}

/// Seed used for the repository's committed desk-scale models.
pub const DESK_MODEL_SEED: u64 = 42;

/// Vocabulary budget for the desk-scale GPT-2-small tokenizer.
pub const DESK_VOCAB_TARGET: usize = 2000;

/// Build the desk-scale GPT-2-small-shaped model from the task corpus:
/// tokenizer trained on the shipped tasks, weights a pure function of
/// [`DESK_MODEL_SEED`].
pub fn desk_gpt2_small(tasks_dir: &Path) -> Result<(ModelConfig, ModelWeights, HashMap<String, u32>, Vec<(String, String)>)> {
    let corpus = corpus_from_tasks(tasks_dir)?;
    let (vocab, merges) = train_bpe(&corpus, DESK_VOCAB_TARGET, &["<|endoftext|>", "<|mask|>"]);
    let config = gpt2_small_config(vocab.len());
    let weights = random_weights(&config, DESK_MODEL_SEED);
    Ok((config, weights, vocab, merges))
}

/// Desk-scale Llama-style model (RMS norm, rotary, grouped attention,
/// gated MLP) over the byte tokenizer's 258-entry vocabulary.
pub fn desk_tiny_llama() -> (ModelConfig, ModelWeights, HashMap<String, u32>, Vec<(String, String)>) {
    let (vocab, merges) = train_bpe("", 256, &["<|endoftext|>", "<|mask|>"]);
    let config = tiny_llama_config(vocab.len(), 2);
    let weights = random_weights(&config, DESK_MODEL_SEED);
    (config, weights, vocab, merges)
}
