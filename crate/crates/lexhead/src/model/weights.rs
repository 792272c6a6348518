//! Weight-file loading and saving (safetensors container).
//!
//! Files are memory-mapped read-only. 16-bit tensors are upcast to f32 on
//! load; all compute downstream is 32-bit. Matrices are stored internally in
//! `[in, out]` orientation so activations multiply as `x . w`.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use memmap2::Mmap;
use ndarray::{Array1, Array2};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::config::{MlpKind, ModelConfig, NormKind, PositionKind, RopeScaling};

#[derive(Debug)]
pub enum MlpWeights {
    Gelu {
        w_fc: Array2<f32>,
        b_fc: Array1<f32>,
        w_proj: Array2<f32>,
        b_proj: Array1<f32>,
    },
    GatedSilu {
        w_gate: Array2<f32>,
        w_up: Array2<f32>,
        w_down: Array2<f32>,
    },
}

#[derive(Debug)]
pub struct LayerWeights {
    pub attn_norm_w: Array1<f32>,
    pub attn_norm_b: Option<Array1<f32>>,
    /// `[d_model, n_heads * d_head]`
    pub w_q: Array2<f32>,
    pub b_q: Option<Array1<f32>>,
    /// `[d_model, n_kv_heads * d_head]`
    pub w_k: Array2<f32>,
    pub b_k: Option<Array1<f32>>,
    pub w_v: Array2<f32>,
    pub b_v: Option<Array1<f32>>,
    /// `[n_heads * d_head, d_model]`
    pub w_o: Array2<f32>,
    pub b_o: Option<Array1<f32>>,
    pub mlp_norm_w: Array1<f32>,
    pub mlp_norm_b: Option<Array1<f32>>,
    pub mlp: MlpWeights,
}

#[derive(Debug)]
pub struct ModelWeights {
    /// `[vocab, d_model]`
    pub wte: Array2<f32>,
    /// `[max_context, d_model]`, learned-absolute models only
    pub wpe: Option<Array2<f32>>,
    pub layers: Vec<LayerWeights>,
    pub final_norm_w: Array1<f32>,
    pub final_norm_b: Option<Array1<f32>>,
    /// `[d_model, vocab]` (transposed unembedding)
    pub unembed: Array2<f32>,
}

/// Sidecar `config.json` fields that tensor shapes cannot express, covering
/// both GPT-2 and Llama key spellings. Everything shape-derivable is read
/// from the tensors themselves.
#[derive(Debug, Default, Deserialize)]
struct SidecarConfig {
    n_head: Option<usize>,
    num_attention_heads: Option<usize>,
    num_key_value_heads: Option<usize>,
    head_dim: Option<usize>,
    max_position_embeddings: Option<usize>,
    rope_theta: Option<f32>,
    rms_norm_eps: Option<f32>,
    layer_norm_epsilon: Option<f32>,
    rope_scaling: Option<SidecarRopeScaling>,
}

#[derive(Debug, Deserialize)]
struct SidecarRopeScaling {
    factor: Option<f32>,
    low_freq_factor: Option<f32>,
    high_freq_factor: Option<f32>,
    original_max_position_embeddings: Option<usize>,
}

fn read_sidecar(dir: &Path) -> Option<SidecarConfig> {
    let raw = std::fs::read_to_string(dir.join("config.json")).ok()?;
    serde_json::from_str(&raw).ok()
}

/// Resolve a weights path: either the safetensors file itself or a model
/// directory containing `model.safetensors`.
pub fn resolve_weights_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.safetensors")
    } else {
        path.to_path_buf()
    }
}

pub struct WeightFile {
    mmap: Mmap,
    pub path: PathBuf,
}

impl WeightFile {
    pub fn open(path: &Path) -> Result<Self> {
        let file_path = resolve_weights_file(path);
        let file =
            File::open(&file_path).map_err(|e| Error::io(file_path.display().to_string(), e))?;
        // read-only map of an immutable weight file
        let mmap =
            unsafe { Mmap::map(&file) }.map_err(|e| Error::io(file_path.display().to_string(), e))?;
        Ok(Self {
            mmap,
            path: file_path,
        })
    }

    fn tensors(&self) -> Result<SafeTensors<'_>> {
        SafeTensors::deserialize(&self.mmap).map_err(|e| Error::WeightFormat(e.to_string()))
    }
}

fn to_f32(view: &TensorView<'_>) -> Result<Vec<f32>> {
    let data = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()),
        Dtype::F16 => Ok(data
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect()),
        Dtype::BF16 => Ok(data
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect()),
        other => Err(Error::WeightFormat(format!(
            "unsupported tensor dtype {other:?}"
        ))),
    }
}

struct TensorReader<'a> {
    st: SafeTensors<'a>,
}

impl<'a> TensorReader<'a> {
    fn has(&self, name: &str) -> bool {
        self.st.tensor(name).is_ok()
    }

    fn shape(&self, name: &str) -> Result<Vec<usize>> {
        let view = self
            .st
            .tensor(name)
            .map_err(|_| Error::MissingTensor { name: name.into() })?;
        Ok(view.shape().to_vec())
    }

    fn mat(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let view = self
            .st
            .tensor(name)
            .map_err(|_| Error::MissingTensor { name: name.into() })?;
        if view.shape() != [rows, cols] {
            return Err(Error::ShapeMismatch {
                name: name.into(),
                expected: vec![rows, cols],
                found: view.shape().to_vec(),
            });
        }
        let data = to_f32(&view)?;
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::WeightFormat(format!("{name}: {e}")))
    }

    fn vec(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        let view = self
            .st
            .tensor(name)
            .map_err(|_| Error::MissingTensor { name: name.into() })?;
        if view.shape() != [len] {
            return Err(Error::ShapeMismatch {
                name: name.into(),
                expected: vec![len],
                found: view.shape().to_vec(),
            });
        }
        let data = to_f32(&view)?;
        Ok(Array1::from_vec(data))
    }
}

fn count_layers(reader: &TensorReader<'_>, pattern: impl Fn(usize) -> String) -> usize {
    let mut n = 0;
    while reader.has(&pattern(n)) {
        n += 1;
    }
    n
}

/// Infer a [`ModelConfig`] from tensor names/shapes, with an optional
/// sidecar `config.json` filling in what shapes cannot express
/// (head counts for fused projections, rope theta, context length).
pub fn infer_config(weights_path: &Path) -> Result<ModelConfig> {
    let file = WeightFile::open(weights_path)?;
    let reader = TensorReader {
        st: file.tensors()?,
    };
    let sidecar = weights_path
        .is_dir()
        .then(|| read_sidecar(weights_path))
        .flatten()
        .or_else(|| weights_path.parent().and_then(read_sidecar))
        .unwrap_or_default();

    if let Some(wte) = gpt2_name(&reader, "wte.weight") {
        let shape = reader.shape(&wte)?;
        let (vocab_size, d_model) = (shape[0], shape[1]);
        let wpe_name = gpt2_name(&reader, "wpe.weight")
            .ok_or_else(|| Error::MissingTensor { name: "wpe.weight".into() })?;
        let max_context = reader.shape(&wpe_name)?[0];
        let n_layers = count_layers(&reader, |i| {
            prefixed_gpt2(&wte, &format!("h.{i}.ln_1.weight"))
        });
        if n_layers == 0 {
            return Err(Error::WeightFormat("no transformer blocks found".into()));
        }
        let n_heads = sidecar
            .n_head
            .or(sidecar.num_attention_heads)
            .unwrap_or_else(|| conventional_heads(d_model));
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "cannot split d_model {d_model} into {n_heads} heads"
            )));
        }
        let config = ModelConfig {
            n_layers,
            n_heads,
            n_kv_heads: n_heads,
            d_model,
            d_head: d_model / n_heads,
            vocab_size,
            max_context,
            norm_kind: NormKind::PreLayerNorm,
            position_kind: PositionKind::LearnedAbsolute,
            mlp_kind: MlpKind::Gelu2Layer,
            rope_theta: 10_000.0,
            norm_eps: sidecar.layer_norm_epsilon.unwrap_or(1e-5),
            rope_scaling: None,
        };
        config.validate()?;
        return Ok(config);
    }

    if reader.has("model.embed_tokens.weight") {
        let shape = reader.shape("model.embed_tokens.weight")?;
        let (vocab_size, d_model) = (shape[0], shape[1]);
        let n_layers = count_layers(&reader, |i| {
            format!("model.layers.{i}.input_layernorm.weight")
        });
        if n_layers == 0 {
            return Err(Error::WeightFormat("no transformer blocks found".into()));
        }
        let q_shape = reader.shape("model.layers.0.self_attn.q_proj.weight")?;
        let k_shape = reader.shape("model.layers.0.self_attn.k_proj.weight")?;
        let d_head = sidecar.head_dim.unwrap_or(64.min(q_shape[0]));
        let n_heads = sidecar.num_attention_heads.unwrap_or(q_shape[0] / d_head);
        let d_head = q_shape[0] / n_heads.max(1);
        let n_kv_heads = sidecar.num_key_value_heads.unwrap_or(k_shape[0] / d_head);
        let config = ModelConfig {
            n_layers,
            n_heads,
            n_kv_heads,
            d_model,
            d_head,
            vocab_size,
            max_context: sidecar.max_position_embeddings.unwrap_or(4096),
            norm_kind: NormKind::RmsNorm,
            position_kind: PositionKind::Rotary,
            mlp_kind: MlpKind::GatedSilu,
            rope_theta: sidecar.rope_theta.unwrap_or(500_000.0),
            norm_eps: sidecar.rms_norm_eps.unwrap_or(1e-5),
            rope_scaling: sidecar.rope_scaling.as_ref().map(|rs| RopeScaling {
                factor: rs.factor.unwrap_or(8.0),
                low_freq_factor: rs.low_freq_factor.unwrap_or(1.0),
                high_freq_factor: rs.high_freq_factor.unwrap_or(4.0),
                original_max_position_embeddings: rs
                    .original_max_position_embeddings
                    .unwrap_or(8192),
            }),
        };
        config.validate()?;
        return Ok(config);
    }

    Err(Error::WeightFormat(
        "unrecognized tensor naming scheme (expected GPT-2 or Llama layout)".into(),
    ))
}

fn conventional_heads(d_model: usize) -> usize {
    if d_model % 64 == 0 {
        d_model / 64
    } else {
        1
    }
}

fn gpt2_name(reader: &TensorReader<'_>, suffix: &str) -> Option<String> {
    for prefix in ["", "transformer."] {
        let name = format!("{prefix}{suffix}");
        if reader.has(&name) {
            return Some(name);
        }
    }
    None
}

fn prefixed_gpt2(wte_name: &str, suffix: &str) -> String {
    match wte_name.strip_suffix("wte.weight") {
        Some(prefix) => format!("{prefix}{suffix}"),
        None => suffix.to_string(),
    }
}

/// Load all tensors for `config` from the file, verifying names and shapes.
pub fn load_weights(weights_path: &Path, config: &ModelConfig) -> Result<ModelWeights> {
    let file = WeightFile::open(weights_path)?;
    let reader = TensorReader {
        st: file.tensors()?,
    };
    match config.position_kind {
        PositionKind::LearnedAbsolute => load_gpt2(&reader, config),
        PositionKind::Rotary => load_llama(&reader, config),
    }
}

fn load_gpt2(reader: &TensorReader<'_>, config: &ModelConfig) -> Result<ModelWeights> {
    let d = config.d_model;
    let wte_name = gpt2_name(reader, "wte.weight")
        .ok_or_else(|| Error::MissingTensor { name: "wte.weight".into() })?;
    let name = |suffix: &str| prefixed_gpt2(&wte_name, suffix);

    let wte = reader.mat(&wte_name, config.vocab_size, d)?;
    let wpe = reader.mat(&name("wpe.weight"), config.max_context, d)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        // HF GPT-2 stores projections Conv1D-style [in, out]; c_attn fuses q,k,v
        let c_attn_w = reader.mat(&name(&format!("h.{i}.attn.c_attn.weight")), d, 3 * d)?;
        let c_attn_b = reader.vec(&name(&format!("h.{i}.attn.c_attn.bias")), 3 * d)?;
        let w_q = c_attn_w.slice(ndarray::s![.., 0..d]).to_owned();
        let w_k = c_attn_w.slice(ndarray::s![.., d..2 * d]).to_owned();
        let w_v = c_attn_w.slice(ndarray::s![.., 2 * d..3 * d]).to_owned();
        let b_q = c_attn_b.slice(ndarray::s![0..d]).to_owned();
        let b_k = c_attn_b.slice(ndarray::s![d..2 * d]).to_owned();
        let b_v = c_attn_b.slice(ndarray::s![2 * d..3 * d]).to_owned();
        layers.push(LayerWeights {
            attn_norm_w: reader.vec(&name(&format!("h.{i}.ln_1.weight")), d)?,
            attn_norm_b: Some(reader.vec(&name(&format!("h.{i}.ln_1.bias")), d)?),
            w_q,
            b_q: Some(b_q),
            w_k,
            b_k: Some(b_k),
            w_v,
            b_v: Some(b_v),
            w_o: reader.mat(&name(&format!("h.{i}.attn.c_proj.weight")), d, d)?,
            b_o: Some(reader.vec(&name(&format!("h.{i}.attn.c_proj.bias")), d)?),
            mlp_norm_w: reader.vec(&name(&format!("h.{i}.ln_2.weight")), d)?,
            mlp_norm_b: Some(reader.vec(&name(&format!("h.{i}.ln_2.bias")), d)?),
            mlp: MlpWeights::Gelu {
                w_fc: reader.mat(&name(&format!("h.{i}.mlp.c_fc.weight")), d, 4 * d)?,
                b_fc: reader.vec(&name(&format!("h.{i}.mlp.c_fc.bias")), 4 * d)?,
                w_proj: reader.mat(&name(&format!("h.{i}.mlp.c_proj.weight")), 4 * d, d)?,
                b_proj: reader.vec(&name(&format!("h.{i}.mlp.c_proj.bias")), d)?,
            },
        });
    }
    let unembed = wte.t().to_owned();
    Ok(ModelWeights {
        wte,
        wpe: Some(wpe),
        layers,
        final_norm_w: reader.vec(&name("ln_f.weight"), d)?,
        final_norm_b: Some(reader.vec(&name("ln_f.bias"), d)?),
        unembed,
    })
}

fn load_llama(reader: &TensorReader<'_>, config: &ModelConfig) -> Result<ModelWeights> {
    let d = config.d_model;
    let q_width = config.n_heads * config.d_head;
    let kv_width = config.n_kv_heads * config.d_head;

    let wte = reader.mat("model.embed_tokens.weight", config.vocab_size, d)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let p = format!("model.layers.{i}");
        // HF Linear weights are [out, in]; transpose into [in, out]
        let tr = |name: String, out: usize, inp: usize| -> Result<Array2<f32>> {
            Ok(reader.mat(&name, out, inp)?.t().to_owned())
        };
        let ff_shape = reader.shape(&format!("{p}.mlp.gate_proj.weight"))?;
        let ff = ff_shape[0];
        layers.push(LayerWeights {
            attn_norm_w: reader.vec(&format!("{p}.input_layernorm.weight"), d)?,
            attn_norm_b: None,
            w_q: tr(format!("{p}.self_attn.q_proj.weight"), q_width, d)?,
            b_q: None,
            w_k: tr(format!("{p}.self_attn.k_proj.weight"), kv_width, d)?,
            b_k: None,
            w_v: tr(format!("{p}.self_attn.v_proj.weight"), kv_width, d)?,
            b_v: None,
            w_o: tr(format!("{p}.self_attn.o_proj.weight"), d, q_width)?,
            b_o: None,
            mlp_norm_w: reader.vec(&format!("{p}.post_attention_layernorm.weight"), d)?,
            mlp_norm_b: None,
            mlp: MlpWeights::GatedSilu {
                w_gate: tr(format!("{p}.mlp.gate_proj.weight"), ff, d)?,
                w_up: tr(format!("{p}.mlp.up_proj.weight"), ff, d)?,
                w_down: tr(format!("{p}.mlp.down_proj.weight"), d, ff)?,
            },
        });
    }
    let unembed = if reader.has("lm_head.weight") {
        reader.mat("lm_head.weight", config.vocab_size, d)?.t().to_owned()
    } else {
        wte.t().to_owned()
    };
    Ok(ModelWeights {
        wte,
        wpe: None,
        layers,
        final_norm_w: reader.vec("model.norm.weight", d)?,
        final_norm_b: None,
        unembed,
    })
}

/// Serialize weights back to a safetensors file using the family's
/// conventional tensor names (used by the synthetic-model tooling).
pub fn save_weights(path: &Path, config: &ModelConfig, weights: &ModelWeights) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    let push_mat = |tensors: &mut Vec<_>, name: String, m: &Array2<f32>, transpose: bool| {
        let m = if transpose { m.t().to_owned() } else { m.clone() };
        let shape = vec![m.nrows(), m.ncols()];
        let data = m.iter().copied().collect::<Vec<f32>>();
        tensors.push((name, shape, data));
    };
    let push_vec = |tensors: &mut Vec<_>, name: String, v: &Array1<f32>| {
        tensors.push((name, vec![v.len()], v.to_vec()));
    };

    match config.position_kind {
        PositionKind::LearnedAbsolute => {
            push_mat(&mut tensors, "wte.weight".into(), &weights.wte, false);
            let wpe = weights
                .wpe
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("learned-absolute model lacks wpe".into()))?;
            push_mat(&mut tensors, "wpe.weight".into(), wpe, false);
            for (i, layer) in weights.layers.iter().enumerate() {
                let d = config.d_model;
                let mut c_attn = Array2::<f32>::zeros((d, 3 * d));
                c_attn.slice_mut(ndarray::s![.., 0..d]).assign(&layer.w_q);
                c_attn
                    .slice_mut(ndarray::s![.., d..2 * d])
                    .assign(&layer.w_k);
                c_attn
                    .slice_mut(ndarray::s![.., 2 * d..3 * d])
                    .assign(&layer.w_v);
                let mut c_attn_b = Array1::<f32>::zeros(3 * d);
                for (dst, src) in [(0, &layer.b_q), (d, &layer.b_k), (2 * d, &layer.b_v)] {
                    if let Some(b) = src {
                        c_attn_b.slice_mut(ndarray::s![dst..dst + d]).assign(b);
                    }
                }
                push_mat(&mut tensors, format!("h.{i}.attn.c_attn.weight"), &c_attn, false);
                push_vec(&mut tensors, format!("h.{i}.attn.c_attn.bias"), &c_attn_b);
                push_mat(&mut tensors, format!("h.{i}.attn.c_proj.weight"), &layer.w_o, false);
                push_vec(
                    &mut tensors,
                    format!("h.{i}.attn.c_proj.bias"),
                    layer.b_o.as_ref().unwrap_or(&Array1::zeros(config.d_model)),
                );
                push_vec(&mut tensors, format!("h.{i}.ln_1.weight"), &layer.attn_norm_w);
                push_vec(
                    &mut tensors,
                    format!("h.{i}.ln_1.bias"),
                    layer.attn_norm_b.as_ref().unwrap_or(&Array1::zeros(config.d_model)),
                );
                push_vec(&mut tensors, format!("h.{i}.ln_2.weight"), &layer.mlp_norm_w);
                push_vec(
                    &mut tensors,
                    format!("h.{i}.ln_2.bias"),
                    layer.mlp_norm_b.as_ref().unwrap_or(&Array1::zeros(config.d_model)),
                );
                if let MlpWeights::Gelu {
                    w_fc,
                    b_fc,
                    w_proj,
                    b_proj,
                } = &layer.mlp
                {
                    push_mat(&mut tensors, format!("h.{i}.mlp.c_fc.weight"), w_fc, false);
                    push_vec(&mut tensors, format!("h.{i}.mlp.c_fc.bias"), b_fc);
                    push_mat(&mut tensors, format!("h.{i}.mlp.c_proj.weight"), w_proj, false);
                    push_vec(&mut tensors, format!("h.{i}.mlp.c_proj.bias"), b_proj);
                } else {
                    return Err(Error::InvalidConfig(
                        "GPT-2 layout requires gelu MLP weights".into(),
                    ));
                }
            }
            push_vec(&mut tensors, "ln_f.weight".into(), &weights.final_norm_w);
            push_vec(
                &mut tensors,
                "ln_f.bias".into(),
                weights.final_norm_b.as_ref().unwrap_or(&Array1::zeros(config.d_model)),
            );
        }
        PositionKind::Rotary => {
            push_mat(
                &mut tensors,
                "model.embed_tokens.weight".into(),
                &weights.wte,
                false,
            );
            for (i, layer) in weights.layers.iter().enumerate() {
                let p = format!("model.layers.{i}");
                push_vec(&mut tensors, format!("{p}.input_layernorm.weight"), &layer.attn_norm_w);
                push_mat(&mut tensors, format!("{p}.self_attn.q_proj.weight"), &layer.w_q, true);
                push_mat(&mut tensors, format!("{p}.self_attn.k_proj.weight"), &layer.w_k, true);
                push_mat(&mut tensors, format!("{p}.self_attn.v_proj.weight"), &layer.w_v, true);
                push_mat(&mut tensors, format!("{p}.self_attn.o_proj.weight"), &layer.w_o, true);
                push_vec(
                    &mut tensors,
                    format!("{p}.post_attention_layernorm.weight"),
                    &layer.mlp_norm_w,
                );
                if let MlpWeights::GatedSilu { w_gate, w_up, w_down } = &layer.mlp {
                    push_mat(&mut tensors, format!("{p}.mlp.gate_proj.weight"), w_gate, true);
                    push_mat(&mut tensors, format!("{p}.mlp.up_proj.weight"), w_up, true);
                    push_mat(&mut tensors, format!("{p}.mlp.down_proj.weight"), w_down, true);
                } else {
                    return Err(Error::InvalidConfig(
                        "Llama layout requires gated-silu MLP weights".into(),
                    ));
                }
            }
            push_vec(&mut tensors, "model.norm.weight".into(), &weights.final_norm_w);
            push_mat(&mut tensors, "lm_head.weight".into(), &weights.unembed, true);
        }
    }

    let byte_store: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .into_iter()
        .map(|(name, shape, data)| {
            let bytes = data.iter().flat_map(|f| f.to_le_bytes()).collect();
            (name, shape, bytes)
        })
        .collect();
    let views: HashMap<String, TensorView<'_>> = byte_store
        .iter()
        .map(|(name, shape, bytes)| {
            let view = TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map_err(|e| Error::WeightFormat(e.to_string()))?;
            Ok((name.clone(), view))
        })
        .collect::<Result<_>>()?;
    let blob = safetensors::tensor::serialize(&views, &None)
        .map_err(|e| Error::WeightFormat(e.to_string()))?;
    std::fs::write(path, blob).map_err(|e| Error::io(path.display().to_string(), e))
}
