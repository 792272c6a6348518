//! Shared test support: a brute-force f64 transformer evaluator used as an
//! independent oracle. No KV cache, no fused projections, no shortcuts —
//! just the textbook computation, kept deliberately separate from the
//! engine's code path.

#![allow(dead_code)]

use lexhead::model::config::{MlpKind, ModelConfig, NormKind, PositionKind};
use lexhead::model::weights::{MlpWeights, ModelWeights};
use lexhead::model::HeadId;

pub struct ReferenceRun {
    /// Final-position logits.
    pub logits: Vec<f64>,
    /// Per layer: attention block output rows `[seq][d_model]`.
    pub attn_out: Vec<Vec<Vec<f64>>>,
    /// Per layer, per head: contribution vector at the final position.
    pub head_contrib_last: Vec<Vec<Vec<f64>>>,
}

fn layer_norm64(x: &[f64], w: &[f32], b: Option<&[f32]>, eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            (v - mean) / denom * w[i] as f64 + b.map_or(0.0, |b| b[i] as f64)
        })
        .collect()
}

fn rms_norm64(x: &[f64], w: &[f32], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
    let denom = (ms + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| v / denom * w[i] as f64)
        .collect()
}

fn gelu_new64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn silu64(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `x (1xIN) . W (INxOUT)` with f64 accumulation over an f32 matrix.
fn vec_mat(x: &[f64], w: &ndarray::Array2<f32>) -> Vec<f64> {
    let (rows, cols) = w.dim();
    assert_eq!(x.len(), rows);
    let mut out = vec![0.0f64; cols];
    for r in 0..rows {
        let xr = x[r];
        for c in 0..cols {
            out[c] += xr * w[[r, c]] as f64;
        }
    }
    out
}

pub fn reference_forward(config: &ModelConfig, weights: &ModelWeights, ids: &[u32]) -> ReferenceRun {
    let d = config.d_model;
    let dh = config.d_head;
    let t = ids.len();
    let eps = config.norm_eps as f64;
    let group = config.group_size();

    let mut x: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            (0..d)
                .map(|j| {
                    let mut v = weights.wte[[id as usize, j]] as f64;
                    if let Some(wpe) = &weights.wpe {
                        v += wpe[[pos, j]] as f64;
                    }
                    v
                })
                .collect()
        })
        .collect();

    let half = dh / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| 1.0 / (config.rope_theta as f64).powf(2.0 * i as f64 / dh as f64))
        .collect();

    let mut attn_out_all = Vec::with_capacity(config.n_layers);
    let mut contrib_last_all = Vec::with_capacity(config.n_layers);

    for layer in &weights.layers {
        // pre-norm
        let xn: Vec<Vec<f64>> = x
            .iter()
            .map(|row| match config.norm_kind {
                NormKind::PreLayerNorm => layer_norm64(
                    row,
                    layer.attn_norm_w.as_slice().unwrap(),
                    layer.attn_norm_b.as_ref().map(|b| b.as_slice().unwrap()),
                    eps,
                ),
                NormKind::RmsNorm => {
                    rms_norm64(row, layer.attn_norm_w.as_slice().unwrap(), eps)
                }
            })
            .collect();

        let add_bias = |mut v: Vec<f64>, b: &Option<ndarray::Array1<f32>>| {
            if let Some(b) = b {
                for (i, x) in v.iter_mut().enumerate() {
                    *x += b[i] as f64;
                }
            }
            v
        };
        let mut q: Vec<Vec<f64>> = xn
            .iter()
            .map(|row| add_bias(vec_mat(row, &layer.w_q), &layer.b_q))
            .collect();
        let mut k: Vec<Vec<f64>> = xn
            .iter()
            .map(|row| add_bias(vec_mat(row, &layer.w_k), &layer.b_k))
            .collect();
        let v: Vec<Vec<f64>> = xn
            .iter()
            .map(|row| add_bias(vec_mat(row, &layer.w_v), &layer.b_v))
            .collect();

        if config.position_kind == PositionKind::Rotary {
            for (pos, row) in q.iter_mut().enumerate() {
                rotate64(row, config.n_heads, dh, pos as f64, &inv_freq);
            }
            for (pos, row) in k.iter_mut().enumerate() {
                rotate64(row, config.n_kv_heads, dh, pos as f64, &inv_freq);
            }
        }

        // per-head attention and contributions
        let mut contribs: Vec<Vec<Vec<f64>>> =
            vec![vec![vec![0.0; d]; config.n_heads]; t]; // [pos][head][d]
        for h in 0..config.n_heads {
            let kv = h / group;
            for qt in 0..t {
                let mut scores: Vec<f64> = (0..=qt)
                    .map(|kt| {
                        let mut s = 0.0;
                        for c in 0..dh {
                            s += q[qt][h * dh + c] * k[kt][kv * dh + c];
                        }
                        s / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in scores.iter_mut() {
                    *s /= sum;
                }
                let mut o_h = vec![0.0f64; dh];
                for (kt, &p) in scores.iter().enumerate() {
                    for c in 0..dh {
                        o_h[c] += p * v[kt][kv * dh + c];
                    }
                }
                // contribution through this head's slice of w_o, no bias
                for c in 0..dh {
                    let oc = o_h[c];
                    for j in 0..d {
                        contribs[qt][h][j] += oc * layer.w_o[[h * dh + c, j]] as f64;
                    }
                }
            }
        }

        let mut attn_out: Vec<Vec<f64>> = vec![vec![0.0; d]; t];
        for qt in 0..t {
            for h in 0..config.n_heads {
                for j in 0..d {
                    attn_out[qt][j] += contribs[qt][h][j];
                }
            }
            if let Some(b) = &layer.b_o {
                for j in 0..d {
                    attn_out[qt][j] += b[j] as f64;
                }
            }
            for j in 0..d {
                x[qt][j] += attn_out[qt][j];
            }
        }
        attn_out_all.push(attn_out);
        contrib_last_all.push(contribs[t - 1].clone());

        // MLP
        for row in x.iter_mut() {
            let xn2 = match config.norm_kind {
                NormKind::PreLayerNorm => layer_norm64(
                    row,
                    layer.mlp_norm_w.as_slice().unwrap(),
                    layer.mlp_norm_b.as_ref().map(|b| b.as_slice().unwrap()),
                    eps,
                ),
                NormKind::RmsNorm => rms_norm64(row, layer.mlp_norm_w.as_slice().unwrap(), eps),
            };
            let out = match &layer.mlp {
                MlpWeights::Gelu {
                    w_fc,
                    b_fc,
                    w_proj,
                    b_proj,
                } => {
                    let mut h = vec_mat(&xn2, w_fc);
                    for (i, v) in h.iter_mut().enumerate() {
                        *v = gelu_new64(*v + b_fc[i] as f64);
                    }
                    let mut out = vec_mat(&h, w_proj);
                    for (i, v) in out.iter_mut().enumerate() {
                        *v += b_proj[i] as f64;
                    }
                    out
                }
                MlpWeights::GatedSilu { w_gate, w_up, w_down } => {
                    let mut g = vec_mat(&xn2, w_gate);
                    let u = vec_mat(&xn2, w_up);
                    for (gv, uv) in g.iter_mut().zip(u.iter()) {
                        *gv = silu64(*gv) * uv;
                    }
                    vec_mat(&g, w_down)
                }
            };
            for (j, o) in out.iter().enumerate() {
                row[j] += o;
            }
        }
    }

    let last = match config.norm_kind {
        NormKind::PreLayerNorm => layer_norm64(
            &x[t - 1],
            weights.final_norm_w.as_slice().unwrap(),
            weights.final_norm_b.as_ref().map(|b| b.as_slice().unwrap()),
            eps,
        ),
        NormKind::RmsNorm => rms_norm64(&x[t - 1], weights.final_norm_w.as_slice().unwrap(), eps),
    };
    let logits = vec_mat(&last, &weights.unembed);

    ReferenceRun {
        logits,
        attn_out: attn_out_all,
        head_contrib_last: contrib_last_all,
    }
}

fn rotate64(row: &mut [f64], n_heads: usize, dh: usize, pos: f64, inv_freq: &[f64]) {
    let half = dh / 2;
    for h in 0..n_heads {
        let base = h * dh;
        for i in 0..half {
            let angle = pos * inv_freq[i];
            let (sin, cos) = angle.sin_cos();
            let a = row[base + i];
            let b = row[base + half + i];
            row[base + i] = a * cos - b * sin;
            row[base + half + i] = b * cos + a * sin;
        }
    }
}

/// Exhaustively decode every head of a model at the last token by direct
/// matrix algebra over the reference run (used as the detector oracle).
pub fn reference_head_logits(
    config: &ModelConfig,
    weights: &ModelWeights,
    ids: &[u32],
    final_norm: bool,
) -> std::collections::BTreeMap<HeadId, Vec<f64>> {
    let run = reference_forward(config, weights, ids);
    let eps = config.norm_eps as f64;
    let mut out = std::collections::BTreeMap::new();
    for (layer, heads) in run.head_contrib_last.iter().enumerate() {
        for (head, contrib) in heads.iter().enumerate() {
            let projected = if final_norm {
                match config.norm_kind {
                    NormKind::PreLayerNorm => layer_norm64(
                        contrib,
                        weights.final_norm_w.as_slice().unwrap(),
                        weights.final_norm_b.as_ref().map(|b| b.as_slice().unwrap()),
                        eps,
                    ),
                    NormKind::RmsNorm => {
                        rms_norm64(contrib, weights.final_norm_w.as_slice().unwrap(), eps)
                    }
                }
            } else {
                contrib.clone()
            };
            let logits = vec_mat(&projected, &weights.unembed);
            out.insert(HeadId::new(layer, head), logits);
        }
    }
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (*x as f64 - y).abs())
        .fold(0.0, f64::max)
}

pub fn assert_mlp_kind_matches(config: &ModelConfig) {
    match config.mlp_kind {
        MlpKind::Gelu2Layer | MlpKind::GatedSilu => {}
    }
}
