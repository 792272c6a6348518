//! Vocabulary-space projection of residual-width vectors ("early decode").
//!
//! `FinalNorm` mode runs the model's final normalization before unembedding
//! (no re-centering for RMS models, full layernorm for GPT-2-style); `Raw`
//! unembeds directly. Both are exposed because published head-decoding work
//! splits on this choice; experiment reports record which one was used.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, HeadId, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LensMode {
    #[default]
    FinalNorm,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedToken {
    pub token_id: u32,
    /// Tokenizer surface form, space-marker glyph preserved.
    pub token_string: String,
    pub logit: f32,
}

/// Top-k tokens of a projected vector, logits non-increasing, ties broken
/// by ascending token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRanking {
    pub entries: Vec<RankedToken>,
}

impl TokenRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.token_id)
    }

    pub fn token_strings(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.token_string.as_str())
    }

    /// Logit of a specific token in the full projection this ranking was cut
    /// from is not stored; this looks up within the ranked prefix only.
    pub fn logit_of(&self, token_id: u32) -> Option<f32> {
        self.entries
            .iter()
            .find(|e| e.token_id == token_id)
            .map(|e| e.logit)
    }
}

/// Project `v` through the (optionally normalized) unembedding and return
/// the top-k tokens.
pub fn decode_vector(
    model: &Model,
    v: ArrayView1<'_, f32>,
    k: usize,
    mode: LensMode,
) -> Result<TokenRanking> {
    let logits = project_vector(model, v, mode)?;
    if k == 0 {
        return Err(Error::Lens("k must be >= 1".into()));
    }
    if k > model.config.vocab_size {
        return Err(Error::Lens(format!(
            "k = {k} exceeds vocab size {}",
            model.config.vocab_size
        )));
    }
    Ok(top_k(model, &logits, k))
}

/// Full vocabulary logits for `v` under the given lens mode.
pub fn project_vector(
    model: &Model,
    v: ArrayView1<'_, f32>,
    mode: LensMode,
) -> Result<ndarray::Array1<f32>> {
    if v.len() != model.config.d_model {
        return Err(Error::Lens(format!(
            "vector length {} != d_model {}",
            v.len(),
            model.config.d_model
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Lens("vector has non-finite entries".into()));
    }
    let logits = match mode {
        LensMode::FinalNorm => model.final_norm(v).dot(model.unembed()),
        LensMode::Raw => v.dot(model.unembed()),
    };
    Ok(logits)
}

/// Decode every head in a captured bundle at once (one matrix multiply for
/// the whole bundle instead of a matvec per head).
pub fn decode_all_heads(
    model: &Model,
    bundle: &crate::model::ActivationBundle,
    k: usize,
    mode: LensMode,
) -> Result<Vec<(HeadId, TokenRanking)>> {
    if k == 0 || k > model.config.vocab_size {
        return Err(Error::Lens(format!(
            "k = {k} out of range 1..={}",
            model.config.vocab_size
        )));
    }
    let heads: Vec<HeadId> = bundle.heads().collect();
    let d = model.config.d_model;
    let mut rows = ndarray::Array2::<f32>::zeros((heads.len(), d));
    for (i, head) in heads.iter().enumerate() {
        let v = bundle.vector(*head).expect("listed head");
        if v.len() != d {
            return Err(Error::Lens(format!(
                "captured vector for {head} has length {}, expected {d}",
                v.len()
            )));
        }
        let row = match mode {
            LensMode::FinalNorm => model.final_norm(v),
            LensMode::Raw => v.to_owned(),
        };
        rows.row_mut(i).assign(&row);
    }
    let logits = rows.dot(model.unembed());
    Ok(heads
        .into_iter()
        .enumerate()
        .map(|(i, head)| (head, top_k(model, &logits.row(i).to_owned(), k)))
        .collect())
}

/// Decode a captured head's contribution with the default (final-norm) mode.
pub fn decode_head(
    model: &Model,
    trace: &ForwardTrace,
    head: HeadId,
    k: usize,
) -> Result<TokenRanking> {
    let bundle = trace
        .captured
        .as_ref()
        .ok_or(Error::HeadNotCaptured(head))?;
    let vector = bundle.vector(head).ok_or(Error::HeadNotCaptured(head))?;
    decode_vector(model, vector, k, LensMode::default())
}

fn top_k(model: &Model, logits: &ndarray::Array1<f32>, k: usize) -> TokenRanking {
    let mut order: Vec<u32> = (0..logits.len() as u32).collect();
    let better = |&a: &u32, &b: &u32| {
        let (la, lb) = (logits[a as usize], logits[b as usize]);
        lb.partial_cmp(&la)
            .expect("finite logits")
            .then_with(|| a.cmp(&b))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, better);
        order.truncate(k);
    }
    order.sort_unstable_by(better);
    let entries = order
        .into_iter()
        .map(|token_id| RankedToken {
            token_id,
            token_string: model
                .tokenizer()
                .token_string(token_id)
                .unwrap_or("")
                .to_string(),
            logit: logits[token_id as usize],
        })
        .collect();
    TokenRanking { entries }
}
