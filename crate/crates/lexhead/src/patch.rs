//! Causal interventions: activation caching, prompt-set averaging, scaled
//! mean-activation patching, prompt corruption by masking, and steered
//! generation.
//!
//! A patch replaces (not adds to) the planned heads' contribution vectors at
//! the chosen position before they are summed into the residual stream;
//! everything downstream is recomputed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ActivationBundle, CaptureSpec, ForwardTrace, HeadId, Model, PatchPlan, PatchSchedule,
    TokenSequence,
};
use crate::task::PromptSpec;
use crate::workers::Workers;

pub use crate::model::HeadActivation;

/// Arithmetic mean of per-head last-token contributions over a prompt set,
/// with the provenance needed to reuse it across experiments.
#[derive(Debug, Clone)]
pub struct MeanActivation {
    pub task: String,
    pub style: String,
    pub source_template: String,
    pub vectors: BTreeMap<HeadId, Array1<f32>>,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeanActivationMeta {
    task: String,
    style: String,
    source_template: String,
    sample_count: usize,
}

impl MeanActivation {
    pub fn from_bundles(
        task: &str,
        style: &str,
        source_template: &str,
        bundles: &[ActivationBundle],
    ) -> Result<Self> {
        let vectors = mean_bundle(bundles)?;
        Ok(Self {
            task: task.to_string(),
            style: style.to_string(),
            source_template: source_template.to_string(),
            vectors,
            sample_count: bundles.len(),
        })
    }

    /// Build a patch plan over `heads`, sourcing vectors from this mean.
    pub fn plan(&self, heads: &BTreeSet<HeadId>, scale: f32) -> Result<PatchPlan> {
        let mut source = BTreeMap::new();
        for head in heads {
            let v = self.vectors.get(head).ok_or_else(|| {
                Error::Intervention(format!("mean activation has no vector for head {head}"))
            })?;
            source.insert(*head, v.clone());
        }
        Ok(PatchPlan {
            heads: heads.clone(),
            source,
            scale,
        })
    }

    /// Persist as a safetensors tensor file plus a JSON metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        use safetensors::tensor::{Dtype, TensorView};
        let byte_store: Vec<(String, Vec<u8>)> = self
            .vectors
            .iter()
            .map(|(head, v)| {
                let bytes = v.iter().flat_map(|f| f.to_le_bytes()).collect();
                (format!("L{}H{}", head.layer, head.head), bytes)
            })
            .collect();
        let views: std::collections::HashMap<String, TensorView<'_>> = byte_store
            .iter()
            .map(|(name, bytes)| {
                let view = TensorView::new(Dtype::F32, vec![bytes.len() / 4], bytes)
                    .map_err(|e| Error::Intervention(e.to_string()))?;
                Ok((name.clone(), view))
            })
            .collect::<Result<_>>()?;
        let blob = safetensors::tensor::serialize(&views, &None)
            .map_err(|e| Error::Intervention(e.to_string()))?;
        std::fs::write(path, blob).map_err(|e| Error::io(path.display().to_string(), e))?;
        let meta = MeanActivationMeta {
            task: self.task.clone(),
            style: self.style.clone(),
            source_template: self.source_template.clone(),
            sample_count: self.sample_count,
        };
        let meta_path = sidecar_path(path);
        std::fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta).expect("meta serializes"),
        )
        .map_err(|e| Error::io(meta_path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blob =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let st = safetensors::tensor::SafeTensors::deserialize(&blob)
            .map_err(|e| Error::Intervention(e.to_string()))?;
        let mut vectors = BTreeMap::new();
        for (name, view) in st.tensors() {
            let head = parse_head_name(&name).ok_or_else(|| {
                Error::Intervention(format!("unexpected tensor name '{name}' in activation cache"))
            })?;
            let data: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            vectors.insert(head, Array1::from_vec(data));
        }
        let meta_path = sidecar_path(path);
        let meta: MeanActivationMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_path)
                .map_err(|e| Error::io(meta_path.display().to_string(), e))?,
        )
        .map_err(|e| Error::Intervention(format!("activation cache metadata: {e}")))?;
        Ok(Self {
            task: meta.task,
            style: meta.style,
            source_template: meta.source_template,
            vectors,
            sample_count: meta.sample_count,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    std::path::PathBuf::from(p)
}

fn parse_head_name(name: &str) -> Option<HeadId> {
    name.parse().ok()
}

/// Cache every head's last-token contribution for one prompt.
pub fn capture_bundle(model: &Model, prompt_text: &str) -> Result<ActivationBundle> {
    let tokens = model.tokenize(prompt_text);
    let trace = model.forward(&tokens, &CaptureSpec::AllAtLast, None)?;
    Ok(trace.captured.expect("capture requested"))
}

/// Cache bundles for many prompts on the worker pool, preserving order.
pub fn capture_bundles(
    model: &Model,
    prompts: &[String],
    workers: &Workers,
) -> Result<Vec<ActivationBundle>> {
    let results: Vec<Result<ActivationBundle>> = workers.run(|| {
        use rayon::prelude::*;
        prompts
            .par_iter()
            .map(|p| capture_bundle(model, p))
            .collect()
    });
    results.into_iter().collect()
}

/// Elementwise arithmetic mean per head over a non-empty, key-homogeneous
/// bundle list.
///
/// Summands are accumulated in f64 in a canonical (sorted) order, so the
/// result is exactly permutation-invariant, exactly idempotent on duplicate
/// bundles, and cancels `v`/`-v` pairs to exact zero.
pub fn mean_bundle(bundles: &[ActivationBundle]) -> Result<BTreeMap<HeadId, Array1<f32>>> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Intervention("mean of zero bundles is undefined".into()))?;
    let keys: Vec<HeadId> = first.heads().collect();
    for b in bundles {
        let theirs: Vec<HeadId> = b.heads().collect();
        if theirs != keys {
            return Err(Error::Intervention("bundles disagree on head keys".into()));
        }
    }
    let count = bundles.len() as f64;
    let mut out = BTreeMap::new();
    let mut column = vec![0.0f64; bundles.len()];
    for head in keys {
        let len = first.vector(head).expect("known head").len();
        let mut mean = Array1::<f32>::zeros(len);
        for j in 0..len {
            for (slot, b) in column.iter_mut().zip(bundles.iter()) {
                *slot = b.vector(head).expect("homogeneous keys")[j] as f64;
            }
            column.sort_unstable_by(f64::total_cmp);
            let sum: f64 = column.iter().sum();
            mean[j] = (sum / count) as f32;
        }
        out.insert(head, mean);
    }
    Ok(out)
}

/// Forward pass with the plan applied at the last prompt token.
pub fn patched_forward(model: &Model, prompt_text: &str, plan: &PatchPlan) -> Result<ForwardTrace> {
    let tokens = model.tokenize(prompt_text);
    patched_forward_tokens(model, &tokens, plan, &CaptureSpec::None)
}

/// Forward pass with the plan applied at the last prompt token, optionally
/// capturing head contributions from the intervened run.
pub fn patched_forward_tokens(
    model: &Model,
    tokens: &TokenSequence,
    plan: &PatchPlan,
    capture: &CaptureSpec,
) -> Result<ForwardTrace> {
    if tokens.is_empty() {
        return Err(Error::Prompt("cannot patch an empty prompt".into()));
    }
    model.forward(tokens, capture, Some((plan, tokens.len() - 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskTarget {
    Subject,
    TaskTokens,
}

/// Record of a corruption edit, sufficient to restore the original.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskEdit {
    pub target: MaskTarget,
    pub original_rendered: String,
    pub span: (usize, usize),
    pub replaced_text: String,
    pub mask_string: String,
    /// Token-count change introduced by the edit (0 when the tokenizer
    /// permits an exact swap).
    pub token_delta: isize,
}

impl MaskEdit {
    /// Undo the edit on a corrupted prompt, recovering the original text.
    pub fn restore(&self, corrupted: &PromptSpec) -> String {
        let _ = corrupted;
        self.original_rendered.clone()
    }
}

/// Replace the subject or task span of a prompt with the model's mask
/// token (or the supplied fallback literal).
pub fn corrupt_prompt(
    model: &Model,
    prompt: &PromptSpec,
    target: MaskTarget,
    fallback_mask: &str,
) -> Result<(PromptSpec, MaskEdit)> {
    let span = match target {
        MaskTarget::Subject => prompt.subject_span,
        MaskTarget::TaskTokens => prompt.task_span,
    };
    let (start, end) = span.ok_or_else(|| {
        Error::Prompt(format!(
            "prompt '{}' has no {} span to mask",
            prompt.rendered,
            match target {
                MaskTarget::Subject => "subject",
                MaskTarget::TaskTokens => "task-token",
            }
        ))
    })?;
    let mask_string = model
        .mask_token()
        .map(str::to_string)
        .unwrap_or_else(|| fallback_mask.to_string());
    let mut rendered = prompt.rendered.clone();
    let replaced_text = rendered[start..end].to_string();
    rendered.replace_range(start..end, &mask_string);

    let before = model.tokenize(&prompt.rendered).len() as isize;
    let after = model.tokenize(&rendered).len() as isize;

    let mut corrupted = prompt.clone();
    corrupted.rendered = rendered;
    corrupted.correctness = None;
    match target {
        MaskTarget::Subject => corrupted.subject_span = Some((start, start + mask_string.len())),
        MaskTarget::TaskTokens => corrupted.task_span = Some((start, start + mask_string.len())),
    }
    let edit = MaskEdit {
        target,
        original_rendered: prompt.rendered.clone(),
        span: (start, end),
        replaced_text,
        mask_string,
        token_delta: after - before,
    };
    Ok((corrupted, edit))
}

/// Label assigned to steered generations by the keyword heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageLabel {
    PythonLike,
    JavascriptLike,
    Degenerate,
    Other,
}

/// Number of consecutive repeats of one whitespace-delimited token that
/// flags a generation as degenerate.
pub const DEGENERATE_REPEAT_THRESHOLD: usize = 5;

const PYTHON_MARKERS: [&str; 8] = [
    "def ", "import ", "elif", "print(", "self.", "True", "False", "range(",
];
const JAVASCRIPT_MARKERS: [&str; 8] = [
    "function", "const ", "let ", "var ", "=>", "console.log", "===", "];",
];

/// Keyword heuristic: degenerate when one token repeats at least
/// [`DEGENERATE_REPEAT_THRESHOLD`] times consecutively; otherwise the
/// language with more marker hits wins, ties and no-hits fall to `Other`.
pub fn classify_language(text: &str) -> LanguageLabel {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut run = 1usize;
    for w in words.windows(2) {
        if !w[0].is_empty() && w[0] == w[1] {
            run += 1;
            if run >= DEGENERATE_REPEAT_THRESHOLD {
                return LanguageLabel::Degenerate;
            }
        } else {
            run = 1;
        }
    }
    let py = PYTHON_MARKERS.iter().filter(|m| text.contains(*m)).count();
    let js = JAVASCRIPT_MARKERS.iter().filter(|m| text.contains(*m)).count();
    match py.cmp(&js) {
        std::cmp::Ordering::Greater => LanguageLabel::PythonLike,
        std::cmp::Ordering::Less => LanguageLabel::JavascriptLike,
        std::cmp::Ordering::Equal => LanguageLabel::Other,
    }
}

#[derive(Debug, Clone)]
pub struct SteerOutcome {
    pub text: String,
    pub label: LanguageLabel,
    pub truncated: bool,
}

/// Greedy generation with the plan applied at every step's final position,
/// labeled by the language heuristic.
pub fn steer_generate(
    model: &Model,
    prompt_text: &str,
    plan: &PatchPlan,
    max_new: usize,
) -> Result<SteerOutcome> {
    let tokens = model.tokenize(prompt_text);
    let out = model.generate(&tokens, max_new, Some(plan), PatchSchedule::EveryStep)?;
    Ok(SteerOutcome {
        label: classify_language(&out.text),
        text: out.text,
        truncated: out.truncated,
    })
}
