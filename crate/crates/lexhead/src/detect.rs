//! Head classification: lexical task heads and retrieval heads under the
//! (n, k, p) criteria.
//!
//! Per prompt, a head is lexical when at least `n` of its top-`k` decoded
//! tokens normalize into the task's term set; per style, when the per-prompt
//! criterion holds on at least `p`% of prompts. Retrieval heads use the same
//! thresholding with answer matching instead of term matching.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lens::{decode_all_heads, LensMode, TokenRanking};
use crate::model::{CaptureSpec, HeadId, Model};
use crate::task::{PromptSpec, PromptStyle};
use crate::workers::Workers;

/// Leading glyphs stripped by [`normalize_token`]: the byte-level BPE space
/// marker, the sentencepiece space marker, the underscore notation used for
/// space markers in shipped term files, and a literal space.
const LEAD_MARKERS: [char; 4] = ['\u{0120}', '\u{2581}', '_', ' '];

/// Strip one leading space-marker glyph, then case-fold. Non-Latin scripts
/// pass through unchanged (case folding is a no-op for them).
pub fn normalize_token(s: &str) -> String {
    let stripped = LEAD_MARKERS
        .iter()
        .find_map(|&m| s.strip_prefix(m))
        .unwrap_or(s);
    stripped.to_lowercase()
}

/// Task-descriptive terms, raw as shipped plus their normalized forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermSet {
    pub task: String,
    pub raw_terms: Vec<String>,
    normalized: BTreeSet<String>,
}

impl TermSet {
    pub fn new(task: &str, raw_terms: Vec<String>) -> Result<Self> {
        if raw_terms.is_empty() {
            return Err(Error::Detection(format!("{task}: empty term set")));
        }
        let normalized = raw_terms.iter().map(|t| normalize_token(t)).collect();
        Ok(Self {
            task: task.to_string(),
            raw_terms,
            normalized,
        })
    }

    pub fn contains_normalized(&self, normalized_token: &str) -> bool {
        self.normalized.contains(normalized_token)
    }

    pub fn normalized(&self) -> &BTreeSet<String> {
        &self.normalized
    }
}

/// Detection thresholds: `n` of the top `k` tokens, on at least `p`% of
/// prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionCriteria {
    pub n: usize,
    pub k: usize,
    /// Percentage in (0, 100].
    pub p: f64,
}

impl Default for DetectionCriteria {
    fn default() -> Self {
        Self { n: 1, k: 10, p: 10.0 }
    }
}

impl DetectionCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > self.k {
            return Err(Error::Detection(format!(
                "criteria: need 1 <= n <= k, got n={} k={}",
                self.n, self.k
            )));
        }
        if !(self.p > 0.0 && self.p <= 100.0) {
            return Err(Error::Detection(format!(
                "criteria: need 0 < p <= 100, got p={}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Heads detected for one (task, style), with each head's fraction of
/// prompts satisfying the per-prompt criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadSet {
    pub task: String,
    pub style: PromptStyle,
    pub criteria: DetectionCriteria,
    pub heads: BTreeSet<HeadId>,
    /// Hit rate for every head of the model, detected or not
    /// (distribution heatmaps need the full grid).
    pub hit_rates: BTreeMap<HeadId, f64>,
    pub prompt_count: usize,
}

impl HeadSet {
    pub fn head_count(&self) -> usize {
        self.heads.len()
    }
}

/// Per-prompt lexical criterion: at least `n` of the top-`k` token slots
/// normalize into the term set (duplicate slots each count).
pub fn is_lexical_per_prompt(
    ranking: &TokenRanking,
    terms: &TermSet,
    criteria: &DetectionCriteria,
) -> Result<bool> {
    if ranking.len() < criteria.k {
        return Err(Error::Detection(format!(
            "ranking has {} entries, need k={}",
            ranking.len(),
            criteria.k
        )));
    }
    let matches = ranking
        .token_strings()
        .take(criteria.k)
        .filter(|t| terms.contains_normalized(&normalize_token(t)))
        .count();
    Ok(matches >= criteria.n)
}

/// Answer matching for retrieval heads: the normalized token equals the
/// normalized first whitespace-delimited word of the answer, or is a
/// prefix of it at least 3 characters long.
pub fn answer_matches(token: &str, gold: &str) -> bool {
    let first_word = match gold.split_whitespace().next() {
        Some(w) => normalize_token(w),
        None => return false,
    };
    let tok = normalize_token(token);
    if tok.is_empty() {
        return false;
    }
    tok == first_word || (tok.chars().count() >= 3 && first_word.starts_with(&tok))
}

/// First content token of a gold answer under the model's tokenizer,
/// rendered with a leading space the way it would appear mid-generation.
/// Pure space-marker tokens (tokenizers without a space merge) are skipped.
pub fn answer_first_token(model: &Model, gold: &str) -> Result<u32> {
    let seq = model.tokenize(&format!(" {}", gold.trim()));
    for &id in &seq.ids {
        let s = model.tokenizer().token_string(id).unwrap_or("");
        if !normalize_token(s).is_empty() {
            return Ok(id);
        }
    }
    Err(Error::Detection(format!(
        "gold answer '{gold}' has no content token"
    )))
}

/// Per-prompt retrieval criterion over a ranking and the prompt's gold
/// answer.
pub fn is_retrieval_per_prompt(
    ranking: &TokenRanking,
    gold: &str,
    criteria: &DetectionCriteria,
) -> Result<bool> {
    if ranking.len() < criteria.k {
        return Err(Error::Detection(format!(
            "ranking has {} entries, need k={}",
            ranking.len(),
            criteria.k
        )));
    }
    let matches = ranking
        .token_strings()
        .take(criteria.k)
        .filter(|t| answer_matches(t, gold))
        .count();
    Ok(matches >= criteria.n)
}

fn capture_all(
    model: &Model,
    prompts: &[PromptSpec],
    workers: &Workers,
) -> Result<Vec<crate::model::ActivationBundle>> {
    let results: Vec<Result<crate::model::ActivationBundle>> = workers.run(|| {
        use rayon::prelude::*;
        prompts
            .par_iter()
            .map(|prompt| {
                let tokens = model.tokenize(&prompt.rendered);
                let trace = model.forward(&tokens, &CaptureSpec::AllAtLast, None)?;
                Ok(trace.captured.expect("capture requested"))
            })
            .collect()
    });
    results.into_iter().collect()
}

fn detect_from_bundles<T: Sync>(
    model: &Model,
    bundles: &[crate::model::ActivationBundle],
    contexts: &[T],
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
    per_prompt: impl Fn(&TokenRanking, &T) -> Result<bool> + Sync,
) -> Result<(BTreeSet<HeadId>, BTreeMap<HeadId, f64>)> {
    criteria.validate()?;
    if bundles.is_empty() {
        return Err(Error::Detection("empty prompt list".into()));
    }
    if bundles.len() != contexts.len() {
        return Err(Error::Detection("bundle/context count mismatch".into()));
    }

    let per_prompt_hits: Vec<Result<Vec<(HeadId, bool)>>> = workers.run(|| {
        use rayon::prelude::*;
        bundles
            .par_iter()
            .zip(contexts.par_iter())
            .map(|(bundle, context)| {
                let decoded = decode_all_heads(model, bundle, criteria.k, mode)?;
                decoded
                    .into_iter()
                    .map(|(head, ranking)| Ok((head, per_prompt(&ranking, context)?)))
                    .collect()
            })
            .collect()
    });

    let mut hit_counts: BTreeMap<HeadId, usize> = BTreeMap::new();
    for layer in 0..model.config.n_layers {
        for head in 0..model.config.n_heads {
            hit_counts.insert(HeadId::new(layer, head), 0);
        }
    }
    for prompt_hits in per_prompt_hits {
        for (head, hit) in prompt_hits? {
            if hit {
                *hit_counts.get_mut(&head).expect("known head") += 1;
            }
        }
    }

    let total = bundles.len() as f64;
    let threshold = criteria.p / 100.0;
    let hit_rates: BTreeMap<HeadId, f64> = hit_counts
        .into_iter()
        .map(|(head, count)| (head, count as f64 / total))
        .collect();
    let heads = hit_rates
        .iter()
        .filter(|(_, &rate)| rate >= threshold)
        .map(|(&head, _)| head)
        .collect();
    Ok((heads, hit_rates))
}

/// Lexical detection over pre-captured bundles (one per prompt, aligned).
pub fn detect_lexical_from_bundles(
    model: &Model,
    bundles: &[crate::model::ActivationBundle],
    terms: &TermSet,
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
    style: PromptStyle,
) -> Result<HeadSet> {
    let units: Vec<()> = vec![(); bundles.len()];
    let (heads, hit_rates) =
        detect_from_bundles(model, bundles, &units, criteria, mode, workers, |r, _| {
            is_lexical_per_prompt(r, terms, criteria)
        })?;
    Ok(HeadSet {
        task: terms.task.clone(),
        style,
        criteria: *criteria,
        heads,
        hit_rates,
        prompt_count: bundles.len(),
    })
}

/// Retrieval detection over pre-captured bundles and aligned gold answers.
#[allow(clippy::too_many_arguments)]
pub fn detect_retrieval_from_bundles(
    model: &Model,
    bundles: &[crate::model::ActivationBundle],
    golds: &[String],
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
    task: &str,
    style: PromptStyle,
) -> Result<HeadSet> {
    for gold in golds {
        if gold.trim().is_empty() {
            return Err(Error::Detection("prompt is missing its gold answer".into()));
        }
    }
    let (heads, hit_rates) =
        detect_from_bundles(model, bundles, golds, criteria, mode, workers, |r, gold| {
            is_retrieval_per_prompt(r, gold, criteria)
        })?;
    Ok(HeadSet {
        task: task.to_string(),
        style,
        criteria: *criteria,
        heads,
        hit_rates,
        prompt_count: bundles.len(),
    })
}

/// Detect lexical task heads over a set of same-task, same-style prompts.
pub fn detect_lexical_per_style(
    model: &Model,
    prompts: &[PromptSpec],
    terms: &TermSet,
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
) -> Result<HeadSet> {
    check_homogeneous(prompts)?;
    criteria.validate()?;
    let bundles = capture_all(model, prompts, workers)?;
    detect_lexical_from_bundles(model, &bundles, terms, criteria, mode, workers, prompts[0].style)
}

/// Detect retrieval heads: per-prompt positives are heads whose top-k
/// decode answer-matches that prompt's gold answer.
pub fn detect_retrieval_per_style(
    model: &Model,
    prompts: &[PromptSpec],
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
) -> Result<HeadSet> {
    check_homogeneous(prompts)?;
    criteria.validate()?;
    let bundles = capture_all(model, prompts, workers)?;
    let golds: Vec<String> = prompts.iter().map(|p| p.gold.clone()).collect();
    detect_retrieval_from_bundles(
        model,
        &bundles,
        &golds,
        criteria,
        mode,
        workers,
        &prompts[0].task,
        prompts[0].style,
    )
}

fn check_homogeneous(prompts: &[PromptSpec]) -> Result<()> {
    let Some(first) = prompts.first() else {
        return Err(Error::Detection("empty prompt list".into()));
    };
    if prompts
        .iter()
        .any(|p| p.task != first.task || p.style != first.style)
    {
        return Err(Error::Detection(
            "prompts must share one task and style".into(),
        ));
    }
    Ok(())
}
