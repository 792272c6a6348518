//! Quantitative analyses over detector and intervention outputs: overlaps,
//! norm statistics, many-shot correlation, patching sweeps, retrieval-head
//! modulation, competing-task comparison and criteria sensitivity.
//!
//! Everything here is a pure reduction over immutable inputs; sweeps record
//! the grids they ran so results are reproducible from their own metadata.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detect::{
    answer_matches, detect_lexical_per_style, DetectionCriteria, HeadSet, TermSet,
};
use crate::error::{Error, Result};
use crate::lens::{project_vector, LensMode};
use crate::model::{ActivationBundle, HeadId, Model, PatchSchedule};
use crate::patch::{capture_bundles, mean_bundle, patched_forward_tokens, MeanActivation};
use crate::task::{
    eval_accuracy, render_example_prompt, score_answer, PromptSpec, TaskSpec,
};
use crate::workers::Workers;

/// Jaccard overlap `|a ∩ b| / |a ∪ b|`; `None` when both sets are empty.
pub fn head_overlap(a: &HeadSet, b: &HeadSet) -> Option<f64> {
    let union = a.heads.union(&b.heads).count();
    if union == 0 {
        return None;
    }
    let inter = a.heads.intersection(&b.heads).count();
    Some(inter as f64 / union as f64)
}

/// Task-by-task overlap grid between two prompting styles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub row_tasks: Vec<String>,
    pub col_tasks: Vec<String>,
    pub row_style: String,
    pub col_style: String,
    /// `cells[r][c]`; `None` marks undefined (both sets empty).
    pub cells: Vec<Vec<Option<f64>>>,
    pub metric: String,
}

pub fn overlap_matrix(rows: &[HeadSet], cols: &[HeadSet]) -> OverlapMatrix {
    let cells = rows
        .iter()
        .map(|r| cols.iter().map(|c| head_overlap(r, c)).collect())
        .collect();
    OverlapMatrix {
        row_tasks: rows.iter().map(|h| h.task.clone()).collect(),
        col_tasks: cols.iter().map(|h| h.task.clone()).collect(),
        row_style: rows.first().map(|h| h.style.to_string()).unwrap_or_default(),
        col_style: cols.first().map(|h| h.style.to_string()).unwrap_or_default(),
        cells,
        metric: "jaccard".into(),
    }
}

/// L2-norm statistics of captured head outputs for one prompt group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub label: String,
    pub per_head_mean: BTreeMap<HeadId, f64>,
    /// Mean over all (prompt, head) pairs.
    pub group_mean: f64,
    pub prompt_count: usize,
}

/// Mean L2 norms of the given heads' captured vectors across a bundle group.
pub fn norm_stats(
    label: &str,
    bundles: &[ActivationBundle],
    heads: &BTreeSet<HeadId>,
) -> Result<NormStats> {
    if bundles.is_empty() {
        return Err(Error::Analysis(format!("group '{label}' is empty")));
    }
    if heads.is_empty() {
        return Err(Error::Analysis(format!(
            "group '{label}': no heads to measure"
        )));
    }
    let mut per_head_mean = BTreeMap::new();
    let mut total = 0.0f64;
    for head in heads {
        let mut sum = 0.0f64;
        for b in bundles {
            let v = b.vector(*head).ok_or_else(|| {
                Error::Analysis(format!("bundle missing head {head} for group '{label}'"))
            })?;
            sum += v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        }
        let mean = sum / bundles.len() as f64;
        per_head_mean.insert(*head, mean);
        total += sum;
    }
    Ok(NormStats {
        label: label.to_string(),
        per_head_mean,
        group_mean: total / (bundles.len() * heads.len()) as f64,
        prompt_count: bundles.len(),
    })
}

/// Compare head-output norms between two groups (e.g. correct vs incorrect
/// prompts). Returns both stats and `group_a - group_b` of the group means.
pub fn norm_compare(
    group_a: (&str, &[ActivationBundle]),
    group_b: (&str, &[ActivationBundle]),
    heads: &BTreeSet<HeadId>,
) -> Result<(NormStats, NormStats, f64)> {
    let a = norm_stats(group_a.0, group_a.1, heads)?;
    let b = norm_stats(group_b.0, group_b.1, heads)?;
    let diff = a.group_mean - b.group_mean;
    Ok((a, b, diff))
}

/// Sample Pearson correlation; `Ok(None)` when either variance is zero.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Analysis(format!(
            "pearson: length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Analysis("pearson: need at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// One experiment curve: y over a strictly increasing x grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCurve {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SweepCurve {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Analysis("curve x/y length mismatch".into()));
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Analysis("curve x values must be strictly increasing".into()));
        }
        Ok(Self { label: label.into(), x, y })
    }
}

/// Output of the many-shot analysis: per-shot-count accuracy, detected head
/// count and mean head-output norm, plus Pearson correlations of accuracy
/// against both internal metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManyShotResult {
    pub accuracy: SweepCurve,
    pub head_count: SweepCurve,
    pub mean_norm: SweepCurve,
    pub r_accuracy_vs_head_count: Option<f64>,
    pub r_accuracy_vs_norm: Option<f64>,
}

pub struct ManyShotParams<'a> {
    pub task: &'a TaskSpec,
    pub shot_grid: &'a [usize],
    pub seed: u64,
    pub prompts_per_point: usize,
    pub criteria: DetectionCriteria,
    pub mode: LensMode,
    pub max_new: usize,
}

/// Accuracy, lexical-head count and mean detected-head norm per shot count.
pub fn many_shot_sweep(
    model: &Model,
    params: &ManyShotParams<'_>,
    workers: &Workers,
) -> Result<ManyShotResult> {
    if params.shot_grid.is_empty() {
        return Err(Error::Analysis("empty shot grid".into()));
    }
    if params.shot_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Analysis("shot grid must be ascending".into()));
    }
    let terms = params.task.term_set()?;
    let mut acc = Vec::new();
    let mut counts = Vec::new();
    let mut norms = Vec::new();
    for (i, &shots) in params.shot_grid.iter().enumerate() {
        let mut prompts: Vec<PromptSpec> = (0..params.prompts_per_point)
            .map(|q| {
                render_example_prompt(
                    params.task,
                    shots,
                    params.seed.wrapping_add((i * params.prompts_per_point + q) as u64),
                    q % params.task.pairs.len(),
                )
            })
            .collect::<Result<_>>()?;
        let report = eval_accuracy(model, &mut prompts, params.max_new, workers)?;
        let detected = detect_lexical_per_style(
            model, &prompts, &terms, &params.criteria, params.mode, workers,
        )?;
        let texts: Vec<String> = prompts.iter().map(|p| p.rendered.clone()).collect();
        let bundles = capture_bundles(model, &texts, workers)?;
        let mean_norm = if detected.heads.is_empty() {
            0.0
        } else {
            norm_stats("shots", &bundles, &detected.heads)?.group_mean
        };
        acc.push(report.accuracy);
        counts.push(detected.head_count() as f64);
        norms.push(mean_norm);
    }
    let x: Vec<f64> = params.shot_grid.iter().map(|&s| s as f64).collect();
    let r_count = pearson(&acc, &counts)?;
    let r_norm = pearson(&acc, &norms)?;
    Ok(ManyShotResult {
        accuracy: SweepCurve::new("accuracy", x.clone(), acc)?,
        head_count: SweepCurve::new("lexical-head-count", x.clone(), counts)?,
        mean_norm: SweepCurve::new("mean-head-norm", x, norms)?,
        r_accuracy_vs_head_count: r_count,
        r_accuracy_vs_norm: r_norm,
    })
}

/// Fraction of originally incorrect prompts fixed by patching, per scale.
/// The scale-0 point is the ablated run (head contributions zeroed).
pub fn fix_incorrect_sweep(
    model: &Model,
    incorrect_prompts: &[PromptSpec],
    source: &MeanActivation,
    heads: &BTreeSet<HeadId>,
    scale_grid: &[f64],
    max_new: usize,
    workers: &Workers,
) -> Result<SweepCurve> {
    if incorrect_prompts.is_empty() {
        return Err(Error::Analysis("no incorrect prompts to fix".into()));
    }
    if incorrect_prompts.iter().any(|p| p.correctness == Some(true)) {
        return Err(Error::Analysis(
            "fix_incorrect_sweep: all prompts must be scored incorrect at baseline".into(),
        ));
    }
    let mut fractions = Vec::with_capacity(scale_grid.len());
    for &scale in scale_grid {
        let plan = source.plan(heads, scale as f32)?;
        let fixed: Vec<Result<bool>> = workers.run(|| {
            use rayon::prelude::*;
            incorrect_prompts
                .par_iter()
                .map(|p| {
                    let tokens = model.tokenize(&p.rendered);
                    let out =
                        model.generate(&tokens, max_new, Some(&plan), PatchSchedule::PromptLastOnly)?;
                    Ok(score_answer(&out.text, &p.gold))
                })
                .collect()
        });
        let mut hits = 0usize;
        for f in fixed {
            if f? {
                hits += 1;
            }
        }
        fractions.push(hits as f64 / incorrect_prompts.len() as f64);
    }
    SweepCurve::new("fixed-fraction", scale_grid.to_vec(), fractions)
}

/// Accuracy-vs-scale for the same prompts and heads, one curve per
/// activation source (cross-style equivalence, plus a related-task control).
pub fn cross_style_sweep(
    model: &Model,
    prompts: &[PromptSpec],
    sources: &[MeanActivation],
    heads: &BTreeSet<HeadId>,
    scale_grid: &[f64],
    max_new: usize,
    workers: &Workers,
) -> Result<Vec<SweepCurve>> {
    if sources.is_empty() {
        return Err(Error::Analysis("no activation sources".into()));
    }
    for s in sources {
        for head in heads {
            if !s.vectors.contains_key(head) {
                return Err(Error::Analysis(format!(
                    "source '{}' lacks head {head} shared by the sweep",
                    s.source_template
                )));
            }
        }
    }
    let mut curves = Vec::with_capacity(sources.len());
    for source in sources {
        let mut accs = Vec::with_capacity(scale_grid.len());
        for &scale in scale_grid {
            let plan = source.plan(heads, scale as f32)?;
            let correct: Vec<Result<bool>> = workers.run(|| {
                use rayon::prelude::*;
                prompts
                    .par_iter()
                    .map(|p| {
                        let tokens = model.tokenize(&p.rendered);
                        let out = model.generate(
                            &tokens,
                            max_new,
                            Some(&plan),
                            PatchSchedule::PromptLastOnly,
                        )?;
                        Ok(score_answer(&out.text, &p.gold))
                    })
                    .collect()
            });
            let mut hits = 0usize;
            for c in correct {
                if c? {
                    hits += 1;
                }
            }
            accs.push(hits as f64 / prompts.len() as f64);
        }
        let label = format!("{}/{}/{}", source.task, source.style, source.source_template);
        curves.push(SweepCurve::new(label, scale_grid.to_vec(), accs)?);
    }
    Ok(curves)
}

/// One row of the retrieval-modulation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulationRow {
    pub scale: f64,
    /// Mean over prompts of the number of retrieval heads whose top-k
    /// decode answer-matches the gold answer.
    pub matching_heads: f64,
    /// Mean over (prompt, retrieval head) of the gold answer's first-token
    /// logit in the head's decoded projection.
    pub mean_gold_logit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulationTable {
    pub rows: Vec<ModulationRow>,
    pub retrieval_head_count: usize,
}

/// Measure how patching lexical heads (at each scale) changes what the
/// retrieval heads decode.
#[allow(clippy::too_many_arguments)]
pub fn retrieval_modulation(
    model: &Model,
    prompts: &[PromptSpec],
    lexical_source: &MeanActivation,
    lexical_heads: &BTreeSet<HeadId>,
    retrieval_heads: &HeadSet,
    scale_grid: &[f64],
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
) -> Result<ModulationTable> {
    criteria.validate()?;
    if prompts.is_empty() {
        return Err(Error::Analysis("no prompts".into()));
    }
    if retrieval_heads.heads.is_empty() {
        return Err(Error::Analysis("retrieval head set is empty".into()));
    }
    let capture: Vec<(HeadId, usize)> = Vec::new(); // per prompt below
    let _ = capture;
    let mut rows = Vec::with_capacity(scale_grid.len());
    for &scale in scale_grid {
        let plan = lexical_source.plan(lexical_heads, scale as f32)?;
        let per_prompt: Vec<Result<(usize, f64, usize)>> = workers.run(|| {
            use rayon::prelude::*;
            prompts
                .par_iter()
                .map(|p| {
                    let tokens = model.tokenize(&p.rendered);
                    let capture_spec = crate::model::CaptureSpec::Heads(
                        retrieval_heads
                            .heads
                            .iter()
                            .map(|&h| (h, tokens.len() - 1))
                            .collect(),
                    );
                    let trace = patched_forward_tokens(model, &tokens, &plan, &capture_spec)?;
                    let bundle = trace.captured.expect("capture requested");
                    let gold_token = crate::detect::answer_first_token(model, &p.gold)?;
                    let mut matching = 0usize;
                    let mut logit_sum = 0.0f64;
                    let mut logit_n = 0usize;
                    for head in &retrieval_heads.heads {
                        let v = bundle.vector(*head).expect("captured head");
                        let logits = project_vector(model, v, mode)?;
                        logit_sum += logits[gold_token as usize] as f64;
                        logit_n += 1;
                        let ranking = crate::lens::decode_vector(model, v, criteria.k, mode)?;
                        let hits = ranking
                            .token_strings()
                            .take(criteria.k)
                            .filter(|t| answer_matches(t, &p.gold))
                            .count();
                        if hits >= criteria.n {
                            matching += 1;
                        }
                    }
                    Ok((matching, logit_sum, logit_n))
                })
                .collect()
        });
        let mut match_total = 0usize;
        let mut logit_total = 0.0f64;
        let mut logit_count = 0usize;
        for r in per_prompt {
            let (m, ls, ln) = r?;
            match_total += m;
            logit_total += ls;
            logit_count += ln;
        }
        rows.push(ModulationRow {
            scale,
            matching_heads: match_total as f64 / prompts.len() as f64,
            mean_gold_logit: logit_total / logit_count as f64,
        });
    }
    Ok(ModulationTable {
        rows,
        retrieval_head_count: retrieval_heads.heads.len(),
    })
}

/// One cell of the competing-task table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompetingCell {
    pub arm: String,
    pub term_set: String,
    pub head_count: usize,
    /// Mean L2 norm over (prompt, detected head); 0 when nothing detected.
    pub mean_norm: f64,
}

/// 2 arms (ambiguous, control) x 2 term sets (target, off-target):
/// detected lexical-head count and mean activation norm per cell.
pub fn competing_task_compare(
    model: &Model,
    ambiguous: &[PromptSpec],
    control: &[PromptSpec],
    target_terms: &TermSet,
    offtarget_terms: &TermSet,
    criteria: &DetectionCriteria,
    mode: LensMode,
    workers: &Workers,
) -> Result<Vec<CompetingCell>> {
    if ambiguous.len() != control.len() || ambiguous.is_empty() {
        return Err(Error::Analysis(
            "ambiguous/control arms must be non-empty and matched".into(),
        ));
    }
    let same_queries = ambiguous
        .iter()
        .zip(control.iter())
        .all(|(a, c)| a.query == c.query && a.shots == c.shots);
    if !same_queries {
        return Err(Error::Analysis(
            "arms must share query sets and shot counts".into(),
        ));
    }
    let mut cells = Vec::with_capacity(4);
    for (arm_label, prompts) in [("ambiguous", ambiguous), ("control", control)] {
        let texts: Vec<String> = prompts.iter().map(|p| p.rendered.clone()).collect();
        let bundles = capture_bundles(model, &texts, workers)?;
        for terms in [target_terms, offtarget_terms] {
            let detected =
                detect_lexical_per_style(model, prompts, terms, criteria, mode, workers)?;
            let mean_norm = if detected.heads.is_empty() {
                0.0
            } else {
                norm_stats(arm_label, &bundles, &detected.heads)?.group_mean
            };
            cells.push(CompetingCell {
                arm: arm_label.to_string(),
                term_set: terms.task.clone(),
                head_count: detected.head_count(),
                mean_norm,
            });
        }
    }
    Ok(cells)
}

/// Detected-head-count curves over grids of n, k and p (the two parameters
/// not being swept stay at the supplied baseline). Grid points violating
/// `n <= k` are skipped and recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub over_n: SweepCurve,
    pub over_k: SweepCurve,
    pub over_p: SweepCurve,
    pub skipped: Vec<String>,
}

pub fn sensitivity_sweep(
    model: &Model,
    prompts: &[PromptSpec],
    terms: &TermSet,
    baseline: &DetectionCriteria,
    n_grid: &[usize],
    k_grid: &[usize],
    p_grid: &[f64],
    mode: LensMode,
    workers: &Workers,
) -> Result<SensitivityResult> {
    if n_grid.is_empty() || k_grid.is_empty() || p_grid.is_empty() {
        return Err(Error::Analysis("sensitivity grids must be non-empty".into()));
    }
    let mut skipped = Vec::new();
    let mut count_for = |criteria: DetectionCriteria| -> Result<Option<f64>> {
        if criteria.validate().is_err() {
            skipped.push(format!(
                "n={} k={} p={}: invalid combination",
                criteria.n, criteria.k, criteria.p
            ));
            return Ok(None);
        }
        let set = detect_lexical_per_style(model, prompts, terms, &criteria, mode, workers)?;
        Ok(Some(set.head_count() as f64))
    };

    let mut nx = Vec::new();
    let mut ny = Vec::new();
    for &n in n_grid {
        if let Some(c) = count_for(DetectionCriteria { n, ..*baseline })? {
            nx.push(n as f64);
            ny.push(c);
        }
    }
    let mut kx = Vec::new();
    let mut ky = Vec::new();
    for &k in k_grid {
        if let Some(c) = count_for(DetectionCriteria { k, ..*baseline })? {
            kx.push(k as f64);
            ky.push(c);
        }
    }
    let mut px = Vec::new();
    let mut py = Vec::new();
    for &p in p_grid {
        if let Some(c) = count_for(DetectionCriteria { p, ..*baseline })? {
            px.push(p);
            py.push(c);
        }
    }
    Ok(SensitivityResult {
        over_n: SweepCurve::new("heads-vs-n", nx, ny)?,
        over_k: SweepCurve::new("heads-vs-k", kx, ky)?,
        over_p: SweepCurve::new("heads-vs-p", px, py)?,
        skipped,
    })
}

/// Convenience used by reproducibility checks: mean bundle over prompt
/// texts in input order.
pub fn mean_activation_for_prompts(
    model: &Model,
    task: &str,
    style: &str,
    template: &str,
    prompts: &[String],
    workers: &Workers,
) -> Result<MeanActivation> {
    let bundles = capture_bundles(model, prompts, workers)?;
    let vectors = mean_bundle(&bundles)?;
    Ok(MeanActivation {
        task: task.to_string(),
        style: style.to_string(),
        source_template: template.to_string(),
        vectors,
        sample_count: bundles.len(),
    })
}
