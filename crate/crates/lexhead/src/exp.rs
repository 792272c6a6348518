//! Experiment runners behind the CLI: each takes a validated config, drives
//! the library, and writes report files (JSON records plus CSV exports).
//!
//! Runners are deterministic: prompt sets derive from the config's seed,
//! reductions happen in prompt order, and every report embeds the config
//! and its hash, so identical configs reproduce byte-identical outputs at
//! any worker count.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    competing_task_compare, cross_style_sweep, fix_incorrect_sweep, many_shot_sweep,
    norm_compare, overlap_matrix, retrieval_modulation, sensitivity_sweep, ManyShotParams,
};
use crate::detect::{
    detect_lexical_per_style, detect_retrieval_per_style, DetectionCriteria, HeadSet,
};
use crate::error::{Error, Result};
use crate::lens::{decode_all_heads, LensMode};
use crate::model::{CaptureSpec, HeadId, Model};
use crate::patch::{capture_bundles, steer_generate, MeanActivation};
use crate::report::{write_csv, write_report};
use crate::synth;
use crate::task::{
    eval_accuracy, load_task, partition_by_correctness, query_indices, render_ambiguity_arms,
    render_example_prompt, render_instruction_prompt, render_zero_shot_prompt, PromptSpec,
    PromptStyle, TaskSpec,
};
use crate::workers::Workers;

fn default_styles() -> Vec<PromptStyle> {
    vec![PromptStyle::ExampleBased, PromptStyle::InstructionBased]
}

fn default_scale_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0]
}

fn default_shot_grid() -> Vec<usize> {
    vec![1, 2, 3, 5]
}

fn default_shots() -> usize {
    3
}

fn default_prompts_per_task() -> usize {
    20
}

fn default_max_new() -> usize {
    8
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_n_grid() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_k_grid() -> Vec<usize> {
    vec![5, 10, 20, 30]
}

fn default_p_grid() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 50.0]
}

/// One config drives every subcommand; unused fields are simply ignored by
/// runners that do not need them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub tasks: Vec<PathBuf>,
    #[serde(default = "default_styles")]
    pub styles: Vec<PromptStyle>,
    #[serde(default)]
    pub criteria: DetectionCriteria,
    #[serde(default)]
    pub lens_mode: LensMode,
    #[serde(default = "default_scale_grid")]
    pub scale_grid: Vec<f64>,
    #[serde(default = "default_shot_grid")]
    pub shot_grid: Vec<usize>,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker count never changes results, so it stays out of report
    /// configs (and their hashes).
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default = "default_prompts_per_task")]
    pub prompts_per_task: usize,
    #[serde(default = "default_max_new")]
    pub max_new: usize,
    #[serde(default)]
    pub template_id: usize,
    /// Where reports land; not part of the experiment identity.
    #[serde(default = "default_out_dir", skip_serializing)]
    pub out_dir: PathBuf,
    /// Restrict detection inputs to prompts the model answers correctly.
    #[serde(default)]
    pub correct_only: bool,
    /// Free-form prompt for `decode` and `steer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Task file supplying the term set when it differs from `tasks`
    /// (compositional experiments, steering).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms_task: Option<PathBuf>,
    /// Off-target task file for the competing-task comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offtarget_task: Option<PathBuf>,
    /// Pre-built mean-activation caches (from `cache`).
    #[serde(default)]
    pub cache_files: Vec<PathBuf>,
    /// Head-set report files (rows/cols) for `overlap` when not detecting
    /// inline.
    #[serde(default)]
    pub row_head_sets: Vec<PathBuf>,
    #[serde(default)]
    pub col_head_sets: Vec<PathBuf>,
    /// Explicit head list ("L16H25") overriding detection where supported.
    #[serde(default)]
    pub heads: Vec<String>,
    /// Ranking depth for `decode` (defaults to `criteria.k`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    /// Grouping for `norms`: "correctness" or "style".
    #[serde(default)]
    pub group_by: NormGrouping,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormGrouping {
    #[default]
    Correctness,
    Style,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.criteria.validate()?;
        if !self.model.exists() {
            return Err(Error::InvalidConfig(format!(
                "model: path {} does not exist",
                self.model.display()
            )));
        }
        for t in self.tasks.iter().chain(&self.terms_task).chain(&self.offtarget_task) {
            if !t.exists() {
                return Err(Error::InvalidConfig(format!(
                    "tasks: file {} does not exist",
                    t.display()
                )));
            }
        }
        for c in self.cache_files.iter().chain(&self.row_head_sets).chain(&self.col_head_sets) {
            if !c.exists() {
                return Err(Error::InvalidConfig(format!(
                    "cache/head-set file {} does not exist",
                    c.display()
                )));
            }
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::InvalidConfig("workers: must be >= 1".into()));
            }
        }
        if self.prompts_per_task == 0 {
            return Err(Error::InvalidConfig("prompts_per_task: must be >= 1".into()));
        }
        if self.max_new == 0 {
            return Err(Error::InvalidConfig("max_new: must be >= 1".into()));
        }
        for h in &self.heads {
            parse_head(h)?;
        }
        Ok(())
    }

    pub fn open_model(&self) -> Result<Model> {
        Model::load(&self.model, None)
    }

    pub fn make_workers(&self) -> Result<Workers> {
        match self.workers {
            Some(n) => Workers::new(n),
            None => Ok(Workers::default()),
        }
    }
}

pub fn parse_head(s: &str) -> Result<HeadId> {
    s.parse()
        .map_err(|_| Error::InvalidConfig(format!("heads: '{s}' is not of the form L<n>H<m>")))
}

/// Deserialization half of a report envelope (see [`crate::report`]).
#[derive(Debug, Deserialize)]
pub struct ReportEnvelope<P> {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub payload: P,
}

pub fn read_payload<P: DeserializeOwned>(path: &Path) -> Result<P> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let envelope: ReportEnvelope<P> = serde_json::from_str(&raw)
        .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    Ok(envelope.payload)
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

/// Render the configured number of prompts for one task and style.
/// Example-based prompts vary demonstrations with the seed; instruction
/// prompts cycle the query pool under the configured template.
pub fn render_prompt_set(
    task: &TaskSpec,
    style: PromptStyle,
    shots: usize,
    template_id: usize,
    seed: u64,
    count: usize,
) -> Result<Vec<PromptSpec>> {
    let queries = query_indices(task, count);
    queries
        .iter()
        .enumerate()
        .map(|(i, &q)| match style {
            PromptStyle::ExampleBased => {
                render_example_prompt(task, shots, seed.wrapping_add(i as u64), q)
            }
            PromptStyle::InstructionBased => render_instruction_prompt(task, template_id, q),
            PromptStyle::Custom => render_zero_shot_prompt(task, q),
        })
        .collect()
}

fn effective_prompts(
    model: &Model,
    config: &ExperimentConfig,
    task: &TaskSpec,
    style: PromptStyle,
    workers: &Workers,
) -> Result<Vec<PromptSpec>> {
    let mut prompts = render_prompt_set(
        task,
        style,
        config.shots,
        config.template_id,
        config.seed,
        config.prompts_per_task,
    )?;
    if config.correct_only {
        eval_accuracy(model, &mut prompts, config.max_new, workers)?;
        let (correct, _) = partition_by_correctness(&prompts);
        if correct.is_empty() {
            return Err(Error::Analysis(format!(
                "{}/{}: no correct prompts to detect on",
                task.name, style
            )));
        }
        return Ok(correct);
    }
    Ok(prompts)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: String,
    pub style: PromptStyle,
    pub template_id: usize,
    pub shots: usize,
    pub accuracy: f64,
    pub n_prompts: usize,
}

pub fn run_eval(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let mut rows = Vec::new();
    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        for &style in &config.styles {
            match style {
                PromptStyle::ExampleBased => {
                    for &shots in &config.shot_grid {
                        if shots >= task.pairs.len() {
                            continue;
                        }
                        let mut prompts = render_prompt_set(
                            &task, style, shots, 0, config.seed, config.prompts_per_task,
                        )?;
                        let r = eval_accuracy(&model, &mut prompts, config.max_new, &workers)?;
                        rows.push(EvalRow {
                            task: task.name.clone(),
                            style,
                            template_id: 0,
                            shots,
                            accuracy: r.accuracy,
                            n_prompts: prompts.len(),
                        });
                    }
                }
                _ => {
                    let template_count = match style {
                        PromptStyle::InstructionBased => task.instruction_templates.len(),
                        _ => 1,
                    };
                    for template_id in 0..template_count {
                        let mut prompts = render_prompt_set(
                            &task, style, 0, template_id, config.seed, config.prompts_per_task,
                        )?;
                        let r = eval_accuracy(&model, &mut prompts, config.max_new, &workers)?;
                        rows.push(EvalRow {
                            task: task.name.clone(),
                            style,
                            template_id,
                            shots: 0,
                            accuracy: r.accuracy,
                            n_prompts: prompts.len(),
                        });
                    }
                }
            }
        }
    }
    let json = write_report(&config.out_dir, "eval", config, &rows)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.style.to_string(),
                r.template_id.to_string(),
                r.shots.to_string(),
                format!("{:.6}", r.accuracy),
                r.n_prompts.to_string(),
            ]
        })
        .collect();
    let csv = write_csv(
        &config.out_dir,
        "eval",
        &["task", "style", "template", "shots", "accuracy", "n"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodeEntry {
    pub head: HeadId,
    pub tokens: Vec<String>,
    pub logits: Vec<f32>,
}

pub fn run_decode(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let text = match (&config.prompt, config.tasks.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(task_path)) => {
            let task = load_task(task_path)?;
            render_instruction_prompt(&task, config.template_id, 0)?.rendered
        }
        (None, None) => {
            return Err(Error::InvalidConfig(
                "decode: needs `prompt` or a task file".into(),
            ))
        }
    };
    let k = config.k.unwrap_or(config.criteria.k);
    let tokens = model.tokenize(&text);
    let trace = model.forward(&tokens, &CaptureSpec::AllAtLast, None)?;
    let bundle = trace.captured.expect("capture requested");
    let decoded = decode_all_heads(&model, &bundle, k, config.lens_mode)?;
    let filter: Option<BTreeSet<HeadId>> = if config.heads.is_empty() {
        None
    } else {
        Some(config.heads.iter().map(|h| parse_head(h)).collect::<Result<_>>()?)
    };
    let entries: Vec<DecodeEntry> = decoded
        .into_iter()
        .filter(|(head, _)| filter.as_ref().is_none_or(|f| f.contains(head)))
        .map(|(head, ranking)| DecodeEntry {
            head,
            tokens: ranking.token_strings().map(str::to_string).collect(),
            logits: ranking.entries.iter().map(|e| e.logit).collect(),
        })
        .collect();
    #[derive(Serialize)]
    struct DecodePayload {
        prompt: String,
        k: usize,
        entries: Vec<DecodeEntry>,
    }
    let json = write_report(
        &config.out_dir,
        "decode",
        config,
        DecodePayload { prompt: text, k, entries },
    )?;
    Ok(vec![json])
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectPayload {
    pub lexical: HeadSet,
    pub retrieval: HeadSet,
}

pub fn run_detect(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let mut outputs = Vec::new();
    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        let terms = match &config.terms_task {
            Some(p) => load_task(p)?.term_set()?,
            None => task.term_set()?,
        };
        for &style in &config.styles {
            let prompts = effective_prompts(&model, config, &task, style, &workers)?;
            let lexical = detect_lexical_per_style(
                &model, &prompts, &terms, &config.criteria, config.lens_mode, &workers,
            )?;
            let retrieval = detect_retrieval_per_style(
                &model, &prompts, &config.criteria, config.lens_mode, &workers,
            )?;
            let name = format!("headset_{}_{}", slug(&task.name), style);
            let json = write_report(
                &config.out_dir,
                &name,
                config,
                DetectPayload { lexical: lexical.clone(), retrieval: retrieval.clone() },
            )?;
            let mut csv_rows = Vec::new();
            for (kind, set) in [("lexical", &lexical), ("retrieval", &retrieval)] {
                for (head, rate) in &set.hit_rates {
                    csv_rows.push(vec![
                        kind.to_string(),
                        head.layer.to_string(),
                        head.head.to_string(),
                        format!("{rate:.6}"),
                        set.heads.contains(head).to_string(),
                    ]);
                }
            }
            let csv = write_csv(
                &config.out_dir,
                &name,
                &["kind", "layer", "head", "hit_rate", "detected"],
                &csv_rows,
            )?;
            outputs.push(json);
            outputs.push(csv);
        }
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// overlap
// ---------------------------------------------------------------------------

pub fn run_overlap(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (rows, cols) = if !config.row_head_sets.is_empty() {
        let rows: Vec<HeadSet> = config
            .row_head_sets
            .iter()
            .map(|p| read_payload::<DetectPayload>(p).map(|d| d.lexical))
            .collect::<Result<_>>()?;
        let cols: Vec<HeadSet> = config
            .col_head_sets
            .iter()
            .map(|p| read_payload::<DetectPayload>(p).map(|d| d.lexical))
            .collect::<Result<_>>()?;
        (rows, cols)
    } else {
        let model = config.open_model()?;
        let workers = config.make_workers()?;
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for task_path in &config.tasks {
            let task = load_task(task_path)?;
            let terms = task.term_set()?;
            for (style, bucket) in [
                (PromptStyle::ExampleBased, &mut rows),
                (PromptStyle::InstructionBased, &mut cols),
            ] {
                let prompts = effective_prompts(&model, config, &task, style, &workers)?;
                bucket.push(detect_lexical_per_style(
                    &model, &prompts, &terms, &config.criteria, config.lens_mode, &workers,
                )?);
            }
        }
        (rows, cols)
    };
    let matrix = overlap_matrix(&rows, &cols);
    let json = write_report(&config.out_dir, "overlap", config, &matrix)?;
    let mut csv_rows = Vec::new();
    for (r, row_task) in matrix.row_tasks.iter().enumerate() {
        for (c, col_task) in matrix.col_tasks.iter().enumerate() {
            csv_rows.push(vec![
                row_task.clone(),
                col_task.clone(),
                matrix.cells[r][c].map_or("".into(), |v| format!("{v:.6}")),
            ]);
        }
    }
    let csv = write_csv(
        &config.out_dir,
        "overlap",
        &["row_task", "col_task", "overlap"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// norms
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct NormsPayload {
    pub task: String,
    pub grouping: String,
    pub group_a: Option<crate::analysis::NormStats>,
    pub group_b: Option<crate::analysis::NormStats>,
    pub difference: Option<f64>,
    pub heads_measured: usize,
    pub note: Option<String>,
}

pub fn run_norms(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let mut payloads = Vec::new();
    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        let terms = task.term_set()?;
        let payload = match config.group_by {
            NormGrouping::Correctness => {
                let mut prompts = render_prompt_set(
                    &task,
                    PromptStyle::ExampleBased,
                    config.shots,
                    0,
                    config.seed,
                    config.prompts_per_task,
                )?;
                eval_accuracy(&model, &mut prompts, config.max_new, &workers)?;
                let detected = detect_lexical_per_style(
                    &model, &prompts, &terms, &config.criteria, config.lens_mode, &workers,
                )?;
                let (correct, incorrect) = partition_by_correctness(&prompts);
                if correct.is_empty() || incorrect.is_empty() || detected.heads.is_empty() {
                    NormsPayload {
                        task: task.name.clone(),
                        grouping: "correctness".into(),
                        group_a: None,
                        group_b: None,
                        difference: None,
                        heads_measured: detected.heads.len(),
                        note: Some(format!(
                            "undefined cell: {} correct, {} incorrect, {} detected heads",
                            correct.len(),
                            incorrect.len(),
                            detected.heads.len()
                        )),
                    }
                } else {
                    let texts = |ps: &[PromptSpec]| -> Vec<String> {
                        ps.iter().map(|p| p.rendered.clone()).collect()
                    };
                    let a = capture_bundles(&model, &texts(&correct), &workers)?;
                    let b = capture_bundles(&model, &texts(&incorrect), &workers)?;
                    let (sa, sb, diff) =
                        norm_compare(("correct", &a), ("incorrect", &b), &detected.heads)?;
                    NormsPayload {
                        task: task.name.clone(),
                        grouping: "correctness".into(),
                        heads_measured: detected.heads.len(),
                        group_a: Some(sa),
                        group_b: Some(sb),
                        difference: Some(diff),
                        note: None,
                    }
                }
            }
            NormGrouping::Style => {
                let example = effective_prompts(
                    &model, config, &task, PromptStyle::ExampleBased, &workers,
                )?;
                let instruction = effective_prompts(
                    &model, config, &task, PromptStyle::InstructionBased, &workers,
                )?;
                let ex_set = detect_lexical_per_style(
                    &model, &example, &terms, &config.criteria, config.lens_mode, &workers,
                )?;
                let in_set = detect_lexical_per_style(
                    &model, &instruction, &terms, &config.criteria, config.lens_mode, &workers,
                )?;
                let heads: BTreeSet<HeadId> =
                    ex_set.heads.union(&in_set.heads).copied().collect();
                if heads.is_empty() {
                    NormsPayload {
                        task: task.name.clone(),
                        grouping: "style".into(),
                        group_a: None,
                        group_b: None,
                        difference: None,
                        heads_measured: 0,
                        note: Some("undefined cell: no heads detected in either style".into()),
                    }
                } else {
                    let texts = |ps: &[PromptSpec]| -> Vec<String> {
                        ps.iter().map(|p| p.rendered.clone()).collect()
                    };
                    let a = capture_bundles(&model, &texts(&example), &workers)?;
                    let b = capture_bundles(&model, &texts(&instruction), &workers)?;
                    let (sa, sb, diff) =
                        norm_compare(("example-based", &a), ("instruction-based", &b), &heads)?;
                    NormsPayload {
                        task: task.name.clone(),
                        grouping: "style".into(),
                        heads_measured: heads.len(),
                        group_a: Some(sa),
                        group_b: Some(sb),
                        difference: Some(diff),
                        note: None,
                    }
                }
            }
        };
        payloads.push(payload);
    }
    let json = write_report(&config.out_dir, "norms", config, &payloads)?;
    let csv_rows: Vec<Vec<String>> = payloads
        .iter()
        .map(|p| {
            vec![
                p.task.clone(),
                p.grouping.clone(),
                p.group_a.as_ref().map_or(String::new(), |g| format!("{:.6}", g.group_mean)),
                p.group_b.as_ref().map_or(String::new(), |g| format!("{:.6}", g.group_mean)),
                p.difference.map_or(String::new(), |d| format!("{d:.6}")),
                p.heads_measured.to_string(),
            ]
        })
        .collect();
    let csv = write_csv(
        &config.out_dir,
        "norms",
        &["task", "grouping", "group_a_mean", "group_b_mean", "difference", "heads"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// many-shot
// ---------------------------------------------------------------------------

pub fn run_many_shot(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let mut results = Vec::new();
    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        let params = ManyShotParams {
            task: &task,
            shot_grid: &config.shot_grid,
            seed: config.seed,
            prompts_per_point: config.prompts_per_task,
            criteria: config.criteria,
            mode: config.lens_mode,
            max_new: config.max_new,
        };
        let result = many_shot_sweep(&model, &params, &workers)?;
        results.push((task.name.clone(), result));
    }
    #[derive(Serialize)]
    struct ManyShotPayload<'a> {
        task: &'a str,
        result: &'a crate::analysis::ManyShotResult,
    }
    let payloads: Vec<ManyShotPayload<'_>> = results
        .iter()
        .map(|(task, result)| ManyShotPayload { task, result })
        .collect();
    let json = write_report(&config.out_dir, "many_shot", config, &payloads)?;
    let mut csv_rows = Vec::new();
    for (task, r) in &results {
        for (i, &x) in r.accuracy.x.iter().enumerate() {
            csv_rows.push(vec![
                task.clone(),
                format!("{x}"),
                format!("{:.6}", r.accuracy.y[i]),
                format!("{}", r.head_count.y[i]),
                format!("{:.6}", r.mean_norm.y[i]),
            ]);
        }
    }
    let csv = write_csv(
        &config.out_dir,
        "many_shot",
        &["task", "shots", "accuracy", "head_count", "mean_norm"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// cache / patching helpers
// ---------------------------------------------------------------------------

/// Mean activation over the configured prompt set for one task and style.
pub fn build_mean_activation(
    model: &Model,
    config: &ExperimentConfig,
    task: &TaskSpec,
    style: PromptStyle,
    template_id: usize,
    workers: &Workers,
) -> Result<MeanActivation> {
    let prompts = render_prompt_set(
        task,
        style,
        config.shots,
        template_id,
        config.seed,
        config.prompts_per_task,
    )?;
    let texts: Vec<String> = prompts.iter().map(|p| p.rendered.clone()).collect();
    let bundles = capture_bundles(model, &texts, workers)?;
    let template = match style {
        PromptStyle::ExampleBased => format!("{}-shot", config.shots),
        PromptStyle::InstructionBased => format!("template-{template_id}"),
        PromptStyle::Custom => "zero-shot".into(),
    };
    MeanActivation::from_bundles(&task.name, &style.to_string(), &template, &bundles)
}

pub fn run_cache(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(config.out_dir.display().to_string(), e))?;
    let mut outputs = Vec::new();
    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        for &style in &config.styles {
            let mean =
                build_mean_activation(&model, config, &task, style, config.template_id, &workers)?;
            let path = config.out_dir.join(format!(
                "cache_{}_{}_t{}.safetensors",
                slug(&task.name),
                style,
                config.template_id
            ));
            mean.save(&path)?;
            outputs.push(path);
        }
    }
    Ok(outputs)
}

fn detected_or_configured_heads(
    model: &Model,
    config: &ExperimentConfig,
    task: &TaskSpec,
    workers: &Workers,
) -> Result<BTreeSet<HeadId>> {
    if !config.heads.is_empty() {
        return config.heads.iter().map(|h| parse_head(h)).collect();
    }
    let terms = match &config.terms_task {
        Some(p) => load_task(p)?.term_set()?,
        None => task.term_set()?,
    };
    let prompts = effective_prompts(model, config, task, PromptStyle::ExampleBased, workers)?;
    let detected = detect_lexical_per_style(
        model, &prompts, &terms, &config.criteria, config.lens_mode, workers,
    )?;
    if detected.heads.is_empty() {
        return Err(Error::Analysis(format!(
            "{}: no lexical heads detected; supply `heads` explicitly",
            task.name
        )));
    }
    Ok(detected.heads)
}

// ---------------------------------------------------------------------------
// cross-patch (functional equivalence across styles)
// ---------------------------------------------------------------------------

pub fn run_cross_patch(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let task_path = config
        .tasks
        .first()
        .ok_or_else(|| Error::InvalidConfig("cross-patch: needs a task".into()))?;
    let task = load_task(task_path)?;
    let heads = detected_or_configured_heads(&model, config, &task, &workers)?;

    let mut sources: Vec<MeanActivation> = Vec::new();
    for cache in &config.cache_files {
        sources.push(MeanActivation::load(cache)?);
    }
    if sources.is_empty() {
        // style-averaged sources computed inline: example-based, each
        // instruction template, plus the related-task control
        sources.push(build_mean_activation(
            &model, config, &task, PromptStyle::ExampleBased, 0, &workers,
        )?);
        for template_id in 0..task.instruction_templates.len() {
            sources.push(build_mean_activation(
                &model, config, &task, PromptStyle::InstructionBased, template_id, &workers,
            )?);
        }
        if let Some(related) = &task.related_task {
            let related_path = task_path.with_file_name(format!("{related}.json"));
            if related_path.exists() {
                let control_task = load_task(&related_path)?;
                let mut control = build_mean_activation(
                    &model, config, &control_task, PromptStyle::InstructionBased, 0, &workers,
                )?;
                control.source_template = format!("control:{related}");
                sources.push(control);
            }
        }
    }

    let prompts: Vec<PromptSpec> = query_indices(&task, config.prompts_per_task)
        .into_iter()
        .map(|q| render_zero_shot_prompt(&task, q))
        .collect::<Result<_>>()?;
    let curves = cross_style_sweep(
        &model, &prompts, &sources, &heads, &config.scale_grid, config.max_new, &workers,
    )?;
    let json = write_report(&config.out_dir, "cross_patch", config, &curves)?;
    let mut csv_rows = Vec::new();
    for curve in &curves {
        for (i, &x) in curve.x.iter().enumerate() {
            csv_rows.push(vec![curve.label.clone(), format!("{x}"), format!("{:.6}", curve.y[i])]);
        }
    }
    let csv = write_csv(&config.out_dir, "cross_patch", &["source", "scale", "accuracy"], &csv_rows)?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// fix-incorrect
// ---------------------------------------------------------------------------

pub fn run_fix_incorrect(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let task_path = config
        .tasks
        .first()
        .ok_or_else(|| Error::InvalidConfig("fix-incorrect: needs a task".into()))?;
    let task = load_task(task_path)?;
    let heads = detected_or_configured_heads(&model, config, &task, &workers)?;

    let mut prompts: Vec<PromptSpec> = query_indices(&task, config.prompts_per_task)
        .into_iter()
        .map(|q| render_zero_shot_prompt(&task, q))
        .collect::<Result<_>>()?;
    eval_accuracy_grouped(&model, &mut prompts, config.max_new, &workers)?;
    let (_, incorrect) = partition_by_correctness(&prompts);
    if incorrect.is_empty() {
        return Err(Error::Analysis(
            "fix-incorrect: every zero-shot prompt is already correct".into(),
        ));
    }

    let source = match config.cache_files.first() {
        Some(path) => MeanActivation::load(path)?,
        None => build_mean_activation(&model, config, &task, PromptStyle::ExampleBased, 0, &workers)?,
    };
    let curve = fix_incorrect_sweep(
        &model, &incorrect, &source, &heads, &config.scale_grid, config.max_new, &workers,
    )?;
    #[derive(Serialize)]
    struct FixPayload<'a> {
        task: &'a str,
        incorrect_count: usize,
        curve: &'a crate::analysis::SweepCurve,
    }
    let json = write_report(
        &config.out_dir,
        "fix_incorrect",
        config,
        FixPayload { task: &task.name, incorrect_count: incorrect.len(), curve: &curve },
    )?;
    let csv_rows: Vec<Vec<String>> = curve
        .x
        .iter()
        .zip(curve.y.iter())
        .map(|(x, y)| vec![task.name.clone(), format!("{x}"), format!("{y:.6}")])
        .collect();
    let csv = write_csv(&config.out_dir, "fix_incorrect", &["task", "scale", "fixed_fraction"], &csv_rows)?;
    Ok(vec![json, csv])
}

/// Like [`eval_accuracy`] but tolerant of mixed prompt groups (used where
/// correctness is needed on zero-shot pools).
fn eval_accuracy_grouped(
    model: &Model,
    prompts: &mut [PromptSpec],
    max_new: usize,
    workers: &Workers,
) -> Result<()> {
    let texts: Vec<(String, String)> = prompts
        .iter()
        .map(|p| (p.rendered.clone(), p.gold.clone()))
        .collect();
    let outcomes: Vec<Result<bool>> = workers.run(|| {
        use rayon::prelude::*;
        texts
            .par_iter()
            .map(|(rendered, gold)| {
                let tokens = model.tokenize(rendered);
                let out = model.generate(
                    &tokens,
                    max_new,
                    None,
                    crate::model::PatchSchedule::PromptLastOnly,
                )?;
                Ok(crate::task::score_answer(&out.text, gold))
            })
            .collect()
    });
    for (p, o) in prompts.iter_mut().zip(outcomes) {
        p.correctness = Some(o?);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// modulate (lexical patching vs retrieval heads)
// ---------------------------------------------------------------------------

pub fn run_modulate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let task_path = config
        .tasks
        .first()
        .ok_or_else(|| Error::InvalidConfig("modulate: needs a task".into()))?;
    let task = load_task(task_path)?;
    let lexical_heads = detected_or_configured_heads(&model, config, &task, &workers)?;

    let prompts: Vec<PromptSpec> = query_indices(&task, config.prompts_per_task)
        .into_iter()
        .map(|q| render_zero_shot_prompt(&task, q))
        .collect::<Result<_>>()?;
    let retrieval = detect_retrieval_per_style(
        &model, &prompts, &config.criteria, config.lens_mode, &workers,
    )?;
    if retrieval.heads.is_empty() {
        return Err(Error::Analysis(
            "modulate: no retrieval heads detected on the prompt set".into(),
        ));
    }
    let source = match config.cache_files.first() {
        Some(path) => MeanActivation::load(path)?,
        None => build_mean_activation(&model, config, &task, PromptStyle::ExampleBased, 0, &workers)?,
    };
    let table = retrieval_modulation(
        &model,
        &prompts,
        &source,
        &lexical_heads,
        &retrieval,
        &config.scale_grid,
        &config.criteria,
        config.lens_mode,
        &workers,
    )?;
    let json = write_report(&config.out_dir, "modulate", config, &table)?;
    let csv_rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.scale),
                format!("{:.6}", r.matching_heads),
                format!("{:.6}", r.mean_gold_logit),
            ]
        })
        .collect();
    let csv = write_csv(
        &config.out_dir,
        "modulate",
        &["scale", "matching_retrieval_heads", "mean_gold_logit"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// competing tasks
// ---------------------------------------------------------------------------

pub fn run_competing(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let task_path = config
        .tasks
        .first()
        .ok_or_else(|| Error::InvalidConfig("competing: needs the target task".into()))?;
    let task = load_task(task_path)?;
    let offtarget_path = config
        .offtarget_task
        .clone()
        .or_else(|| {
            task.related_task
                .as_ref()
                .map(|r| task_path.with_file_name(format!("{r}.json")))
        })
        .ok_or_else(|| {
            Error::InvalidConfig("competing: needs `offtarget_task` or a related_task link".into())
        })?;
    let offtarget = load_task(&offtarget_path)?;
    let target_terms = task.term_set()?;
    let offtarget_terms = offtarget.term_set()?;
    let queries: Vec<usize> = (0..config.prompts_per_task.min(task.pairs.len())).collect();
    let (ambiguous, control) = render_ambiguity_arms(&task, &queries)?;
    let cells = competing_task_compare(
        &model,
        &ambiguous,
        &control,
        &target_terms,
        &offtarget_terms,
        &config.criteria,
        config.lens_mode,
        &workers,
    )?;
    let json = write_report(&config.out_dir, "competing", config, &cells)?;
    let csv_rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.arm.clone(),
                c.term_set.clone(),
                c.head_count.to_string(),
                format!("{:.6}", c.mean_norm),
            ]
        })
        .collect();
    let csv = write_csv(
        &config.out_dir,
        "competing",
        &["arm", "term_set", "head_count", "mean_norm"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

pub fn run_sensitivity(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let mut payloads = Vec::new();
    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        let terms = task.term_set()?;
        let prompts = effective_prompts(&model, config, &task, PromptStyle::ExampleBased, &workers)?;
        let result = sensitivity_sweep(
            &model,
            &prompts,
            &terms,
            &config.criteria,
            &config.n_grid,
            &config.k_grid,
            &config.p_grid,
            config.lens_mode,
            &workers,
        )?;
        payloads.push((task.name.clone(), result));
    }
    #[derive(Serialize)]
    struct SensitivityPayload<'a> {
        task: &'a str,
        result: &'a crate::analysis::SensitivityResult,
    }
    let named: Vec<SensitivityPayload<'_>> = payloads
        .iter()
        .map(|(t, r)| SensitivityPayload { task: t, result: r })
        .collect();
    let json = write_report(&config.out_dir, "sensitivity", config, &named)?;
    let mut csv_rows = Vec::new();
    for (task, r) in &payloads {
        for (curve, param) in [(&r.over_n, "n"), (&r.over_k, "k"), (&r.over_p, "p")] {
            for (i, &x) in curve.x.iter().enumerate() {
                csv_rows.push(vec![
                    task.clone(),
                    param.to_string(),
                    format!("{x}"),
                    format!("{}", curve.y[i]),
                ]);
            }
        }
    }
    let csv = write_csv(
        &config.out_dir,
        "sensitivity",
        &["task", "parameter", "value", "head_count"],
        &csv_rows,
    )?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// steer
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SteerRow {
    pub scale: f64,
    pub label: crate::patch::LanguageLabel,
    pub text: String,
    pub truncated: bool,
}

pub fn run_steer(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let prompt = config
        .prompt
        .clone()
        .ok_or_else(|| Error::InvalidConfig("steer: needs a `prompt`".into()))?;
    let steer_task_path = config
        .terms_task
        .clone()
        .or_else(|| config.tasks.first().cloned())
        .ok_or_else(|| Error::InvalidConfig("steer: needs `terms_task` or a task".into()))?;
    let steer_task = load_task(&steer_task_path)?;
    let heads = detected_or_configured_heads(&model, config, &steer_task, &workers)?;
    let source = match config.cache_files.first() {
        Some(path) => MeanActivation::load(path)?,
        None => build_mean_activation(
            &model, config, &steer_task, PromptStyle::InstructionBased, 0, &workers,
        )?,
    };
    let mut rows = Vec::new();
    for &scale in &config.scale_grid {
        let plan = source.plan(&heads, scale as f32)?;
        let outcome = steer_generate(&model, &prompt, &plan, config.max_new)?;
        rows.push(SteerRow {
            scale,
            label: outcome.label,
            text: outcome.text,
            truncated: outcome.truncated,
        });
    }
    let json = write_report(&config.out_dir, "steer", config, &rows)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.scale),
                format!("{:?}", r.label),
                r.truncated.to_string(),
                r.text.clone(),
            ]
        })
        .collect();
    let csv = write_csv(&config.out_dir, "steer", &["scale", "label", "truncated", "text"], &csv_rows)?;
    Ok(vec![json, csv])
}

// ---------------------------------------------------------------------------
// pipeline (detect + overlap + norms with shared captures)
// ---------------------------------------------------------------------------

/// The full multi-task pipeline: per task and style, capture every prompt's
/// bundle once, detect lexical and retrieval heads from those bundles,
/// then derive the cross-style overlap matrix and style-grouped norm
/// comparison without re-running the model.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let model = config.open_model()?;
    let workers = config.make_workers()?;
    let mut outputs = Vec::new();
    let mut example_sets = Vec::new();
    let mut instruction_sets = Vec::new();
    let mut norm_payloads = Vec::new();

    for task_path in &config.tasks {
        let task = load_task(task_path)?;
        let terms = task.term_set()?;
        let mut per_style = Vec::new();
        for style in [PromptStyle::ExampleBased, PromptStyle::InstructionBased] {
            let prompts = render_prompt_set(
                &task,
                style,
                config.shots,
                config.template_id,
                config.seed,
                config.prompts_per_task,
            )?;
            let texts: Vec<String> = prompts.iter().map(|p| p.rendered.clone()).collect();
            let bundles = capture_bundles(&model, &texts, &workers)?;
            let lexical = crate::detect::detect_lexical_from_bundles(
                &model, &bundles, &terms, &config.criteria, config.lens_mode, &workers, style,
            )?;
            let golds: Vec<String> = prompts.iter().map(|p| p.gold.clone()).collect();
            let retrieval = crate::detect::detect_retrieval_from_bundles(
                &model,
                &bundles,
                &golds,
                &config.criteria,
                config.lens_mode,
                &workers,
                &task.name,
                style,
            )?;
            let name = format!("headset_{}_{}", slug(&task.name), style);
            outputs.push(write_report(
                &config.out_dir,
                &name,
                config,
                DetectPayload { lexical: lexical.clone(), retrieval },
            )?);
            per_style.push((lexical, bundles));
        }

        let (in_set, in_bundles) = per_style.pop().expect("two styles");
        let (ex_set, ex_bundles) = per_style.pop().expect("two styles");
        let heads: BTreeSet<HeadId> = ex_set.heads.union(&in_set.heads).copied().collect();
        let payload = if heads.is_empty() {
            NormsPayload {
                task: task.name.clone(),
                grouping: "style".into(),
                group_a: None,
                group_b: None,
                difference: None,
                heads_measured: 0,
                note: Some("undefined cell: no heads detected in either style".into()),
            }
        } else {
            let (sa, sb, diff) = norm_compare(
                ("example-based", &ex_bundles),
                ("instruction-based", &in_bundles),
                &heads,
            )?;
            NormsPayload {
                task: task.name.clone(),
                grouping: "style".into(),
                heads_measured: heads.len(),
                group_a: Some(sa),
                group_b: Some(sb),
                difference: Some(diff),
                note: None,
            }
        };
        norm_payloads.push(payload);
        example_sets.push(ex_set);
        instruction_sets.push(in_set);
    }

    let matrix = overlap_matrix(&example_sets, &instruction_sets);
    outputs.push(write_report(&config.out_dir, "overlap", config, &matrix)?);
    let mut overlap_rows = Vec::new();
    for (r, row_task) in matrix.row_tasks.iter().enumerate() {
        for (c, col_task) in matrix.col_tasks.iter().enumerate() {
            overlap_rows.push(vec![
                row_task.clone(),
                col_task.clone(),
                matrix.cells[r][c].map_or(String::new(), |v| format!("{v:.6}")),
            ]);
        }
    }
    outputs.push(write_csv(
        &config.out_dir,
        "overlap",
        &["row_task", "col_task", "overlap"],
        &overlap_rows,
    )?);
    outputs.push(write_report(&config.out_dir, "norms", config, &norm_payloads)?);
    let norm_rows: Vec<Vec<String>> = norm_payloads
        .iter()
        .map(|p| {
            vec![
                p.task.clone(),
                p.grouping.clone(),
                p.group_a.as_ref().map_or(String::new(), |g| format!("{:.6}", g.group_mean)),
                p.group_b.as_ref().map_or(String::new(), |g| format!("{:.6}", g.group_mean)),
                p.difference.map_or(String::new(), |d| format!("{d:.6}")),
                p.heads_measured.to_string(),
            ]
        })
        .collect();
    outputs.push(write_csv(
        &config.out_dir,
        "norms",
        &["task", "grouping", "group_a_mean", "group_b_mean", "difference", "heads"],
        &norm_rows,
    )?);
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// gen-model (synthetic model materialization)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Gpt2Small,
    TinyLlama,
    Planted,
}

/// Write a synthetic model directory. `tasks_dir` feeds the tokenizer
/// corpus for the GPT-2-small kind; the planted kind also writes a ground
/// truth manifest and a matching task file.
pub fn run_gen_model(kind: SyntheticKind, tasks_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    match kind {
        SyntheticKind::Gpt2Small => {
            let (config, weights, vocab, merges) = synth::desk_gpt2_small(tasks_dir)?;
            synth::write_model_dir(out_dir, &config, &weights, &vocab, &merges)?;
        }
        SyntheticKind::TinyLlama => {
            let (config, weights, vocab, merges) = synth::desk_tiny_llama();
            synth::write_model_dir(out_dir, &config, &weights, &vocab, &merges)?;
        }
        SyntheticKind::Planted => {
            let manifest = planted_manifest();
            let builder = planted_builder(&manifest);
            let weights = builder.build_weights();
            let (vocab, merges) =
                crate::model::tokenizer::train_bpe("", 256, &["<|endoftext|>", "<|mask|>"]);
            synth::write_model_dir(out_dir, builder.config(), &weights, &vocab, &merges)?;
            let manifest_path = out_dir.join("planted.json");
            std::fs::write(
                &manifest_path,
                serde_json::to_string_pretty(&manifest).expect("manifest"),
            )
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
            let task = planted_task_file(&manifest);
            let task_path = out_dir.join("planted-task.json");
            std::fs::write(
                &task_path,
                serde_json::to_string_pretty(&task).expect("task"),
            )
            .map_err(|e| Error::io(task_path.display().to_string(), e))?;
        }
    }
    Ok(vec![out_dir.to_path_buf()])
}

/// Ground truth of the standard planted model: which heads were wired as
/// lexical (with their term tokens) and which as retrieval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedManifest {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub lexical: Vec<(usize, usize, u32)>,
    pub retrieval: Vec<(usize, usize, Vec<(u32, u32)>)>,
}

/// The repository's standard planted model: three lexical heads writing
/// distinct term-token directions and one retrieval head keyed on subject
/// bytes.
pub fn planted_manifest() -> PlantedManifest {
    PlantedManifest {
        n_layers: 2,
        n_heads: 8,
        d_model: 256,
        vocab_size: 258,
        // term tokens: byte glyphs for 'e' (101), 'v' (118), 'n' (110)
        lexical: vec![(0, 1, 101), (0, 5, 118), (1, 3, 110)],
        // subject 'J' (74) -> answer 'T' (84); subject 'F' (70) -> 'P' (80)
        retrieval: vec![(1, 6, vec![(74, 84), (70, 80)])],
    }
}

pub fn planted_builder(manifest: &PlantedManifest) -> synth::PlantedModelBuilder {
    let mut builder = synth::PlantedModelBuilder::new(
        manifest.n_layers,
        manifest.n_heads,
        manifest.d_model,
        manifest.vocab_size,
    );
    for &(layer, head, token) in &manifest.lexical {
        builder = builder.lexical(layer, head, token);
    }
    for (layer, head, pairs) in &manifest.retrieval {
        builder = builder.retrieval(*layer, *head, pairs.clone());
    }
    builder
}

/// A task file whose terms are the planted term-token strings and whose
/// pairs hit the planted retrieval mapping, so `detect` on the planted
/// model dir recovers the manifest.
pub fn planted_task_file(manifest: &PlantedManifest) -> crate::task::TaskSpec {
    let glyph = |id: u32| -> String {
        char::from_u32(id).map(String::from).unwrap_or_default()
    };
    crate::task::TaskSpec {
        schema_version: crate::task::TASK_SCHEMA_VERSION,
        name: "planted".into(),
        pairs: manifest
            .retrieval
            .iter()
            .flat_map(|(_, _, pairs)| pairs.iter())
            .map(|&(s, a)| crate::task::TaskPair { input: glyph(s), output: glyph(a) })
            .collect(),
        terms: manifest.lexical.iter().map(|&(_, _, t)| glyph(t)).collect(),
        instruction_templates: vec![crate::task::InstructionTemplate {
            text: "{input}:".into(),
            task_phrase: None,
        }],
        example_format: Default::default(),
        related_task: None,
        ambiguous_pairs: None,
        control_pairs: None,
        provenance: Some("generated alongside the planted model".into()),
    }
}
