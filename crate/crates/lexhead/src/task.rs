//! Task datasets, prompt rendering (both prompting styles), answer scoring
//! and accuracy evaluation.
//!
//! Task files are versioned JSON documents; see `tasks/` in the repository
//! root for the shipped set. Rendering is deterministic: the rendered text
//! is a pure function of (task, style, template, shots, seed, query).

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::TermSet;
use crate::error::{Error, Result};
use crate::model::{Model, PatchSchedule};
use crate::workers::Workers;

pub const TASK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPair {
    pub input: String,
    pub output: String,
}

/// How example-based prompts are assembled from demonstration pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleFormat {
    /// Pattern for one demonstration, with `{input}` and `{output}` slots.
    pub pair: String,
    /// Separator between demonstrations and before the query.
    pub separator: String,
    /// Pattern for the trailing query, with an `{input}` slot.
    pub query: String,
}

impl Default for ExampleFormat {
    fn default() -> Self {
        Self {
            pair: "{input}: {output}".into(),
            separator: ", ".into(),
            query: "{input}:".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    /// Template text with exactly one `{input}` slot.
    pub text: String,
    /// The task-descriptive words inside the template, when identifiable
    /// (drives task-token masking).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_phrase: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub schema_version: u32,
    pub name: String,
    pub pairs: Vec<TaskPair>,
    /// Task-descriptive terms for lexical-head detection.
    pub terms: Vec<String>,
    pub instruction_templates: Vec<InstructionTemplate>,
    #[serde(default)]
    pub example_format: ExampleFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related_task: Option<String>,
    /// Misleading demonstration pairs implying a competing task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguous_pairs: Option<Vec<TaskPair>>,
    /// Matched unambiguous demonstration pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_pairs: Option<Vec<TaskPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::TaskSchema("name: must be non-empty".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::TaskSchema(format!(
                "{}: pairs: must be non-empty",
                self.name
            )));
        }
        if self.terms.is_empty() {
            return Err(Error::TaskSchema(format!(
                "{}: terms: must be non-empty",
                self.name
            )));
        }
        if self.instruction_templates.is_empty() {
            return Err(Error::TaskSchema(format!(
                "{}: instruction_templates: must be non-empty",
                self.name
            )));
        }
        for (i, t) in self.instruction_templates.iter().enumerate() {
            let slots = t.text.matches("{input}").count();
            if slots != 1 {
                return Err(Error::TaskSchema(format!(
                    "{}: instruction_templates[{i}]: expected exactly one {{input}} slot, found {slots}",
                    self.name
                )));
            }
        }
        if self.example_format.pair.matches("{input}").count() != 1
            || self.example_format.pair.matches("{output}").count() != 1
        {
            return Err(Error::TaskSchema(format!(
                "{}: example_format.pair: needs one {{input}} and one {{output}} slot",
                self.name
            )));
        }
        if self.example_format.query.matches("{input}").count() != 1 {
            return Err(Error::TaskSchema(format!(
                "{}: example_format.query: needs exactly one {{input}} slot",
                self.name
            )));
        }
        Ok(())
    }

    pub fn term_set(&self) -> Result<TermSet> {
        TermSet::new(&self.name, self.terms.clone())
    }
}

/// Load and validate a task file.
pub fn load_task(path: &Path) -> Result<TaskSpec> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let spec: TaskSpec = serde_json::from_str(&raw)
        .map_err(|e| Error::TaskSchema(format!("{}: {e}", path.display())))?;
    if spec.schema_version != TASK_SCHEMA_VERSION {
        return Err(Error::TaskSchema(format!(
            "{}: schema_version: expected {TASK_SCHEMA_VERSION}, found {}",
            path.display(),
            spec.schema_version
        )));
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    ExampleBased,
    InstructionBased,
    Custom,
}

impl std::fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PromptStyle::ExampleBased => "example-based",
            PromptStyle::InstructionBased => "instruction-based",
            PromptStyle::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// A fully rendered prompt with enough metadata to regenerate or corrupt it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: String,
    pub style: PromptStyle,
    pub template_id: usize,
    pub shots: usize,
    pub demonstrations: Vec<usize>,
    pub query_index: usize,
    pub query: String,
    pub gold: String,
    pub rendered: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<bool>,
    /// Byte range of the subject (query word) inside `rendered`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_span: Option<(usize, usize)>,
    /// Byte range of the task-carrying tokens inside `rendered`
    /// (demonstrations for example-based prompts, the instruction phrase
    /// for instruction-based ones). Absent on zero-shot bare queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_span: Option<(usize, usize)>,
}

/// Render an example-based (few-shot) prompt. Demonstrations are sampled
/// without replacement, never including the query pair, deterministically
/// in `seed`.
pub fn render_example_prompt(
    task: &TaskSpec,
    shots: usize,
    seed: u64,
    query_index: usize,
) -> Result<PromptSpec> {
    if query_index >= task.pairs.len() {
        return Err(Error::Prompt(format!(
            "{}: query index {query_index} out of range ({} pairs)",
            task.name,
            task.pairs.len()
        )));
    }
    if shots >= task.pairs.len() {
        return Err(Error::Prompt(format!(
            "{}: {shots} shots requested but only {} pairs exist (query excluded)",
            task.name,
            task.pairs.len()
        )));
    }
    let mut candidates: Vec<usize> =
        (0..task.pairs.len()).filter(|&i| i != query_index).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(shots);
    render_example_with_demos(task, &candidates, query_index)
}

/// Render an example-based prompt from explicit demonstration pairs
/// (used by the ambiguous/control comparison, where the pairs come from
/// dedicated lists rather than the task's own pair pool).
pub fn render_example_with_pairs(
    task: &TaskSpec,
    demos: &[TaskPair],
    query_index: usize,
) -> Result<PromptSpec> {
    let pair = task.pairs.get(query_index).ok_or_else(|| {
        Error::Prompt(format!(
            "{}: query index {query_index} out of range ({} pairs)",
            task.name,
            task.pairs.len()
        ))
    })?;
    let fmt = &task.example_format;
    let mut rendered = String::new();
    for demo in demos {
        rendered.push_str(
            &fmt.pair
                .replacen("{input}", &demo.input, 1)
                .replacen("{output}", &demo.output, 1),
        );
        rendered.push_str(&fmt.separator);
    }
    let task_span = (!demos.is_empty()).then_some((0, rendered.len()));
    let query_at = rendered.len();
    let slot = fmt.query.find("{input}").expect("validated slot");
    let query_text = fmt.query.replacen("{input}", &pair.input, 1);
    rendered.push_str(&query_text);
    let subject_start = query_at + slot;
    let subject_span = Some((subject_start, subject_start + pair.input.len()));
    Ok(PromptSpec {
        task: task.name.clone(),
        style: PromptStyle::ExampleBased,
        template_id: 0,
        shots: demos.len(),
        demonstrations: Vec::new(),
        query_index,
        query: pair.input.clone(),
        gold: pair.output.clone(),
        rendered,
        correctness: None,
        subject_span,
        task_span,
    })
}

fn render_example_with_demos(
    task: &TaskSpec,
    demo_indices: &[usize],
    query_index: usize,
) -> Result<PromptSpec> {
    let demos: Vec<TaskPair> = demo_indices.iter().map(|&i| task.pairs[i].clone()).collect();
    let mut prompt = render_example_with_pairs(task, &demos, query_index)?;
    prompt.demonstrations = demo_indices.to_vec();
    Ok(prompt)
}

/// Render an instruction-based prompt: slot substitution only.
pub fn render_instruction_prompt(
    task: &TaskSpec,
    template_id: usize,
    query_index: usize,
) -> Result<PromptSpec> {
    let template = task.instruction_templates.get(template_id).ok_or_else(|| {
        Error::Prompt(format!(
            "{}: template id {template_id} out of range ({} templates)",
            task.name,
            task.instruction_templates.len()
        ))
    })?;
    let pair = task.pairs.get(query_index).ok_or_else(|| {
        Error::Prompt(format!(
            "{}: query index {query_index} out of range ({} pairs)",
            task.name,
            task.pairs.len()
        ))
    })?;
    let slot = template.text.find("{input}").expect("validated slot");
    let rendered = template.text.replacen("{input}", &pair.input, 1);
    let subject_span = Some((slot, slot + pair.input.len()));
    let task_span = template.task_phrase.as_ref().and_then(|phrase| {
        let at = template.text.find(phrase.as_str())?;
        let at = if at > slot {
            at + pair.input.len() - "{input}".len()
        } else {
            at
        };
        Some((at, at + phrase.len()))
    });
    Ok(PromptSpec {
        task: task.name.clone(),
        style: PromptStyle::InstructionBased,
        template_id,
        shots: 0,
        demonstrations: Vec::new(),
        query_index,
        query: pair.input.clone(),
        gold: pair.output.clone(),
        rendered,
        correctness: None,
        subject_span,
        task_span,
    })
}

/// Bare zero-shot query ("Japan:") with no demonstrations or instructions.
pub fn render_zero_shot_prompt(task: &TaskSpec, query_index: usize) -> Result<PromptSpec> {
    render_example_with_demos(task, &[], query_index)
}

/// Matched ambiguous/control prompt arms: identical query sets and shot
/// counts, differing only in the demonstration pairs.
pub fn render_ambiguity_arms(
    task: &TaskSpec,
    query_indices: &[usize],
) -> Result<(Vec<PromptSpec>, Vec<PromptSpec>)> {
    let ambiguous = task
        .ambiguous_pairs
        .as_ref()
        .ok_or_else(|| Error::TaskSchema(format!("{}: ambiguous_pairs: missing", task.name)))?;
    let control = task
        .control_pairs
        .as_ref()
        .ok_or_else(|| Error::TaskSchema(format!("{}: control_pairs: missing", task.name)))?;
    if ambiguous.len() != control.len() {
        return Err(Error::TaskSchema(format!(
            "{}: ambiguous_pairs and control_pairs must have matching lengths",
            task.name
        )));
    }
    let mut arm_a = Vec::with_capacity(query_indices.len());
    let mut arm_c = Vec::with_capacity(query_indices.len());
    for &qi in query_indices {
        arm_a.push(render_example_with_pairs(task, ambiguous, qi)?);
        arm_c.push(render_example_with_pairs(task, control, qi)?);
    }
    Ok((arm_a, arm_c))
}

/// True iff `generated`, after trimming leading whitespace and punctuation,
/// case-insensitively begins with `gold` (trimmed the same way).
pub fn score_answer(generated: &str, gold: &str) -> bool {
    fn trim(s: &str) -> &str {
        s.trim_start_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
    }
    let generated = trim(generated).to_lowercase();
    let gold = trim(gold).to_lowercase();
    if gold.is_empty() {
        return false;
    }
    generated.starts_with(&gold)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub task: String,
    pub style: PromptStyle,
    pub template_id: usize,
    pub shots: usize,
    pub accuracy: f64,
    pub correctness: Vec<bool>,
}

/// Greedy-generate each prompt, score it, store correctness back into the
/// prompt, and report mean accuracy. Prompts must share (task, style,
/// template, shots).
pub fn eval_accuracy(
    model: &Model,
    prompts: &mut [PromptSpec],
    max_new: usize,
    workers: &Workers,
) -> Result<AccuracyReport> {
    let first = prompts
        .first()
        .ok_or_else(|| Error::Prompt("eval_accuracy needs at least one prompt".into()))?;
    let (task, style, template_id, shots) =
        (first.task.clone(), first.style, first.template_id, first.shots);
    if prompts.iter().any(|p| {
        p.task != task || p.style != style || p.template_id != template_id || p.shots != shots
    }) {
        return Err(Error::Prompt(
            "eval_accuracy: prompts must share task/style/template/shots".into(),
        ));
    }

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
                let out = model.generate(&tokens, max_new, None, PatchSchedule::PromptLastOnly)?;
                Ok(score_answer(&out.text, gold))
            })
            .collect()
    });

    let mut correctness = Vec::with_capacity(prompts.len());
    for (prompt, outcome) in prompts.iter_mut().zip(outcomes) {
        let ok = outcome?;
        prompt.correctness = Some(ok);
        correctness.push(ok);
    }
    let accuracy = correctness.iter().filter(|&&c| c).count() as f64 / correctness.len() as f64;
    Ok(AccuracyReport {
        task,
        style,
        template_id,
        shots,
        accuracy,
        correctness,
    })
}

/// Split prompts into (correct, incorrect) by stored correctness.
pub fn partition_by_correctness(prompts: &[PromptSpec]) -> (Vec<PromptSpec>, Vec<PromptSpec>) {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for p in prompts {
        match p.correctness {
            Some(true) => correct.push(p.clone()),
            Some(false) => incorrect.push(p.clone()),
            None => {}
        }
    }
    (correct, incorrect)
}

/// Deterministic query-index selection: first `count` indices, wrapping
/// when the pool is smaller.
pub fn query_indices(task: &TaskSpec, count: usize) -> Vec<usize> {
    (0..count).map(|i| i % task.pairs.len()).collect()
}
