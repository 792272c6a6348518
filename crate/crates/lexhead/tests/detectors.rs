//! Detector correctness on planted models, checked against an exhaustive
//! brute-force decode oracle, plus criteria monotonicity and the gated
//! retrieval-modulation behavior.

mod common;

use std::collections::BTreeSet;

use lexhead::detect::{
    detect_lexical_per_style, detect_retrieval_per_style, is_lexical_per_prompt, normalize_token,
    DetectionCriteria, TermSet,
};
use lexhead::exp::{planted_builder, planted_manifest, planted_task_file};
use lexhead::lens::LensMode;
use lexhead::model::{HeadId, Model};
use lexhead::synth::PlantedModelBuilder;
use lexhead::task::{render_zero_shot_prompt, PromptSpec, PromptStyle};
use lexhead::workers::Workers;

fn planted() -> (Model, lexhead::exp::PlantedManifest, Vec<PromptSpec>) {
    let manifest = planted_manifest();
    let model = planted_builder(&manifest).build().unwrap();
    let task = planted_task_file(&manifest);
    let prompts: Vec<PromptSpec> = (0..task.pairs.len())
        .map(|q| render_zero_shot_prompt(&task, q).unwrap())
        .collect();
    (model, manifest, prompts)
}

/// Oracle: classify every head by brute-force decode of its reference-run
/// contribution, mirroring the per-prompt criteria independently of the
/// engine's capture/lens path.
fn oracle_sets(
    manifest: &lexhead::exp::PlantedManifest,
    prompts: &[PromptSpec],
    terms: &TermSet,
    criteria: &DetectionCriteria,
) -> (BTreeSet<HeadId>, BTreeSet<HeadId>) {
    let builder = planted_builder(manifest);
    let weights = builder.build_weights();
    let config = builder.config().clone();
    let tokenizer = lexhead::synth::byte_tokenizer().unwrap();

    let mut lexical_hits: std::collections::BTreeMap<HeadId, usize> = Default::default();
    let mut retrieval_hits: std::collections::BTreeMap<HeadId, usize> = Default::default();
    for prompt in prompts {
        let ids = tokenizer.tokenize(&prompt.rendered).ids;
        let head_logits = common::reference_head_logits(&config, &weights, &ids, true);
        for (head, logits) in head_logits {
            // top-k with the same deterministic tie-break (logit desc, id asc)
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.sort_by(|&a, &b| {
                logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b))
            });
            let top: Vec<String> = order[..criteria.k]
                .iter()
                .map(|&id| tokenizer.token_string(id as u32).unwrap().to_string())
                .collect();
            let lex = top
                .iter()
                .filter(|t| terms.contains_normalized(&normalize_token(t)))
                .count()
                >= criteria.n;
            let ret = top
                .iter()
                .filter(|t| lexhead::detect::answer_matches(t, &prompt.gold))
                .count()
                >= criteria.n;
            if lex {
                *lexical_hits.entry(head).or_insert(0) += 1;
            }
            if ret {
                *retrieval_hits.entry(head).or_insert(0) += 1;
            }
        }
    }
    let threshold = |hits: std::collections::BTreeMap<HeadId, usize>| -> BTreeSet<HeadId> {
        hits.into_iter()
            .filter(|(_, c)| (*c as f64 / prompts.len() as f64) >= criteria.p / 100.0)
            .map(|(h, _)| h)
            .collect()
    };
    (threshold(lexical_hits), threshold(retrieval_hits))
}

#[test]
fn planted_heads_recovered_exactly() {
    let (model, manifest, prompts) = planted();
    let task = planted_task_file(&manifest);
    let terms = task.term_set().unwrap();
    let criteria = DetectionCriteria::default();
    let workers = Workers::new(2).unwrap();

    let lexical =
        detect_lexical_per_style(&model, &prompts, &terms, &criteria, LensMode::FinalNorm, &workers)
            .unwrap();
    let retrieval =
        detect_retrieval_per_style(&model, &prompts, &criteria, LensMode::FinalNorm, &workers)
            .unwrap();

    let expected_lexical: BTreeSet<HeadId> = manifest
        .lexical
        .iter()
        .map(|&(l, h, _)| HeadId::new(l, h))
        .collect();
    let expected_retrieval: BTreeSet<HeadId> = manifest
        .retrieval
        .iter()
        .map(|&(l, h, _)| HeadId::new(l, h))
        .collect();
    assert_eq!(lexical.heads, expected_lexical, "lexical set mismatch");
    assert_eq!(retrieval.heads, expected_retrieval, "retrieval set mismatch");

    // planted lexical heads fire on every prompt
    for head in &lexical.heads {
        assert_eq!(lexical.hit_rates[head], 1.0);
    }

    // independent oracle agrees with the engine path
    let (oracle_lexical, oracle_retrieval) = oracle_sets(&manifest, &prompts, &terms, &criteria);
    assert_eq!(lexical.heads, oracle_lexical);
    assert_eq!(retrieval.heads, oracle_retrieval);
}

#[test]
fn detection_is_reproducible_and_hit_rates_reconstruct_sets() {
    let (model, manifest, prompts) = planted();
    let task = planted_task_file(&manifest);
    let terms = task.term_set().unwrap();
    let criteria = DetectionCriteria::default();
    let a = detect_lexical_per_style(
        &model, &prompts, &terms, &criteria, LensMode::FinalNorm, &Workers::new(1).unwrap(),
    )
    .unwrap();
    let b = detect_lexical_per_style(
        &model, &prompts, &terms, &criteria, LensMode::FinalNorm, &Workers::new(4).unwrap(),
    )
    .unwrap();
    assert_eq!(a.heads, b.heads);
    assert_eq!(a.hit_rates, b.hit_rates);

    // thresholding the stored hit rates reproduces the set
    let rebuilt: BTreeSet<HeadId> = a
        .hit_rates
        .iter()
        .filter(|(_, &r)| r >= criteria.p / 100.0)
        .map(|(&h, _)| h)
        .collect();
    assert_eq!(rebuilt, a.heads);
    for head in &a.heads {
        assert!(a.hit_rates[head] >= criteria.p / 100.0);
    }
}

#[test]
fn retrieval_detected_on_subject_bearing_prompts_only() {
    let (model, manifest, _) = planted();
    let task = planted_task_file(&manifest);
    let criteria = DetectionCriteria::default();
    let workers = Workers::new(2).unwrap();
    let retrieval_head = {
        let (l, h, _) = &manifest.retrieval[0];
        HeadId::new(*l, *h)
    };

    // subject-bearing prompts: per-prompt positive everywhere
    let subject_prompts: Vec<PromptSpec> = (0..task.pairs.len())
        .map(|q| render_zero_shot_prompt(&task, q).unwrap())
        .collect();
    let detected = detect_retrieval_per_style(
        &model, &subject_prompts, &criteria, LensMode::FinalNorm, &workers,
    )
    .unwrap();
    assert!(detected.heads.contains(&retrieval_head));
    assert_eq!(detected.hit_rates[&retrieval_head], 1.0);

    // subject-free prompts with the same golds: hit rate collapses to zero
    let subjectless: Vec<PromptSpec> = subject_prompts
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.rendered = "x:".into(); // byte 'x' is not a planted subject
            q
        })
        .collect();
    let undetected = detect_retrieval_per_style(
        &model, &subjectless, &criteria, LensMode::FinalNorm, &workers,
    )
    .unwrap();
    assert_eq!(undetected.hit_rates[&retrieval_head], 0.0);
    assert!(!undetected.heads.contains(&retrieval_head));
}

#[test]
fn head_counts_monotone_in_criteria_on_planted_model() {
    let (model, manifest, prompts) = planted();
    let task = planted_task_file(&manifest);
    let terms = task.term_set().unwrap();
    let workers = Workers::new(2).unwrap();
    let count = |criteria: DetectionCriteria| -> usize {
        detect_lexical_per_style(&model, &prompts, &terms, &criteria, LensMode::FinalNorm, &workers)
            .unwrap()
            .head_count()
    };

    let base = DetectionCriteria::default();
    let mut previous = usize::MAX;
    for n in [1, 2, 3] {
        let c = count(DetectionCriteria { n, ..base });
        assert!(c <= previous, "head count must not grow with n");
        previous = c;
    }
    let mut previous = 0usize;
    for k in [5, 10, 20, 30] {
        let c = count(DetectionCriteria { k, ..base });
        assert!(c >= previous, "head count must not shrink with k");
        previous = c;
    }
    let mut previous = usize::MAX;
    for p in [5.0, 10.0, 20.0, 50.0, 100.0] {
        let c = count(DetectionCriteria { p, ..base });
        assert!(c <= previous, "head count must not grow with p");
        previous = c;
    }
}

#[test]
fn per_prompt_positive_invariant_under_raw_mode_rescaling() {
    // positive rescaling of a captured vector never changes its raw-mode
    // classification: ranking invariance carried through the detector
    let (model, manifest, prompts) = planted();
    let task = planted_task_file(&manifest);
    let terms = task.term_set().unwrap();
    let criteria = DetectionCriteria::default();
    let tokens = model.tokenize(&prompts[0].rendered);
    let trace = model
        .forward(&tokens, &lexhead::model::CaptureSpec::AllAtLast, None)
        .unwrap();
    let bundle = trace.captured.unwrap();
    let head = {
        let (l, h, _) = manifest.lexical[0];
        HeadId::new(l, h)
    };
    let v = bundle.vector(head).unwrap().to_owned();
    for scale in [0.01f32, 1.0, 250.0] {
        let scaled = &v * scale;
        let ranking =
            lexhead::lens::decode_vector(&model, scaled.view(), criteria.k, LensMode::Raw).unwrap();
        assert!(is_lexical_per_prompt(&ranking, &terms, &criteria).unwrap());
    }
}

#[test]
fn gated_retrieval_head_responds_monotonically_to_lexical_scale() {
    // one lexical head writes a gate direction; a second-layer head reads it
    // at the marker position and emits the answer direction
    let gate_token = 101u32; // 'e'
    let answer_token = 84u32; // 'T'
    let marker_token = 58u32; // ':'
    let subject_token = 74u32; // 'J'
    let model = PlantedModelBuilder::new(2, 8, 256, 258)
        .lexical(0, 1, gate_token)
        .gate(1, 6, gate_token, answer_token, marker_token)
        .build()
        .unwrap();
    let workers = Workers::new(2).unwrap();
    let criteria = DetectionCriteria::default();

    let prompt_text = {
        let bytes = [subject_token as u8, marker_token as u8];
        String::from_utf8(bytes.to_vec()).unwrap()
    };
    let prompts = vec![PromptSpec {
        task: "gated".into(),
        style: PromptStyle::Custom,
        template_id: 0,
        shots: 0,
        demonstrations: vec![],
        query_index: 0,
        query: prompt_text.clone(),
        gold: "T".into(),
        rendered: prompt_text.clone(),
        correctness: None,
        subject_span: None,
        task_span: None,
    }];

    let lexical_heads: BTreeSet<HeadId> = [HeadId::new(0, 1)].into();
    let bundle = lexhead::patch::capture_bundle(&model, &prompt_text).unwrap();
    let source = lexhead::patch::MeanActivation::from_bundles("gated", "custom", "self", &[bundle])
        .unwrap();
    let retrieval_set = lexhead::detect::HeadSet {
        task: "gated".into(),
        style: PromptStyle::Custom,
        criteria,
        heads: [HeadId::new(1, 6)].into(),
        hit_rates: Default::default(),
        prompt_count: 1,
    };

    let table = lexhead::analysis::retrieval_modulation(
        &model,
        &prompts,
        &source,
        &lexical_heads,
        &retrieval_set,
        &[0.0, 1.0, 2.0, 4.0],
        &criteria,
        // raw mode: the final-norm projection is magnitude-invariant, so
        // only the raw projection can show logit growth with scale
        LensMode::Raw,
        &workers,
    )
    .unwrap();

    for w in table.rows.windows(2) {
        assert!(
            w[1].matching_heads >= w[0].matching_heads - 1e-12,
            "matching-head count decreased with scale: {:?}",
            table.rows
        );
        assert!(
            w[1].mean_gold_logit >= w[0].mean_gold_logit - 1e-6,
            "gold logit decreased with scale: {:?}",
            table.rows
        );
    }
    // the gate actually opens: zero scale suppresses the answer, large
    // scale surfaces it
    assert_eq!(table.rows[0].matching_heads, 0.0);
    assert_eq!(table.rows[3].matching_heads, 1.0);
    assert!(table.rows[3].mean_gold_logit > table.rows[0].mean_gold_logit);

    // brute-force check of the same quantities at each scale
    let builder = PlantedModelBuilder::new(2, 8, 256, 258)
        .lexical(0, 1, gate_token)
        .gate(1, 6, gate_token, answer_token, marker_token);
    let weights = builder.build_weights();
    let config = builder.config().clone();
    let tokenizer = lexhead::synth::byte_tokenizer().unwrap();
    let ids = tokenizer.tokenize(&prompt_text).ids;
    // scale=1 patch with the self-sourced mean reproduces the clean run, so
    // the unpatched reference decode must match the table's scale-1 row
    let head_logits = common::reference_head_logits(&config, &weights, &ids, false);
    let gate_head_logits = &head_logits[&HeadId::new(1, 6)];
    let reference_gold_logit = gate_head_logits[answer_token as usize];
    let diff = (reference_gold_logit - table.rows[1].mean_gold_logit).abs();
    assert!(
        diff <= 1e-3,
        "scale-1 row disagrees with brute-force decode: {diff}"
    );
}
