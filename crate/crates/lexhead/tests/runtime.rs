//! Runtime invariants: head-sum decomposition, capture purity, determinism,
//! grouped attention equivalence, KV-cache consistency, patching semantics,
//! and weight-file round trips.

mod common;

use lexhead::model::config::{ModelConfig, NormKind, PositionKind};
use lexhead::model::weights::{load_weights, save_weights};
use lexhead::model::{CaptureSpec, HeadId, Model, PatchPlan, PatchSchedule, TokenSequence};
use lexhead::synth;

fn small_gpt2_config() -> ModelConfig {
    ModelConfig {
        n_layers: 3,
        n_heads: 4,
        n_kv_heads: 4,
        d_model: 64,
        d_head: 16,
        vocab_size: 258,
        max_context: 64,
        norm_kind: NormKind::PreLayerNorm,
        position_kind: PositionKind::LearnedAbsolute,
        mlp_kind: lexhead::model::config::MlpKind::Gelu2Layer,
        rope_theta: 10_000.0,
        norm_eps: 1e-5,
        rope_scaling: None,
    }
}

fn small_gpt2() -> (ModelConfig, Model) {
    let config = small_gpt2_config();
    let weights = synth::random_weights(&config, 11);
    let model = Model::from_parts(config.clone(), weights, synth::byte_tokenizer().unwrap()).unwrap();
    (config, model)
}

fn seq(ids: Vec<u32>) -> TokenSequence {
    TokenSequence {
        ids,
        source_text: String::new(),
    }
}

fn rand_ids(seed: u64, len: usize, vocab: u32) -> Vec<u32> {
    // simple LCG keeps test inputs reproducible without extra deps
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..len)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % vocab as u64) as u32
        })
        .collect()
}

#[test]
fn logits_match_reference_evaluator() {
    let (config, model) = small_gpt2();
    let weights = synth::random_weights(&config, 11);
    for seed in 0..3 {
        let ids = rand_ids(seed, 12, 256);
        let trace = model.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
        let reference = common::reference_forward(&config, &weights, &ids);
        let diff = common::max_abs_diff(trace.last_logits.as_slice().unwrap(), &reference.logits);
        assert!(diff < 1e-4, "engine vs reference logits diff {diff}");
    }
}

#[test]
fn head_sum_decomposition_matches_attention_output() {
    let (config, model) = small_gpt2();
    let weights = synth::random_weights(&config, 11);
    let ids = rand_ids(5, 10, 256);
    let trace = model
        .forward(&seq(ids.clone()), &CaptureSpec::AllAtLast, None)
        .unwrap();
    let bundle = trace.captured.as_ref().unwrap();
    let reference = common::reference_forward(&config, &weights, &ids);
    let last = ids.len() - 1;
    for layer in 0..config.n_layers {
        let mut summed = vec![0.0f64; config.d_model];
        for head in 0..config.n_heads {
            let v = bundle.vector(HeadId::new(layer, head)).unwrap();
            for (j, s) in summed.iter_mut().enumerate() {
                *s += v[j] as f64;
            }
        }
        let bias = &synth::random_weights(&config, 11).layers[layer]
            .b_o
            .clone()
            .unwrap();
        for (j, s) in summed.iter_mut().enumerate() {
            *s += bias[j] as f64;
        }
        let expected = &reference.attn_out[layer][last];
        let diff = summed
            .iter()
            .zip(expected.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-4, "layer {layer} decomposition diff {diff}");
    }
}

#[test]
fn capture_is_read_only() {
    let (_, model) = small_gpt2();
    let ids = rand_ids(9, 8, 256);
    let plain = model.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
    let captured = model
        .forward(&seq(ids), &CaptureSpec::AllAtLast, None)
        .unwrap();
    assert_eq!(
        plain.last_logits.as_slice().unwrap(),
        captured.last_logits.as_slice().unwrap(),
        "capture changed logits"
    );
    assert!(plain.captured.is_none());
    assert!(captured.captured.is_some());
    assert_eq!(
        captured.captured.as_ref().unwrap().activations.len(),
        model.config.n_total_heads()
    );
}

#[test]
fn forward_and_generate_are_deterministic() {
    let (_, model) = small_gpt2();
    let ids = rand_ids(3, 9, 256);
    let a = model.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
    let b = model.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
    assert_eq!(a.last_logits.as_slice().unwrap(), b.last_logits.as_slice().unwrap());

    let g1 = model
        .generate(&seq(ids.clone()), 6, None, PatchSchedule::PromptLastOnly)
        .unwrap();
    let g2 = model
        .generate(&seq(ids), 6, None, PatchSchedule::PromptLastOnly)
        .unwrap();
    assert_eq!(g1.new_ids, g2.new_ids);
    assert_eq!(g1.text, g2.text);
}

#[test]
fn max_new_one_equals_forward_argmax() {
    let (_, model) = small_gpt2();
    let ids = rand_ids(17, 7, 256);
    let trace = model.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
    let argmax = trace
        .last_logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .unwrap()
        .0 as u32;
    let gen = model
        .generate(&seq(ids), 1, None, PatchSchedule::PromptLastOnly)
        .unwrap();
    assert_eq!(gen.new_ids, vec![argmax]);
    assert_eq!(gen.steps.len(), 1);
}

#[test]
fn kv_cached_generation_matches_fresh_forward() {
    for (config, label) in [
        (small_gpt2_config(), "gpt2"),
        (synth::tiny_llama_config(258, 2), "llama-gqa"),
    ] {
        let weights = synth::random_weights(&config, 23);
        let model =
            Model::from_parts(config.clone(), weights, synth::byte_tokenizer().unwrap()).unwrap();
        let ids = rand_ids(41, 8, 256);
        let gen = model
            .generate(&seq(ids.clone()), 5, None, PatchSchedule::PromptLastOnly)
            .unwrap();
        // replay: full forward over prompt + generated prefix must pick the
        // same next token at every step
        let mut context = ids.clone();
        for step in &gen.steps {
            let trace = model.forward(&seq(context.clone()), &CaptureSpec::None, None).unwrap();
            let fresh_argmax = trace
                .last_logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0 as u32;
            assert_eq!(fresh_argmax, step.chosen, "{label}: cached vs fresh step");
            let diff = (trace.last_logits[step.chosen as usize] - step.logit).abs();
            assert!(diff <= 1e-4, "{label}: cached logit drift {diff}");
            context.push(step.chosen);
        }
    }
}

#[test]
fn grouped_attention_matches_replicated_ungrouped() {
    let grouped_cfg = synth::tiny_llama_config(258, 2);
    let grouped_weights = synth::random_weights(&grouped_cfg, 31);
    let mut ungrouped_cfg = grouped_cfg.clone();
    ungrouped_cfg.n_kv_heads = grouped_cfg.n_heads;
    let mut ungrouped_weights = synth::random_weights(&ungrouped_cfg, 31);
    let dh = grouped_cfg.d_head;
    let group = grouped_cfg.group_size();
    for (lw_g, lw_u) in grouped_weights.layers.iter().zip(ungrouped_weights.layers.iter_mut()) {
        for h in 0..grouped_cfg.n_heads {
            let kv = h / group;
            lw_u.w_k
                .slice_mut(ndarray::s![.., h * dh..(h + 1) * dh])
                .assign(&lw_g.w_k.slice(ndarray::s![.., kv * dh..(kv + 1) * dh]));
            lw_u.w_v
                .slice_mut(ndarray::s![.., h * dh..(h + 1) * dh])
                .assign(&lw_g.w_v.slice(ndarray::s![.., kv * dh..(kv + 1) * dh]));
        }
        lw_u.w_q.assign(&lw_g.w_q);
        lw_u.w_o.assign(&lw_g.w_o);
        lw_u.attn_norm_w.assign(&lw_g.attn_norm_w);
        lw_u.mlp_norm_w.assign(&lw_g.mlp_norm_w);
        match (&mut lw_u.mlp, &lw_g.mlp) {
            (
                lexhead::model::weights::MlpWeights::GatedSilu { w_gate, w_up, w_down },
                lexhead::model::weights::MlpWeights::GatedSilu {
                    w_gate: g2,
                    w_up: u2,
                    w_down: d2,
                },
            ) => {
                w_gate.assign(g2);
                w_up.assign(u2);
                w_down.assign(d2);
            }
            _ => unreachable!(),
        }
    }
    ungrouped_weights.wte.assign(&grouped_weights.wte);
    ungrouped_weights.unembed.assign(&grouped_weights.unembed);
    ungrouped_weights.final_norm_w.assign(&grouped_weights.final_norm_w);

    let grouped = Model::from_parts(grouped_cfg, grouped_weights, synth::byte_tokenizer().unwrap())
        .unwrap();
    let ungrouped =
        Model::from_parts(ungrouped_cfg, ungrouped_weights, synth::byte_tokenizer().unwrap())
            .unwrap();
    let ids = rand_ids(4, 12, 256);
    let a = grouped.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
    let b = ungrouped.forward(&seq(ids), &CaptureSpec::None, None).unwrap();
    let diff = a
        .last_logits
        .iter()
        .zip(b.last_logits.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(diff <= 1e-5, "grouped vs ungrouped diff {diff}");
}

#[test]
fn scale_zero_patch_equals_value_ablated_model() {
    let config = small_gpt2_config();
    let weights = synth::random_weights(&config, 51);
    let model =
        Model::from_parts(config.clone(), weights, synth::byte_tokenizer().unwrap()).unwrap();

    let mut ablated_weights = synth::random_weights(&config, 51);
    for layer in ablated_weights.layers.iter_mut() {
        layer.w_v.fill(0.0);
        if let Some(b) = layer.b_v.as_mut() {
            b.fill(0.0);
        }
    }
    let ablated =
        Model::from_parts(config.clone(), ablated_weights, synth::byte_tokenizer().unwrap())
            .unwrap();

    // one-token prompt: with the every-step schedule every position ever
    // processed is patched, which is exactly what whole-model value
    // ablation does
    let ids = vec![97u32];
    let all_heads: std::collections::BTreeSet<HeadId> = (0..config.n_layers)
        .flat_map(|l| (0..config.n_heads).map(move |h| HeadId::new(l, h)))
        .collect();
    let source: std::collections::BTreeMap<HeadId, ndarray::Array1<f32>> = all_heads
        .iter()
        .map(|&h| (h, ndarray::Array1::zeros(config.d_model)))
        .collect();
    let plan = PatchPlan {
        heads: all_heads,
        source,
        scale: 0.0,
    };

    let patched = model
        .generate(&seq(ids.clone()), 6, Some(&plan), PatchSchedule::EveryStep)
        .unwrap();
    let ablated_gen = ablated
        .generate(&seq(ids.clone()), 6, None, PatchSchedule::PromptLastOnly)
        .unwrap();
    assert_eq!(patched.new_ids, ablated_gen.new_ids);

    let patched_logits = model
        .forward(&seq(ids.clone()), &CaptureSpec::None, Some((&plan, 0)))
        .unwrap()
        .last_logits;
    let ablated_logits = ablated
        .forward(&seq(ids), &CaptureSpec::None, None)
        .unwrap()
        .last_logits;
    let diff = patched_logits
        .iter()
        .zip(ablated_logits.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(diff <= 1e-5, "scale-0 patch vs direct ablation diff {diff}");
}

#[test]
fn save_load_round_trip_both_families() {
    let dir = tempfile::tempdir().unwrap();
    for (config, name) in [
        (small_gpt2_config(), "gpt2.safetensors"),
        (synth::tiny_llama_config(258, 2), "llama.safetensors"),
    ] {
        let weights = synth::random_weights(&config, 77);
        let path = dir.path().join(name);
        save_weights(&path, &config, &weights).unwrap();
        let loaded = load_weights(&path, &config).unwrap();
        let a = Model::from_parts(config.clone(), weights, synth::byte_tokenizer().unwrap())
            .unwrap();
        let b = Model::from_parts(config.clone(), loaded, synth::byte_tokenizer().unwrap())
            .unwrap();
        let ids = rand_ids(99, 9, 256);
        let ta = a.forward(&seq(ids.clone()), &CaptureSpec::None, None).unwrap();
        let tb = b.forward(&seq(ids), &CaptureSpec::None, None).unwrap();
        assert_eq!(
            ta.last_logits.as_slice().unwrap(),
            tb.last_logits.as_slice().unwrap(),
            "{name}: round trip changed logits"
        );
    }
}

#[test]
fn missing_tensor_error_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_gpt2_config();
    let weights = synth::random_weights(&config, 1);
    let path = dir.path().join("model.safetensors");
    save_weights(&path, &config, &weights).unwrap();
    let mut bad = config.clone();
    bad.n_layers = 4; // one more block than the file has
    let err = load_weights(&path, &bad).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("h.3.") && msg.contains("missing tensor"),
        "unexpected error: {msg}"
    );
}

#[test]
fn shape_mismatch_error_reports_expected_vs_found() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_gpt2_config();
    let weights = synth::random_weights(&config, 1);
    let path = dir.path().join("model.safetensors");
    save_weights(&path, &config, &weights).unwrap();
    let mut bad = config.clone();
    bad.d_model = 100;
    bad.d_head = 25;
    let err = load_weights(&path, &bad).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("shape mismatch") && msg.contains("100") && msg.contains("64"),
        "unexpected error: {msg}"
    );
}

#[test]
fn config_inference_from_saved_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_gpt2_config();
    let weights = synth::random_weights(&config, 1);
    let path = dir.path().join("model.safetensors");
    save_weights(&path, &config, &weights).unwrap();
    std::fs::write(
        dir.path().join("config.json"),
        r#"{"n_head": 4, "layer_norm_epsilon": 1e-5}"#,
    )
    .unwrap();
    let inferred = lexhead::model::weights::infer_config(dir.path()).unwrap();
    assert_eq!(inferred.n_layers, config.n_layers);
    assert_eq!(inferred.n_heads, config.n_heads);
    assert_eq!(inferred.d_model, config.d_model);
    assert_eq!(inferred.vocab_size, config.vocab_size);
    assert_eq!(inferred.max_context, config.max_context);
}

#[test]
fn context_overflow_paths() {
    let (_, model) = small_gpt2();
    let too_long = rand_ids(0, 65, 256);
    assert!(model.forward(&seq(too_long), &CaptureSpec::None, None).is_err());

    let near_limit = rand_ids(0, 62, 256);
    let gen = model
        .generate(&seq(near_limit), 8, None, PatchSchedule::PromptLastOnly)
        .unwrap();
    assert!(gen.truncated);
    assert_eq!(gen.new_ids.len(), 2);
}

#[test]
fn patch_rejects_out_of_range_head() {
    let (config, model) = small_gpt2();
    let bad_head = HeadId::new(config.n_layers, 0);
    let plan = PatchPlan {
        heads: [bad_head].into_iter().collect(),
        source: [(bad_head, ndarray::Array1::zeros(config.d_model))]
            .into_iter()
            .collect(),
        scale: 1.0,
    };
    let err = model
        .forward(&seq(vec![1, 2, 3]), &CaptureSpec::None, Some((&plan, 2)))
        .unwrap_err();
    assert!(err.to_string().contains("out of range"));
}
