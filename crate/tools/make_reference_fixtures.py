#!/usr/bin/env python3
"""Generate reference logit fixtures for the synthetic test models.

Runs the local safetensors weights (written by `lexhead gen-model`) through
torch/transformers reference model code and freezes last-token logits plus
token ids into JSON fixtures. The engine's parity tests compare against
these files.

Usage:
    python3 tools/make_reference_fixtures.py
"""

import json
import pathlib

import torch
from safetensors.torch import load_file
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer, LlamaConfig, LlamaForCausalLM

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "testdata" / "fixtures"

GPT2_PROMPTS = [
    "The capital city of Japan is",
    "Germany: Berlin, Greece: Athens, Japan:",
    "The antonym of push is",
    "Task: given the country, answer the capital of the country. Q: Japan",
    "one: two, three: four, five:",
]

LLAMA_ID_PROMPTS = [
    [72, 101, 108, 108, 111],
    [84, 104, 101, 32, 99, 97, 112, 105, 116, 97, 108],
    [74, 58, 32, 84],
]


def gpt2_fixture():
    model_dir = ROOT / "testdata" / "gpt2-small"
    weights = load_file(model_dir / "model.safetensors")
    vocab_size = weights["wte.weight"].shape[0]
    config = GPT2Config(
        vocab_size=vocab_size,
        n_positions=1024,
        n_embd=768,
        n_layer=12,
        n_head=12,
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
        layer_norm_epsilon=1e-5,
        activation_function="gelu_new",
    )
    model = GPT2LMHeadModel(config)
    state = {f"transformer.{k}": v for k, v in weights.items()}
    state["lm_head.weight"] = weights["wte.weight"]
    missing, unexpected = model.load_state_dict(state, strict=False)
    # buffers like attn.bias are generated, everything learned must load
    assert not unexpected, unexpected
    assert all(".attn.bias" in m or ".attn.masked_bias" in m for m in missing), missing
    model.eval()

    vocab = json.loads((model_dir / "vocab.json").read_text())
    merges = [
        tuple(line.split(" ", 1))
        for line in (model_dir / "merges.txt").read_text().splitlines()
        if line and not line.startswith("#version")
    ]
    tokenizer = GPT2Tokenizer(vocab=vocab, merges=merges)

    cases = []
    with torch.no_grad():
        for prompt in GPT2_PROMPTS:
            ids = tokenizer.encode(prompt)
            out = model(torch.tensor([ids]))
            logits = out.logits[0, -1, :].float().tolist()
            cases.append({"prompt": prompt, "ids": ids, "logits": logits})
    return {"model": "gpt2-small-synthetic", "vocab_size": vocab_size, "cases": cases}


def llama_fixture():
    model_dir = ROOT / "testdata" / "tiny-llama"
    weights = load_file(model_dir / "model.safetensors")
    vocab_size = weights["model.embed_tokens.weight"].shape[0]
    intermediate = weights["model.layers.0.mlp.gate_proj.weight"].shape[0]
    config = LlamaConfig(
        vocab_size=vocab_size,
        hidden_size=64,
        num_hidden_layers=4,
        num_attention_heads=8,
        num_key_value_heads=2,
        intermediate_size=intermediate,
        max_position_embeddings=256,
        rope_theta=10000.0,
        rms_norm_eps=1e-5,
        attention_bias=False,
        tie_word_embeddings=False,
    )
    model = LlamaForCausalLM(config)
    missing, unexpected = model.load_state_dict(weights, strict=False)
    assert not unexpected, unexpected
    assert not [m for m in missing if "rotary" not in m], missing
    model.eval()

    cases = []
    with torch.no_grad():
        for ids in LLAMA_ID_PROMPTS:
            out = model(torch.tensor([ids]))
            logits = out.logits[0, -1, :].float().tolist()
            cases.append({"prompt": None, "ids": ids, "logits": logits})
    return {"model": "tiny-llama-synthetic", "vocab_size": vocab_size, "cases": cases}


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    for name, build in [
        ("gpt2_small_reference.json", gpt2_fixture),
        ("tiny_llama_reference.json", llama_fixture),
    ]:
        fixture = build()
        path = FIXTURES / name
        with open(path, "w") as f:
            json.dump(fixture, f)
        print(f"wrote {path} ({len(fixture['cases'])} cases)")


if __name__ == "__main__":
    main()
