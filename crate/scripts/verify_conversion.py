#!/usr/bin/env python3
"""End-to-end check that convert_hf_model.py preserves model behavior.

Fabricates a tiny random Qwen3-style checkpoint whose tokenizer is a plain
byte alphabet (so both stacks tokenize any prompt identically), converts it,
then compares greedy continuations from `transformers` against `steerlab
generate`. Token-for-token agreement means the layout transposes, the rotary
reordering, the q/k norm handling, and the head-width override all survived
the trip.

The fabricated model deliberately exercises the awkward corners: grouped kv
heads, a head width different from d_model / n_heads, per-head q/k gains,
and tied embeddings.

Run from the repository root:  python3 scripts/verify_conversion.py
Requires: torch, transformers, safetensors, numpy, and a Rust toolchain.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import torch

# every id maps to a token (no padded embedding rows): a random fabricated
# model samples uniformly enough to hit padding, which a real checkpoint
# never does, and an unmapped id cannot be decoded
VOCAB = 258
EOS = 257
PROMPTS = ["The quick brown fox", "effort: 12\n", "a"]
MAX_NEW = 24


def byte_alphabet_tokenizer() -> dict:
    """A tokenizer.json whose BPE vocab is exactly the 256 byte proxies, so
    encoding is one token per byte on both stacks."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    vocab = {chr(c): b for b, c in zip(bs, cs)}
    added = [
        {"id": 256, "content": "<|endoftext|>", "single_word": False,
         "lstrip": False, "rstrip": False, "normalized": False, "special": True},
        {"id": EOS, "content": "<|im_end|>", "single_word": False,
         "lstrip": False, "rstrip": False, "normalized": False, "special": True},
    ]
    return {
        "version": "1.0",
        "added_tokens": added,
        "pre_tokenizer": {"type": "ByteLevel", "add_prefix_space": False,
                          "use_regex": False, "trim_offsets": True},
        "decoder": {"type": "ByteLevel", "add_prefix_space": False,
                    "use_regex": False, "trim_offsets": True},
        "model": {"type": "BPE", "dropout": None, "unk_token": None,
                  "continuing_subword_prefix": None, "end_of_word_suffix": None,
                  "fuse_unk": False, "byte_fallback": False,
                  "ignore_merges": False, "vocab": vocab, "merges": []},
    }


def fabricate(src: Path) -> None:
    from safetensors.torch import save_file

    cfg = {
        "architectures": ["Qwen3ForCausalLM"],
        "model_type": "qwen3",
        "hidden_size": 32,
        "num_hidden_layers": 2,
        "num_attention_heads": 4,
        "num_key_value_heads": 2,
        "head_dim": 16,
        "intermediate_size": 64,
        "vocab_size": VOCAB,
        "max_position_embeddings": 128,
        "rms_norm_eps": 1e-6,
        "rope_theta": 1000000.0,
        "tie_word_embeddings": True,
        "hidden_act": "silu",
        "attention_bias": False,
        "attention_dropout": 0.0,
        "initializer_range": 0.02,
        "use_cache": True,
        "eos_token_id": EOS,
        "torch_dtype": "float32",
    }
    (src / "config.json").write_text(json.dumps(cfg, indent=2))
    (src / "generation_config.json").write_text(json.dumps({"eos_token_id": EOS}))
    (src / "tokenizer.json").write_text(json.dumps(byte_alphabet_tokenizer()))

    torch.manual_seed(7)
    d, hd, heads, kv, ff = 32, 16, 4, 2, 64

    def w(*shape, scale=0.15):
        return (torch.randn(*shape) * scale).float()

    def gainvec(n):
        return (1.0 + torch.randn(n) * 0.1).float()

    tensors = {"model.embed_tokens.weight": w(VOCAB, d, scale=0.8),
               "model.norm.weight": gainvec(d)}
    for i in range(cfg["num_hidden_layers"]):
        p = f"model.layers.{i}"
        tensors |= {
            f"{p}.input_layernorm.weight": gainvec(d),
            f"{p}.self_attn.q_proj.weight": w(heads * hd, d),
            f"{p}.self_attn.k_proj.weight": w(kv * hd, d),
            f"{p}.self_attn.v_proj.weight": w(kv * hd, d),
            f"{p}.self_attn.o_proj.weight": w(d, heads * hd),
            f"{p}.self_attn.q_norm.weight": gainvec(hd),
            f"{p}.self_attn.k_norm.weight": gainvec(hd),
            f"{p}.post_attention_layernorm.weight": gainvec(d),
            f"{p}.mlp.gate_proj.weight": w(ff, d),
            f"{p}.mlp.up_proj.weight": w(ff, d),
            f"{p}.mlp.down_proj.weight": w(d, ff),
        }
    save_file(tensors, src / "model.safetensors")


def hf_greedy(src: Path, prompt: str) -> str:
    from transformers import AutoModelForCausalLM, PreTrainedTokenizerFast

    tok = PreTrainedTokenizerFast(tokenizer_file=str(src / "tokenizer.json"))
    model = AutoModelForCausalLM.from_pretrained(src, torch_dtype=torch.float32)
    model.eval()
    ids = tok(prompt, return_tensors="pt")
    with torch.no_grad():
        out = model.generate(
            **ids,
            do_sample=False,
            max_new_tokens=MAX_NEW,
            eos_token_id=EOS,
            pad_token_id=EOS,
        )
    new = out[0][ids["input_ids"].shape[1]:]
    text = tok.decode(new, skip_special_tokens=False)
    for marker in ("<|im_end|>", "<|endoftext|>"):
        text = text.removesuffix(marker)
    return text


def our_greedy(model_dir: Path, prompt: str) -> str:
    run = subprocess.run(
        ["cargo", "run", "-q", "--release", "-p", "steerlab-cli", "--",
         "generate", "--model", str(model_dir), "--prompt", prompt,
         "--greedy", "--max-new-tokens", str(MAX_NEW),
         # the CLI defaults to a mild repetition penalty; the reference
         # stack's greedy search has none, so switch it off for parity
         "--repetition-penalty", "1.0", "--quiet"],
        capture_output=True, text=True, check=True,
    )
    return run.stdout.removesuffix("\n")


def main() -> None:
    repo = Path(__file__).resolve().parent.parent
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "hf"
        out = Path(tmp) / "converted"
        src.mkdir()
        fabricate(src)
        subprocess.run(
            [sys.executable, str(repo / "scripts/convert_hf_model.py"),
             str(src), str(out), "--chat-template", "none"],
            check=True,
        )
        failures = 0
        for prompt in PROMPTS:
            theirs = hf_greedy(src, prompt)
            ours = our_greedy(out, prompt)
            status = "ok" if theirs == ours else "MISMATCH"
            failures += theirs != ours
            print(f"{status}: {prompt!r}")
            if theirs != ours:
                print(f"  reference: {theirs!r}")
                print(f"  converted: {ours!r}")
    if failures:
        sys.exit(f"{failures}/{len(PROMPTS)} prompts diverged")
    print(f"all {len(PROMPTS)} greedy continuations match the reference stack")


if __name__ == "__main__":
    main()
