#!/usr/bin/env python3
"""Convert a Hugging Face causal-LM checkpoint into a steerlab model directory.

Writes `config.json`, `model.safetensors` (f32 tensors in the runtime's
layout), and `vocab.json` so the directory can be passed to `steerlab
--model`. Supported source families are Llama-2/3, Mistral, Qwen2 (without
attention biases), and Qwen3, i.e. rotary-position RMS-norm decoders with
gated-SiLU feed-forwards, optionally with per-head q/k normalization and a
head width decoupled from the hidden size.

What the conversion does:
  * transposes every projection from the checkpoint's [out, in] layout to the
    runtime's [in, out] layout;
  * reorders query/key rows within each head so the checkpoint's half-split
    rotary convention becomes the runtime's adjacent-pair convention (the
    same reorder is applied to q/k norm gains, so attention scores are
    preserved exactly);
  * upcasts all weights to f32;
  * rebuilds the vocabulary in the runtime's byte-fallback form.

Tokenizer fidelity, read this before trusting downstream numbers:
  The runtime tokenizes by UTF-8 byte fallback, not by the checkpoint's BPE
  merge table (that table is not representable in the runtime's merge file
  format). Every converted vocabulary keeps all token ids, so decoding model
  output is faithful, but *encoding* a prompt produces one token per byte
  rather than the merged tokens the model was trained on. Models tolerate
  this to varying degrees; treat generation quality and any metric computed
  on top of it as degraded relative to the original serving stack, and
  spot-check transcripts before reading much into aggregate numbers.

Resource expectations:
  The container stores f32, so it is ~4 bytes per parameter on disk (a 4B
  model is ~16 GB). Conversion streams one tensor at a time; loading in the
  runtime needs roughly three times the container size in RAM.

Requires: numpy, torch, safetensors (the latter two for bf16/f16 decoding).
"""

import argparse
import json
import re
import struct
import sys
from pathlib import Path

import numpy as np

# ---------------------------------------------------------------------------
# source checkpoint access

IGNORED_SUFFIXES = (".rotary_emb.inv_freq",)

SUPPORTED_ARCHITECTURES = {
    "LlamaForCausalLM",
    "MistralForCausalLM",
    "Qwen2ForCausalLM",
    "Qwen3ForCausalLM",
}


class Checkpoint:
    """Lazy tensor access over a single or sharded safetensors checkpoint."""

    def __init__(self, src: Path):
        from safetensors import safe_open

        index = src / "model.safetensors.index.json"
        single = src / "model.safetensors"
        self._handles = {}
        self._map = {}
        if index.exists():
            weight_map = json.loads(index.read_text())["weight_map"]
            for name, fname in weight_map.items():
                self._map[name] = fname
            files = sorted(set(weight_map.values()))
        elif single.exists():
            files = ["model.safetensors"]
        else:
            raise SystemExit(f"error: no model.safetensors[.index.json] in {src}")
        for fname in files:
            handle = safe_open(src / fname, framework="pt")
            self._handles[fname] = handle
            if not index.exists():
                for name in handle.keys():
                    self._map[name] = fname

    def names(self):
        return set(self._map)

    def get(self, name: str) -> np.ndarray:
        import torch

        handle = self._handles[self._map[name]]
        return handle.get_tensor(name).to(torch.float32).numpy()


# ---------------------------------------------------------------------------
# weight conversion

def rope_row_order(n_heads: int, head_dim: int) -> np.ndarray:
    """Row order turning half-split rotary features into adjacent pairs.

    The checkpoint rotates feature pairs (j, j + head_dim/2); the runtime
    rotates (2j, 2j + 1). Applying this order to q and k projection rows (and
    to q/k norm gains) makes the two conventions compute identical scores.
    """
    half = head_dim // 2
    order = np.empty(n_heads * head_dim, dtype=np.int64)
    for h in range(n_heads):
        base = h * head_dim
        for j in range(half):
            order[base + 2 * j] = base + j
            order[base + 2 * j + 1] = base + j + half
    return order


def plan_weights(cfg: dict) -> list:
    """Return (output name, shape, source name, transform) rows covering the
    whole output container. Shapes come from the config so the header can be
    written without touching the shards."""
    d = cfg["d_model"]
    d_ff = cfg["d_ff"]
    hd = cfg["head_dim"]
    attn_dim = cfg["n_heads"] * hd
    kv_dim = cfg["n_kv_heads"] * hd
    q_order = rope_row_order(cfg["n_heads"], hd)
    k_order = rope_row_order(cfg["n_kv_heads"], hd)
    gain_order = rope_row_order(1, hd)

    def transpose(arr):
        return np.ascontiguousarray(arr.T)

    def q_rows(arr):
        return np.ascontiguousarray(arr[q_order].T)

    def k_rows(arr):
        return np.ascontiguousarray(arr[k_order].T)

    plan = [("embed.weight", [cfg["vocab_size"], d], "model.embed_tokens.weight", None)]
    for i in range(cfg["n_layers"]):
        hf = f"model.layers.{i}.self_attn"
        mlp = f"model.layers.{i}.mlp"
        out = f"layers.{i}"
        plan += [
            (f"{out}.attn_norm.weight", [d], f"model.layers.{i}.input_layernorm.weight", None),
            (f"{out}.attn.wq", [d, attn_dim], f"{hf}.q_proj.weight", q_rows),
            (f"{out}.attn.wk", [d, kv_dim], f"{hf}.k_proj.weight", k_rows),
            (f"{out}.attn.wv", [d, kv_dim], f"{hf}.v_proj.weight", transpose),
            (f"{out}.attn.wo", [attn_dim, d], f"{hf}.o_proj.weight", transpose),
            (f"{out}.ffn_norm.weight", [d], f"model.layers.{i}.post_attention_layernorm.weight", None),
            (f"{out}.ffn.w_gate", [d, d_ff], f"{mlp}.gate_proj.weight", transpose),
            (f"{out}.ffn.w_up", [d, d_ff], f"{mlp}.up_proj.weight", transpose),
            (f"{out}.ffn.w_down", [d_ff, d], f"{mlp}.down_proj.weight", transpose),
        ]
        if cfg["use_qk_norm"]:
            plan += [
                (f"{out}.attn.q_norm.weight", [hd], f"{hf}.q_norm.weight", lambda a: a[gain_order]),
                (f"{out}.attn.k_norm.weight", [hd], f"{hf}.k_norm.weight", lambda a: a[gain_order]),
            ]
    plan.append(("final_norm.weight", [d], "model.norm.weight", None))
    if not cfg["tie_embeddings"]:
        plan.append(("lm_head.weight", [d, cfg["vocab_size"]], "lm_head.weight", transpose))
    return plan


def check_coverage(ckpt: Checkpoint, plan, cfg: dict) -> None:
    consumed = {src for _, _, src, _ in plan}
    required = set(consumed)
    if cfg["tie_embeddings"]:
        consumed.add("lm_head.weight")  # some exports materialize the tied head
    missing = sorted(required - ckpt.names())
    if missing:
        raise SystemExit(f"error: checkpoint is missing tensors: {missing[:10]}")
    leftover = sorted(
        n for n in ckpt.names() - consumed if not n.endswith(IGNORED_SUFFIXES)
    )
    biases = [n for n in leftover if n.endswith(".bias")]
    for name in biases:
        if np.any(ckpt.get(name)):
            raise SystemExit(
                f"error: {name} is nonzero; this runtime has no bias support "
                "in attention or feed-forward projections"
            )
    leftover = [n for n in leftover if n not in biases]
    if biases:
        print(f"note: dropped {len(biases)} all-zero bias tensors", file=sys.stderr)
    if leftover:
        raise SystemExit(
            "error: unrecognized tensors, refusing a silent partial conversion: "
            f"{leftover[:10]}"
        )


def write_container(path: Path, plan, ckpt: Checkpoint) -> int:
    """Write the weight container: u64-LE header length, JSON header mapping
    name -> {dtype, shape, data_offsets}, then raw little-endian f32 data.
    Streams one tensor at a time, so peak memory stays near the largest
    single tensor."""
    entries = sorted(plan)
    header = {}
    offset = 0
    for name, shape, _, _ in entries:
        nbytes = int(np.prod(shape)) * 4
        header[name] = {
            "dtype": "F32",
            "shape": shape,
            "data_offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    total = 0
    with path.open("wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for name, shape, src, transform in entries:
            arr = ckpt.get(src)
            if transform is not None:
                arr = transform(arr)
            if list(arr.shape) != shape:
                raise SystemExit(
                    f"error: {src} converts to shape {list(arr.shape)}, "
                    f"expected {shape} for {name}"
                )
            f.write(np.asarray(arr, dtype="<f4").tobytes())
            total += arr.size
    return total


# ---------------------------------------------------------------------------
# tokenizer conversion

def gpt2_byte_decoder() -> dict:
    """Inverse of the byte-to-unicode table used by GPT-2-style BPE vocabs."""
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
    return {chr(c): b for b, c in zip(bs, cs)}


def convert_vocab(src: Path) -> tuple:
    """Build the runtime vocab from tokenizer.json.

    Every id keeps its position. Single-byte tokens become `<0xNN>` spellings
    (the runtime's byte-fallback alphabet); multi-byte tokens keep their
    decoded text so model output decodes faithfully. Tokens whose bytes are
    not valid UTF-8 get a latin-1 spelling: decoding them yields mojibake
    instead of the original bytes, which is the price of storing spellings as
    text. Added tokens (chat markers and the like) keep their exact content.
    """
    tok_path = src / "tokenizer.json"
    if not tok_path.exists():
        raise SystemExit(f"error: {tok_path} not found; only tokenizer.json sources are supported")
    tok = json.loads(tok_path.read_text())
    model_vocab = tok["model"]["vocab"]
    added = {t["content"]: t["id"] for t in tok.get("added_tokens", [])}

    sentencepiece_style = "<0x00>" in model_vocab
    decoder = None if sentencepiece_style else gpt2_byte_decoder()

    by_spelling = {}
    lossy = dropped = 0

    def put(spelling, token_id, faithful):
        """Keep one id per spelling: faithful beats lossy, first beats later."""
        nonlocal dropped
        old = by_spelling.get(spelling)
        if not spelling:
            dropped += 1
        elif old is None:
            by_spelling[spelling] = (token_id, faithful)
        elif old[0] != token_id:
            if faithful and not old[1]:
                by_spelling[spelling] = (token_id, faithful)
            dropped += 1

    for token, token_id in model_vocab.items():
        if sentencepiece_style:
            match = re.fullmatch(r"<0x([0-9A-Fa-f]{2})>", token)
            if match:
                put(f"<0x{int(match.group(1), 16):02X}>", token_id, True)
            else:
                put(token.replace("▁", " "), token_id, True)
            continue
        try:
            raw = bytes(decoder[c] for c in token)
        except KeyError:
            put(token, token_id, True)  # not byte-coded; keep verbatim
            continue
        if len(raw) == 1:
            put(f"<0x{raw[0]:02X}>", token_id, True)
        else:
            try:
                put(raw.decode("utf-8"), token_id, True)
            except UnicodeDecodeError:
                lossy += 1
                put(raw.decode("latin-1"), token_id, False)

    for content, token_id in added.items():
        # chat markers must win any spelling race outright
        if content in by_spelling and by_spelling[content][0] != token_id:
            dropped += 1
        by_spelling[content] = (token_id, True)

    vocab = {spelling: token_id for spelling, (token_id, _) in by_spelling.items()}
    missing_bytes = [b for b in range(256) if f"<0x{b:02X}>" not in vocab]
    if missing_bytes:
        raise SystemExit(
            f"error: vocabulary covers only {256 - len(missing_bytes)}/256 "
            "byte values; byte-fallback encoding would fail on arbitrary text"
        )
    return vocab, added, lossy, dropped


# ---------------------------------------------------------------------------
# config and chat template

TEMPLATES = {
    "chatml": {
        "system_prefix": "",
        "user_prefix": "<|im_start|>user\n",
        "user_suffix": "<|im_end|>\n",
        "assistant_prefix": "<|im_start|>assistant\n",
    },
    "chatml-nothink": {
        "system_prefix": "",
        "user_prefix": "<|im_start|>user\n",
        "user_suffix": "<|im_end|>\n",
        "assistant_prefix": "<|im_start|>assistant\n<think>\n\n</think>\n\n",
    },
    "llama3": {
        "system_prefix": "",
        "user_prefix": "<|start_header_id|>user<|end_header_id|>\n\n",
        "user_suffix": "<|eot_id|>",
        "assistant_prefix": "<|start_header_id|>assistant<|end_header_id|>\n\n",
    },
    "llama2": {
        "system_prefix": "",
        "user_prefix": "[INST] ",
        "user_suffix": " [/INST]",
        "assistant_prefix": " ",
    },
    "none": {
        "system_prefix": "",
        "user_prefix": "",
        "user_suffix": "",
        "assistant_prefix": "",
    },
}


def detect_template(added: dict) -> str:
    if "<|im_start|>" in added:
        return "chatml"
    if "<|start_header_id|>" in added:
        return "llama3"
    if "[INST]" in added or "<s>" in added:
        return "llama2"
    return "none"


def eos_ids(src: Path, hf_cfg: dict) -> list:
    ids = []
    gen_path = src / "generation_config.json"
    sources = [hf_cfg.get("eos_token_id")]
    if gen_path.exists():
        sources.append(json.loads(gen_path.read_text()).get("eos_token_id"))
    for value in sources:
        if value is None:
            continue
        ids += value if isinstance(value, list) else [value]
    return sorted(set(ids))


def build_config(src: Path, hf_cfg: dict, args, template_name: str, has_qk_norm: bool) -> dict:
    d_model = hf_cfg["hidden_size"]
    n_heads = hf_cfg["num_attention_heads"]
    uses_bos = template_name in ("llama2", "llama3") or args.keep_bos
    return {
        "n_layers": hf_cfg["num_hidden_layers"],
        "d_model": d_model,
        "n_heads": n_heads,
        "n_kv_heads": hf_cfg.get("num_key_value_heads", n_heads),
        "head_dim": hf_cfg.get("head_dim") or d_model // n_heads,
        "d_ff": hf_cfg["intermediate_size"],
        "vocab_size": hf_cfg["vocab_size"],
        "max_seq_len": args.max_seq_len or hf_cfg["max_position_embeddings"],
        "norm_type": "rms",
        "pos_type": "rotary",
        "activation": "silu",
        "eps": hf_cfg["rms_norm_eps"],
        "rope_theta": hf_cfg.get("rope_theta", 10000.0),
        "eos_token_ids": eos_ids(src, hf_cfg),
        "bos_token_id": hf_cfg.get("bos_token_id") if uses_bos else None,
        "tie_embeddings": bool(hf_cfg.get("tie_word_embeddings", False)),
        "use_qk_norm": has_qk_norm,
        "chat_template": TEMPLATES[template_name],
    }


# ---------------------------------------------------------------------------
# entry point

def main() -> None:
    parser = argparse.ArgumentParser(
        description=__doc__.splitlines()[0],
        epilog="See the module docstring for fidelity and resource caveats.",
    )
    parser.add_argument("src", type=Path, help="checkpoint directory (config.json, *.safetensors, tokenizer.json)")
    parser.add_argument("out", type=Path, help="output model directory")
    parser.add_argument("--max-seq-len", type=int, default=None,
                        help="override the context bound (default: the checkpoint's)")
    parser.add_argument("--chat-template", default="auto",
                        choices=["auto", *TEMPLATES], help="conversation framing (default: auto-detect)")
    parser.add_argument("--keep-bos", action="store_true",
                        help="prepend the checkpoint's bos token even for templates that embed their own markers")
    parser.add_argument("--allow-unknown-architecture", action="store_true",
                        help="attempt conversion even if the architecture is not on the supported list")
    args = parser.parse_args()

    hf_cfg = json.loads((args.src / "config.json").read_text())
    archs = set(hf_cfg.get("architectures", []))
    if not archs & SUPPORTED_ARCHITECTURES and not args.allow_unknown_architecture:
        raise SystemExit(
            f"error: architectures {sorted(archs)} not supported "
            f"(expected one of {sorted(SUPPORTED_ARCHITECTURES)}); "
            "pass --allow-unknown-architecture to try anyway"
        )

    vocab, added, lossy, dropped = convert_vocab(args.src)
    template_name = args.chat_template
    if template_name == "auto":
        template_name = detect_template(added)
        print(f"chat template: detected {template_name!r}", file=sys.stderr)

    ckpt = Checkpoint(args.src)
    has_qk_norm = "model.layers.0.self_attn.q_norm.weight" in ckpt.names()
    cfg = build_config(args.src, hf_cfg, args, template_name, has_qk_norm)
    if not cfg["eos_token_ids"]:
        raise SystemExit("error: checkpoint declares no eos token id")

    plan = plan_weights(cfg)
    check_coverage(ckpt, plan, cfg)

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    (args.out / "vocab.json").write_text(
        json.dumps(vocab, ensure_ascii=True, sort_keys=True) + "\n"
    )
    params = write_container(args.out / "model.safetensors", plan, ckpt)

    print(f"wrote {args.out}: {params/1e9:.2f}B parameters, "
          f"{len(vocab)} vocab entries ({lossy} lossy spellings, {dropped} dropped), "
          f"eos={cfg['eos_token_ids']}", file=sys.stderr)
    if lossy:
        print("note: lossy spellings decode as mojibake if the model samples "
              "those ids; see the module docstring", file=sys.stderr)


if __name__ == "__main__":
    main()
