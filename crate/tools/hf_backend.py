#!/usr/bin/env python3
"""Probe backend for a Hugging Face causal language model.

Speaks the line-delimited JSON contract on stdin/stdout:

    langpref run ... --backend "cmd:python3 tools/hf_backend.py --model Qwen/Qwen2.5-0.5B"

`--tiny-random` builds a randomly initialised byte-level GPT-2 instead, which
needs no downloads and is enough to exercise the full contract offline.
"""

import argparse
import json
import sys

import torch


class ByteTokenizer:
    """One token per UTF-8 byte."""

    vocab_size = 256

    def encode(self, text, add_special_tokens=False):
        return list(text.encode("utf-8"))

    def decode(self, ids):
        return bytes(ids).decode("utf-8", errors="replace")


def tiny_random(layers):
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(0)
    cfg = GPT2Config(vocab_size=256, n_positions=8192, n_embd=64, n_layer=layers, n_head=4)
    return "tiny-random-gpt2", ByteTokenizer(), GPT2LMHeadModel(cfg).eval()


def pretrained(name):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tok = AutoTokenizer.from_pretrained(name)
    model = AutoModelForCausalLM.from_pretrained(name, torch_dtype=torch.float32).eval()
    return name, tok, model


def final_norm(model):
    for path in ("model.norm", "transformer.ln_f", "gpt_neox.final_layer_norm", "model.final_layernorm"):
        obj = model
        try:
            for part in path.split("."):
                obj = getattr(obj, part)
            return obj
        except AttributeError:
            continue
    return None


OPS = {"info", "next_token", "layer_trace", "sequence_logprob", "count_tokens"}


class Backend:
    def __init__(self, model_id, tok, model, top_k):
        self.model_id = model_id
        self.tok = tok
        self.model = model
        self.top_k = top_k
        self.norm = final_norm(model)
        self.vocab = model.get_output_embeddings().weight.shape[0]
        self.layers = model.config.num_hidden_layers
        # Citation ids 1-9 are always reported so their probability is known.
        self.digits = []
        for d in "123456789":
            ids = self.tok.encode(d, add_special_tokens=False)
            if len(ids) == 1:
                self.digits.append(ids[0])

    def ids(self, text):
        return torch.tensor([self.tok.encode(text, add_special_tokens=False)])

    def info(self, _req):
        return {
            "info": {
                "model_id": self.model_id,
                "capabilities": {
                    "layer_trace": self.norm is not None,
                    "sequence_logprob": True,
                    "tokenizer": True,
                },
                "layer_count": self.layers,
                "max_in_flight": 1,
            }
        }

    @torch.no_grad()
    def next_token(self, req):
        logits = self.model(self.ids(req["prompt"])).logits[0, -1]
        probs = torch.softmax(logits.double(), dim=-1)
        k = min(req.get("top_k") or self.top_k, self.vocab)
        keep = set(torch.topk(probs, k).indices.tolist()) | set(self.digits)
        entries = [
            {"id": i, "token": self.tok.decode([i]), "prob": float(probs[i])}
            for i in sorted(keep)
        ]
        return {"distribution": {"entries": entries, "vocab_size": self.vocab}}

    @torch.no_grad()
    def layer_trace(self, req):
        if self.norm is None:
            return {"error": "layer_trace unsupported for this architecture"}
        out = self.model(self.ids(req["prompt"]), output_hidden_states=True)
        head = self.model.get_output_embeddings()
        trace = []
        # hidden_states[0] is the embedding output; the last entry already has the final norm applied.
        hidden = out.hidden_states[1:]
        for i, h in enumerate(hidden):
            x = h[0, -1]
            if i + 1 < len(hidden):
                x = self.norm(x)
            trace.append(self.tok.decode([int(head(x).argmax())]))
        return {"trace": trace}

    @torch.no_grad()
    def sequence_logprob(self, req):
        prompt = self.tok.encode(req["prompt"], add_special_tokens=False)
        cont = self.tok.encode(req.get("continuation") or "", add_special_tokens=False)
        if not cont:
            return {"logprob": 0.0}
        ids = torch.tensor([prompt + cont])
        logp = torch.log_softmax(self.model(ids).logits[0].double(), dim=-1)
        start = len(prompt)
        total = sum(float(logp[start + j - 1, t]) for j, t in enumerate(cont))
        return {"logprob": total}

    def count_tokens(self, req):
        return {"count": len(self.tok.encode(req.get("text") or "", add_special_tokens=False))}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", help="Hugging Face model name or local path")
    ap.add_argument("--tiny-random", action="store_true", help="random byte-level GPT-2, no download")
    ap.add_argument("--layers", type=int, default=4, help="layers for --tiny-random")
    ap.add_argument("--top-k", type=int, default=256, help="entries returned per next-token call")
    args = ap.parse_args()
    if args.tiny_random:
        backend = Backend(*tiny_random(args.layers), args.top_k)
    elif args.model:
        backend = Backend(*pretrained(args.model), args.top_k)
    else:
        ap.error("pass --model or --tiny-random")

    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = req.get("op", "")
            if op in OPS:
                resp = getattr(backend, op)(req)
            else:
                resp = {"error": f"unknown op {op!r}"}
        except Exception as e:  # reported to the caller, never fatal
            resp = {"error": f"{type(e).__name__}: {e}"}
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
