"""Synthesis model: io-pair encoder, sample pooling, tree network, type features.

``Model.context(task)`` runs everything that depends only on the task
(encoding the fixed io pairs, pooling them, embedding rule types), and
``Model.scores(ctx, ppt)`` scores the expansions of one partial program.
Backward passes mirror both and accumulate into a gradient dict.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encoding import (
    encode_pairs, encode_pairs_backward, encode_type_strings, encode_type_strings_backward,
    init_pair_encoder, init_type_encoder, pair_inputs,
)
from .expr import Expr
from .nn.layers import Params, param_shapes
from .operators import ExpansionRule, hole_local_type, operator_set, rule_index, rule_type_text, unroll_grammar
from .r3nn import (
    HOLE_SYMBOL, build_tree, expansion_mask, init_r3nn, normalise, pool_samples, pool_samples_backward,
    ppt_key, score_tree, score_tree_backward, mask_illtyped,
)
from .types import Ty, show_type

VARIANTS = {
    "vanilla": dict(H=32, typed=False, mask=False, policy="first"),
    "large": dict(H=64, typed=False, mask=False, policy="first"),
    "typed": dict(H=32, typed=True, mask=False, policy="first"),
    "typed-mask": dict(H=32, typed=True, mask=True, policy="first"),
    "anyhole": dict(H=32, typed=False, mask=False, policy="any"),
}


@dataclass
class ModelConfig:
    operators: Tuple[str, ...]
    charmap_io: Dict[str, int]
    charmap_types: Dict[str, int]
    T: int
    variant: str = "vanilla"
    H: int = 32
    M: int = 32
    layers: int = 3
    io_pairs: int = 8
    typed: bool = False
    mask: bool = False
    policy: str = "first"
    dtype: str = "float32"
    # optional subset of the unrolled grammar as (operator, applied) pairs
    rules: Optional[Tuple[Tuple[str, int], ...]] = None

    @classmethod
    def for_variant(cls, variant: str, dataset, **overrides) -> "ModelConfig":
        """Config for a named variant; typed variants use the union charmap and length."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        opts = dict(VARIANTS[variant])
        cm = dataset.charmaps
        typed = opts["typed"]
        base = dict(
            operators=tuple(dataset.operators),
            charmap_io=dict(cm.union if typed else cm.io),
            charmap_types=dict(cm.types),
            T=cm.max_len_either if typed else cm.max_len_io,
            variant=variant,
            io_pairs=dataset.gen_config.io_pairs_fixed,
        )
        base.update(opts)
        base.update(overrides)
        return cls(**base)

    @property
    def encoder_width(self) -> int:
        """Hidden units per direction in the io encoders (doubled with types)."""
        return 2 * self.H if self.typed else self.H

    @property
    def pair_features(self) -> int:
        return 4 * self.encoder_width * self.T

    def to_json(self) -> Dict:
        d = asdict(self)
        d["operators"] = list(self.operators)
        if self.rules is not None:
            d["rules"] = [list(r) for r in self.rules]
        return d

    @classmethod
    def from_json(cls, d: Dict) -> "ModelConfig":
        d = dict(d)
        d["operators"] = tuple(d["operators"])
        if d.get("rules") is not None:
            d["rules"] = tuple((name, int(q)) for name, q in d["rules"])
        return cls(**d)


@dataclass
class Context:
    """Task-level forward state shared by every step of one derivation."""

    task: object
    feats: np.ndarray
    enc_cache: object
    cond: np.ndarray
    pool_cache: object
    rule_types: Optional[np.ndarray] = None
    rule_type_cache: object = None
    hole_types: Dict[str, Tuple[np.ndarray, object]] = field(default_factory=dict)
    # gradient accumulators, filled by backward steps
    d_cond: Optional[np.ndarray] = None
    d_rule_types: Optional[np.ndarray] = None
    d_hole_types: Dict[str, np.ndarray] = field(default_factory=dict)


class Model:
    def __init__(self, cfg: ModelConfig, params: Optional[Params] = None, seed: int = 0):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        rules = unroll_grammar(operator_set(cfg.operators))
        if cfg.rules is not None:
            wanted = {tuple(r) for r in cfg.rules}
            rules = [r for r in rules if (r.name, r.applied) in wanted]
        self.rules: List[ExpansionRule] = rules
        self.rule_index = rule_index(self.rules)
        self.symbols = list(cfg.operators) + [HOLE_SYMBOL]
        self.symbol_index = {s: i for i, s in enumerate(self.symbols)}
        self.env = {r.op.name: r.op.scheme for r in self.rules}
        self.rule_type_texts = [rule_type_text(r) for r in self.rules]
        self._masks: Dict[str, np.ndarray] = {}
        self.params = params if params is not None else self.init_params(seed)

    # -- parameters ---------------------------------------------------------

    def init_params(self, seed: int) -> Params:
        cfg = self.cfg
        if cfg.M % 2:
            raise ValueError("M must be even")
        rng = np.random.default_rng(seed)
        p: Params = {}
        V = len(cfg.charmap_io) + 1
        D = 2 * V if cfg.typed else V
        init_pair_encoder(p, D, cfg.encoder_width, cfg.layers, rng, self.dtype)
        if cfg.typed:
            Vt = len(cfg.charmap_types) + 1
            init_type_encoder(p, "types.rule", Vt, cfg.H, cfg.M, cfg.layers, rng, self.dtype)
            init_type_encoder(p, "types.hole", Vt, cfg.H, cfg.M, cfg.layers, rng, self.dtype)
        init_r3nn(p, self.rules, self.symbols, cfg.M, cfg.pair_features, rng, self.dtype)
        return p

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return param_shapes(self.params)

    # -- forward ------------------------------------------------------------

    def io_batch(self, task) -> Tuple[np.ndarray, np.ndarray]:
        ios = task.fixed_ios()
        types = (task.input_type_text, task.output_type_text) if self.cfg.typed else None
        return pair_inputs(
            [io.input_text for io in ios], [io.output.text for io in ios],
            self.cfg.charmap_io, self.cfg.T, types, self.dtype,
        )

    def context(self, task) -> Context:
        x_in, x_out = self.io_batch(task)
        feats, enc_cache = encode_pairs(self.params, x_in, x_out)
        cond, pool_cache = pool_samples(self.params, feats)
        ctx = Context(task, feats, enc_cache, cond, pool_cache)
        if self.cfg.typed:
            ctx.rule_types, ctx.rule_type_cache = encode_type_strings(
                self.params, "types.rule", self.rule_type_texts, self.cfg.charmap_types, self.cfg.T
            )
        return ctx

    def hole_type_texts(self, ppt: Expr, hole_ids: Sequence[int]) -> List[str]:
        return [show_type(hole_local_type(ppt, h, {r.op.name: r.op for r in self.rules})) for h in hole_ids]

    def _hole_types(self, ctx: Context, texts: Sequence[str]) -> np.ndarray:
        missing = [t for t in dict.fromkeys(texts) if t not in ctx.hole_types]
        if missing:
            emb, cache = encode_type_strings(self.params, "types.hole", missing, self.cfg.charmap_types, self.cfg.T)
            for i, t in enumerate(missing):
                ctx.hole_types[t] = (emb[i], (cache, i, len(missing)))
        return np.stack([ctx.hole_types[t][0] for t in texts])

    def mask(self, ppt: Expr, hole_ids: Sequence[int], expected: Optional[Ty] = None) -> np.ndarray:
        key = (ppt_key(ppt), None if expected is None else show_type(expected))
        if key not in self._masks:
            self._masks[key] = expansion_mask(ppt, self.rules, hole_ids, self.env, expected)
        return self._masks[key]

    def scores(self, ctx: Context, ppt: Expr):
        """Raw (masked, for masking variants) scores and the step cache."""
        tree = build_tree(ppt, self.rule_index, self.symbol_index)
        ht = texts = None
        if self.cfg.typed:
            texts = self.hole_type_texts(ppt, tree.holes)
            ht = self._hole_types(ctx, texts)
        z, cache = score_tree(self.params, tree, self.rules, ctx.cond, ht, ctx.rule_types)
        if self.cfg.mask:
            z = mask_illtyped(z, self.mask(ppt, tree.holes, getattr(ctx.task, "ty", None)))
        return z, (cache, texts)

    def augmented_embeddings(self, ctx: Context, ppt: Expr) -> Tuple[np.ndarray, np.ndarray]:
        """Typed variant: hole and rule vectors with their type features appended.

        Both have ``M * (T + 1)`` columns and their dot products are the
        unmasked scores.  The scoring path adds the two partial products
        instead of concatenating, which is the same number.
        """
        if not self.cfg.typed:
            raise ValueError("augmented embeddings exist only for typed variants")
        tree = build_tree(ppt, self.rule_index, self.symbol_index)
        ht = self._hole_types(ctx, self.hole_type_texts(ppt, tree.holes))
        _, cache = score_tree(self.params, tree, self.rules, ctx.cond, ht, ctx.rule_types)
        holes_aug = np.concatenate([cache.hole_vecs, ht], axis=1)
        rules_aug = np.concatenate([self.params["r3nn.omega"], ctx.rule_types], axis=1)
        return holes_aug, rules_aug

    def distribution(self, ctx: Context, ppt: Expr) -> Tuple[np.ndarray, List[int]]:
        z, (cache, _) = self.scores(ctx, ppt)
        return normalise(z.astype(np.float64), self.cfg.policy), cache.tree.holes

    # -- backward -----------------------------------------------------------

    def step_backward(self, ctx: Context, step_cache, dz: np.ndarray, grads: Params) -> None:
        cache, texts = step_cache
        dz = dz.astype(self.dtype)
        d_cond, d_ht, d_rt = score_tree_backward(self.params, self.rules, cache, dz, grads, ctx.rule_types)
        ctx.d_cond = d_cond if ctx.d_cond is None else ctx.d_cond + d_cond
        if d_rt is not None:
            ctx.d_rule_types = d_rt if ctx.d_rule_types is None else ctx.d_rule_types + d_rt
            for t, row in zip(texts, d_ht):
                ctx.d_hole_types[t] = ctx.d_hole_types.get(t, 0) + row

    def context_backward(self, ctx: Context, grads: Params) -> None:
        if ctx.d_cond is not None:
            d_feats = pool_samples_backward(self.params, ctx.pool_cache, ctx.d_cond, grads)
            encode_pairs_backward(self.params, ctx.enc_cache, d_feats, grads)
        if ctx.d_rule_types is not None:
            encode_type_strings_backward(self.params, "types.rule", ctx.rule_type_cache, ctx.d_rule_types, grads)
        # hole types were embedded in batches; replay each batch's gradient once
        batches: Dict[int, Tuple[object, np.ndarray]] = {}
        for t, (emb, (cache, i, n)) in ctx.hole_types.items():
            if t not in ctx.d_hole_types:
                continue
            key = id(cache)
            if key not in batches:
                batches[key] = (cache, np.zeros((n, emb.shape[0]), dtype=self.dtype))
            batches[key][1][i] = ctx.d_hole_types[t]
        for cache, d in batches.values():
            encode_type_strings_backward(self.params, "types.hole", cache, d, grads)

    # -- persistence --------------------------------------------------------

    def save(self, directory, extra: Optional[Dict] = None) -> str:
        """Raw little-endian float32 arrays plus a JSON manifest; returns a content hash."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256()
        arrays = {}
        for name in sorted(self.params):
            a = np.ascontiguousarray(self.params[name], dtype="<f4")
            fname = name + ".f4"
            (d / fname).write_bytes(a.tobytes())
            digest.update(name.encode())
            digest.update(a.tobytes())
            arrays[name] = {"file": fname, "shape": list(a.shape)}
        manifest = {"config": self.cfg.to_json(), "arrays": arrays, "sha256": digest.hexdigest()}
        if extra:
            manifest.update(extra)
        tmp = d / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        os.replace(tmp, d / "manifest.json")
        return manifest["sha256"]

    @classmethod
    def load(cls, directory) -> "Model":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        cfg = ModelConfig.from_json(manifest["config"])
        dtype = np.dtype(cfg.dtype)
        params = {}
        for name, info in manifest["arrays"].items():
            raw = np.frombuffer((d / info["file"]).read_bytes(), dtype="<f4")
            params[name] = raw.reshape(info["shape"]).astype(dtype)
        return cls(cfg, params)


def load_manifest(directory) -> Dict:
    return json.loads((Path(directory) / "manifest.json").read_text())
