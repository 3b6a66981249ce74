"""Recursive / reverse-recursive tree network over partial programs.

A partial program tree is viewed through the unrolled grammar: an
operator applied to ``q`` arguments is one ``q``-ary branch node (the
curried application chain collapses into it), an operator with no
arguments is a leaf carrying that operator's symbol, and a hole is a
leaf carrying the hole symbol.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expr import Expr, Hole, Var, print_expr, spine
from .infer import type_checks
from .nn.layers import (
    Params, accumulate, bilstm_backward, bilstm_forward, init_bilstm, init_linear, uniform,
)
from .operators import ExpansionRule, fill_hole

HOLE_SYMBOL = "<hole>"
MASK_VALUE = -1e9


class NoHoles(ValueError):
    pass


class UnknownRule(KeyError):
    pass


class AllMasked(ValueError):
    pass


@dataclass
class Node:
    rule: Optional[int] = None  # branch: index into the rule list
    symbol: Optional[int] = None  # leaf: index into the symbol list
    hole: Optional[int] = None  # hole id for hole leaves
    children: Tuple[int, ...] = ()


@dataclass
class Tree:
    nodes: List[Node]  # post-order, root last
    leaves: List[int]  # node ids, left to right
    holes: List[int]  # hole ids, left to right

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    def hole_positions(self) -> List[int]:
        """Leaf positions of the holes, in the order of ``holes``."""
        pos = {self.nodes[n].hole: i for i, n in enumerate(self.leaves) if self.nodes[n].hole is not None}
        return [pos[h] for h in self.holes]


def build_tree(ppt: Expr, rule_index: Dict[Tuple[str, int], int], symbol_index: Dict[str, int]) -> Tree:
    nodes: List[Node] = []
    leaves: List[int] = []
    hole_ids: List[int] = []

    def go(e: Expr) -> int:
        if isinstance(e, Hole):
            nodes.append(Node(symbol=symbol_index[HOLE_SYMBOL], hole=e.id))
            leaves.append(len(nodes) - 1)
            hole_ids.append(e.id)
            return len(nodes) - 1
        head, args = spine(e)
        if not isinstance(head, Var):
            raise UnknownRule("application head must be an operator")
        if not args:
            if head.name not in symbol_index:
                raise UnknownRule(head.name)
            nodes.append(Node(symbol=symbol_index[head.name]))
            leaves.append(len(nodes) - 1)
            return len(nodes) - 1
        key = (head.name, len(args))
        if key not in rule_index:
            raise UnknownRule(f"{head.name} applied to {len(args)} arguments")
        kids = tuple(go(a) for a in args)
        nodes.append(Node(rule=rule_index[key], children=kids))
        return len(nodes) - 1

    go(ppt)
    return Tree(nodes, leaves, hole_ids)


# -- parameters -------------------------------------------------------------

def branch_key(rule: ExpansionRule) -> str:
    return f"{rule.name}.{rule.applied}"


def init_r3nn(p: Params, rules: Sequence[ExpansionRule], symbols: Sequence[str], M: int, cond_dim: int, rng, dtype=np.float32) -> None:
    if M % 2:
        raise ValueError("M must be even (the leaf and conditioning LSTMs split it per direction)")
    bound = 1.0 / np.sqrt(M)
    p["r3nn.phi"] = uniform(rng, (len(symbols), M), bound, dtype)
    p["r3nn.omega"] = uniform(rng, (len(rules), M), bound, dtype)
    for r in rules:
        if r.applied:
            init_linear(p, f"r3nn.f.{branch_key(r)}", r.applied * M, M, rng, dtype)
            init_linear(p, f"r3nn.g.{branch_key(r)}", M, r.applied * M, rng, dtype)
    init_bilstm(p, "r3nn.cond", cond_dim, M // 2, rng, dtype)
    init_linear(p, "r3nn.proj", 2 * M, M, rng, dtype)
    init_bilstm(p, "r3nn.leaf", M, M // 2, rng, dtype)


# -- conditioning -----------------------------------------------------------

def pool_samples(p: Params, feats: np.ndarray):
    """Bidirectional recurrent pass over the pair axis; final states of both directions."""
    out, cache = bilstm_forward(p, "r3nn.cond", feats[:, None, :])
    half = out.shape[2] // 2
    vec = np.concatenate([out[-1, 0, :half], out[0, 0, half:]])
    return vec, (cache, out.shape)


def pool_samples_backward(p: Params, cache, dvec: np.ndarray, grads: Params) -> np.ndarray:
    lcache, shape = cache
    half = shape[2] // 2
    dout = np.zeros(shape, dtype=dvec.dtype)
    dout[-1, 0, :half] = dvec[:half]
    dout[0, 0, half:] += dvec[half:]
    return bilstm_backward(p, "r3nn.cond", lcache, dout, grads)[:, 0, :]


def condition_leaves(p: Params, symbols: np.ndarray, cond: np.ndarray):
    """``proj([phi(symbol); cond])`` for every leaf."""
    phi = p["r3nn.phi"][symbols]
    x = np.concatenate([phi, np.broadcast_to(cond, (len(symbols), cond.shape[0]))], axis=1)
    return x @ p["r3nn.proj.W"] + p["r3nn.proj.b"], (symbols, x)


def condition_leaves_backward(p: Params, cache, d: np.ndarray, grads: Params) -> np.ndarray:
    symbols, x = cache
    M = p["r3nn.phi"].shape[1]
    accumulate(grads, "r3nn.proj.W", x.T @ d)
    accumulate(grads, "r3nn.proj.b", d.sum(axis=0))
    dx = d @ p["r3nn.proj.W"].T
    dphi = np.zeros_like(p["r3nn.phi"])
    np.add.at(dphi, symbols, dx[:, :M])
    accumulate(grads, "r3nn.phi", dphi)
    return dx[:, M:].sum(axis=0)


# -- tree passes ------------------------------------------------------------

def recursive_pass(p: Params, tree: Tree, rules: Sequence[ExpansionRule], leaf_vecs: np.ndarray):
    """Bottom-up: each branch maps its concatenated children through ``tanh(f_r)``."""
    up: List[np.ndarray] = [None] * len(tree.nodes)
    inputs: List[Optional[np.ndarray]] = [None] * len(tree.nodes)
    leaf_of = {n: i for i, n in enumerate(tree.leaves)}
    for n, node in enumerate(tree.nodes):
        if node.rule is None:
            up[n] = leaf_vecs[leaf_of[n]]
        else:
            u = np.concatenate([up[c] for c in node.children])
            k = f"r3nn.f.{branch_key(rules[node.rule])}"
            inputs[n] = u
            up[n] = np.tanh(u @ p[f"{k}.W"] + p[f"{k}.b"])
    return up, inputs


def reverse_pass(p: Params, tree: Tree, rules: Sequence[ExpansionRule], root_vec: np.ndarray):
    """Top-down: each branch splits ``tanh(g_r(parent))`` into its children."""
    down: List[np.ndarray] = [None] * len(tree.nodes)
    down[tree.root] = root_vec
    for n in range(len(tree.nodes) - 1, -1, -1):
        node = tree.nodes[n]
        if node.rule is None:
            continue
        k = f"r3nn.g.{branch_key(rules[node.rule])}"
        v = np.tanh(down[n] @ p[f"{k}.W"] + p[f"{k}.b"])
        for c, part in zip(node.children, np.split(v, len(node.children))):
            down[c] = part
    return down


def reverse_pass_backward(p, tree, rules, down, d_down, grads) -> np.ndarray:
    """Returns the gradient with respect to the root vector."""
    for n, node in enumerate(tree.nodes):
        if node.rule is None:
            continue
        k = f"r3nn.g.{branch_key(rules[node.rule])}"
        v = np.concatenate([down[c] for c in node.children])
        dv = np.concatenate([d_down[c] for c in node.children]) * (1 - v * v)
        accumulate(grads, f"{k}.W", np.outer(down[n], dv))
        accumulate(grads, f"{k}.b", dv)
        d_down[n] = d_down[n] + dv @ p[f"{k}.W"].T
    return d_down[tree.root]


def recursive_pass_backward(p, tree, rules, up, inputs, d_root, grads) -> np.ndarray:
    """Returns gradients of the conditioned leaf vectors, left to right."""
    d_up: List[np.ndarray] = [None] * len(tree.nodes)
    d_up[tree.root] = d_root
    for n in range(len(tree.nodes) - 1, -1, -1):
        node = tree.nodes[n]
        if node.rule is None:
            continue
        k = f"r3nn.f.{branch_key(rules[node.rule])}"
        da = d_up[n] * (1 - up[n] * up[n])
        accumulate(grads, f"{k}.W", np.outer(inputs[n], da))
        accumulate(grads, f"{k}.b", da)
        du = da @ p[f"{k}.W"].T
        for c, part in zip(node.children, np.split(du, len(node.children))):
            d_up[c] = part
    return np.stack([d_up[n] for n in tree.leaves])


# -- scoring ----------------------------------------------------------------

@dataclass
class ScoreCache:
    tree: Tree
    cond_cache: Any = None
    up: List = None
    inputs: List = None
    down: List = None
    leaf_cache: Any = None
    hole_vecs: np.ndarray = None
    hole_pos: List[int] = None
    hole_types: Optional[np.ndarray] = None


def score_tree(
    p: Params,
    tree: Tree,
    rules: Sequence[ExpansionRule],
    cond: np.ndarray,
    hole_types: Optional[np.ndarray] = None,
    rule_types: Optional[np.ndarray] = None,
):
    """Raw scores ``z[hole, rule]`` (holes left to right).

    With type features, ``z = phi'(hole) . omega(rule) + E(hole type) . E(rule type)``,
    which is the dot product of the two concatenated ``M(T+1)`` vectors.
    """
    if not tree.holes:
        raise NoHoles("tree has no holes")
    symbols = np.array([tree.nodes[n].symbol for n in tree.leaves])
    leaf_vecs, ccache = condition_leaves(p, symbols, cond)
    up, inputs = recursive_pass(p, tree, rules, leaf_vecs)
    down = reverse_pass(p, tree, rules, up[tree.root])
    seq = np.stack([down[n] for n in tree.leaves])[:, None, :]
    out, lcache = bilstm_forward(p, "r3nn.leaf", seq)
    pos = tree.hole_positions()
    hv = out[pos, 0, :]
    z = hv @ p["r3nn.omega"].T
    if hole_types is not None:
        z = z + hole_types @ rule_types.T
    cache = ScoreCache(tree, ccache, up, inputs, down, lcache, hv, pos, hole_types)
    return z, cache


def score_tree_backward(p, rules, cache: ScoreCache, dz: np.ndarray, grads, rule_types=None):
    """Accumulate parameter gradients; returns (d cond, d hole types, d rule types)."""
    tree = cache.tree
    accumulate(grads, "r3nn.omega", dz.T @ cache.hole_vecs)
    dhv = dz @ p["r3nn.omega"]
    d_ht = d_rt = None
    if cache.hole_types is not None:
        d_ht = dz @ rule_types
        d_rt = dz.T @ cache.hole_types
    dout = np.zeros((len(tree.leaves), 1, dhv.shape[1]), dtype=dhv.dtype)
    for row, i in enumerate(cache.hole_pos):
        dout[i, 0] += dhv[row]
    dseq = bilstm_backward(p, "r3nn.leaf", cache.leaf_cache, dout, grads)[:, 0, :]
    d_down: List[np.ndarray] = [np.zeros_like(v) for v in cache.down]
    for i, n in enumerate(tree.leaves):
        d_down[n] = dseq[i]
    d_root = reverse_pass_backward(p, tree, rules, cache.down, d_down, grads)
    d_leaf = recursive_pass_backward(p, tree, rules, cache.up, cache.inputs, d_root, grads)
    d_cond = condition_leaves_backward(p, cache.cond_cache, d_leaf, grads)
    return d_cond, d_ht, d_rt


# -- masking, normalisation and sampling ------------------------------------

def expansion_mask(
    ppt: Expr, rules: Sequence[ExpansionRule], hole_ids: Sequence[int], env=None, expected=None,
) -> np.ndarray:
    """``True`` where filling the hole with the rule still type-checks.

    Filling the root hole drops its annotation, so the target type of the
    whole program is passed separately as ``expected``.
    """
    out = np.zeros((len(hole_ids), len(rules)), dtype=bool)
    for i, h in enumerate(hole_ids):
        for j, r in enumerate(rules):
            out[i, j] = type_checks(fill_hole(ppt, h, r), env, expected)
    return out


def mask_illtyped(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scores with disallowed expansions pushed to ``MASK_VALUE``."""
    if not mask.any():
        raise AllMasked("no type-correct expansion exists")
    return np.where(mask, z, np.minimum(z, MASK_VALUE))


def normalise(z: np.ndarray, policy: str) -> np.ndarray:
    """Probabilities: the first hole's row (``first``) or the whole matrix (``any``)."""
    if policy == "first":
        row = z[0] - z[0].max()
        e = np.exp(row)
        out = np.zeros_like(z, dtype=np.float64)
        out[0] = e / e.sum()
        return out
    if policy == "any":
        e = np.exp(z - z.max())
        return e / e.sum()
    raise ValueError(f"unknown policy {policy!r}")


def sample_expansion(probs: np.ndarray, rng: np.random.Generator, policy: str = "first") -> Tuple[int, int]:
    """(hole row, rule index) drawn from the normalised scores."""
    if policy == "first":
        row = probs[0] / probs[0].sum()
        return 0, int(rng.choice(len(row), p=row))
    flat = probs.ravel() / probs.sum()
    k = int(rng.choice(flat.size, p=flat))
    return divmod(k, probs.shape[1])


def ppt_key(ppt: Expr) -> str:
    return print_expr(ppt)
