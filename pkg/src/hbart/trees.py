"""Regression trees and the Metropolis-Hastings step over tree structures.

Trees use the rule ``x[var] < cut`` sends an observation left. Each tree
keeps the leaf every training observation falls into (``leaf_of``), so
node index sets are available without re-routing the data.

Tree prior: a node at depth ``d`` splits with probability
``alpha * (1 + d) ** -beta``, and its rule is uniform over predictors with
at least two distinct values in the node, then uniform over those distinct
values. The proposal draws rules from that same measure, so the rule
probabilities cancel between the transition ratio and the structure ratio;
both functions below omit them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GROW, PRUNE, CHANGE = "grow", "prune", "change"
MOVES = (GROW, PRUNE, CHANGE)

_LOG_2PI = math.log(2 * math.pi)


class RegressionTree:
    """A binary regression tree over ``n_obs`` training observations.

    Nodes live in parallel lists indexed by node id; ids freed by PRUNE are
    reused by later GROW moves. ``var[i] < 0`` marks a leaf.
    """

    def __init__(self, n_obs: int, mu: float = 0.0):
        self.var = [-1]
        self.cut = [0.0]
        self.left = [-1]
        self.right = [-1]
        self.parent = [-1]
        self.depth = [0]
        self.mu = [float(mu)]
        self.alive = [True]
        self._free: list[int] = []
        self.leaf_of = np.zeros(n_obs, dtype=np.intp)

    # -- structure queries -------------------------------------------------

    def is_leaf(self, i: int) -> bool:
        return self.var[i] < 0

    def leaves(self) -> list[int]:
        return [i for i, (v, a) in enumerate(zip(self.var, self.alive)) if a and v < 0]

    def singly_internal(self) -> list[int]:
        """Internal nodes whose two children are both leaves."""
        var, left, right = self.var, self.left, self.right
        return [
            i
            for i, a in enumerate(self.alive)
            if a and var[i] >= 0 and var[left[i]] < 0 and var[right[i]] < 0
        ]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def n_nodes(self) -> int:
        return sum(self.alive)

    def max_depth(self) -> int:
        return max(d for d, a in zip(self.depth, self.alive) if a)

    def leaf_indices(self, leaf: int) -> np.ndarray:
        return np.flatnonzero(self.leaf_of == leaf)

    def node_indices(self, node: int) -> np.ndarray:
        """Training observations routed through ``node``."""
        if self.var[node] < 0:
            return self.leaf_indices(node)
        under = []
        stack = [node]
        while stack:
            i = stack.pop()
            if self.var[i] < 0:
                under.append(i)
            else:
                stack += [self.left[i], self.right[i]]
        return np.flatnonzero(np.isin(self.leaf_of, under))

    # -- mutation -----------------------------------------------------------

    def _new_node(self, parent: int, mu: float) -> int:
        depth = self.depth[parent] + 1
        if self._free:
            i = self._free.pop()
            self.var[i], self.cut[i], self.left[i], self.right[i] = -1, 0.0, -1, -1
            self.parent[i], self.depth[i], self.mu[i], self.alive[i] = parent, depth, mu, True
            return i
        self.var.append(-1)
        self.cut.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.parent.append(parent)
        self.depth.append(depth)
        self.mu.append(mu)
        self.alive.append(True)
        return len(self.var) - 1

    def split(self, leaf: int, var: int, cut: float, left_idx: np.ndarray, right_idx: np.ndarray):
        """Turn ``leaf`` into an internal node with two leaf children."""
        mu = self.mu[leaf]
        lo = self._new_node(leaf, mu)
        hi = self._new_node(leaf, mu)
        self.var[leaf], self.cut[leaf] = int(var), float(cut)
        self.left[leaf], self.right[leaf] = lo, hi
        self.leaf_of[left_idx] = lo
        self.leaf_of[right_idx] = hi

    def collapse(self, node: int):
        """Remove the two leaf children of ``node``."""
        lo, hi = self.left[node], self.right[node]
        self.leaf_of[(self.leaf_of == lo) | (self.leaf_of == hi)] = node
        self.mu[node] = self.mu[lo]
        self.var[node], self.cut[node] = -1, 0.0
        self.left[node] = self.right[node] = -1
        for i in (lo, hi):
            self.alive[i] = False
            self._free.append(i)

    def rewire(self, node: int, var: int, cut: float, left_idx: np.ndarray, right_idx: np.ndarray):
        """Replace the rule of a singly-internal node."""
        self.var[node], self.cut[node] = int(var), float(cut)
        self.leaf_of[left_idx] = self.left[node]
        self.leaf_of[right_idx] = self.right[node]

    def copy(self) -> RegressionTree:
        t = RegressionTree.__new__(RegressionTree)
        for name in ("var", "cut", "left", "right", "parent", "depth", "mu", "alive", "_free"):
            setattr(t, name, list(getattr(self, name)))
        t.leaf_of = self.leaf_of.copy()
        return t

    # -- evaluation ---------------------------------------------------------

    def fitted(self) -> np.ndarray:
        return np.asarray(self.mu)[self.leaf_of]

    def assign(self, x) -> int:
        """Leaf reached by a single covariate vector."""
        i = 0
        while self.var[i] >= 0:
            i = self.left[i] if x[self.var[i]] < self.cut[i] else self.right[i]
        return i

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf id for every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        var = np.asarray(self.var)
        cut = np.asarray(self.cut)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth()):
            v = var[node]
            inner = v >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, v, 0)] < cut[node]
            node = np.where(inner, np.where(go_left, left[node], right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.mu)[self.route(np.atleast_2d(X))]

    # -- serialization --------------------------------------------------------

    def to_preorder(self) -> list[list]:
        """Pre-order node list: ``[var, cut]`` for splits, ``[mu]`` for leaves."""
        out = []
        stack = [0]
        while stack:
            i = stack.pop()
            if self.var[i] < 0:
                out.append([float(self.mu[i])])
            else:
                out.append([int(self.var[i]), float(self.cut[i])])
                stack += [self.right[i], self.left[i]]
        return out

    @classmethod
    def from_preorder(cls, nodes: list[list], X: np.ndarray | None = None) -> RegressionTree:
        """Rebuild a tree; with training ``X`` the observation routing is restored."""
        t = cls(0 if X is None else X.shape[0])
        t.var, t.cut, t.left, t.right, t.parent, t.depth, t.mu, t.alive = ([] for _ in range(8))

        def build(pos: int, parent: int, depth: int) -> tuple[int, int]:
            i = len(t.var)
            rec = nodes[pos]
            t.parent.append(parent)
            t.depth.append(depth)
            t.alive.append(True)
            t.left.append(-1)
            t.right.append(-1)
            if len(rec) == 1:
                t.var.append(-1)
                t.cut.append(0.0)
                t.mu.append(float(rec[0]))
                return i, pos + 1
            t.var.append(int(rec[0]))
            t.cut.append(float(rec[1]))
            t.mu.append(0.0)
            lo, pos = build(pos + 1, i, depth + 1)
            hi, pos = build(pos, i, depth + 1)
            t.left[i], t.right[i] = lo, hi
            return i, pos

        _, end = build(0, -1, 0)
        if end != len(nodes):
            raise ValueError("malformed pre-order tree")
        if X is not None:
            t.leaf_of = t.route(X)
        return t

    def structure_key(self) -> tuple:
        """Hashable description of the splits, ignoring leaf values."""
        return tuple(tuple(n) if len(n) == 2 else () for n in self.to_preorder())

    def check(self, X: np.ndarray):
        """Assert every structural invariant; used by tests."""
        leaves = self.leaves()
        internal = [i for i, a in enumerate(self.alive) if a and self.var[i] >= 0]
        assert len(leaves) == len(internal) + 1
        for i in internal:
            lo, hi = self.left[i], self.right[i]
            assert self.alive[lo] and self.alive[hi]
            assert self.parent[lo] == i and self.parent[hi] == i
        assert np.array_equal(self.route(X), self.leaf_of)
        counts = np.bincount(self.leaf_of, minlength=len(self.var))
        assert all(counts[i] > 0 for i in leaves)
        assert set(np.unique(self.leaf_of)) == set(leaves)


@dataclass
class TreeProposal:
    """A candidate change to one tree.

    For GROW/CHANGE ``left_idx``/``right_idx`` are the observations the new
    rule sends to each child; for PRUNE/CHANGE ``old_left_idx`` and
    ``old_right_idx`` are the current children's observations.
    ``valid`` is False when the move cannot produce a tree with non-empty
    leaves; such proposals are rejected without evaluation.
    """

    kind: str
    node: int
    var: int = -1
    cut: float = math.nan
    left_idx: np.ndarray | None = None
    right_idx: np.ndarray | None = None
    old_left_idx: np.ndarray | None = None
    old_right_idx: np.ndarray | None = None
    valid: bool = True


def draw_rule(idx: np.ndarray, X: np.ndarray, rng: np.random.Generator) -> tuple[int, float] | None:
    """Uniform predictor among those varying in the node, then a uniform
    distinct observed value as the cut. None if nothing varies."""
    Xn = X[idx]
    candidates = np.flatnonzero(Xn.max(axis=0) > Xn.min(axis=0))
    if candidates.size == 0:
        return None
    j = int(candidates[rng.integers(candidates.size)])
    values = np.unique(Xn[:, j])
    return j, float(values[rng.integers(values.size)])


def _partition(idx, X, var, cut):
    go_left = X[idx, var] < cut
    return idx[go_left], idx[~go_left]


def propose(tree: RegressionTree, rng: np.random.Generator, proposal_probs, X: np.ndarray) -> TreeProposal:
    """Draw a GROW, PRUNE or CHANGE proposal.

    On a single-leaf tree only GROW is possible, so any draw becomes GROW.
    """
    u = rng.random()
    p_grow, p_prune, _ = proposal_probs
    if u < p_grow:
        kind = GROW
    elif u < p_grow + p_prune:
        kind = PRUNE
    else:
        kind = CHANGE
    if kind != GROW and tree.var[0] < 0:
        kind = GROW

    if kind == GROW:
        leaves = tree.leaves()
        node = leaves[rng.integers(len(leaves))]
        idx = tree.leaf_indices(node)
        rule = draw_rule(idx, X, rng)
        if rule is None:
            return TreeProposal(GROW, node, valid=False)
        var, cut = rule
        lo, hi = _partition(idx, X, var, cut)
        return TreeProposal(GROW, node, var, cut, lo, hi, valid=lo.size > 0 and hi.size > 0)

    nodes = tree.singly_internal()
    node = nodes[rng.integers(len(nodes))]
    old_lo = tree.leaf_indices(tree.left[node])
    old_hi = tree.leaf_indices(tree.right[node])
    if kind == PRUNE:
        return TreeProposal(PRUNE, node, old_left_idx=old_lo, old_right_idx=old_hi)
    idx = np.sort(np.concatenate([old_lo, old_hi]))
    rule = draw_rule(idx, X, rng)
    if rule is None:
        return TreeProposal(CHANGE, node, old_left_idx=old_lo, old_right_idx=old_hi, valid=False)
    var, cut = rule
    lo, hi = _partition(idx, X, var, cut)
    return TreeProposal(CHANGE, node, var, cut, lo, hi, old_lo, old_hi, valid=lo.size > 0 and hi.size > 0)


# -- likelihood pieces ----------------------------------------------------------


def leaf_stats(R, sigma_sq) -> tuple[float, float]:
    """Precision total and precision-weighted residual total of a leaf."""
    prec = 1.0 / np.asarray(sigma_sq, dtype=float)
    return float(prec.sum()), float(np.asarray(R, dtype=float) @ prec)


def _reduced_loglik(S: float, T: float, sigma_mu_sq: float) -> float:
    # the part of the integrated leaf likelihood that depends on the partition
    # factored so that sigma_mu_sq * T * T cannot overflow on its own
    return -0.5 * math.log1p(sigma_mu_sq * S) + 0.5 * (sigma_mu_sq * T) * (T / (1.0 + sigma_mu_sq * S))


def marginal_leaf_loglik(R, sigma_sq, sigma_mu_sq: float) -> float:
    """Log of the leaf likelihood with its mean integrated out.

    ``R_i ~ N(mu, sigma_sq_i)`` independently, ``mu ~ N(0, sigma_mu_sq)``.
    """
    R = np.asarray(R, dtype=float)
    s2 = np.asarray(sigma_sq, dtype=float)
    if R.size == 0:
        return 0.0
    prec = 1.0 / s2
    S = prec.sum()
    T = R @ prec
    out = (
        -0.5 * (R.size * _LOG_2PI + math.log1p(sigma_mu_sq * S) + np.log(s2).sum())
        + 0.5 * ((sigma_mu_sq * T) * (T / (1.0 + sigma_mu_sq * S)) - (R * R) @ prec)
    )
    if not math.isfinite(out):
        raise FloatingPointError("non-finite marginal leaf likelihood")
    return float(out)


def grow_loglik_ratio(parent_data, left_data, right_data, sigma_mu_sq: float) -> float:
    """Log likelihood ratio of splitting a leaf; each argument is ``(R, sigma_sq)``."""
    if len(left_data[0]) == 0 or len(right_data[0]) == 0:
        raise ValueError("GROW with an empty child")
    return grow_loglik_ratio_from_stats(
        leaf_stats(*parent_data), leaf_stats(*left_data), leaf_stats(*right_data), sigma_mu_sq
    )


def grow_loglik_ratio_from_stats(parent, left, right, sigma_mu_sq: float) -> float:
    return (
        _reduced_loglik(*left, sigma_mu_sq)
        + _reduced_loglik(*right, sigma_mu_sq)
        - _reduced_loglik(*parent, sigma_mu_sq)
    )


def change_loglik_ratio(old_left, old_right, new_left, new_right, sigma_mu_sq: float) -> float:
    """Log likelihood ratio of replacing a singly-internal node's rule."""
    if any(len(d[0]) == 0 for d in (old_left, old_right, new_left, new_right)):
        raise ValueError("CHANGE with an empty child")
    return change_loglik_ratio_from_stats(
        *(leaf_stats(*d) for d in (old_left, old_right, new_left, new_right)), sigma_mu_sq
    )


def change_loglik_ratio_from_stats(old_left, old_right, new_left, new_right, sigma_mu_sq: float) -> float:
    return (
        _reduced_loglik(*new_left, sigma_mu_sq)
        + _reduced_loglik(*new_right, sigma_mu_sq)
        - _reduced_loglik(*old_left, sigma_mu_sq)
        - _reduced_loglik(*old_right, sigma_mu_sq)
    )


# -- transition and prior ratios ----------------------------------------------


def split_prob(depth: int, alpha: float, beta: float, max_depth: int | None = None) -> float:
    if max_depth is not None and depth >= max_depth:
        return 0.0
    return alpha * (1.0 + depth) ** -beta


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _grow_w2(tree: RegressionTree, leaf: int) -> int:
    """Number of singly-internal nodes after splitting ``leaf``."""
    w2 = len(tree.singly_internal()) + 1
    parent = tree.parent[leaf]
    if parent >= 0:
        sibling = tree.right[parent] if tree.left[parent] == leaf else tree.left[parent]
        if tree.var[sibling] < 0:
            w2 -= 1
    return w2


def log_transition_ratio(proposal: TreeProposal, tree: RegressionTree, proposal_probs) -> float:
    """log q(T* -> T) - log q(T -> T*), excluding the rule-draw terms.

    ``tree`` is the current (unmodified) tree. A single-leaf tree proposes
    GROW with probability one.
    """
    p_grow, p_prune, _ = proposal_probs
    if proposal.kind == CHANGE:
        return 0.0
    b = tree.n_leaves
    if proposal.kind == GROW:
        p_forward = 1.0 if b == 1 else p_grow
        return _log(p_prune) - _log(p_forward) + math.log(b) - math.log(_grow_w2(tree, proposal.node))
    w2 = len(tree.singly_internal())
    p_back = 1.0 if proposal.node == 0 else p_grow
    return _log(p_back) - _log(p_prune) + math.log(w2) - math.log(b - 1)


def log_tree_structure_ratio(
    proposal: TreeProposal, tree: RegressionTree, alpha: float, beta: float, max_depth: int | None = None
) -> float:
    """log P(T*) - log P(T) under the depth prior, excluding rule terms."""
    if proposal.kind == CHANGE:
        return 0.0
    d = tree.depth[proposal.node]
    p_here = split_prob(d, alpha, beta, max_depth)
    p_child = split_prob(d + 1, alpha, beta, max_depth)
    grow = _log(p_here) + 2 * math.log1p(-p_child) - math.log1p(-p_here)
    return grow if proposal.kind == GROW else -grow


def proposal_loglik_ratio(proposal: TreeProposal, residuals: np.ndarray, prec: np.ndarray, sigma_mu_sq: float) -> float:
    """Likelihood ratio of a valid proposal from residuals and precisions."""
    rw = residuals * prec

    def stats(idx):
        return float(prec[idx].sum()), float(rw[idx].sum())

    if proposal.kind == GROW:
        lo, hi = stats(proposal.left_idx), stats(proposal.right_idx)
        parent = (lo[0] + hi[0], lo[1] + hi[1])
        return grow_loglik_ratio_from_stats(parent, lo, hi, sigma_mu_sq)
    old_lo, old_hi = stats(proposal.old_left_idx), stats(proposal.old_right_idx)
    if proposal.kind == PRUNE:
        parent = (old_lo[0] + old_hi[0], old_lo[1] + old_hi[1])
        return -grow_loglik_ratio_from_stats(parent, old_lo, old_hi, sigma_mu_sq)
    return change_loglik_ratio_from_stats(
        old_lo, old_hi, stats(proposal.left_idx), stats(proposal.right_idx), sigma_mu_sq
    )


def proposal_log_ratio(proposal, tree, residuals, prec, hyper) -> float:
    """Full log Metropolis-Hastings ratio (transition + likelihood + structure)."""
    if not proposal.valid:
        return -math.inf
    structure = log_tree_structure_ratio(proposal, tree, hyper.alpha, hyper.beta, hyper.max_depth)
    transition = log_transition_ratio(proposal, tree, hyper.proposal_probs)
    if structure == -math.inf or transition == -math.inf:
        return -math.inf
    return transition + structure + proposal_loglik_ratio(proposal, residuals, prec, hyper.sigma_mu_sq)


def apply_proposal(tree: RegressionTree, proposal: TreeProposal):
    if proposal.kind == GROW:
        tree.split(proposal.node, proposal.var, proposal.cut, proposal.left_idx, proposal.right_idx)
    elif proposal.kind == PRUNE:
        tree.collapse(proposal.node)
    else:
        tree.rewire(proposal.node, proposal.var, proposal.cut, proposal.left_idx, proposal.right_idx)


def mh_accept_tree(
    tree: RegressionTree,
    proposal: TreeProposal,
    residuals: np.ndarray,
    sigma_sq_i: np.ndarray,
    hyper,
    rng: np.random.Generator,
    prec: np.ndarray | None = None,
) -> tuple[bool, RegressionTree]:
    """Accept or reject ``proposal`` against the partial residuals.

    Accepts when a uniform draw is at most the ratio; the tree is modified
    in place only on acceptance. ``prec`` (``1 / sigma_sq_i``) may be
    passed to avoid recomputing it.
    """
    if prec is None:
        prec = 1.0 / sigma_sq_i
    log_r = proposal_log_ratio(proposal, tree, residuals, prec, hyper)
    if log_r == -math.inf or math.isnan(log_r):
        return False, tree
    u = rng.random()
    if log_r >= 0 or (u > 0 and math.log(u) <= log_r):
        apply_proposal(tree, proposal)
        return True, tree
    return False, tree
