"""Gibbs sampler orchestration, posterior draw storage and serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, ScalingTransform, VarianceBasis
from .errors import CorruptModelError, ModelVersionError
from .priors import Hyperparams
from .samplers import GammaProposalContext, VarianceState, draw_gamma, draw_sigma_sq, leaf_posterior
from .trees import MOVES, RegressionTree, mh_accept_tree, propose

FORMAT_NAME = "hbart-posterior"
FORMAT_VERSION = 1


@dataclass
class MoveCounts:
    proposed: dict = field(default_factory=lambda: dict.fromkeys(MOVES, 0))
    accepted: dict = field(default_factory=lambda: dict.fromkeys(MOVES, 0))
    gamma_proposed: int = 0
    gamma_accepted: int = 0

    def merge(self, other: MoveCounts):
        for k in MOVES:
            self.proposed[k] += other.proposed[k]
            self.accepted[k] += other.accepted[k]
        self.gamma_proposed += other.gamma_proposed
        self.gamma_accepted += other.gamma_accepted

    def rates(self) -> dict:
        out = {k: (self.accepted[k] / self.proposed[k] if self.proposed[k] else None) for k in MOVES}
        out["gamma"] = self.gamma_accepted / self.gamma_proposed if self.gamma_proposed else None
        return out

    def to_dict(self) -> dict:
        return {
            "proposed": dict(self.proposed),
            "accepted": dict(self.accepted),
            "gamma_proposed": self.gamma_proposed,
            "gamma_accepted": self.gamma_accepted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MoveCounts:
        return cls(dict(d["proposed"]), dict(d["accepted"]), d["gamma_proposed"], d["gamma_accepted"])


@dataclass
class ChainState:
    """Everything that changes during one chain.

    ``fits[t]`` caches tree ``t``'s in-sample fit and ``eps`` is the full
    residual ``y_scaled - fits.sum(0)``.
    """

    trees: list[RegressionTree]
    variance: VarianceState
    fits: np.ndarray
    eps: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    counts: MoveCounts = field(default_factory=MoveCounts)


class Sampler:
    """Binds a dataset and resolved hyperparameters to the Gibbs updates."""

    def __init__(self, dataset: Dataset, hyper: Hyperparams):
        if not hyper.resolved:
            hyper = hyper.resolve(dataset)
        self.data = dataset
        self.hyper = hyper
        self.X = np.ascontiguousarray(dataset.X)
        self.z_center = dataset.Z.mean(axis=0) if hyper.center_z else np.zeros(dataset.k)
        self.Z = np.ascontiguousarray(dataset.Z - self.z_center)
        self.y = dataset.y_scaled
        self.ctx = None if hyper.pin_gamma else GammaProposalContext(self.Z, hyper.Sigma_diag)

    def init_chain(self, seed) -> ChainState:
        h = self.hyper
        rng = np.random.default_rng(seed)
        n = self.data.n
        sigma_sq = h.nu * h.lam / (h.nu - 2) if h.nu > 2 else h.lam
        variance = VarianceState.build(sigma_sq, np.zeros(self.data.k), self.Z)
        trees = [RegressionTree(n) for _ in range(h.m)]
        return ChainState(trees, variance, np.zeros((h.m, n)), self.y.copy(), rng)

    def update_tree(self, state: ChainState, t: int, prec: np.ndarray):
        """Structure step then leaf draws for tree ``t`` (backfitting)."""
        h = self.hyper
        tree = state.trees[t]
        resid = state.eps + state.fits[t]
        proposal = propose(tree, state.rng, h.proposal_probs, self.X)
        accepted, tree = mh_accept_tree(tree, proposal, resid, state.variance.sigma_sq_i, h, state.rng, prec)
        state.counts.proposed[proposal.kind] += 1
        state.counts.accepted[proposal.kind] += accepted

        size = len(tree.var)
        S = np.bincount(tree.leaf_of, weights=prec, minlength=size)
        T = np.bincount(tree.leaf_of, weights=resid * prec, minlength=size)
        leaves = tree.leaves()
        mean, var = leaf_posterior(S[leaves], T[leaves], h.sigma_mu_sq)
        draws = mean + np.sqrt(var) * state.rng.standard_normal(len(leaves))
        mu = tree.mu
        for leaf, value in zip(leaves, draws):
            mu[leaf] = float(value)
        fit = np.asarray(mu)[tree.leaf_of]
        state.fits[t] = fit
        state.eps = resid - fit

    def update_variance(self, state: ChainState):
        h = self.hyper
        v = state.variance
        sigma_sq = draw_sigma_sq(state.eps, v.gamma, self.Z, h.nu, h.lam, state.rng)
        v.update(self.Z, sigma_sq=sigma_sq)
        if not h.pin_gamma:
            _, accepted = draw_gamma(v, state.eps, self.Z, h, self.ctx, state.rng)
            state.counts.gamma_proposed += 1
            state.counts.gamma_accepted += accepted

    def run_iteration(self, state: ChainState) -> ChainState:
        prec = 1.0 / state.variance.sigma_sq_i
        for t in range(self.hyper.m):
            self.update_tree(state, t, prec)
        # drop accumulated rounding in the residual cache
        state.eps = self.y - state.fits.sum(axis=0)
        self.update_variance(state)
        state.iteration += 1
        return state

    def raw_sigma_sq(self, state: ChainState) -> float:
        """Intercept variance for the uncentered Z."""
        v = state.variance
        return float(v.sigma_sq * np.exp(-(self.z_center @ v.gamma)))

    def run_chain(self, seed, n_iter: int, n_burn: int, callback=None) -> tuple[list, MoveCounts]:
        """Run one chain; returns retained ``(trees, sigma_sq, gamma)`` records
        with sigma_sq on the raw-Z parametrization."""
        state = self.init_chain(seed)
        kept = []
        for it in range(n_iter):
            self.run_iteration(state)
            if callback is not None:
                callback(state)
            if it >= n_burn:
                kept.append(
                    (
                        [t.to_preorder() for t in state.trees],
                        self.raw_sigma_sq(state),
                        state.variance.gamma.copy(),
                    )
                )
        return kept, state.counts


def init_chain(dataset: Dataset, hyper: Hyperparams, seed) -> ChainState:
    return Sampler(dataset, hyper).init_chain(seed)


def run_iteration(sampler: Sampler, state: ChainState) -> ChainState:
    return sampler.run_iteration(state)


class Forest:
    """Flattened pre-order storage of every retained tree.

    Node arrays are concatenated over draws and trees; ``roots[d, t]`` is
    the first node of tree ``t`` in draw ``d`` and ``right[i]`` the index of
    node ``i``'s right child (its left child is ``i + 1``).
    """

    def __init__(self, records: list[list[list[list]]]):
        var, cut, mu, roots = [], [], [], []
        for forest in records:
            row = []
            for tree in forest:
                row.append(len(var))
                for node in tree:
                    if len(node) == 1:
                        var.append(-1)
                        cut.append(0.0)
                        mu.append(node[0])
                    else:
                        var.append(node[0])
                        cut.append(node[1])
                        mu.append(0.0)
            roots.append(row)
        self.records = records
        self.var = np.asarray(var, dtype=np.intp)
        self.cut = np.asarray(cut, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.roots = np.asarray(roots, dtype=np.intp)
        self.right, self.depth = self._link()

    def _link(self):
        var = self.var.tolist()
        n = len(var)
        right = [-1] * n
        sizes = []  # subtree sizes of completed subtrees, scanning backwards
        for i in range(n - 1, -1, -1):
            if var[i] < 0:
                sizes.append(1)
            else:
                left_size = sizes.pop()
                right_size = sizes.pop()
                right[i] = i + 1 + left_size
                sizes.append(1 + left_size + right_size)
        depth = [0] * n
        for i in range(n):
            if var[i] >= 0:
                depth[i + 1] = depth[right[i]] = depth[i] + 1
        return np.asarray(right, dtype=np.intp), np.asarray(depth, dtype=np.intp)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if self.depth.size else 0

    def predict(self, X: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Sum-of-trees value for every (draw, row) pair, on the scaled response."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        XT = np.ascontiguousarray(X.T)
        D, m = self.roots.shape
        q = X.shape[0]
        out = np.empty((D, q))
        cols = np.arange(q)
        steps = self.max_depth
        for start in range(0, D, chunk):
            roots = self.roots[start : start + chunk]
            node = np.repeat(roots[:, :, None], q, axis=2)
            for _ in range(steps):
                v = self.var[node]
                inner = v >= 0
                if not inner.any():
                    break
                x = XT[np.where(inner, v, 0), cols]
                nxt = np.where(x < self.cut[node], node + 1, self.right[node])
                node = np.where(inner, nxt, node)
            out[start : start + chunk] = self.mu[node].sum(axis=1)
        return out


class PosteriorDraws:
    """Retained Gibbs draws plus everything needed to predict from them."""

    def __init__(
        self,
        trees: list,
        sigma_sq,
        gamma,
        scaling: ScalingTransform,
        hyper: Hyperparams,
        x_names,
        z_names,
        basis: VarianceBasis | None = None,
        response_name: str = "y",
        counts: MoveCounts | None = None,
        chain: list | None = None,
        seed=None,
        sigma_sq_trace=None,
    ):
        self.trees = trees
        self.sigma_sq = np.asarray(sigma_sq, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float).reshape(len(self.sigma_sq), -1)
        self.scaling = scaling
        self.hyper = hyper
        self.x_names = list(x_names)
        self.z_names = list(z_names)
        self.basis = basis
        self.response_name = response_name
        self.counts = counts or MoveCounts()
        self.chain = list(chain) if chain is not None else [0] * len(self.sigma_sq)
        self.seed = seed
        self.sigma_sq_trace = None if sigma_sq_trace is None else np.asarray(sigma_sq_trace, dtype=float)
        self._forest = None

    def __len__(self):
        return len(self.sigma_sq)

    @property
    def forest(self) -> Forest:
        if self._forest is None:
            self._forest = Forest(self.trees)
        return self._forest

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "seed": self.seed,
            "response_name": self.response_name,
            "x_names": self.x_names,
            "z_names": self.z_names,
            "scaling": {"y_min": self.scaling.y_min, "y_max": self.scaling.y_max},
            "hyperparams": self.hyper.to_dict(),
            "variance_design": None if self.basis is None else self.basis.to_dict(),
            "diagnostics": self.counts.to_dict(),
            "sigma_sq_trace": None if self.sigma_sq_trace is None else self.sigma_sq_trace.tolist(),
            "draws": {
                "chain": self.chain,
                "sigma_sq": self.sigma_sq.tolist(),
                "gamma": self.gamma.tolist(),
                "trees": self.trees,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> PosteriorDraws:
        if d.get("format") != FORMAT_NAME:
            raise CorruptModelError("not an hbart posterior file")
        if d.get("version") != FORMAT_VERSION:
            raise ModelVersionError(f"unsupported posterior file version {d.get('version')!r}")
        try:
            draws = d["draws"]
            basis = d["variance_design"]
            return cls(
                draws["trees"],
                draws["sigma_sq"],
                draws["gamma"],
                ScalingTransform(d["scaling"]["y_min"], d["scaling"]["y_max"]),
                Hyperparams.from_dict(d["hyperparams"]),
                d["x_names"],
                d["z_names"],
                None if basis is None else VarianceBasis.from_dict(basis),
                d["response_name"],
                MoveCounts.from_dict(d["diagnostics"]),
                draws["chain"],
                d["seed"],
                d["sigma_sq_trace"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptModelError(f"malformed posterior file: {exc}") from exc


def fit(
    dataset: Dataset,
    hyper: Hyperparams | None = None,
    seed: int = 0,
    n_chains: int = 1,
    callback=None,
) -> PosteriorDraws:
    """Run ``n_chains`` independent chains and pool their retained draws.

    Each chain runs ``n_burn + ceil(n_post / n_chains)`` iterations from its
    own child seed; the pooled draws are cut back to exactly ``n_post``.
    """
    hyper = (hyper or Hyperparams()).resolve(dataset)
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    sampler = Sampler(dataset, hyper)
    per_chain = math.ceil(hyper.n_post / n_chains)
    seeds = np.random.SeedSequence(seed).spawn(n_chains)
    trees, sigma_sq, gamma, chain_ids = [], [], [], []
    counts = MoveCounts()
    trace = []

    def record(state):
        trace.append(sampler.raw_sigma_sq(state))
        if callback is not None:
            callback(state)

    for c, ss in enumerate(seeds):
        kept, chain_counts = sampler.run_chain(ss, hyper.n_burn + per_chain, hyper.n_burn, record)
        counts.merge(chain_counts)
        for forest, s2, g in kept:
            trees.append(forest)
            sigma_sq.append(s2)
            gamma.append(g)
            chain_ids.append(c)
    keep = hyper.n_post
    return PosteriorDraws(
        trees[:keep],
        sigma_sq[:keep],
        np.asarray(gamma[:keep]).reshape(keep, dataset.k),
        dataset.scaling,
        hyper,
        dataset.x_names,
        dataset.z_names,
        dataset.basis,
        dataset.response_name,
        counts,
        chain_ids[:keep],
        seed,
        trace,
    )


def save(draws: PosteriorDraws, path) -> None:
    text = json.dumps(draws.to_dict(), allow_nan=False, separators=(",", ":"))
    Path(path).write_text(text, encoding="utf-8")


def load(path) -> PosteriorDraws:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: corrupt posterior file ({exc})") from exc
    if not isinstance(d, dict):
        raise CorruptModelError(f"{path}: corrupt posterior file")
    return PosteriorDraws.from_dict(d)
