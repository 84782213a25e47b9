"""Satisfaction probability, sigmoid smoothing, and witness extraction.

The checker walks the layered chain with formula progression: the value of a
residual obligation at a layer is the branch-probability-weighted value of the
progressed obligation one layer on, closed off with ``final_eval`` at the last
layer. A brute-force path enumerator provides an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .automaton import VideoAutomaton, validate
from .logic import (
    Always,
    And,
    Atom,
    Eventually,
    FalseF,
    Implies,
    Next,
    Not,
    Or,
    TLFormula,
    TrueF,
    Until,
    atoms_of,
    evaluate_trace,
    final_eval,
    progress,
    simplify,
)

PATH_BUDGET = 10**6


class CheckerError(Exception):
    pass


class InvalidAutomatonError(CheckerError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid automaton: " + "; ".join(violations))
        self.violations = violations


class PathBudgetError(CheckerError):
    """Brute-force enumeration would exceed the path budget."""


class NoSatisfyingPathError(CheckerError):
    pass


@dataclass(frozen=True)
class SmoothingParams:
    gamma: float = 50.0
    tau: float = 0.7

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")


def smooth(c: float, params: SmoothingParams) -> float:
    """Sigmoid 1 / (1 + exp(-gamma * (c - tau))), computed stably."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"probability must be in [0, 1], got {c}")
    x = params.gamma * (c - params.tau)
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class SatisfactionResult:
    probability: float
    smoothed: float
    witness: tuple[tuple[int, frozenset[int]], ...] | None
    accept_layer: int | None

    def to_json_dict(self) -> dict:
        return {
            "probability": self.probability,
            "smoothed": self.smoothed,
            "witness": None
            if self.witness is None
            else [{"window": t, "labels": sorted(labels)} for t, labels in self.witness],
            "accept_layer": self.accept_layer,
        }


def _checked(auto: VideoAutomaton, f: TLFormula) -> TLFormula:
    violations = validate(auto)
    if violations:
        raise InvalidAutomatonError(violations)
    atoms = atoms_of(f)
    if atoms and max(atoms) >= auto.n_props:
        raise CheckerError(
            f"formula references proposition {max(atoms)}, automaton has {auto.n_props}"
        )
    return simplify(f)


def _reachable_residuals(auto: VideoAutomaton, start: TLFormula) -> list[dict[TLFormula, None]]:
    """Residual obligations reachable before consuming each layer (insertion-ordered)."""
    reach: list[dict[TLFormula, None]] = [{start: None}]
    for t in range(auto.n_layers - 1):
        nxt: dict[TLFormula, None] = {}
        for psi in reach[t]:
            for state in auto.layer_states(t):
                nxt.setdefault(progress(psi, state.labels), None)
        reach.append(nxt)
    return reach


def satisfaction_probability(auto: VideoAutomaton, f: TLFormula) -> float:
    """Probability mass of label traces satisfying ``f`` (root label excluded).

    Transition probabilities factor through the target's branch probability,
    so the per-state dynamic program collapses to one value per (layer,
    residual obligation) pair.
    """
    f = _checked(auto, f)
    if auto.n_layers == 0:
        return 1.0 if final_eval(f) else 0.0
    reach = _reachable_residuals(auto, f)
    last = auto.n_layers - 1
    table: dict[TLFormula, float] = {}
    for t in range(last, -1, -1):
        states = auto.layer_states(t)
        prev: dict[TLFormula, float] = {}
        for psi in reach[t]:
            value = 0.0
            for state in states:
                residual = progress(psi, state.labels)
                if t == last:
                    value += state.branch_prob * (1.0 if final_eval(residual) else 0.0)
                else:
                    value += state.branch_prob * table[residual]
            prev[psi] = value
        table = prev
    return table[f]


def _eval_batch(f: TLFormula, labels: np.ndarray) -> np.ndarray:
    """Direct finite-trace semantics over a [paths, positions, props] bool array."""
    n_paths, horizon, _ = labels.shape
    true_vec = np.ones(n_paths, dtype=bool)
    false_vec = np.zeros(n_paths, dtype=bool)
    memo: dict[tuple[int, int], np.ndarray] = {}

    def holds(node: TLFormula, i: int) -> np.ndarray:
        key = (id(node), i)
        if key in memo:
            return memo[key]
        if isinstance(node, TrueF):
            out = true_vec
        elif isinstance(node, FalseF):
            out = false_vec
        elif isinstance(node, Atom):
            out = labels[:, i, node.pid] if i < horizon else false_vec
        elif isinstance(node, Not):
            out = ~holds(node.sub, i)
        elif isinstance(node, And):
            out = holds(node.left, i) & holds(node.right, i)
        elif isinstance(node, Or):
            out = holds(node.left, i) | holds(node.right, i)
        elif isinstance(node, Implies):
            out = ~holds(node.left, i) | holds(node.right, i)
        elif isinstance(node, Next):
            out = holds(node.sub, i + 1) if i < horizon else false_vec
        elif isinstance(node, Eventually):
            out = false_vec.copy()
            for j in range(i, horizon):
                out |= holds(node.sub, j)
        elif isinstance(node, Always):
            out = true_vec.copy()
            for j in range(i, horizon):
                out &= holds(node.sub, j)
        elif isinstance(node, Until):
            out = false_vec.copy()
            prefix = true_vec.copy()
            for j in range(i, horizon):
                out |= prefix & holds(node.right, j)
                prefix = prefix & holds(node.left, j)
        else:
            raise TypeError(f"not a formula node: {node!r}")
        memo[key] = out
        return out

    return holds(f, 0)


def brute_force_probability(auto: VideoAutomaton, f: TLFormula) -> float:
    """Independent oracle: enumerate every root-to-final path and sum the
    probabilities of those whose label trace satisfies ``f`` under direct
    finite-trace semantics (no progression, no simplification)."""
    _checked(auto, f)
    if auto.n_layers == 0:
        return 1.0 if evaluate_trace(f, ()) else 0.0
    branch_counts = [len(layer) for layer in auto.layers]
    n_paths = math.prod(branch_counts)
    if n_paths > PATH_BUDGET:
        raise PathBudgetError(f"{n_paths} paths exceed the budget of {PATH_BUDGET}")

    n_props = max(auto.n_props, 1)
    grids = np.meshgrid(*[np.arange(b) for b in branch_counts], indexing="ij")
    choice = np.stack([g.reshape(-1) for g in grids], axis=1)  # [paths, layers]

    probs = np.ones(n_paths, dtype=np.float64)
    labels = np.zeros((n_paths, auto.n_layers, n_props), dtype=bool)
    for t, layer in enumerate(auto.layers):
        layer_probs = np.array([auto.states[i].branch_prob for i in layer])
        layer_labels = np.zeros((len(layer), n_props), dtype=bool)
        for b, idx in enumerate(layer):
            for pid in auto.states[idx].labels:
                layer_labels[b, pid] = True
        probs *= layer_probs[choice[:, t]]
        labels[:, t, :] = layer_labels[choice[:, t]]

    satisfied = _eval_batch(f, labels)
    return float(probs[satisfied].sum())


def extract_witness(auto: VideoAutomaton, f: TLFormula) -> tuple[tuple[tuple[int, frozenset[int]], ...], int]:
    """Maximal-probability satisfying path and the layer where it accepted.

    Same dynamic program as :func:`satisfaction_probability` with max in place
    of the sum; ties break toward the lower state index. The accept layer is
    the first window whose consumed label turns the obligation into True, or
    the last layer when acceptance only happens at trace end.
    """
    f = _checked(auto, f)
    if auto.n_layers == 0:
        raise NoSatisfyingPathError("automaton has no layers")
    reach = _reachable_residuals(auto, f)
    last = auto.n_layers - 1
    # tables[t][psi] = (best suffix value, chosen state index)
    tables: list[dict[TLFormula, tuple[float, int]]] = [dict() for _ in range(auto.n_layers)]
    for t in range(last, -1, -1):
        states = auto.layer_states(t)
        for psi in reach[t]:
            best_value = -1.0
            best_state = -1
            for state in states:
                residual = progress(psi, state.labels)
                if t == last:
                    value = state.branch_prob * (1.0 if final_eval(residual) else 0.0)
                else:
                    value = state.branch_prob * tables[t + 1][residual][0]
                if value > best_value:
                    best_value = value
                    best_state = state.index
            tables[t][psi] = (best_value, best_state)
    if tables[0][f][0] <= 0.0:
        raise NoSatisfyingPathError("no satisfying path")

    path: list[tuple[int, frozenset[int]]] = []
    accept_layer: int | None = None
    residual = f
    for t in range(auto.n_layers):
        _, state_idx = tables[t][residual]
        labels = auto.states[state_idx].labels
        path.append((t, labels))
        residual = progress(residual, labels)
        if accept_layer is None and isinstance(residual, TrueF):
            accept_layer = t
    if accept_layer is None:
        accept_layer = last
    return tuple(path), accept_layer


class CheckSession:
    """Incremental satisfaction over a chain built layer by layer.

    Instead of re-walking the prefix on every window, the session carries the
    probability distribution of residual obligations and advances it one
    progression step per consumed layer. The probability after consuming t
    layers equals :func:`satisfaction_probability` on the t-layer automaton.
    """

    def __init__(self, f: TLFormula):
        self.formula = simplify(f)
        self.distribution: dict[TLFormula, float] = {self.formula: 1.0}
        self.n_layers = 0

    def consume(self, branches) -> float:
        """Advance past one layer given its (label set, probability) branches."""
        advanced: dict[TLFormula, float] = {}
        for psi, mass in self.distribution.items():
            for labels, prob in branches:
                residual = progress(psi, labels)
                advanced[residual] = advanced.get(residual, 0.0) + mass * prob
        self.distribution = advanced
        self.n_layers += 1
        return self.probability

    @property
    def probability(self) -> float:
        return sum(mass for psi, mass in self.distribution.items() if final_eval(psi))


def check(auto: VideoAutomaton, f: TLFormula,
          smoothing: SmoothingParams = SmoothingParams()) -> SatisfactionResult:
    """Bundle probability, smoothed score, and witness into one result."""
    probability = satisfaction_probability(auto, f)
    witness = None
    accept_layer = None
    if probability > 0.0 and auto.n_layers > 0:
        witness, accept_layer = extract_witness(auto, f)
    return SatisfactionResult(
        probability=probability,
        smoothed=smooth(probability, smoothing),
        witness=witness,
        accept_layer=accept_layer,
    )
