"""Layered Markov-chain automaton built from per-window proposition scores.

Each appended detection row becomes one layer of states, one per surviving
truth assignment over the propositions. Every state of the previous final
layer connects to every new state with the new state's branch probability, so
the chain factorizes per layer; the final layer is absorbing.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PROB_TOLERANCE = 1e-9


class AutomatonError(Exception):
    pass


class EmptyLayerError(AutomatonError):
    """All truth assignments were pruned away for one window."""


class MatrixFormatError(Exception):
    """Malformed detection-matrix file; message carries row/column context."""


@dataclass(frozen=True)
class BuildConfig:
    """Knobs for turning score rows into branch distributions."""

    label_thresholds: tuple[float, ...] = ()
    prune_epsilon: float = 1e-3
    max_branches: int = 16

    def __post_init__(self):
        if not 0.0 <= self.prune_epsilon < 1.0:
            raise ValueError(f"prune_epsilon must be in [0, 1), got {self.prune_epsilon}")
        if self.max_branches < 1:
            raise ValueError(f"max_branches must be >= 1, got {self.max_branches}")
        for theta in self.label_thresholds:
            if not 0.0 <= theta <= 1.0:
                raise ValueError(f"label threshold out of [0, 1]: {theta}")

    def threshold_for(self, pid: int) -> float:
        if pid < len(self.label_thresholds):
            return self.label_thresholds[pid]
        return 0.5


class DetectionMatrix:
    """T x n matrix of calibrated confidences plus window geometry."""

    def __init__(self, scores, window_size: int, stride: int, fps: float,
                 proposition_texts: Sequence[str] | None = None):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] < 1 or scores.shape[1] < 1:
            raise ValueError(f"scores must be a non-empty 2-D matrix, got shape {scores.shape}")
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {window_size}")
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if fps <= 0:
            raise ValueError(f"fps must be positive, got {fps}")
        self.scores = scores
        self.window_size = window_size
        self.stride = stride
        self.fps = float(fps)
        self.proposition_texts = tuple(proposition_texts or ())
        if self.proposition_texts and len(self.proposition_texts) != scores.shape[1]:
            raise ValueError(
                f"{len(self.proposition_texts)} proposition texts for "
                f"{scores.shape[1]} score columns"
            )

    @property
    def n_windows(self) -> int:
        return self.scores.shape[0]

    @property
    def n_props(self) -> int:
        return self.scores.shape[1]

    def window_span(self, t: int) -> tuple[int, int]:
        """Inclusive frame range covered by window t."""
        start = t * self.stride
        return start, start + self.window_size - 1

    @property
    def video_length(self) -> int:
        """Frame count implied by the last window."""
        return (self.n_windows - 1) * self.stride + self.window_size


def _sidecar_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_matrix(matrix: DetectionMatrix, csv_path: str | Path) -> None:
    """Write scores as CSV with header ``t,p0,p1,...`` plus a JSON sidecar."""
    csv_path = Path(csv_path)
    header = "t," + ",".join(f"p{i}" for i in range(matrix.n_props))
    lines = [header]
    for t, row in enumerate(matrix.scores):
        lines.append(f"{t}," + ",".join(repr(float(v)) for v in row))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "window_size": matrix.window_size,
        "stride": matrix.stride,
        "fps": matrix.fps,
        "proposition_texts": list(matrix.proposition_texts),
    }
    _sidecar_path(csv_path).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_matrix(csv_path: str | Path) -> DetectionMatrix:
    """Inverse of :func:`save_matrix`; scores round-trip to 1e-12."""
    csv_path = Path(csv_path)
    sidecar = _sidecar_path(csv_path)
    if not csv_path.exists():
        raise MatrixFormatError(f"matrix file not found: {csv_path}")
    if not sidecar.exists():
        raise MatrixFormatError(f"matrix sidecar not found: {sidecar}")
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MatrixFormatError(f"sidecar {sidecar}: invalid JSON ({exc})") from exc

    lines = csv_path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MatrixFormatError(f"{csv_path}: empty file")
    header = lines[0].split(",")
    if header[0] != "t" or any(not h.startswith("p") for h in header[1:]) or len(header) < 2:
        raise MatrixFormatError(f"{csv_path}: row 1: bad header {lines[0]!r}")
    n_props = len(header) - 1
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n_props + 1:
            raise MatrixFormatError(
                f"{csv_path}: row {lineno}: expected {n_props + 1} columns, got {len(cells)}"
            )
        values = []
        for col, cell in enumerate(cells[1:], start=2):
            try:
                values.append(float(cell))
            except ValueError:
                raise MatrixFormatError(
                    f"{csv_path}: row {lineno}, column {col}: not a number: {cell!r}"
                ) from None
        rows.append(values)
    if not rows:
        raise MatrixFormatError(f"{csv_path}: no score rows")
    try:
        return DetectionMatrix(
            np.array(rows, dtype=np.float64),
            window_size=int(meta["window_size"]),
            stride=int(meta["stride"]),
            fps=float(meta["fps"]),
            proposition_texts=meta.get("proposition_texts") or None,
        )
    except KeyError as exc:
        raise MatrixFormatError(f"sidecar {sidecar}: missing key {exc}") from exc


@dataclass(frozen=True)
class AutomatonState:
    index: int
    layer: int  # -1 marks the root
    labels: frozenset[int]
    branch_prob: float


class VideoAutomaton:
    """Labeled discrete-time Markov chain over detection windows.

    Immutable once handed out; :func:`build_increment` returns extended copies
    that share state objects with their prefix.
    """

    def __init__(self):
        root = AutomatonState(index=0, layer=-1, labels=frozenset(), branch_prob=1.0)
        self.states: list[AutomatonState] = [root]
        self.layers: list[list[int]] = []
        # per-state outgoing (target index, probability) edges
        self.transitions: list[list[tuple[int, float]]] = [[(0, 1.0)]]
        self.n_props = 0

    @property
    def root(self) -> AutomatonState:
        return self.states[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_states(self, t: int) -> list[AutomatonState]:
        return [self.states[i] for i in self.layers[t]]

    def _copy(self) -> "VideoAutomaton":
        clone = VideoAutomaton.__new__(VideoAutomaton)
        clone.states = list(self.states)
        clone.layers = [list(layer) for layer in self.layers]
        clone.transitions = [list(edges) for edges in self.transitions]
        clone.n_props = self.n_props
        return clone


def layer_distribution(z_row: Sequence[float], cfg: BuildConfig) -> list[tuple[frozenset[int], float]]:
    """Branch distribution over truth assignments for one score row.

    Assignment mass is the product of per-proposition scores (independence
    within the window); zero-mass and below-epsilon assignments are dropped,
    the ``max_branches`` heaviest survive, and the rest renormalizes to 1.
    Order is deterministic: descending mass, ties by label-set tuple.
    """
    z = np.asarray(z_row, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise ValueError("score row must be a non-empty vector")
    if np.any(z < 0.0) or np.any(z > 1.0):
        raise ValueError("scores must lie in [0, 1]")
    n = z.size
    candidates: list[tuple[frozenset[int], float]] = []
    for bits in itertools.product((False, True), repeat=n):
        mass = 1.0
        for i, on in enumerate(bits):
            mass *= z[i] if on else 1.0 - z[i]
        if mass <= 0.0 or mass < cfg.prune_epsilon:
            continue
        labels = frozenset(i for i, on in enumerate(bits) if on)
        candidates.append((labels, float(mass)))
    if not candidates:
        raise EmptyLayerError(
            f"all {2 ** n} assignments pruned (epsilon={cfg.prune_epsilon}, "
            f"max_branches={cfg.max_branches})"
        )
    candidates.sort(key=lambda item: (-item[1], tuple(sorted(item[0]))))
    kept = candidates[: cfg.max_branches]
    total = sum(mass for _, mass in kept)
    return [(labels, mass / total) for labels, mass in kept]


def build_increment(auto: VideoAutomaton | None, z_row: Sequence[float],
                    cfg: BuildConfig) -> VideoAutomaton:
    """Append one layer for a score row; the input automaton is not modified."""
    new = VideoAutomaton() if auto is None else auto._copy()
    branches = layer_distribution(z_row, cfg)
    new.n_props = max(new.n_props, len(z_row))
    prev_final = new.layers[-1] if new.layers else [0]
    t = len(new.layers)
    layer_indices = []
    for labels, prob in branches:
        idx = len(new.states)
        new.states.append(AutomatonState(index=idx, layer=t, labels=labels, branch_prob=prob))
        new.transitions.append([(idx, 1.0)])  # absorbing until the next layer arrives
        layer_indices.append(idx)
    for prev_idx in prev_final:
        new.transitions[prev_idx] = [(idx, new.states[idx].branch_prob) for idx in layer_indices]
    new.layers.append(layer_indices)
    return new


def build_from_rows(rows: Iterable[Sequence[float]], cfg: BuildConfig) -> VideoAutomaton:
    auto: VideoAutomaton | None = None
    for row in rows:
        auto = build_increment(auto, row, cfg)
    if auto is None:
        auto = VideoAutomaton()
    return auto


def build_from_matrix(matrix: DetectionMatrix, cfg: BuildConfig) -> VideoAutomaton:
    return build_from_rows(matrix.scores, cfg)


def validate(auto: VideoAutomaton) -> list[str]:
    """Invariant violations as human-readable strings; empty means valid."""
    violations: list[str] = []
    if auto.states[0].layer != -1 or auto.states[0].labels:
        violations.append("state 0: root must have layer -1 and an empty label set")
    seen: set[int] = set()
    for t, layer in enumerate(auto.layers):
        mass = 0.0
        for idx in layer:
            state = auto.states[idx]
            if state.layer != t:
                violations.append(f"state {idx}: recorded layer {state.layer}, found in layer {t}")
            if idx in seen:
                violations.append(f"state {idx}: belongs to more than one layer")
            seen.add(idx)
            if not 0.0 < state.branch_prob <= 1.0:
                violations.append(f"state {idx}: branch probability {state.branch_prob} outside (0, 1]")
            mass += state.branch_prob
        if abs(mass - 1.0) > PROB_TOLERANCE:
            violations.append(f"layer {t}: branch probabilities sum to {mass!r}, not 1")
    for idx in range(1, len(auto.states)):
        if idx not in seen:
            violations.append(f"state {idx}: belongs to no layer")

    last = len(auto.layers) - 1
    final_indices = set(auto.layers[last]) if auto.layers else {0}
    for idx, edges in enumerate(auto.transitions):
        state = auto.states[idx]
        if idx in final_indices or (not auto.layers and idx == 0):
            if edges != [(idx, 1.0)]:
                violations.append(f"state {idx}: final state must carry a single self-loop of 1")
            continue
        if not edges:
            violations.append(f"state {idx}: no outgoing transitions")
            continue
        out_sum = 0.0
        for target, prob in edges:
            out_sum += prob
            if not 0.0 < prob <= 1.0:
                violations.append(f"state {idx}: transition probability {prob} outside (0, 1]")
            expected_layer = state.layer + 1
            if auto.states[target].layer != expected_layer:
                violations.append(
                    f"state {idx}: transition targets layer {auto.states[target].layer}, "
                    f"expected {expected_layer}"
                )
        if abs(out_sum - 1.0) > PROB_TOLERANCE:
            violations.append(f"state {idx}: outgoing probabilities sum to {out_sum!r}, not 1")
    return violations


def boolean_trace(matrix: DetectionMatrix, cfg: BuildConfig) -> list[frozenset[int]]:
    """Thresholded label sets per window: ``{i : Z[t, i] >= theta_i}``."""
    thresholds = np.array([cfg.threshold_for(i) for i in range(matrix.n_props)])
    hits = matrix.scores >= thresholds[None, :]
    return [frozenset(np.flatnonzero(row).tolist()) for row in hits]
