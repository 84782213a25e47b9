"""The retrieval loop: build the chain window by window, stop once the
smoothed satisfaction crosses the threshold, then turn the witness into a
trimmed, extended frame interval plus the frames to hand to the answerer.

The loop searches for the specification anywhere in the consumed prefix, so
the user formula phi is checked as "eventually phi"; the raw interval runs
from the first witness window carrying a relevant label to the window where
the obligation discharged.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .automaton import build_increment, layer_distribution
from .checker import (
    CheckSession,
    SatisfactionResult,
    extract_witness,
    smooth,
)
from .clients import ChatMessage, ChatRequest, FrameWindow, load_prompt
from .config import PipelineConfig
from .logic import Eventually, PropositionSet, TLFormula, atoms_of, render

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


@dataclass(frozen=True)
class Interval:
    """Inclusive frame range; seconds are always derived from frames."""

    start_frame: int
    end_frame: int
    fps: float

    def __post_init__(self):
        if self.start_frame < 0 or self.start_frame > self.end_frame:
            raise ValueError(f"bad interval [{self.start_frame}, {self.end_frame}]")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def start_s(self) -> float:
        return self.start_frame / self.fps

    @property
    def end_s(self) -> float:
        return self.end_frame / self.fps

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    def contains(self, other: "Interval") -> bool:
        return self.start_frame <= other.start_frame and other.end_frame <= self.end_frame

    def to_json_dict(self) -> dict:
        return {
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "start_s": self.start_s,
            "end_s": self.end_s,
        }


@dataclass(frozen=True)
class ExtensionSpans:
    """Frame offsets around the raw interval: alpha <= 0 (backward), beta >= 0."""

    alpha: int
    beta: int

    def __post_init__(self):
        if self.alpha > 0:
            raise ValueError(f"alpha extends backward and must be <= 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta extends forward and must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class VideoMeta:
    length_frames: int
    fps: float
    # printf-style pattern for on-disk frame images, e.g. "frames/%06d.jpg"
    frame_template: str | None = None

    def frame_paths(self, start: int, count: int) -> tuple[str, ...]:
        if self.frame_template is None:
            return ()
        return tuple(self.frame_template % i for i in range(start, start + count))


@dataclass(frozen=True)
class RetrievalResult:
    interval: Interval | None
    raw_interval: Interval | None
    satisfaction: SatisfactionResult
    stop_layer: int
    early_stopped: bool
    sampled_frames: tuple[int, ...]
    question: str
    formula_text: str
    proposition_texts: tuple[str, ...]
    diagnostic: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "question": self.question,
            "formula": self.formula_text,
            "propositions": list(self.proposition_texts),
            "interval": None if self.interval is None else self.interval.to_json_dict(),
            "raw_interval": None
            if self.raw_interval is None
            else self.raw_interval.to_json_dict(),
            "satisfaction": self.satisfaction.to_json_dict(),
            "stop_layer": self.stop_layer,
            "early_stopped": self.early_stopped,
            "sampled_frames": list(self.sampled_frames),
            "diagnostic": self.diagnostic,
        }


def window_count(length_frames: int, window_size: int, stride: int) -> int:
    if length_frames < window_size:
        raise PipelineError(
            f"video of {length_frames} frames is shorter than one window ({window_size})"
        )
    return (length_frames - window_size) // stride + 1


def extract_interval(witness, relevant_props: frozenset[int], accept_layer: int,
                     window_size: int, stride: int, fps: float) -> Interval:
    """Frame interval spanned by the witness, per the window geometry.

    Starts at the first witness window whose labels touch the specification's
    propositions and ends at the accepting window. A witness with no relevant
    labels (degenerate specification) falls back to the full witness span.
    """
    if not witness:
        raise PipelineError("witness must be non-empty")
    t_start = None
    for t, labels in witness:
        if labels & relevant_props:
            t_start = t
            break
    if t_start is None:
        t_start = witness[0][0]
        t_end = witness[-1][0]
    else:
        t_end = accept_layer
        t_start = min(t_start, t_end)
    return Interval(
        start_frame=t_start * stride,
        end_frame=t_end * stride + window_size - 1,
        fps=fps,
    )


_EXTENSION_REPLY_RE = re.compile(r"alpha\s*=\s*(-?\d+)\s+beta\s*=\s*(-?\d+)")


def _keyword_spans(question: str, defaults: ExtensionSpans, unit: int) -> ExtensionSpans:
    text = question.lower()
    has_after = re.search(r"\bafter\b", text) is not None
    has_before = re.search(r"\bbefore\b", text) is not None
    if has_after and has_before:
        return ExtensionSpans(alpha=-2 * unit, beta=2 * unit)
    if has_after:
        return ExtensionSpans(alpha=0, beta=2 * unit)
    if has_before:
        return ExtensionSpans(alpha=-2 * unit, beta=0)
    return defaults


def infer_extension(question: str, llm, defaults: ExtensionSpans, *,
                    unit: int) -> ExtensionSpans:
    """Extension spans from an LLM when available, else the keyword rule.

    ``unit`` is one window worth of frames (window_size * stride); temporal
    keywords extend by two units on the matching side.
    """
    if llm is None:
        return _keyword_spans(question, defaults, unit)
    prompt = load_prompt("extension.txt").format(question=question)
    try:
        reply = llm.complete(
            ChatRequest(model="", messages=(ChatMessage("user", prompt),), max_tokens=32)
        )
        match = _EXTENSION_REPLY_RE.search(reply.text)
        if match is None:
            raise ValueError(f"no alpha/beta line in {reply.text!r}")
        return ExtensionSpans(alpha=int(match.group(1)), beta=int(match.group(2)))
    except Exception as exc:
        logger.warning("extension reply unusable (%s); using keyword rule", exc)
        return _keyword_spans(question, defaults, unit)


def trim_and_sample(interval: Interval, spans: ExtensionSpans, video_length: int,
                    budget: int) -> tuple[Interval, tuple[int, ...]]:
    """Clamp the extended interval into the video and pick evenly spaced frames."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    start = max(0, interval.start_frame + spans.alpha)
    end = min(video_length - 1, interval.end_frame + spans.beta)
    extended = Interval(start_frame=start, end_frame=end, fps=interval.fps)
    length = extended.n_frames
    if length <= budget:
        frames = tuple(range(start, end + 1))
    else:
        positions = np.linspace(start, end, num=budget)
        frames = tuple(int(v) for v in np.round(positions).astype(int))
    return extended, frames


def _fill_row(detector, props: PropositionSet, window: FrameWindow,
              pool: ThreadPoolExecutor | None) -> list[float]:
    # pool.map keeps proposition order, so the merge is deterministic
    if pool is not None:
        return list(pool.map(lambda p: detector.detect(p, window), props))
    return [detector.detect(p, window) for p in props]


def run_with_formula(question: str, props: PropositionSet, formula: TLFormula,
                     detector, video_meta: VideoMeta, cfg: PipelineConfig,
                     extension_llm=None) -> RetrievalResult:
    """Algorithm core: incremental build/check with early stop, then interval
    extraction, extension, trimming, and frame sampling."""
    window_size = cfg.window_size
    stride = cfg.effective_stride
    total_windows = window_count(video_meta.length_frames, window_size, stride)
    search = Eventually(formula)
    build_cfg = cfg.build_config()
    smoothing = cfg.smoothing()
    formula_text = render(formula, props)

    auto = None
    session = CheckSession(search)
    scores: list[tuple[float, float]] = []  # (mu, smoothed) per prefix
    best_t = -1
    best_auto = None
    best_smoothed = -1.0
    stop_layer = None
    pool = None
    if cfg.detector_fanout > 1 and len(props) > 1:
        pool = ThreadPoolExecutor(max_workers=cfg.detector_fanout)
    try:
        for t in range(total_windows):
            window = FrameWindow(
                index=t,
                start_frame=t * stride,
                frames=video_meta.frame_paths(t * stride, window_size),
            )
            row = _fill_row(detector, props, window, pool)
            auto = build_increment(auto, row, build_cfg)
            mu = session.consume(layer_distribution(row, build_cfg))
            smoothed = smooth(mu, smoothing)
            scores.append((mu, smoothed))
            if smoothed > best_smoothed:
                best_smoothed = smoothed
                best_t = t
                best_auto = auto
            if smoothed > cfg.tau_stop:
                stop_layer = t
                break
    finally:
        if pool is not None:
            pool.shutdown()

    early_stopped = stop_layer is not None
    if early_stopped:
        chosen_t, chosen_auto = stop_layer, auto
    else:
        chosen_t, chosen_auto = best_t, best_auto
    mu, smoothed = scores[chosen_t]

    if mu <= 0.0:
        satisfaction = SatisfactionResult(
            probability=mu, smoothed=smoothed, witness=None, accept_layer=None
        )
        return RetrievalResult(
            interval=None,
            raw_interval=None,
            satisfaction=satisfaction,
            stop_layer=total_windows - 1,
            early_stopped=False,
            sampled_frames=(),
            question=question,
            formula_text=formula_text,
            proposition_texts=props.texts,
            diagnostic="specification never satisfiable: probability 0 at video end",
        )

    witness, accept_layer = extract_witness(chosen_auto, search)
    satisfaction = SatisfactionResult(
        probability=mu, smoothed=smoothed, witness=witness, accept_layer=accept_layer
    )
    raw_interval = extract_interval(
        witness, atoms_of(formula), accept_layer, window_size, stride, video_meta.fps
    )
    unit = window_size * stride
    if cfg.default_extension is not None:
        defaults = ExtensionSpans(*cfg.default_extension)
    else:
        defaults = ExtensionSpans(alpha=-unit, beta=unit)
    spans = infer_extension(question, extension_llm, defaults, unit=unit)
    interval, sampled = trim_and_sample(
        raw_interval, spans, video_meta.length_frames, cfg.frame_budget
    )
    diagnostic = None
    if not early_stopped:
        diagnostic = (
            f"smoothed satisfaction never crossed {cfg.tau_stop}; "
            f"reporting the best prefix (window {chosen_t})"
        )
    return RetrievalResult(
        interval=interval,
        raw_interval=raw_interval,
        satisfaction=satisfaction,
        stop_layer=chosen_t,
        early_stopped=early_stopped,
        sampled_frames=sampled,
        question=question,
        formula_text=formula_text,
        proposition_texts=props.texts,
        diagnostic=diagnostic,
    )


def run_pipeline(question: str, detector, translator, video_meta: VideoMeta,
                 cfg: PipelineConfig, extension_llm=None) -> RetrievalResult:
    """Translate the question, then run the retrieval loop."""
    props, formula = translator.translate(question)
    return run_with_formula(
        question, props, formula, detector, video_meta, cfg, extension_llm=extension_llm
    )
