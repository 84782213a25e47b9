import json

import numpy as np
import pytest

from tlvr.automaton import DetectionMatrix
from tlvr.checker import smooth
from tlvr.clients import ChatReply, FixtureDetector, FixtureTranslator, StaticChatClient
from tlvr.config import PipelineConfig
from tlvr.logic import PropositionSet
from tlvr.retrieval import (
    ExtensionSpans,
    Interval,
    PipelineError,
    VideoMeta,
    extract_interval,
    infer_extension,
    run_pipeline,
    trim_and_sample,
    window_count,
)


def fixture_setup(scores, window_size=10, stride=10, fps=3.0, texts=None):
    scores = np.asarray(scores, dtype=float)
    texts = texts or [f"event {i}" for i in range(scores.shape[1])]
    matrix = DetectionMatrix(scores, window_size=window_size, stride=stride, fps=fps,
                             proposition_texts=texts)
    props = PropositionSet.from_texts(texts)
    detector = FixtureDetector(matrix, props)
    meta = VideoMeta(length_frames=matrix.video_length, fps=fps)
    return matrix, props, detector, meta


def planted_matrix(T=12):
    scores = np.zeros((T, 2))
    scores[3, 0] = 1.0
    scores[4, 0] = 1.0
    scores[9, 1] = 1.0
    return scores


def test_interval_seconds_derived_from_frames():
    interval = Interval(start_frame=30, end_frame=99, fps=3.0)
    assert interval.start_s == 10.0
    assert interval.end_s == 33.0
    assert interval.n_frames == 70


def test_interval_rejects_inversion():
    with pytest.raises(ValueError):
        Interval(start_frame=5, end_frame=4, fps=3.0)


def test_extension_spans_sign_convention():
    with pytest.raises(ValueError):
        ExtensionSpans(alpha=5, beta=0)
    with pytest.raises(ValueError):
        ExtensionSpans(alpha=0, beta=-5)


def test_extract_interval_spec_example():
    witness = ((0, frozenset()), (1, frozenset({0})), (2, frozenset()), (3, frozenset({1})))
    interval = extract_interval(
        witness, frozenset({0, 1}), accept_layer=3, window_size=10, stride=10, fps=3.0
    )
    assert (interval.start_frame, interval.end_frame) == (10, 39)


def test_extract_interval_single_window():
    witness = ((0, frozenset({0})),)
    interval = extract_interval(
        witness, frozenset({0}), accept_layer=0, window_size=10, stride=10, fps=3.0
    )
    assert (interval.start_frame, interval.end_frame) == (0, 9)


def test_extract_interval_degenerate_formula_falls_back_to_witness_span():
    witness = ((0, frozenset()), (1, frozenset()), (2, frozenset({0})))
    interval = extract_interval(
        witness, frozenset(), accept_layer=0, window_size=5, stride=5, fps=3.0
    )
    assert (interval.start_frame, interval.end_frame) == (0, 14)


def test_infer_extension_keyword_rules():
    defaults = ExtensionSpans(alpha=-100, beta=100)
    unit = 100
    after = infer_extension(
        "After the courier entered the lobby, what did he hand over?",
        None, defaults, unit=unit,
    )
    assert (after.alpha, after.beta) == (0, 200)
    before = infer_extension("What happened before the crash?", None, defaults, unit=unit)
    assert (before.alpha, before.beta) == (-200, 0)
    both = infer_extension("before X and after Y?", None, defaults, unit=unit)
    assert (both.alpha, both.beta) == (-200, 200)
    neither = infer_extension("what color is the car?", None, defaults, unit=unit)
    assert (neither.alpha, neither.beta) == (-100, 100)


def test_infer_extension_ignores_substring_matches():
    defaults = ExtensionSpans(alpha=-10, beta=10)
    spans = infer_extension("is the beforemath afterglow nice?", None, defaults, unit=10)
    assert (spans.alpha, spans.beta) == (-10, 10)


def test_infer_extension_llm_path():
    llm = StaticChatClient([ChatReply(text="alpha=-30 beta=45")])
    spans = infer_extension("q?", llm, ExtensionSpans(-10, 10), unit=10)
    assert (spans.alpha, spans.beta) == (-30, 45)


def test_infer_extension_llm_fallback_on_garbage():
    llm = StaticChatClient([ChatReply(text="I cannot say")])
    spans = infer_extension("after the goal?", llm, ExtensionSpans(-10, 10), unit=10)
    assert (spans.alpha, spans.beta) == (0, 20)


def test_infer_extension_llm_fallback_on_bad_signs():
    llm = StaticChatClient([ChatReply(text="alpha=30 beta=-45")])
    spans = infer_extension("plain question", llm, ExtensionSpans(-10, 10), unit=10)
    assert (spans.alpha, spans.beta) == (-10, 10)


def test_trim_and_sample_spec_example():
    interval = Interval(start_frame=30, end_frame=39, fps=3.0)
    extended, frames = trim_and_sample(
        interval, ExtensionSpans(alpha=-10, beta=10), video_length=100, budget=32
    )
    assert (extended.start_frame, extended.end_frame) == (20, 49)
    assert len(frames) == 30
    assert len(set(frames)) == 30
    assert frames[0] == 20 and frames[-1] == 49


def test_trim_and_sample_clamps_to_video():
    interval = Interval(start_frame=2, end_frame=95, fps=3.0)
    extended, frames = trim_and_sample(
        interval, ExtensionSpans(alpha=-10, beta=10), video_length=100, budget=16
    )
    assert (extended.start_frame, extended.end_frame) == (0, 99)
    assert extended.contains(interval)
    assert len(frames) == 16
    assert list(frames) == sorted(set(frames))
    assert frames[0] == 0 and frames[-1] == 99


def test_trim_and_sample_single_frame():
    interval = Interval(start_frame=7, end_frame=7, fps=3.0)
    extended, frames = trim_and_sample(interval, ExtensionSpans(0, 0), 100, budget=32)
    assert frames == (7,)


def test_window_count():
    assert window_count(120, 10, 10) == 12
    assert window_count(125, 10, 10) == 12
    assert window_count(10, 10, 10) == 1
    assert window_count(12, 10, 1) == 3
    with pytest.raises(PipelineError):
        window_count(9, 10, 10)


def pipeline_config(**overrides):
    base = dict(window_size=10, stride=10, fps=3.0, prune_epsilon=1e-3,
                max_branches=16, detector_fanout=1)
    base.update(overrides)
    return PipelineConfig(**base)


def test_run_pipeline_planted_events():
    matrix, props, detector, meta = fixture_setup(planted_matrix())
    translator = FixtureTranslator(props, '"p0" & F "p1"')
    result = run_pipeline("what happened?", detector, translator, meta, pipeline_config())
    assert result.early_stopped
    assert result.stop_layer == 9
    assert result.raw_interval is not None
    assert (result.raw_interval.start_frame, result.raw_interval.end_frame) == (30, 99)
    assert result.satisfaction.probability == pytest.approx(1.0)
    assert result.satisfaction.accept_layer == 9
    assert result.diagnostic is None


def test_run_pipeline_true_formula_stops_immediately():
    matrix, props, detector, meta = fixture_setup(planted_matrix())
    translator = FixtureTranslator(props, "true")
    result = run_pipeline("q?", detector, translator, meta, pipeline_config())
    assert result.early_stopped
    assert result.stop_layer == 0
    assert (result.raw_interval.start_frame, result.raw_interval.end_frame) == (0, 9)


def test_run_pipeline_unsatisfiable_returns_diagnostic():
    scores = np.zeros((6, 1))
    matrix, props, detector, meta = fixture_setup(scores)
    translator = FixtureTranslator(props, 'F "p0"')
    result = run_pipeline("q?", detector, translator, meta, pipeline_config())
    assert result.interval is None
    assert result.raw_interval is None
    assert result.satisfaction.probability == 0.0
    assert result.satisfaction.witness is None
    assert result.diagnostic is not None
    assert result.sampled_frames == ()


def test_run_pipeline_best_prefix_when_never_crossing():
    # weak detections keep the smoothed score below the stop threshold
    scores = np.zeros((5, 1))
    scores[2, 0] = 0.6
    matrix, props, detector, meta = fixture_setup(scores)
    translator = FixtureTranslator(props, 'F "p0"')
    result = run_pipeline("q?", detector, translator, meta, pipeline_config())
    assert not result.early_stopped
    assert result.diagnostic is not None
    assert result.stop_layer == 2  # the best prefix is where mu peaked
    assert result.satisfaction.probability == pytest.approx(0.6)
    assert result.raw_interval is not None


def test_run_pipeline_early_stop_matches_offline_recompute():
    from tlvr.automaton import build_increment
    from tlvr.checker import satisfaction_probability
    from tlvr.logic import Eventually, parse_tl

    cfg = pipeline_config()
    matrix, props, detector, meta = fixture_setup(planted_matrix())
    formula = parse_tl('"p0" & F "p1"', props)
    result = run_pipeline("q?", detector, FixtureTranslator(props, '"p0" & F "p1"'),
                          meta, cfg)

    auto = None
    offline_stop = None
    for t in range(matrix.n_windows):
        auto = build_increment(auto, matrix.scores[t], cfg.build_config())
        mu = satisfaction_probability(auto, Eventually(formula))
        if smooth(mu, cfg.smoothing()) > cfg.tau_stop:
            offline_stop = t
            break
    assert result.stop_layer == offline_stop


def test_run_pipeline_interval_invariants():
    matrix, props, detector, meta = fixture_setup(planted_matrix())
    translator = FixtureTranslator(props, '"p0" & F "p1"')
    result = run_pipeline(
        "after the pour, what topping?", detector, translator, meta, pipeline_config()
    )
    assert result.interval.contains(result.raw_interval)
    assert result.stop_layer >= result.satisfaction.accept_layer
    frames = result.sampled_frames
    assert len(frames) <= 32
    assert list(frames) == sorted(set(frames))
    assert all(result.interval.start_frame <= f <= result.interval.end_frame for f in frames)


def test_run_pipeline_deterministic_serialization():
    matrix, props, detector, meta = fixture_setup(planted_matrix())
    translator = FixtureTranslator(props, '"p0" & F "p1"')
    runs = [
        run_pipeline("q?", detector, translator, meta, pipeline_config()).to_json_dict()
        for _ in range(2)
    ]
    blobs = [json.dumps(r, sort_keys=True) for r in runs]
    assert blobs[0] == blobs[1]


def test_run_pipeline_rejects_short_video():
    matrix, props, detector, _ = fixture_setup(planted_matrix())
    translator = FixtureTranslator(props, "true")
    short = VideoMeta(length_frames=5, fps=3.0)
    with pytest.raises(PipelineError):
        run_pipeline("q?", detector, translator, short, pipeline_config())


def test_run_pipeline_fanout_matches_sequential():
    matrix, props, detector, meta = fixture_setup(np.random.default_rng(4).random((8, 3)))
    translator = FixtureTranslator(props, 'F ("p0" & "p2")')
    sequential = run_pipeline("q?", detector, translator, meta,
                              pipeline_config()).to_json_dict()
    parallel = run_pipeline("q?", detector, translator, meta,
                            pipeline_config(detector_fanout=4)).to_json_dict()
    assert sequential == parallel
