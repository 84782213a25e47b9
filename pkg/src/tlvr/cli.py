"""Command-line surface.

All machine-readable reports go to stdout as JSON; human logs go to stderr.
Exit codes: 0 success, 1 domain failure (e.g. an unparseable model reply),
2 input or transport failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import calibration
from .automaton import AutomatonError, MatrixFormatError, build_from_matrix, load_matrix
from .checker import check
from .clients import (
    ChatClient,
    FixtureDetector,
    RemoteDetector,
    RemoteTranslator,
    StaticChatClient,
    TranslationError,
    TransportError,
    default_cache,
)
from .config import ConfigError, PipelineConfig
from .logic import FormulaError, PropositionSet, parse_tl, render
from .retrieval import PipelineError, VideoMeta, run_pipeline, run_with_formula

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_INPUT = 2


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _load_config(args) -> PipelineConfig:
    if args.config:
        return PipelineConfig.from_file(args.config)
    return PipelineConfig()


def _props_for_matrix(matrix) -> PropositionSet:
    if matrix.proposition_texts:
        return PropositionSet.from_texts(matrix.proposition_texts)
    # Sidecar without phrases: formulas must use p<i> aliases.
    return PropositionSet.from_texts([f"p{i}" for i in range(matrix.n_props)])


def _make_translator(args, cfg: PipelineConfig):
    if args.canned_reply:
        with open(args.canned_reply, encoding="utf-8") as handle:
            text = handle.read()
        # twice: the reprompt path re-reads the same canned reply
        return RemoteTranslator(StaticChatClient([text, text]))
    client = ChatClient(
        endpoint=cfg.endpoint or None,
        model=cfg.translator_model,
        cache=default_cache(no_cache=args.no_cache or not cfg.use_cache),
    )
    return RemoteTranslator(client, model=cfg.translator_model)


def cmd_translate(args) -> int:
    cfg = _load_config(args)
    if not args.question or not args.question.strip():
        logger.error("translate needs a non-empty --question")
        return EXIT_INPUT
    translator = _make_translator(args, cfg)
    try:
        props, formula = translator.translate(args.question)
    except TransportError as exc:
        logger.error("transport failure: %s", exc)
        return EXIT_INPUT
    except TranslationError as exc:
        logger.error("translation failed: %s", exc)
        return EXIT_DOMAIN
    _emit({
        "question": args.question,
        "propositions": list(props.texts),
        "formula": render(formula, props),
    })
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = _load_config(args)
    try:
        matrix = load_matrix(args.fixture)
    except MatrixFormatError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    props = _props_for_matrix(matrix)
    try:
        with open(args.formula, encoding="utf-8") as handle:
            formula = parse_tl(handle.read().strip(), props)
    except OSError as exc:
        logger.error("cannot read formula file: %s", exc)
        return EXIT_INPUT
    except FormulaError as exc:
        logger.error("bad formula: %s", exc)
        return EXIT_INPUT
    try:
        auto = build_from_matrix(matrix, cfg.build_config())
    except AutomatonError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    result = check(auto, formula, cfg.smoothing())
    _emit(result.to_json_dict())
    return EXIT_OK


def _trim_command(interval) -> str:
    return (
        f"ffmpeg -ss {interval.start_s} -to {interval.end_s} "
        "-i <input-video> -c copy <output-clip>"
    )


def cmd_retrieve(args) -> int:
    cfg = _load_config(args)
    if args.fixture:
        try:
            matrix = load_matrix(args.fixture)
        except MatrixFormatError as exc:
            logger.error("%s", exc)
            return EXIT_INPUT
        # The fixture matrix owns the window geometry.
        cfg = dataclasses.replace(
            cfg, window_size=matrix.window_size, stride=matrix.stride, fps=matrix.fps
        )
        detector = FixtureDetector(matrix)
        meta = VideoMeta(length_frames=matrix.video_length, fps=matrix.fps)
    else:
        if not args.frame_template or not args.video_frames:
            logger.error(
                "retrieve needs --fixture, or --frame-template and --video-frames "
                "for the remote detector"
            )
            return EXIT_INPUT
        client = ChatClient(
            endpoint=cfg.endpoint or None,
            model=cfg.detector_model,
            cache=default_cache(no_cache=args.no_cache or not cfg.use_cache),
        )
        detector = RemoteDetector(client, model=cfg.detector_model)
        meta = VideoMeta(
            length_frames=args.video_frames,
            fps=cfg.fps,
            frame_template=args.frame_template,
        )

    try:
        if args.formula:
            if not args.fixture:
                logger.error("--formula needs --fixture (propositions come from its sidecar)")
                return EXIT_INPUT
            props = _props_for_matrix(matrix)
            with open(args.formula, encoding="utf-8") as handle:
                formula = parse_tl(handle.read().strip(), props)
            result = run_with_formula(
                args.question or "", props, formula, detector, meta, cfg
            )
        elif args.question:
            translator = _make_translator(args, cfg)
            result = run_pipeline(args.question, detector, translator, meta, cfg)
        else:
            logger.error("retrieve needs --formula or --question")
            return EXIT_INPUT
    except TransportError as exc:
        logger.error("transport failure: %s", exc)
        return EXIT_INPUT
    except TranslationError as exc:
        logger.error("translation failed: %s", exc)
        return EXIT_DOMAIN
    except (OSError, FormulaError, PipelineError, AutomatonError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT

    payload = result.to_json_dict()
    if args.emit_trim_cmd and result.interval is not None:
        payload["trim_command"] = _trim_command(result.interval)
    _emit(payload)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        pairs = calibration.load_pairs(args.pairs)
        report = calibration.select_threshold(pairs)
    except (OSError, calibration.CalibrationError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    _emit(report.to_json_dict())
    return EXIT_OK


def cmd_build_pairs(args) -> int:
    try:
        positives = calibration.load_positives(args.positives)
        pairs = calibration.build_pairs(positives, seed=args.seed)
        calibration.save_labeled_pairs(pairs, args.out)
    except (OSError, calibration.CalibrationError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    _emit({"written": args.out, "pair_count": len(pairs), "seed": args.seed})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlvr",
        description="Retrieve the video span satisfying a temporal-logic query.",
    )
    parser.add_argument("--config", help="JSON config file mirroring PipelineConfig")
    parser.add_argument("--no-cache", action="store_true", help="disable the reply cache")
    parser.add_argument("--seed", type=int, default=0, help="seed for seeded subcommands")
    sub = parser.add_subparsers(dest="command", required=True)

    p_translate = sub.add_parser("translate", help="question -> propositions + formula")
    p_translate.add_argument("--question", required=True)
    p_translate.add_argument("--canned-reply", help="file with a fixed model reply (offline)")
    p_translate.set_defaults(func=cmd_translate)

    p_check = sub.add_parser("check", help="satisfaction report for a matrix + formula")
    p_check.add_argument("--fixture", required=True, help="detection matrix CSV")
    p_check.add_argument("--formula", required=True, help="formula text file")
    p_check.set_defaults(func=cmd_check)

    p_retrieve = sub.add_parser("retrieve", help="full retrieval loop")
    p_retrieve.add_argument("--question")
    p_retrieve.add_argument("--formula", help="formula text file (skips translation)")
    p_retrieve.add_argument("--fixture", help="detection matrix CSV (offline detector)")
    p_retrieve.add_argument("--canned-reply", help="file with a fixed model reply (offline)")
    p_retrieve.add_argument("--frame-template",
                            help="printf pattern for frame images, e.g. frames/%%06d.jpg")
    p_retrieve.add_argument("--video-frames", type=int, help="total frame count (remote mode)")
    p_retrieve.add_argument("--emit-trim-cmd", action="store_true",
                            help="include a trim command line in the report")
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_calibrate = sub.add_parser("calibrate", help="threshold + ROC from scored pairs")
    p_calibrate.add_argument("--pairs", required=True, help="CSV with header score,label")
    p_calibrate.set_defaults(func=cmd_calibrate)

    p_pairs = sub.add_parser("build-pairs", help="labeled pairs from positives (seeded)")
    p_pairs.add_argument("--positives", required=True, help="CSV with header item,caption")
    p_pairs.add_argument("--out", required=True, help="output CSV path")
    p_pairs.set_defaults(func=cmd_build_pairs)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
