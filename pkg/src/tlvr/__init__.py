"""tlvr: retrieve the video span that satisfies a temporal-logic query.

A question becomes a temporal-logic formula over natural-language event
propositions; per-window detector confidences become a layered Markov chain;
probabilistic checking of the formula over that chain localizes, extends, and
trims the frame interval handed to a downstream answerer.
"""

from .automaton import (
    AutomatonState,
    BuildConfig,
    DetectionMatrix,
    EmptyLayerError,
    MatrixFormatError,
    VideoAutomaton,
    boolean_trace,
    build_from_matrix,
    build_from_rows,
    build_increment,
    layer_distribution,
    load_matrix,
    save_matrix,
    validate,
)
from .calibration import (
    CalibrationError,
    CalibrationReport,
    LabeledPair,
    ScoredPair,
    auc_trapezoid,
    build_pairs,
    roc_points,
    select_threshold,
)
from .checker import (
    CheckerError,
    InvalidAutomatonError,
    NoSatisfyingPathError,
    PathBudgetError,
    SatisfactionResult,
    SmoothingParams,
    brute_force_probability,
    check,
    extract_witness,
    satisfaction_probability,
    smooth,
)
from .clients import (
    Answerer,
    ChatClient,
    ChatMessage,
    ChatReply,
    ChatRequest,
    DetectorError,
    FixtureDetector,
    FixtureTranslator,
    FrameWindow,
    RemoteDetector,
    RemoteTranslator,
    ResponseCache,
    StaticChatClient,
    TranslationError,
    TransportError,
    answer_matches,
    extract_choice_index,
    yes_no_probability,
)
from .config import ConfigError, PipelineConfig
from .logic import (
    FALSE,
    TRUE,
    Always,
    And,
    Atom,
    Eventually,
    FormulaError,
    Implies,
    Next,
    Not,
    Or,
    ParseError,
    Proposition,
    PropositionSet,
    TLFormula,
    UnknownPropositionError,
    Until,
    atoms_of,
    evaluate_trace,
    final_eval,
    parse_tl,
    progress,
    render,
    simplify,
)
from .retrieval import (
    ExtensionSpans,
    Interval,
    PipelineError,
    RetrievalResult,
    VideoMeta,
    extract_interval,
    infer_extension,
    run_pipeline,
    run_with_formula,
    trim_and_sample,
    window_count,
)

__version__ = "0.1.0"
