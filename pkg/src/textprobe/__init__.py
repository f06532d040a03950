"""Black-box robustness testing for LLM-based text classifiers.

The toolkit perturbs the joint prompt+example input of a classifier
reached through an API, searches the perturbation space with a beam
search that adapts its width and backtracks to the historically best
candidate, and reports adversarial test cases with quality and
efficiency metrics.
"""

from .errors import (
    CheckerUnavailable,
    ConfigError,
    EditOnProtected,
    EmptyLexicon,
    EmptyText,
    EndpointUnreachable,
    LabelMismatch,
    MalformedResponse,
    ParseError,
    PositionOutOfRange,
    TextProbeError,
    Timeout,
    UnknownLabel,
)
from .text import (
    Edit,
    EditList,
    TestCase,
    TextSequence,
    apply_edits,
    change_count,
    detokenize,
    join_prompt_example,
    tokenize,
)
from .lexicon import (
    PosLexicon,
    StopWordList,
    SynonymLexicon,
    default_stop_words,
    load_lexicon,
    load_pos_tsv,
    load_stop_words,
    load_synonym_tsv,
    load_wordnet_pos,
    load_wordnet_synonyms,
)
from .models import (
    BagOfWordsModel,
    CachingSession,
    EndpointConfig,
    Prediction,
    QueryLedger,
    StructuredResponseModel,
    ThreatModel,
    load_mock_weights,
    parse_structured_confidence,
    remote_model,
    uniform_prediction,
)
from .transforms import (
    Blacklist,
    Constraint,
    GoalFunction,
    GoalScore,
    MaxChangeRate,
    MaxEdits,
    Perturbation,
    PosMatch,
    StopWordFilter,
    check_constraints,
    goal_eval,
    neighbors,
)
from .search import (
    BeamCandidate,
    IterationRecord,
    SearchConfig,
    SearchTrace,
    adaptive_beam_width,
    backtrack_refill,
    compute_wir,
    config_for_variant,
    run_search,
    update_historical_best,
)
from .metrics import (
    CampaignStats,
    NgramPerplexityScorer,
    RemotePerplexityScorer,
    TestResult,
    aggregate,
    c_rate,
    grammar_error_count,
    result_from_record,
    result_to_record,
    s_rate,
)
from .campaign import (
    CampaignConfig,
    Dataset,
    DataRecord,
    build_campaign_config,
    load_config_file,
    load_dataset,
    run_campaign,
    run_repeated_campaign,
)

__version__ = "0.1.0"
