"""Domain-adaptive next-token code completion without fine-tuning.

The engine wraps any black-box language model (next-token distribution
plus context embedding) and corrects it with evidence from a small
key-value store holding only the positions the model gets wrong in the
target domain. At each step, the model's distribution is blended with a
nearest-neighbor retrieval distribution; the blend weight is the
posterior probability that the model is about to make a mistake, driven
by its error rate on the store corpus and its recent track record in
the current context.
"""

from .combiner import (
    BetaPrior,
    CombinerConfig,
    Completion,
    Mode,
    Observation,
    ObservationWindow,
    ReplayCache,
    build_window,
    classify_observation,
    complete_line,
    complete_token,
    compute_lambda,
    interpolate,
)
from .datastore import (
    Datastore,
    build_decoupled,
    build_full,
    load,
    save,
    serialize,
)
from .errors import (
    BackendUnavailable,
    ChecksumError,
    ConfigError,
    DimensionMismatch,
    EmptyCorpus,
    EmptyInput,
    FormatError,
    KnmError,
    LengthMismatch,
    VocabMismatch,
)
from .harness import (
    EvalReport,
    ExperimentConfig,
    ModeResult,
    human_table,
    machine_records,
    parse_config,
    report_jsonl,
    run_experiment,
    sweep,
    throughput_violations,
)
from .lm import (
    HashedContextEmbedder,
    LanguageModel,
    NGramLm,
    RemoteLm,
    argmax_token,
    load_reference_lm,
    perplexity,
    save_reference_lm,
    train_reference_lm,
)
from .metrics import (
    edit_similarity,
    exact_match,
    levenshtein,
    per_class_accuracy,
    render_tokens,
    token_accuracy,
)
from .retrieval import (
    Neighbor,
    NeighborSet,
    RetrievalIndex,
    retrieval_distribution,
)
from .tokenizer import (
    EOL_ID,
    EOL_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    TokenClass,
    Vocabulary,
    classify,
    detokenize,
    lex,
    read_corpus,
    tokenize,
    write_corpus,
)

__version__ = "0.1.0"
