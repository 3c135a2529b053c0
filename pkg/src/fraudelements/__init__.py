"""Clause-level fraud element identification for complaint text."""

__version__ = "0.1.0"

from .corpus import (
    Clause,
    Corpus,
    CorpusFormatError,
    ElementLabel,
    LABELS,
    Paragraph,
    Vocabulary,
    build_vocabulary,
    read_corpus,
    segment_paragraph,
    split_corpus,
    tokenize_clause,
    tokenize_corpus,
    write_corpus,
)
from .annotation import (
    AdjudicationResult,
    Outcome,
    adjudicate,
    adjudicate_corpus,
    cohen_kappa,
    pairwise_kappa_report,
)
from .analytics import (
    CategoryStats,
    StageDistribution,
    TransitionMatrix,
    categorical_stats,
    confusion_matrix,
    ordinal_relation,
    positional_distribution,
    stage_of,
)
from .synthgen import (
    GeneratorConfig,
    default_config,
    generate_corpus,
    generate_clause_text,
    generate_label_sequence,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParameters,
    backward,
    encode_clause,
    encode_global_context,
    first_stage_classify,
    forward,
    init_parameters,
    load_checkpoint,
    loss,
    refine_labels,
    save_checkpoint,
)
from .training import (
    EvalReport,
    TrainConfig,
    evaluate,
    pretrain_local_encoder,
    run_ablation_suite,
    train_full,
)
