from ._ende import (
    AnnotatedExample,
    ConfigError,
    DataError,
    Dataset,
    EndeError,
    EntitySpan,
    ParseError,
    Sentence,
    TrainingDiverged,
    TransportError,
    load_dataset,
    nesting_stats,
    parse_lm_output,
    render_prompt,
    run,
    score,
    train,
)

__all__ = [
    "AnnotatedExample",
    "ConfigError",
    "DataError",
    "Dataset",
    "EndeError",
    "EntitySpan",
    "ParseError",
    "Sentence",
    "TrainingDiverged",
    "TransportError",
    "load_dataset",
    "nesting_stats",
    "parse_lm_output",
    "render_prompt",
    "run",
    "score",
    "train",
]
