"""addrtag: multinational address tagging with a length-constrained Seq2Seq
LSTM over subword or word-table embeddings."""

from .core import (
    DatasetRecord,
    ParsedAddress,
    TagVocabulary,
    TokenizedAddress,
    validate_record,
)
from .preprocess import Preprocessor, default_preprocess, tokenize
from .bpe import MergeTable, digits_to_zero, learn_bpe, segment
from .embed import (
    SubwordComposer,
    SubwordProvider,
    VectorTable,
    VectorTableProvider,
    embed_address,
    load_vector_table,
)
from .tagger import AddressTagger, Seq2SeqConfig, TaggerModel, parse
from .train import TrainingConfig, TrainingReport, corpus_metrics, retrain, sequence_accuracy
from .io import load_checkpoint, load_dataset, save_checkpoint, save_dataset

__version__ = "0.1.0"

__all__ = [
    "AddressTagger",
    "DatasetRecord",
    "MergeTable",
    "ParsedAddress",
    "Preprocessor",
    "Seq2SeqConfig",
    "SubwordComposer",
    "SubwordProvider",
    "TagVocabulary",
    "TaggerModel",
    "TokenizedAddress",
    "TrainingConfig",
    "TrainingReport",
    "VectorTable",
    "VectorTableProvider",
    "corpus_metrics",
    "default_preprocess",
    "digits_to_zero",
    "embed_address",
    "learn_bpe",
    "load_checkpoint",
    "load_dataset",
    "load_vector_table",
    "parse",
    "retrain",
    "save_checkpoint",
    "save_dataset",
    "segment",
    "sequence_accuracy",
    "tokenize",
    "validate_record",
    "__version__",
]
