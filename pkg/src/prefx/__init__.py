"""Session-aware query auto-completion via tree-based extreme multi-label
ranking: given the user's previous query and the prefix they have typed,
rank the top-k most likely next queries that extend the prefix.
"""

from .corpus import LogRecord, QueryTriplet, Session, normalize_query, split_sessions
from .embed import LabelEmbeddings, label_text_embed, pifa_embed
from .evaluate import EvalReport, MfqIndex, bleu, bleu_rr, build_mfq, latency_percentiles, mrr
from .index import LabelTree, build_hc, build_hybrid, build_mlc, build_trie
from .model import (
    Suggestion,
    SuggestionList,
    TreeModel,
    brute_force_predict,
    load_model,
    predict,
    save_model,
    train,
)
from .sparse import SparseVector
from .vectorize import (
    InputEncoder,
    TfidfVocab,
    encode_input,
    fit_vocab,
    vectorize_position_weighted,
    vectorize_simple,
)

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "InputEncoder", "LabelEmbeddings", "LabelTree", "LogRecord",
    "MfqIndex", "QueryTriplet", "Session", "SparseVector", "Suggestion",
    "SuggestionList", "TfidfVocab", "TreeModel", "bleu", "bleu_rr",
    "brute_force_predict", "build_hc", "build_hybrid", "build_mfq", "build_mlc",
    "build_trie", "encode_input", "fit_vocab", "label_text_embed",
    "latency_percentiles", "load_model", "mrr", "normalize_query", "pifa_embed",
    "predict", "save_model", "split_sessions", "train", "vectorize_position_weighted",
    "vectorize_simple",
]
