"""Layout-aware table and key-value extraction via multi-head token tagging."""

from .augment import AugConfig, augment
from .docmodel import (
    BBox,
    CorpusError,
    Document,
    TagVocabulary,
    Token,
    Vocabularies,
    column_tag_index,
    load_corpus,
    save_corpus,
)
from .datagen import GenProfile, LayoutError, generate, grid_to_tags, write_corpus
from .encoder import (
    EncoderConfig,
    ModelParams,
    Tokenizer,
    build_vocab,
    extend_vocab,
    forward,
    init_params,
    predict_tags,
)
from .evaluation import evaluate
from .gradcheck import gradcheck
from .losses import LossBreakdown, LossConfig, bbox_mse, consistency_loss, cross_entropy, total_loss
from .metrics import (
    KVMetrics,
    MetricsReport,
    TreeNode,
    fully_correct,
    kv_metrics,
    levenshtein,
    levenshtein_similarity,
    table_to_tree,
    teds,
    token_prf,
    tree_edit_distance,
)
from .reconstruct import ExtractedTable, HeaderCell, export, reconstruct
from .spatial import SpatialTables, init_spatial, spatial_embed, spatial_embed_grad
from .tagging import LineAssignment, Segment, assign_lines, decode_tags, encode_tags
from .trainer import (
    CheckpointError,
    OptimizerState,
    TrainConfig,
    adamw_step,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AugConfig",
    "BBox",
    "CheckpointError",
    "CorpusError",
    "Document",
    "EncoderConfig",
    "ExtractedTable",
    "GenProfile",
    "HeaderCell",
    "KVMetrics",
    "LayoutError",
    "LineAssignment",
    "LossBreakdown",
    "LossConfig",
    "MetricsReport",
    "ModelParams",
    "OptimizerState",
    "Segment",
    "SpatialTables",
    "TagVocabulary",
    "Token",
    "Tokenizer",
    "TrainConfig",
    "TreeNode",
    "Vocabularies",
    "adamw_step",
    "assign_lines",
    "augment",
    "bbox_mse",
    "build_vocab",
    "column_tag_index",
    "consistency_loss",
    "cross_entropy",
    "decode_tags",
    "encode_tags",
    "evaluate",
    "export",
    "extend_vocab",
    "forward",
    "fully_correct",
    "generate",
    "gradcheck",
    "grid_to_tags",
    "init_params",
    "init_spatial",
    "kv_metrics",
    "levenshtein",
    "levenshtein_similarity",
    "load_checkpoint",
    "load_corpus",
    "lr_at",
    "predict_tags",
    "reconstruct",
    "save_checkpoint",
    "save_corpus",
    "spatial_embed",
    "spatial_embed_grad",
    "table_to_tree",
    "teds",
    "token_prf",
    "total_loss",
    "train",
    "tree_edit_distance",
    "write_corpus",
]
