"""Anthe: gated attention, hierarchical soft-POS embeddings and tensor-chain layers on a numpy autodiff core."""

from .attention import Attention, GateKind, causal_mask, gate_streams, multi_head_attention, padding_mask
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Corpus, TokenBatch, Vocabulary, ingest_parallel_corpus, make_batch, synth_task
from .errors import CheckpointError, ConfigError, DataError, ShapeError
from .hsoftpos import HSoftPosConfig, HSoftPosEmbedding, embed
from .model import (PRESETS, ArchConfig, Model, ParamCensus, build, census, count_params, greedy_decode,
                    parse_config, format_config, preset)
from .runtime import sequential
from .tc import TCLinear, TCShapePlan, decompose, factorize, materialize, plan_factors, tc_forward
from .tensor import Tensor, no_grad, precision
from .train import (AdamState, EarlyStopping, TrainConfig, TrainReport, adam_step, evaluate, exact_match_rate,
                    perplexity, train_loop)

__version__ = "0.1.0"
