"""Popularity-debiased message passing for graph collaborative filtering."""

from .datagen import (SplitSpec, ZipfDistribution, generate_biased_training, split_pool,
                      synthetic_preference_pool, zipf_probabilities)
from .errors import BoundsError, ConfigError, DataError, DPAAError, FormatError, ParameterError
from .evaluation import EvalReport, RankingTask, evaluate, rank_topk
from .graph import (Interaction, InteractionGraph, PopularitySplit, build_graph,
                    popularity_split)
from .model import (Checkpoint, LayerStack, ModelConfig, init_embeddings, propagate_dpaa,
                    propagate_lightgcn, readout)
from .train import TrainConfig, fit, pretrain_base
from .weights import PretrainedIIWCache, WeightPlan

__version__ = "0.1.0"
