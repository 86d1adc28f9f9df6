"""Sublinear softmax sampling with an inverted multi-index."""

from .alias import AliasTable, build_alias, draw, draw_many
from .dataset import (
    InteractionDataset,
    load_dataset,
    load_interactions,
    popularity_vector,
    save_dataset,
    split_holdout,
)
from .diagnostics import DivergenceReport, cumulative_curve, kl_divergence, verify_bound_pop, verify_bound_uni
from .quantizer import MultiIndex, build_index, kmeans, load_index, rebuild, save_index
from .samplers import (
    Samples,
    prepare,
    prepare_exact,
    prepare_pop,
    prepare_uni,
    sample_batch,
    softmax_oracle,
    static_sampler,
)
from .trainer import ModelParams, TrainConfig, evaluate, train

__version__ = "0.1.0"
