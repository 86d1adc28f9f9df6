"""Synthetic fixtures: planted-block interaction data and clustered embeddings."""

from __future__ import annotations

import numpy as np

from .dataset import InteractionDataset


def planted_blocks(num_users=200, num_items=100, blocks=4, p_high=0.95, p_low=0.35, seed=0):
    """Users of block ``b`` interact only with items of block ``b``.

    Within a block, item ``j`` is chosen with a probability falling linearly
    from ``p_high`` to ``p_low``, so there is a within-block popularity order
    for a model to learn as well as the block structure itself.
    """
    rng = np.random.default_rng(seed)
    per_block = num_items // blocks
    probs = np.linspace(p_high, p_low, per_block)
    lists = []
    for u in range(num_users):
        b = u % blocks
        chosen = np.flatnonzero(rng.random(per_block) < probs)
        if len(chosen) < 2:
            chosen = np.arange(2)
        lists.append(b * per_block + chosen)
    return InteractionDataset.from_lists(num_users, num_items, lists)


def clustered_embeddings(num_items, dim, clusters=8, spread=0.3, scale=1.0, seed=0):
    """Gaussian blobs around random centres, a stand-in for trained item vectors."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, scale, (clusters, dim))
    labels = rng.integers(clusters, size=num_items)
    return centres[labels] + rng.normal(0.0, spread * scale, (num_items, dim))
