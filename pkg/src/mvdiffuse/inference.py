"""Sliding-window translation of arbitrary-length view sequences.

View i is translated by feeding the window (i-1, i, i+1) through the
generator and keeping only the middle third of the output, so every
view is produced exactly once and no blending policy is needed.
Boundary windows clamp indices; a single view is tripled.
"""

from pathlib import Path

import numpy as np

from . import grad
from .errors import ConfigError
from .imgio import save_image
from .network import concat_views, split_views


def window_indices(n):
    """Clamped (i-1, i, i+1) triples for a sequence of length n."""
    if n < 1:
        raise ConfigError(f"need at least one view, got {n}")
    return [(max(i - 1, 0), i, min(i + 1, n - 1)) for i in range(n)]


def translate_sequence(generator, views):
    """Translate each of n equally-shaped (H,W,3) views. Returns n views."""
    views = [np.asarray(v, dtype=np.float32) for v in views]
    shape = views[0].shape
    for i, v in enumerate(views):
        if v.shape != shape:
            raise ConfigError(
                f"view {i} has shape {v.shape}, expected {shape}")
    out = []
    for a, b, c in window_indices(len(views)):
        strip = grad.Tensor(concat_views([views[a], views[b], views[c]]),
                            requires_grad=False)
        result = generator(strip)
        out.append(split_views(result.data, 3)[1])
    return out


def save_sequence(views, out_dir):
    """Write views as translated_<i>.png; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, v in enumerate(views):
        p = out / f"translated_{i:03d}.png"
        save_image(p, v)
        paths.append(p)
    return paths
