"""Training objectives.

The adversarial part is least-squares (targets 1 for real, 0 for fake,
halved squared error, averaged over the discriminator heads).  Cycle
consistency is plain L1 both ways.  Multi-view coherence compares
translated patches around corresponding points in feature space: a small
frozen conv pyramid embeds each patch and the loss sums mean absolute
feature differences over every layer and every pair of the triplet.
"""

from dataclasses import dataclass

import numpy as np

from . import grad
from .errors import ConfigError

LSGAN_REAL = 1.0
LSGAN_FAKE = 0.0

# Fixed seed for the frozen feature pyramid; changing it changes the
# coherence metric, so it is a constant rather than a config knob.
FEATURE_SEED = 714025

FEATURE_CHANNELS = (16, 32, 64, 64)


@dataclass
class LossWeights:
    adv: float = 1.0
    cyc: float = 10.0
    corr: float = 5.0

    def validate(self):
        for name in ("adv", "cyc", "corr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {v}")
        return self


class FeatureExtractor:
    """Frozen random conv pyramid used as a perceptual embedding.

    Four stride-2 3x3 conv + leaky ReLU stages; all four post-activation
    feature maps are reported. Weights are Glorot samples from a fixed
    seed and never receive gradients, so the embedding is a stable,
    architecture-independent measuring stick.
    """

    def __init__(self, in_ch=3, channels=FEATURE_CHANNELS, seed=FEATURE_SEED,
                 dtype=np.float32):
        from .network import Conv2d  # local import to avoid a cycle

        rng = np.random.default_rng(seed)
        self.layers = []
        prev = in_ch
        for c in channels:
            layer = Conv2d(prev, c, 3, 2, 1, rng, dtype)
            layer.w.requires_grad = False
            layer.b.requires_grad = False
            self.layers.append(layer)
            prev = c

    def features(self, x):
        """Return the list of per-level feature tensors for x."""
        outs = []
        cur = x
        for layer in self.layers:
            cur = grad.leaky_relu(layer(cur), 0.2)
            outs.append(cur)
        return outs


def perceptual_distance(feats_a, feats_b):
    """Sum over layers of mean absolute feature difference."""
    assert len(feats_a) == len(feats_b)
    total = None
    for fa, fb in zip(feats_a, feats_b):
        term = grad.mean(grad.absolute(grad.sub(fa, fb)))
        total = term if total is None else grad.add(total, term)
    return total


def correspondence_loss(extractor, patches):
    """Pairwise perceptual distance over a triplet of aligned patches.

    patches: three (1,3,P,P) tensors cut around corresponding points of
    the three translated views. All three pairs contribute.
    """
    assert len(patches) == 3
    feats = [extractor.features(p) for p in patches]
    d12 = perceptual_distance(feats[0], feats[1])
    d13 = perceptual_distance(feats[0], feats[2])
    d23 = perceptual_distance(feats[1], feats[2])
    return grad.add(grad.add(d12, d13), d23)


def cycle_loss(real_a, rec_a, real_b, rec_b):
    """Mean L1 reconstruction error, both translation directions."""
    la = grad.mean(grad.absolute(grad.sub(rec_a, real_a)))
    lb = grad.mean(grad.absolute(grad.sub(rec_b, real_b)))
    return grad.add(la, lb)


def _half_mse_to(outs, target):
    """Mean over heads of 0.5 * mean((out - target)^2)."""
    total = None
    for o in outs:
        t = grad.mul_scalar(grad.mean(grad.square(grad.add_scalar(o, -target))), 0.5)
        total = t if total is None else grad.add(total, t)
    return grad.mul_scalar(total, 1.0 / len(outs))


def lsgan_d_loss(real_outs, fake_outs):
    """Critic objective: push real scores to 1, fake scores to 0."""
    lr = _half_mse_to(real_outs, LSGAN_REAL)
    lf = _half_mse_to(fake_outs, LSGAN_FAKE)
    return grad.add(lr, lf)


def lsgan_g_loss(fake_outs):
    """Generator objective: push fake scores to the real target."""
    return _half_mse_to(fake_outs, LSGAN_REAL)
