"""Dual-generator/dual-discriminator optimization loop.

Domain conventions, used consistently everywhere below:
  domain A = glossy renders, domain B = diffuse renders
  g_a : A -> B   (the translation we ultimately care about)
  g_b : B -> A
  bank_a judges domain-A images (real glossy vs g_b fakes)
  bank_b judges domain-B images (real diffuse vs g_a fakes)

Per iteration: one glossy triplet and one independently drawn diffuse
triplet, each with one correspondence sampled from its own list. The
generator step minimizes

  w.adv * (adv_A + adv_B) + w.cyc * cycle + w.corr * corr(g_a output)

then each bank takes an unweighted least-squares critic step against
detached fakes. The correspondence term only constrains the
glossy->diffuse direction. w.adv == 0 disables the adversarial game
entirely (no critic step either), so an all-zero weight vector trains
nothing.
"""

import csv
import dataclasses
import json
import math
import re
from collections import deque
from pathlib import Path

import numpy as np

from . import grad
from .checkpoint import check_config_match, load_container, save_container
from .correspond import within_border
from .datagen.dataset import load_manifest, load_view, read_corr_file
from .errors import ConfigError, DataError, TrainingError
from .losses import FeatureExtractor, LossWeights, correspondence_loss, \
    cycle_loss, lsgan_d_loss, lsgan_g_loss
from .network import DiscriminatorBank, Generator, auto_n_layers, \
    concat_views, to_nchw

ADAM_EPS = 1e-8
HISTORY_ROWS = 512
METRICS_NAME = "metrics.csv"
METRICS_COLUMNS = ("iteration", "g_adv", "d_A", "d_B", "cyc", "corr", "total")

# weight-init / sampling streams under the run seed
_STREAM_G_A = 0
_STREAM_G_B = 1
_STREAM_BANK_A = 2
_STREAM_BANK_B = 3
_STREAM_SAMPLER = 10


@dataclasses.dataclass
class TrainConfig:
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)
    learning_rate: float = 2e-4
    adam_betas: tuple = (0.5, 0.999)
    batch_size: int = 1
    max_iterations: int = 2000
    checkpoint_every: int = 500
    patch_size: int = 0          # 0: take the dataset's patch size
    seed: int = 0
    base_channels_g: int = 8     # 64 reproduces the full-scale generator
    base_channels_d: int = 8
    disc_layers: int = 0         # 0: deepest depth the inputs allow

    def validate(self):
        self.weights.validate()
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 0:
            raise ConfigError(f"max_iterations must be >= 0, got {self.max_iterations}")
        if self.checkpoint_every < 1:
            raise ConfigError(
                f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ConfigError(f"adam_betas must be two values in [0,1), "
                              f"got {self.adam_betas}")
        if self.base_channels_g < 1 or self.base_channels_d < 1:
            raise ConfigError("base channel counts must be >= 1")
        return self

    def to_json_dict(self):
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


@dataclasses.dataclass
class StepLog:
    iteration: int
    g_adv: float
    d_A: float
    d_B: float
    cyc: float
    corr: float
    total: float

    def row(self):
        return [self.iteration, self.g_adv, self.d_A, self.d_B,
                self.cyc, self.corr, self.total]


@dataclasses.dataclass
class TrainingPair:
    glossy_views: list        # three (H,W,3) float arrays in [-1,1]
    glossy_corr: dict         # one correspondence record for the glossy triplet
    diffuse_views: list
    diffuse_corr: dict


def _seeded_rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream))))


class TrainData:
    """Triplet sampler over a generated dataset.

    Caches decoded views; drops triplets whose correspondences all fail
    the border rule for the requested patch size (the generation-time
    min-corr rule normally makes this a no-op).
    """

    def __init__(self, root, patch_size):
        self.root = Path(root)
        manifest = load_manifest(self.root)
        self.manifest = manifest
        self.resolution = int(manifest["config"]["resolution"])
        margin = patch_size // 2
        self.entries = []
        for scene in manifest["scenes"]:
            for trip in scene["triplets"]:
                recs = read_corr_file(self.root / trip["corr_file"])
                ok = [r for r in recs if all(
                    within_border(r[k], self.resolution, self.resolution, margin)
                    for k in ("p1", "p2", "p3"))]
                if ok:
                    self.entries.append((scene, trip, ok))
        if not self.entries:
            raise DataError(f"{root}: no usable triplets in manifest")
        self._cache = {}

    def views(self, scene, trip, domain):
        key = (scene["scene_id"], trip["triplet"], domain)
        if key not in self._cache:
            self._cache[key] = [load_view(self.root, scene, domain, v)
                                for v in trip["views"]]
        return self._cache[key]


def sample_training_pair(data: TrainData, rng) -> TrainingPair:
    """Draw one glossy and one independent diffuse triplet.

    Four integer draws in fixed order (glossy triplet, glossy
    correspondence, diffuse triplet, diffuse correspondence) so the
    consumed rng stream does not depend on the data content.
    """
    sg, tg, cg = data.entries[int(rng.integers(len(data.entries)))]
    corr_g = cg[int(rng.integers(len(cg)))]
    sd, td, cd = data.entries[int(rng.integers(len(data.entries)))]
    corr_d = cd[int(rng.integers(len(cd)))]
    return TrainingPair(
        glossy_views=data.views(sg, tg, "glossy"),
        glossy_corr=corr_g,
        diffuse_views=data.views(sd, td, "diffuse"),
        diffuse_corr=corr_d,
    )


class TrainState:
    """All mutable training state: models, Adam moments, rng, history."""

    def __init__(self, cfg: TrainConfig, resolution, patch_size):
        cfg.validate()
        depth = int(math.log2(resolution))
        if 2 ** depth != resolution:
            raise ConfigError(f"resolution must be a power of two, got {resolution}")
        n_layers = cfg.disc_layers or min(
            auto_n_layers(patch_size), int(math.log2(resolution // 4)))
        self.cfg = cfg
        self.resolution = int(resolution)
        self.patch_size = int(patch_size)
        self.depth = depth
        self.n_layers = n_layers
        self.iteration = 0

        self.g_a = Generator(3, 3, cfg.base_channels_g, depth,
                             _seeded_rng(cfg.seed, _STREAM_G_A))
        self.g_b = Generator(3, 3, cfg.base_channels_g, depth,
                             _seeded_rng(cfg.seed, _STREAM_G_B))
        self.bank_a = DiscriminatorBank(cfg.base_channels_d, n_layers, 3,
                                        _seeded_rng(cfg.seed, _STREAM_BANK_A))
        self.bank_b = DiscriminatorBank(cfg.base_channels_d, n_layers, 3,
                                        _seeded_rng(cfg.seed, _STREAM_BANK_B))
        for bank in (self.bank_a, self.bank_b):
            bank.validate_sizes((resolution, 3 * resolution),
                                (patch_size, 3 * patch_size))

        self.g_params = (self.g_a.named_parameters("g_a.")
                         + self.g_b.named_parameters("g_b."))
        self.d_a_params = self.bank_a.named_parameters("d_a.")
        self.d_b_params = self.bank_b.named_parameters("d_b.")
        self.params = self.g_params + self.d_a_params + self.d_b_params
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in state")

        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.rng = _seeded_rng(cfg.seed, _STREAM_SAMPLER)
        self.history = deque(maxlen=HISTORY_ROWS)
        self.extractor = FeatureExtractor()

    # -- persistence ----------------------------------------------------------

    def _arch_dict(self):
        d = self.cfg.to_json_dict()
        d["resolution"] = self.resolution
        d["resolved_patch_size"] = self.patch_size
        d["disc_layers_resolved"] = self.n_layers
        return d

    def save(self, path):
        tensors = {}
        for n, p in self.params:
            tensors[n] = p.data
            tensors["adam_m." + n] = self.m[n]
            tensors["adam_v." + n] = self.v[n]
        meta = {
            "kind": "train_state",
            "config": self._arch_dict(),
            "iteration": self.iteration,
            "rng_state": self.rng.bit_generator.state,
            "history": [list(r) for r in self.history],
        }
        save_container(path, meta, tensors)

    @classmethod
    def load(cls, path, expected_cfg=None):
        meta, tensors = load_container(path)
        if meta.get("kind") != "train_state":
            raise DataError(f"{path}: not a training checkpoint "
                            f"(kind={meta.get('kind')!r})")
        stored = meta["config"]
        cfg = TrainConfig.from_json_dict(
            {k: v for k, v in stored.items()
             if k in {f.name for f in dataclasses.fields(TrainConfig)}})
        state = cls(cfg, stored["resolution"], stored["resolved_patch_size"])
        if expected_cfg is not None:
            want = expected_cfg.to_json_dict()
            want["resolution"] = state.resolution
            comparable = [k for k in want if k != "max_iterations"]
            check_config_match({"config": stored}, want, comparable)
            state.cfg = expected_cfg
        for n, p in state.params:
            if n not in tensors:
                raise DataError(f"{path}: missing tensor {n!r}")
            if tensors[n].shape != p.data.shape:
                raise DataError(f"{path}: tensor {n!r} has shape "
                                f"{tensors[n].shape}, expected {p.data.shape}")
            p.data = tensors[n]
            state.m[n] = tensors["adam_m." + n]
            state.v[n] = tensors["adam_v." + n]
        state.iteration = int(meta["iteration"])
        state.rng.bit_generator.state = meta["rng_state"]
        state.history = deque((tuple(r) for r in meta["history"]),
                              maxlen=HISTORY_ROWS)
        return state


def load_generator(path, direction="a2b"):
    """Rebuild one trained generator from a checkpoint for inference."""
    meta, tensors = load_container(path)
    stored = meta.get("config", {})
    depth = int(math.log2(stored["resolution"]))
    gen = Generator(3, 3, stored["base_channels_g"], depth,
                    _seeded_rng(stored["seed"], 0))
    prefix = "g_a." if direction == "a2b" else "g_b."
    for n, p in gen.named_parameters(prefix):
        if n not in tensors:
            raise DataError(f"{path}: missing tensor {n!r}")
        p.data = tensors[n]
    return gen, meta


# -- one optimization step ----------------------------------------------------

def _strip_tensor(views):
    return grad.Tensor(concat_views(views), requires_grad=False)


def _patches_from_strip(strip, corr, patch, view_w):
    """Cut the three correspondence patches out of a (1,3,H,3W) strip.

    Every crop stays inside its own view, so nothing ever straddles a
    concatenation seam.
    """
    m = patch // 2
    out = []
    for v, key in enumerate(("p1", "p2", "p3")):
        x, y = corr[key]
        cx, cy = int(np.rint(x)), int(np.rint(y))
        t = grad.narrow(strip, 2, cy - m, patch)
        t = grad.narrow(t, 3, v * view_w + cx - m, patch)
        out.append(t)
    return out


def _set_requires(params, flag):
    for _, p in params:
        p.requires_grad = flag


def _zero_grads(params):
    for _, p in params:
        p.grad = None


def _adam_update(params, m, v, t, lr, betas):
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for n, p in params:
        g = p.grad
        if g is None:
            continue
        m[n] = b1 * m[n] + (1.0 - b1) * g
        v[n] = b2 * v[n] + (1.0 - b2) * (g * g)
        step = lr * (m[n] / c1) / (np.sqrt(v[n] / c2) + ADAM_EPS)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)


def _mean_loss(terms):
    total = terms[0]
    for t in terms[1:]:
        total = grad.add(total, t)
    if len(terms) > 1:
        total = grad.mul_scalar(total, 1.0 / len(terms))
    return total


def train_step(state: TrainState, pairs, cfg: TrainConfig, *,
               update_g=True, update_d=True):
    """Run one iteration over a batch of TrainingPairs.

    Returns (state, StepLog); state is updated in place. A single
    TrainingPair is accepted in place of a length-1 batch.
    """
    if isinstance(pairs, TrainingPair):
        pairs = [pairs]
    w = cfg.weights
    res = state.resolution
    patch = state.patch_size
    t = state.iteration + 1

    g_adv_terms, cyc_terms, corr_terms = [], [], []
    d_a_real, d_a_fake, d_b_real, d_b_fake = [], [], [], []

    _set_requires(state.d_a_params + state.d_b_params, False)
    fakes = []
    for pair in pairs:
        x_a = _strip_tensor(pair.glossy_views)
        x_b = _strip_tensor(pair.diffuse_views)
        fake_b = state.g_a(x_a)
        fake_a = state.g_b(x_b)
        fakes.append((x_a, x_b, fake_a, fake_b))

        if w.adv != 0.0:
            fb_patches = _patches_from_strip(fake_b, pair.glossy_corr, patch, res)
            fa_patches = _patches_from_strip(fake_a, pair.diffuse_corr, patch, res)
            outs_b = state.bank_b(fake_b, grad.concat(fb_patches, axis=3))
            outs_a = state.bank_a(fake_a, grad.concat(fa_patches, axis=3))
            g_adv_terms.append(grad.add(lsgan_g_loss(outs_a), lsgan_g_loss(outs_b)))
        if w.cyc != 0.0:
            cyc_terms.append(cycle_loss(x_a, state.g_b(fake_b),
                                        x_b, state.g_a(fake_a)))
        if w.corr != 0.0:
            fb_patches = _patches_from_strip(fake_b, pair.glossy_corr, patch, res)
            corr_terms.append(correspondence_loss(state.extractor, fb_patches))

    g_adv = _mean_loss(g_adv_terms) if g_adv_terms else None
    cyc = _mean_loss(cyc_terms) if cyc_terms else None
    corr = _mean_loss(corr_terms) if corr_terms else None

    total = None
    for term, weight in ((g_adv, w.adv), (cyc, w.cyc), (corr, w.corr)):
        if term is None:
            continue
        piece = grad.mul_scalar(term, weight)
        total = piece if total is None else grad.add(total, piece)

    if total is not None:
        grad.backward(total)
        if update_g:
            _adam_update(state.g_params, state.m, state.v, t,
                         cfg.learning_rate, cfg.adam_betas)
    _zero_grads(state.params)
    _set_requires(state.d_a_params + state.d_b_params, True)

    # critic step on detached fakes; the generators see none of it
    d_a_val = d_b_val = 0.0
    if w.adv != 0.0:
        _set_requires(state.g_params, False)
        for pair, (x_a, x_b, fake_a, fake_b) in zip(pairs, fakes):
            fa = fake_a.detach()
            fb = fake_b.detach()
            real_a_p = _patches_from_strip(x_a, pair.glossy_corr, patch, res)
            real_b_p = _patches_from_strip(x_b, pair.diffuse_corr, patch, res)
            fake_a_p = _patches_from_strip(fa, pair.diffuse_corr, patch, res)
            fake_b_p = _patches_from_strip(fb, pair.glossy_corr, patch, res)
            d_a_real.append(state.bank_a(x_a, grad.concat(real_a_p, axis=3)))
            d_a_fake.append(state.bank_a(fa, grad.concat(fake_a_p, axis=3)))
            d_b_real.append(state.bank_b(x_b, grad.concat(real_b_p, axis=3)))
            d_b_fake.append(state.bank_b(fb, grad.concat(fake_b_p, axis=3)))

        d_a = _mean_loss([lsgan_d_loss(r, f) for r, f in zip(d_a_real, d_a_fake)])
        d_b = _mean_loss([lsgan_d_loss(r, f) for r, f in zip(d_b_real, d_b_fake)])
        d_a_val = d_a.item()
        d_b_val = d_b.item()
        grad.backward(grad.add(d_a, d_b))
        if update_d:
            _adam_update(state.d_a_params + state.d_b_params, state.m, state.v,
                         t, cfg.learning_rate, cfg.adam_betas)
        _zero_grads(state.params)
        _set_requires(state.g_params, True)

    g_adv_val = g_adv.item() if g_adv is not None else 0.0
    cyc_val = cyc.item() if cyc is not None else 0.0
    corr_val = corr.item() if corr is not None else 0.0
    total_val = w.adv * g_adv_val + w.cyc * cyc_val + w.corr * corr_val
    log = StepLog(t, g_adv_val, d_a_val, d_b_val, cyc_val, corr_val, total_val)

    for name, val in (("g_adv", log.g_adv), ("d_A", log.d_A), ("d_B", log.d_B),
                      ("cyc", log.cyc), ("corr", log.corr), ("total", log.total)):
        if not math.isfinite(val):
            raise TrainingError(
                f"non-finite loss component {name}={val} at iteration {t}; "
                f"full log: {log}")

    state.iteration = t
    state.history.append(tuple(log.row()))
    return state, log


# -- full loop with checkpoint/resume -----------------------------------------

def checkpoint_path(out_dir, iteration):
    return Path(out_dir) / f"checkpoint_{iteration:06d}.npz"


def latest_checkpoint(out_dir):
    best = None
    for p in Path(out_dir).glob("checkpoint_*.npz"):
        m = re.fullmatch(r"checkpoint_(\d{6})\.npz", p.name)
        if m and (best is None or int(m.group(1)) > best[0]):
            best = (int(m.group(1)), p)
    return best


def _rewrite_metrics(path, upto):
    """Drop rows past the resume point so the curve has no duplicates."""
    if not path.exists():
        return
    with open(path) as f:
        rows = list(csv.reader(f))
    kept = [r for r in rows[1:] if r and int(r[0]) <= upto]
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(METRICS_COLUMNS)
        wr.writerows(kept)


def train(dataset_dir, cfg: TrainConfig, out_dir, progress=None):
    """Run (or resume) a full training job.

    Writes checkpoint_<iter>.npz every checkpoint_every iterations plus
    a final one at max_iterations, and appends one metrics row per
    iteration to metrics.csv. Resuming from a kill reproduces the
    uninterrupted run exactly.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(dataset_dir)
    patch = cfg.patch_size or int(manifest["config"]["patch_size"])
    data = TrainData(dataset_dir, patch)

    resume = latest_checkpoint(out)
    if resume is not None:
        state = TrainState.load(resume[1], expected_cfg=cfg)
    else:
        state = TrainState(cfg, data.resolution, patch)

    metrics = out / METRICS_NAME
    _rewrite_metrics(metrics, state.iteration)
    if not metrics.exists():
        with open(metrics, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_COLUMNS)

    with open(metrics, "a", newline="") as f:
        wr = csv.writer(f)
        while state.iteration < cfg.max_iterations:
            batch = [sample_training_pair(data, state.rng)
                     for _ in range(cfg.batch_size)]
            state, log = train_step(state, batch, cfg)
            wr.writerow(log.row())
            f.flush()
            if state.iteration % cfg.checkpoint_every == 0 \
                    or state.iteration == cfg.max_iterations:
                state.save(checkpoint_path(out, state.iteration))
            if progress is not None:
                progress(log)

    final = checkpoint_path(out, cfg.max_iterations)
    if not final.exists():
        state.save(final)
    return state, final
