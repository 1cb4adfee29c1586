"""Translation networks.

A strip of three neighbouring views is concatenated along width and fed
to an encoder-decoder generator with skip connections; realism is judged
by a bank of five patch discriminators that share one architecture but
see the input at different scales (three on the full strip, two on a
narrow patch strip around sampled correspondences).

Channel widths follow a doubling rule capped at eight times the base
width.  Hidden activations are pixel-normalized (unit RMS over channels)
rather than batch-normalized since batches are single images.
"""

import math

import numpy as np

from . import grad
from .errors import ConfigError

WIDTH_CAP_MULT = 8
LEAKY_SLOPE = 0.2


def xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2d:
    def __init__(self, cin, cout, k, stride, pad, rng, dtype=np.float32):
        self.stride = stride
        self.pad = pad
        fan = k * k
        w = xavier_uniform(rng, (cout, cin, k, k), cin * fan, cout * fan, dtype)
        self.w = grad.Tensor(w, requires_grad=True)
        self.b = grad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return grad.bias_add(grad.conv2d(x, self.w, self.stride, self.pad), self.b)

    def named_parameters(self, prefix):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]


class ConvTranspose2d:
    def __init__(self, cin, cout, k, stride, pad, rng, dtype=np.float32):
        self.stride = stride
        self.pad = pad
        fan = k * k
        v = xavier_uniform(rng, (cin, cout, k, k), cin * fan, cout * fan, dtype)
        self.w = grad.Tensor(v, requires_grad=True)
        self.b = grad.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return grad.bias_add(
            grad.conv_transpose2d(x, self.w, self.stride, self.pad), self.b
        )

    def named_parameters(self, prefix):
        return [(prefix + ".w", self.w), (prefix + ".b", self.b)]


def encoder_channels(base, depth):
    return [min(base * 2 ** i, WIDTH_CAP_MULT * base) for i in range(depth)]


class Generator:
    """Strip-to-strip encoder-decoder with skip connections.

    Encoder: ``depth`` stride-2 4x4 convs; the first layer skips the
    normalization, the bottleneck uses ReLU, everything between uses
    pixel norm + leaky ReLU. Decoder: per level a stride-2 4x4 transposed
    conv followed by a 3x3 conv, pixel norm and ReLU; the final level
    maps straight to ``out_ch`` channels and tanh. Encoder features are
    concatenated into every decoder level except the first (which takes
    only the bottleneck) and the last.
    """

    def __init__(self, in_ch=3, out_ch=3, base=64, depth=9, rng=None,
                 dtype=np.float32):
        if depth < 3:
            raise ConfigError(f"generator depth must be >= 3, got {depth}")
        if base < 1:
            raise ConfigError(f"generator base width must be >= 1, got {base}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.base = base
        self.depth = depth

        enc_ch = encoder_channels(base, depth)
        self.enc = []
        prev = in_ch
        for i in range(depth):
            self.enc.append(Conv2d(prev, enc_ch[i], 4, 2, 1, rng, dtype))
            prev = enc_ch[i]

        # decoder targets mirror the encoder; final level emits out_ch
        tgt = [enc_ch[depth - 1 - j] for j in range(1, depth)] + [out_ch]
        self.dec_up = []
        self.dec_conv = []
        prev = enc_ch[depth - 1]
        for j in range(1, depth + 1):
            cin = prev
            if 2 <= j <= depth - 1:
                cin += enc_ch[depth - j]
            cout = tgt[j - 1]
            self.dec_up.append(ConvTranspose2d(cin, cout, 4, 2, 1, rng, dtype))
            self.dec_conv.append(Conv2d(cout, cout, 3, 1, 1, rng, dtype))
            prev = cout

    def __call__(self, x):
        h, w = x.shape[2], x.shape[3]
        div = 2 ** self.depth
        if h % div or w % div:
            raise ConfigError(
                f"generator input {h}x{w} not divisible by 2^depth={div}"
            )
        skips = []
        cur = x
        for i, layer in enumerate(self.enc):
            cur = layer(cur)
            if i == self.depth - 1:
                cur = grad.relu(cur)
            elif i == 0:
                cur = grad.leaky_relu(cur, LEAKY_SLOPE)
            else:
                cur = grad.leaky_relu(grad.pixel_norm(cur), LEAKY_SLOPE)
            skips.append(cur)

        for j in range(1, self.depth + 1):
            if 2 <= j <= self.depth - 1:
                cur = grad.concat([cur, skips[self.depth - j]], axis=1)
            cur = self.dec_up[j - 1](cur)
            cur = self.dec_conv[j - 1](cur)
            if j < self.depth:
                cur = grad.relu(grad.pixel_norm(cur))
            else:
                cur = grad.tanh(cur)
        return cur

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.enc):
            out.extend(layer.named_parameters(f"{prefix}enc{i}"))
        for j in range(self.depth):
            out.extend(self.dec_up[j].named_parameters(f"{prefix}dec{j}_up"))
            out.extend(self.dec_conv[j].named_parameters(f"{prefix}dec{j}_conv"))
        return out


def generator_layer_shapes(h, w, in_ch=3, out_ch=3, base=64, depth=9):
    """Analytic per-layer output shapes, no arrays involved.

    Returns a list of (layer_name, (channels, height, width)).
    """
    enc_ch = encoder_channels(base, depth)
    shapes = []
    ch, cw = h, w
    for i in range(depth):
        ch //= 2
        cw //= 2
        shapes.append((f"enc{i}", (enc_ch[i], ch, cw)))
    tgt = [enc_ch[depth - 1 - j] for j in range(1, depth)] + [out_ch]
    cur_c = enc_ch[depth - 1]
    for j in range(1, depth + 1):
        cin = cur_c
        if 2 <= j <= depth - 1:
            cin += enc_ch[depth - j]
        ch *= 2
        cw *= 2
        shapes.append((f"dec{j - 1}_up[in={cin}]", (tgt[j - 1], ch, cw)))
        shapes.append((f"dec{j - 1}_conv", (tgt[j - 1], ch, cw)))
        cur_c = tgt[j - 1]
    return shapes


class Discriminator:
    """PatchGAN-style critic: stride-2 4x4 convs down to a score map.

    ``n_layers`` convolutions total, widths doubling from ``base`` and
    capped, final layer maps to one channel with no activation. Pixel
    norm on all hidden layers except the first.
    """

    def __init__(self, base=64, n_layers=5, in_ch=3, rng=None, dtype=np.float32):
        if n_layers < 2:
            raise ConfigError(f"discriminator needs >= 2 layers, got {n_layers}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.base = base
        self.n_layers = n_layers
        chans = [min(base * 2 ** i, WIDTH_CAP_MULT * base)
                 for i in range(n_layers - 1)] + [1]
        self.layers = []
        prev = in_ch
        for c in chans:
            self.layers.append(Conv2d(prev, c, 4, 2, 1, rng, dtype))
            prev = c

    def min_input(self):
        return 2 ** self.n_layers

    def __call__(self, x):
        h, w = x.shape[2], x.shape[3]
        need = self.min_input()
        if h < need or w < need or h % need or w % need:
            raise ConfigError(
                f"discriminator with {self.n_layers} layers needs inputs "
                f">= {need} px and divisible by {need}, got {h}x{w}"
            )
        cur = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            cur = layer(cur)
            if i == last:
                break
            if i == 0:
                cur = grad.leaky_relu(cur, LEAKY_SLOPE)
            else:
                cur = grad.leaky_relu(grad.pixel_norm(cur), LEAKY_SLOPE)
        return cur

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}conv{i}"))
        return out


def discriminator_layer_shapes(h, w, base=64, n_layers=5):
    chans = [min(base * 2 ** i, WIDTH_CAP_MULT * base)
             for i in range(n_layers - 1)] + [1]
    shapes = []
    ch, cw = h, w
    for i, c in enumerate(chans):
        ch //= 2
        cw //= 2
        shapes.append((f"conv{i}", (c, ch, cw)))
    return shapes


SEQ_SCALES = (1, 2, 4)
PATCH_SCALES = (1, 2)


class DiscriminatorBank:
    """Five independent critics over multi-scale strip and patch views.

    Heads 0-2 see the full concatenated strip at full, half and quarter
    resolution; heads 3-4 see the patch strip at full and half. Scaling
    uses 2x average pooling.
    """

    def __init__(self, base=64, n_layers=5, in_ch=3, rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_layers = n_layers
        self.seq_heads = [Discriminator(base, n_layers, in_ch, rng, dtype)
                          for _ in SEQ_SCALES]
        self.patch_heads = [Discriminator(base, n_layers, in_ch, rng, dtype)
                            for _ in PATCH_SCALES]

    @property
    def heads(self):
        return self.seq_heads + self.patch_heads

    def validate_sizes(self, strip_hw, patch_hw):
        """Raise ConfigError if any head would see a too-small input."""
        need = 2 ** self.n_layers
        for scale in SEQ_SCALES:
            h, w = strip_hw[0] // scale, strip_hw[1] // scale
            if h < need or w < need:
                raise ConfigError(
                    f"strip head at 1/{scale} scale sees {h}x{w}; "
                    f"discriminator with {self.n_layers} layers needs >= {need} px"
                )
        for scale in PATCH_SCALES:
            h, w = patch_hw[0] // scale, patch_hw[1] // scale
            if h < need or w < need:
                raise ConfigError(
                    f"patch head at 1/{scale} scale sees {h}x{w}; "
                    f"discriminator with {self.n_layers} layers needs >= {need} px"
                )

    def __call__(self, strip, patch):
        """Score a full strip and a patch strip; returns 5 score maps."""
        outs = []
        cur = strip
        for i, head in enumerate(self.seq_heads):
            if i > 0:
                cur = grad.avg_pool2(cur)
            outs.append(head(cur))
        cur = patch
        for i, head in enumerate(self.patch_heads):
            if i > 0:
                cur = grad.avg_pool2(cur)
            outs.append(head(cur))
        return outs

    def named_parameters(self, prefix=""):
        out = []
        for i, head in enumerate(self.seq_heads):
            out.extend(head.named_parameters(f"{prefix}seq{i}."))
        for i, head in enumerate(self.patch_heads):
            out.extend(head.named_parameters(f"{prefix}patch{i}."))
        return out


def auto_n_layers(patch_size, cap=5):
    """Deepest critic that still fits the half-scale patch head."""
    n = int(math.floor(math.log2(max(2, patch_size // 2))))
    return max(2, min(cap, n))


# -- view strip helpers -------------------------------------------------------

def to_nchw(img):
    """(H,W,3) float image -> (1,3,H,W) float32 array."""
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None]).astype(
        np.float32, copy=False)


def to_hwc(arr):
    """(1,3,H,W) -> (H,W,3)."""
    return np.ascontiguousarray(arr[0].transpose(1, 2, 0))


def concat_views(views):
    """Concatenate k (H,W,3) views along width -> (1,3,H,k*W)."""
    return np.concatenate([to_nchw(v) for v in views], axis=3)


def split_views(strip, k):
    """(1,3,H,k*W) -> list of k (H,W,3) views."""
    w = strip.shape[3] // k
    return [to_hwc(strip[:, :, :, i * w:(i + 1) * w]) for i in range(k)]
