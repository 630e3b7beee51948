"""Conditional field predictor and its checkpoint format.

The network maps (masked mid-flow states, masked observations, masks,
time) to full-resolution predictions of every field. Inputs are stacked
as channels on the grid; the time embedding is broadcast to constant
channels.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, DatasetIOError, NumericalError

CKPT_MAGIC = b"APRM"


@dataclass(frozen=True)
class Architecture:
    """Descriptor of a :class:`FieldPredictor`."""

    backbone: str = "conv"  # "conv" | "spectral"
    width: int = 32
    depth: int = 4
    kernel_size: int = 3
    embed_dim: int = 8
    padding: str = "reflect"  # "reflect" | "circular" | "zeros"
    modes: int = 8
    dilations: tuple = (1,)
    fields: int = 2
    zero_head: bool = True
    # Gaussian widths (pixels) of the mask-normalised interpolation features
    interp_scales: tuple = (1.0, 2.0, 4.0)
    # feed the raw input channels to the linear head alongside the features
    input_skip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "interp_scales", tuple(float(v) for v in self.interp_scales))
        if self.backbone not in ("conv", "spectral"):
            raise ConfigurationError(f"unknown backbone {self.backbone!r}")
        if min(self.width, self.depth, self.kernel_size, self.fields) < 1:
            raise ConfigurationError("width, depth, kernel_size and fields must be positive")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be odd")
        if self.embed_dim < 0 or self.embed_dim % 2:
            raise ConfigurationError("embed_dim must be a non-negative even number")
        if self.padding not in ("reflect", "circular", "zeros"):
            raise ConfigurationError(f"unknown padding {self.padding!r}")
        if not self.dilations or min(self.dilations) < 1:
            raise ConfigurationError("dilations must be positive")
        if any(not v > 0 for v in self.interp_scales):
            raise ConfigurationError("interpolation scales must be positive")

    @property
    def in_channels(self):
        # states, observations, masks, (interpolant, coverage) per scale, time
        return (3 + 2 * len(self.interp_scales)) * self.fields + self.embed_dim

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


def time_embedding(t, dim):
    """Sinusoidal features ``[sin(pi 2^j t), cos(pi 2^j t)]`` for ``j < dim/2``, interleaved.

    The lowest frequency spans half a turn over ``[0, 1]``, which keeps the
    map injective on the closed unit interval.
    """
    if dim % 2:
        raise ConfigurationError("embedding dimension must be even")
    t = torch.as_tensor(t)
    freqs = math.pi * (2.0 ** torch.arange(dim // 2, dtype=t.dtype if t.is_floating_point() else torch.float64))
    ang = t.reshape(-1, 1) * freqs.to(t.dtype if t.is_floating_point() else torch.float64)
    emb = torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(ang.shape[0], dim)
    return emb.reshape(tuple(t.shape) + (dim,))


def _blur_matrix(n, sigma, periodic, dtype):
    i = torch.arange(n, dtype=dtype)
    d = (i[:, None] - i[None, :]).abs()
    if periodic:
        d = torch.minimum(d, n - d)
    return torch.exp(-0.5 * (d / sigma) ** 2)


def normalized_interpolants(observations, masks, scales, periodic=False, eps=1e-3):
    """Normalised-convolution estimates of each field from its observed entries.

    For every Gaussian width ``s`` returns ``K(m y) / (K m + eps)`` and the
    coverage ``K m / K 1``, where ``K`` is a separable Gaussian blur of
    width ``s`` (periodic or truncated at the boundary). The output stacks
    ``2 * len(scales)`` channels per field, interpolants first.
    """
    _, c, h, w = observations.shape
    m = masks.to(observations.dtype)
    ym = observations * m
    interp, cover = [], []
    for s in scales:
        kh = _blur_matrix(h, s, periodic, observations.dtype)
        kw = kh if w == h else _blur_matrix(w, s, periodic, observations.dtype)
        num = kh @ ym @ kw.T
        den = kh @ m @ kw.T
        full = kh.sum(1)[:, None] * kw.sum(1)[None, :]
        interp.append(num / (den + eps))
        cover.append(den / full)
    return torch.cat(interp + cover, dim=1)


def _pad(x, amount, mode):
    if amount == 0:
        return x
    if mode == "zeros":
        return F.pad(x, (amount,) * 4)
    return F.pad(x, (amount,) * 4, mode=mode)


class _Conv(nn.Module):
    def __init__(self, cin, cout, k, padding, dilation=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, k, dilation=dilation)
        self.amount = dilation * (k // 2)
        self.mode = padding

    def forward(self, x):
        return self.conv(_pad(x, self.amount, self.mode))


class _ResBlock(nn.Module):
    def __init__(self, width, k, padding, dilation):
        super().__init__()
        self.c1 = _Conv(width, width, k, padding, dilation)
        self.c2 = _Conv(width, width, k, padding, dilation)

    def forward(self, h):
        return h + self.c2(F.silu(self.c1(F.silu(h))))


class SpectralConv2d(nn.Module):
    """Fourier-layer convolution keeping the lowest ``modes`` frequencies per axis."""

    def __init__(self, width, modes):
        super().__init__()
        self.modes = modes
        shape = (2, width, width, modes, modes)
        # [corner, in, out, kx, ky] for real and imaginary parts
        self.weight_re = nn.Parameter(torch.empty(shape))
        self.weight_im = nn.Parameter(torch.empty(shape))

    def forward(self, x):
        n, c, h, w = x.shape
        m1 = min(self.modes, h // 2)
        m2 = min(self.modes, w // 2 + 1)
        xf = torch.fft.rfft2(x)
        out = torch.zeros(n, c, h, w // 2 + 1, dtype=xf.dtype)
        wt = torch.complex(self.weight_re, self.weight_im)
        out[:, :, :m1, :m2] = torch.einsum("bixy,ioxy->boxy", xf[:, :, :m1, :m2], wt[0, :, :, :m1, :m2])
        out[:, :, -m1:, :m2] = torch.einsum("bixy,ioxy->boxy", xf[:, :, -m1:, :m2], wt[1, :, :, :m1, :m2])
        return torch.fft.irfft2(out, s=(h, w))


class _SpectralBlock(nn.Module):
    def __init__(self, width, modes):
        super().__init__()
        self.spectral = SpectralConv2d(width, modes)
        self.pointwise = nn.Conv2d(width, width, 1)

    def forward(self, h):
        return h + F.gelu(self.spectral(h) + self.pointwise(h))


class FieldPredictor(nn.Module):
    """Residual CNN (or Fourier-layer network) predicting every field everywhere."""

    def __init__(self, arch):
        super().__init__()
        self.arch = arch
        if arch.backbone == "conv":
            self.lift = _Conv(arch.in_channels, arch.width, arch.kernel_size, arch.padding)
            self.blocks = nn.ModuleList(
                _ResBlock(arch.width, arch.kernel_size, arch.padding, arch.dilations[i % len(arch.dilations)])
                for i in range(arch.depth)
            )
        else:
            self.lift = nn.Conv2d(arch.in_channels, arch.width, 1)
            self.blocks = nn.ModuleList(_SpectralBlock(arch.width, arch.modes) for _ in range(arch.depth))
        self.head = nn.Conv2d(arch.width + (arch.in_channels if arch.input_skip else 0), arch.fields, 1)

    def assemble(self, states, observations, masks, t):
        n, c, h, w = states.shape
        t = torch.as_tensor(t, dtype=states.dtype).reshape(-1)
        if t.numel() == 1:
            t = t.expand(n)
        parts = [states, observations, masks.to(states.dtype)]
        if self.arch.interp_scales:
            parts.append(normalized_interpolants(
                observations, masks, self.arch.interp_scales, periodic=self.arch.padding == "circular"
            ))
        if self.arch.embed_dim:
            emb = time_embedding(t, self.arch.embed_dim).to(states.dtype)
            parts.append(emb[:, :, None, None].expand(n, self.arch.embed_dim, h, w))
        x = torch.cat(parts, dim=1)
        if x.shape[1] != self.arch.in_channels:
            raise ConfigurationError(
                f"input has {x.shape[1]} channels, architecture expects {self.arch.in_channels}"
            )
        return x

    def forward(self, states, observations, masks, t):
        """Predict ``(N, fields, H, W)`` clean fields.

        Args:
            states: masked mid-flow states ``(N, fields, H, W)``.
            observations: masked observations, same shape.
            masks: the conditioning masks (bool or {0, 1}), same shape.
            t: flow time, scalar or ``(N,)``.
        """
        x = self.assemble(states, observations, masks, t)
        h = self.lift(x)
        for block in self.blocks:
            h = block(h)
        h = F.silu(h) if self.arch.backbone == "conv" else h
        out = self.head(torch.cat([h, x], dim=1) if self.arch.input_skip else h)
        if not torch.isfinite(out).all():
            raise NumericalError("network produced non-finite predictions")
        return out


def parameter_count(arch):
    """Closed-form parameter count of ``FieldPredictor(arch)``."""
    w, k, cin, f = arch.width, arch.kernel_size, arch.in_channels, arch.fields
    head = (w + (cin if arch.input_skip else 0)) * f + f
    if arch.backbone == "conv":
        return cin * w * k * k + w + arch.depth * 2 * (w * w * k * k + w) + head
    return cin * w + w + arch.depth * (2 * 2 * w * w * arch.modes**2 + w * w + w) + head


def init_network(arch, seed, dtype=torch.float32):
    """Deterministic fan-in scaled-uniform initialisation.

    Every weight and bias is drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``
    using a private generator; the output head is zeroed when
    ``arch.zero_head`` is set.
    """
    net = FieldPredictor(arch).to(dtype)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.copy_(torch.rand(module.weight.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
                module.bias.copy_(torch.rand(module.bias.shape, generator=gen, dtype=dtype) * 2 * bound - bound)
            elif isinstance(module, SpectralConv2d):
                scale = 1.0 / module.weight_re.shape[1]
                module.weight_re.copy_(torch.rand(module.weight_re.shape, generator=gen, dtype=dtype) * scale)
                module.weight_im.copy_(torch.rand(module.weight_im.shape, generator=gen, dtype=dtype) * scale)
        if arch.zero_head:
            net.head.weight.zero_()
            net.head.bias.zero_()
    return net


def flat_parameters(net):
    return torch.nn.utils.parameters_to_vector(net.parameters()).detach().cpu().numpy().astype(np.float64)


def set_flat_parameters(net, vec):
    p0 = next(net.parameters())
    torch.nn.utils.vector_to_parameters(torch.as_tensor(np.array(vec, dtype=np.float64), dtype=p0.dtype), net.parameters())


def masked_mse(pred, target, masks):
    """Mean squared error over observed entries, per sample and field.

    Each field's mean runs over its own observed entries; the field terms are
    summed and the result averaged over the batch. A field with no observed
    entries contributes zero.
    """
    m = masks.to(pred.dtype)
    counts = m.sum(dim=(-2, -1))
    if bool((counts == 0).any()):
        warnings.warn("some fields have no observed entries; their loss term is zero", RuntimeWarning, stacklevel=2)
    sq = ((pred - target) ** 2 * m).sum(dim=(-2, -1))
    per = torch.where(counts > 0, sq / counts.clamp(min=1), torch.zeros_like(sq))
    return per.sum(dim=1).mean()


def loss_and_grad(net, inputs, targets, masks):
    """Loss and flat gradient for one batch.

    Args:
        net: a :class:`FieldPredictor`.
        inputs: ``(states, observations, cond_masks, t)`` tuple handed to ``net``.
        targets: values to supervise, ``(N, fields, H, W)``.
        masks: supervision masks ``(A_a, A_u)`` stacked like ``targets``.

    Returns:
        ``(loss, grad)`` with ``grad`` a float64 vector matching
        :func:`flat_parameters`.
    """
    if targets.shape[0] == 0:
        raise ConfigurationError("batch must be non-empty")
    net.zero_grad(set_to_none=False)
    loss = masked_mse(net(*inputs), targets, masks)
    loss.backward()
    grad = torch.cat([p.grad.reshape(-1) for p in net.parameters()])
    return float(loss.detach()), grad.detach().cpu().numpy().astype(np.float64)


def save_checkpoint(path, net, meta=None):
    """``APRM`` | u32 text length | JSON descriptor | u64 count | float64 parameters."""
    text = json.dumps({"architecture": net.arch.to_json(), "meta": meta or {}}, sort_keys=True).encode()
    params = flat_parameters(net)
    blob = (
        CKPT_MAGIC
        + struct.pack("<I", len(text))
        + text
        + struct.pack("<Q", params.size)
        + params.astype("<f8").tobytes()
    )
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc


def load_checkpoint(path, dtype=torch.float32):
    """Return ``(net, meta)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    if raw[:4] != CKPT_MAGIC:
        raise DatasetIOError(path, f"bad magic {raw[:4]!r}")
    (tlen,) = struct.unpack_from("<I", raw, 4)
    doc = json.loads(raw[8:8 + tlen].decode())
    (count,) = struct.unpack_from("<Q", raw, 8 + tlen)
    params = np.frombuffer(raw, dtype="<f8", offset=16 + tlen)
    if params.size != count:
        raise DatasetIOError(path, "parameter payload does not match its count")
    arch = Architecture.from_json(doc["architecture"])
    net = FieldPredictor(arch).to(dtype)
    if count != parameter_count(arch):
        raise DatasetIOError(path, f"checkpoint holds {count} parameters, architecture needs {parameter_count(arch)}")
    set_flat_parameters(net, params)
    return net, doc["meta"]
