"""Binary measurement operators, sub-masking, structured patterns, lattice inflation.

A mask is a boolean array (``True`` = observed) with the same shape as the
field it measures. Functions that draw masks accept anything
``numpy.random.default_rng`` accepts as a seed, and operate on a single
``(H, W)`` mask or a batch ``(..., H, W)`` where noted.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DatasetIOError, DomainError

MASK_MAGIC = b"AMSK"
_MASK_HEADER = struct.Struct("<4sII")


class Pattern(str, enum.Enum):
    RANDOM = "random"
    PATCH = "patch"
    COLUMN = "column"
    WINDOW = "window"
    LATTICE = "lattice"


@dataclass(frozen=True)
class MaskPolicy:
    """How observation masks (or sub-masks) are drawn.

    For :func:`make_mask`, ``ratio`` is the observed fraction of the grid
    (points, patches or columns depending on ``pattern``). For ``LATTICE``
    it is the fraction of the grid kept after the extra random mask; any
    ratio at or above ``1 / factor**2`` keeps the full lattice.

    For :func:`sample_submask`, either ``withhold_count`` or
    ``keep_fraction`` sets how many observed units are withheld, where a
    unit is a point, patch, column or window.
    """

    pattern: Pattern = Pattern.RANDOM
    ratio: float = 0.03
    keep_fraction: float | None = None
    withhold_count: int | None = None
    patch_size: int = 4
    window: tuple | None = None
    factor: int = 4
    shift: tuple | None = (0, 0)
    fixed_per_sample: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigurationError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.keep_fraction is not None and not 0.0 <= self.keep_fraction <= 1.0:
            raise ConfigurationError(f"keep_fraction must lie in [0, 1], got {self.keep_fraction}")
        if self.withhold_count is not None and self.withhold_count < 0:
            raise ConfigurationError("withhold_count must be non-negative")
        if self.patch_size < 1 or self.factor < 1:
            raise ConfigurationError("patch_size and factor must be positive")

    @property
    def is_identity(self):
        """True when sub-masking withholds nothing (the naive ``B = I`` case)."""
        if self.withhold_count is not None:
            return self.withhold_count == 0
        return self.keep_fraction is None or self.keep_fraction == 1.0


NO_SUBMASK = MaskPolicy(withhold_count=0)


class PartialObservation(NamedTuple):
    field: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class MaskStats:
    observed: int
    total: int
    fraction: float
    largest_gap: float


def _round(x):
    return int(np.floor(x + 0.5))


def _shape(resolution):
    if np.isscalar(resolution):
        return int(resolution), int(resolution)
    h, w = resolution
    return int(h), int(w)


def _choose(rng, n, k):
    return rng.permutation(n)[:k]


def make_mask(policy, resolution, seed):
    """Draw one observation mask ``A`` deterministically from ``seed``."""
    h, w = _shape(resolution)
    rng = np.random.default_rng(seed)
    m = np.zeros((h, w), dtype=bool)
    pat = policy.pattern
    if pat is Pattern.RANDOM:
        m.ravel()[_choose(rng, h * w, _round(policy.ratio * h * w))] = True
    elif pat is Pattern.PATCH:
        p = policy.patch_size
        if h % p or w % p:
            raise ConfigurationError(f"patch size {p} does not tile a {h}x{w} grid")
        th, tw = h // p, w // p
        tiles = np.zeros(th * tw, dtype=bool)
        tiles[_choose(rng, th * tw, _round(policy.ratio * th * tw))] = True
        m = np.kron(tiles.reshape(th, tw), np.ones((p, p), dtype=bool)).astype(bool)
    elif pat is Pattern.COLUMN:
        m[:, _choose(rng, w, _round(policy.ratio * w))] = True
    elif pat is Pattern.WINDOW:
        if policy.window is not None:
            r0, c0, wh, ww = policy.window
        else:
            side = _round(np.sqrt(policy.ratio) * min(h, w))
            wh = ww = side
            r0 = int(rng.integers(0, h - wh + 1))
            c0 = int(rng.integers(0, w - ww + 1))
        if r0 < 0 or c0 < 0 or wh < 0 or ww < 0 or r0 + wh > h or c0 + ww > w:
            raise ConfigurationError(f"window {(r0, c0, wh, ww)} exceeds the {h}x{w} grid")
        m[r0:r0 + wh, c0:c0 + ww] = True
    elif pat is Pattern.LATTICE:
        f = policy.factor
        if h % f or w % f:
            raise ConfigurationError(f"lattice factor {f} does not divide a {h}x{w} grid")
        if policy.shift is None:
            sx, sy = (int(v) for v in rng.integers(0, f, size=2))
        else:
            sx, sy = policy.shift
        if not (0 <= sx < f and 0 <= sy < f):
            raise ConfigurationError(f"lattice shift {(sx, sy)} must be below factor {f}")
        lattice = np.zeros((h, w), dtype=bool)
        lattice[sx::f, sy::f] = True
        n_lat = int(lattice.sum())
        keep = min(n_lat, _round(policy.ratio * h * w))
        idx = np.flatnonzero(lattice)
        m.ravel()[idx[_choose(rng, n_lat, keep)] if keep < n_lat else idx] = True
    return m


def draw_observation_masks(policy, n_samples, resolution, seed, *, channels=2, epoch=0):
    """Per-sample masks ``(n_samples, channels, H, W)``; channels are drawn independently.

    With ``policy.fixed_per_sample`` the draw for sample ``i`` depends only on
    ``(seed, i, channel)``, so it is identical in every epoch.
    """
    h, w = _shape(resolution)
    out = np.zeros((n_samples, channels, h, w), dtype=bool)
    for i in range(n_samples):
        for c in range(channels):
            key = [int(seed), i, c] if policy.fixed_per_sample else [int(seed), i, c, int(epoch)]
            out[i, c] = make_mask(policy, (h, w), np.random.SeedSequence(key))
    return out


def apply_mask(x, m):
    """Zero the unobserved entries of ``x``; observed entries are returned bit-for-bit."""
    x = np.asarray(x)
    m = np.asarray(m, dtype=bool)
    if x.shape != m.shape:
        raise ConfigurationError(f"field shape {x.shape} does not match mask shape {m.shape}")
    return PartialObservation(np.where(m, x, np.zeros((), dtype=x.dtype)), m)


def _withhold_count(n_units, policy):
    if policy.withhold_count is not None:
        k = int(policy.withhold_count)
    elif policy.keep_fraction is not None:
        k = n_units - _round(policy.keep_fraction * n_units)
    else:
        k = 0
    if k > n_units:
        raise DomainError(f"cannot withhold {k} units from {n_units} observed")
    return k


def _submask_random(a, policy, rng):
    flat = a.reshape(-1, a.shape[-2] * a.shape[-1])
    n_obs = flat.sum(axis=1)
    k = np.array([_withhold_count(int(c), policy) for c in n_obs])
    out = flat.copy()
    if k.max(initial=0) == 0:
        return out.reshape(a.shape)
    scores = rng.random(flat.shape)
    scores[~flat] = 2.0  # unobserved entries are never withheld
    order = np.argsort(scores, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(flat.shape[1])[None, :], axis=1)
    out &= ~(rank < k[:, None])
    return out.reshape(a.shape)


def _submask_units(a, policy, rng):
    h, w = a.shape[-2:]
    out = a.reshape(-1, h, w).copy()
    for m in out:
        if policy.pattern is Pattern.COLUMN:
            units = np.flatnonzero(m.any(axis=0))
            drop = units[_choose(rng, len(units), _withhold_count(len(units), policy))]
            m[:, drop] = False
        elif policy.pattern is Pattern.PATCH:
            p = policy.patch_size
            if h % p or w % p:
                raise ConfigurationError(f"patch size {p} does not tile a {h}x{w} grid")
            tiles = m.reshape(h // p, p, w // p, p).any(axis=(1, 3))
            units = np.flatnonzero(tiles)
            for t in units[_choose(rng, len(units), _withhold_count(len(units), policy))]:
                ti, tj = divmod(int(t), w // p)
                m[ti * p:(ti + 1) * p, tj * p:(tj + 1) * p] = False
        elif policy.pattern is Pattern.WINDOW:
            if policy.window is None:
                raise ConfigurationError("window sub-masking needs policy.window = (_, _, height, width)")
            _, _, wh, ww = policy.window
            for _ in range(int(policy.withhold_count or 0)):
                r0 = int(rng.integers(0, h - wh + 1))
                c0 = int(rng.integers(0, w - ww + 1))
                m[r0:r0 + wh, c0:c0 + ww] = False
        else:
            raise ConfigurationError(f"pattern {policy.pattern} has no unit-wise sub-masking")
    return out.reshape(a.shape)


def sample_submask(a, policy, seed):
    """Draw ``B~ = B A``: withhold observed units of ``a`` (never reveal new ones).

    ``a`` may be a single mask or a batch; each mask in the batch gets an
    independent draw. Random and lattice patterns withhold individual
    points; patch, column and window patterns withhold whole units.

    Raises:
        DomainError: if more units are withheld than are observed.
    """
    a = np.asarray(a, dtype=bool)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if policy.is_identity:
        return a.copy()
    if policy.pattern in (Pattern.RANDOM, Pattern.LATTICE):
        return _submask_random(a, policy, rng)
    return _submask_units(a, policy, rng)


def inflate_lowres(lowres, factor, shift=(0, 0)):
    """Embed a low-resolution field on the lattice of a ``factor``-times finer grid."""
    lowres = np.asarray(lowres)
    factor = int(factor)
    sx, sy = shift
    if factor < 2:
        raise ConfigurationError("inflation factor must be at least 2")
    if not (0 <= sx < factor and 0 <= sy < factor):
        raise ConfigurationError(f"shift {shift} must have components below factor {factor}")
    h, w = lowres.shape
    field = np.zeros((factor * h, factor * w), dtype=lowres.dtype)
    mask = np.zeros((factor * h, factor * w), dtype=bool)
    field[sx::factor, sy::factor] = lowres
    mask[sx::factor, sy::factor] = True
    return PartialObservation(field, mask)


def downsample_lattice(x, factor, shift=(0, 0)):
    sx, sy = shift
    return np.asarray(x)[sx::factor, sy::factor].copy()


def lattice_mask(resolution, factor, shift=(0, 0)):
    h, w = _shape(resolution)
    m = np.zeros((h, w), dtype=bool)
    m[shift[0]::factor, shift[1]::factor] = True
    return m


def mask_stats(m):
    """Observed fraction and the largest Euclidean distance (pixels) to an observed entry."""
    m = np.asarray(m, dtype=bool)
    observed = int(m.sum())
    if observed == 0:
        gap = float("inf")
    elif observed == m.size:
        gap = 0.0
    else:
        gap = float(ndimage.distance_transform_edt(~m).max())
    return MaskStats(observed, int(m.size), observed / m.size, gap)


def write_mask(path, m):
    m = np.asarray(m, dtype=bool)
    if m.ndim != 2:
        raise ConfigurationError("mask files hold a single 2-D mask")
    h, w = m.shape
    blob = _MASK_HEADER.pack(MASK_MAGIC, h, w) + np.packbits(m.ravel(), bitorder="little").tobytes()
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc


def read_mask(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    if len(raw) < _MASK_HEADER.size:
        raise DatasetIOError(path, "truncated mask header")
    magic, h, w = _MASK_HEADER.unpack_from(raw)
    if magic != MASK_MAGIC:
        raise DatasetIOError(path, f"bad magic {magic!r}")
    nbytes = (h * w + 7) // 8
    if len(raw) != _MASK_HEADER.size + nbytes:
        raise DatasetIOError(path, "mask payload size mismatch")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, offset=_MASK_HEADER.size), bitorder="little")
    return bits[: h * w].reshape(h, w).astype(bool)


def with_withhold(policy, count):
    """Copy of ``policy`` withholding exactly ``count`` units."""
    return replace(policy, withhold_count=int(count), keep_fraction=None)
