"""Masked rectified-flow training and Euler sampling.

Three training modes share one code path:

* ``naive``: condition on every observed entry (``B = I``).
* ``ambient``: withhold a random subset of observed entries from the
  conditioning, still supervise on all of them.
* ``direct``: no noise and no flow time; a single forward pass maps the
  conditioning to predictions (``direction`` selects forward, inverse or
  joint masking).

The network predicts the clean endpoint; the velocity is recovered as
``(x_hat - x_t) / (1 - t)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .errors import ConfigurationError, DomainError, NumericalError
from .measurement import NO_SUBMASK, MaskPolicy, sample_submask
from .model import masked_mse

log = logging.getLogger(__name__)

MODES = ("naive", "ambient", "direct")
DIRECTIONS = ("joint", "forward", "inverse")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ambient"
    direction: str = "joint"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip_grad: float = 1.0
    lr_schedule: str = "constant"  # "constant" | "cosine"
    submask: MaskPolicy = field(default_factory=lambda: MaskPolicy(keep_fraction=2 / 3))
    resample: str = "step"  # "step" | "epoch" | "fixed"
    masked_states: bool = True
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.lr > 0 or not self.clip_grad > 0:
            raise ConfigurationError("learning rate and grad-clip norm must be positive")
        if self.resample not in ("step", "epoch", "fixed"):
            raise ConfigurationError(f"unknown resample cadence {self.resample!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def effective_submask(self):
        """The sub-mask policy actually used: identity for naive training."""
        return NO_SUBMASK if self.mode == "naive" else self.submask


@dataclass(frozen=True)
class SampleConfig:
    nfe: int = 4
    seed: int = 0
    ensemble: int = 1
    # snap the coefficient channel to these levels after sampling (Darcy)
    clamp_levels: tuple | None = None
    # False conditions on the full observation mask instead of a sub-mask draw
    submask_at_sampling: bool = True

    def __post_init__(self):
        if self.nfe < 1:
            raise ConfigurationError("nfe must be >= 1")
        if self.ensemble < 1:
            raise ConfigurationError("ensemble must be >= 1")


@dataclass
class FlowModel:
    """A trained predictor bundled with everything sampling needs to replicate training."""

    net: torch.nn.Module
    mode: str
    direction: str
    submask: MaskPolicy
    masked_states: bool
    mean: np.ndarray
    std: np.ndarray

    @property
    def dtype(self):
        return next(self.net.parameters()).dtype

    def meta(self):
        return {
            "mode": self.mode,
            "direction": self.direction,
            "submask": _policy_to_json(self.submask),
            "masked_states": self.masked_states,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_meta(cls, net, meta):
        return cls(
            net,
            meta["mode"],
            meta["direction"],
            _policy_from_json(meta["submask"]),
            bool(meta["masked_states"]),
            np.asarray(meta["mean"], dtype=np.float64),
            np.asarray(meta["std"], dtype=np.float64),
        )

    def normalize(self, x, masks):
        x = (x - self.mean[None, :, None, None]) / self.std[None, :, None, None]
        return np.where(masks, x, 0.0)

    def denormalize(self, x):
        return x * self.std[None, :, None, None] + self.mean[None, :, None, None]


def _policy_to_json(p):
    d = asdict(p)
    d["pattern"] = p.pattern.value
    return d


def _policy_from_json(d):
    d = dict(d)
    for key in ("window", "shift"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return MaskPolicy(**d)


@dataclass
class MidFlowState:
    states: torch.Tensor
    t: torch.Tensor
    noise: torch.Tensor


def interpolate(x_masked, noise, t):
    """Straight-line blend ``t * x + (1 - t) * noise`` (``t`` broadcast per sample)."""
    if isinstance(x_masked, torch.Tensor):
        t = torch.as_tensor(t, dtype=x_masked.dtype)
        if t.ndim == 1:
            t = t[:, None, None, None]
        if bool(((t < 0) | (t > 1)).any()):
            raise DomainError("flow time must lie in [0, 1]")
        return t * x_masked + (1 - t) * noise
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("flow time must lie in [0, 1]")
    if t.ndim == 1:
        t = t[:, None, None, None]
    return t * np.asarray(x_masked) + (1 - t) * np.asarray(noise)


def velocity(x_hat, x, t):
    """Rectified-flow velocity ``(x_hat - x) / (1 - t)``; requires ``t < 1``."""
    if float(np.max(np.asarray(t))) >= 1.0:
        raise DomainError("velocity is undefined at t >= 1")
    return (x_hat - x) / (1 - t)


def conditioning_masks(masks, mode, direction, policy, rng):
    """Draw the conditioning masks ``B~`` for a batch of observation masks ``A``."""
    masks = np.asarray(masks, dtype=bool)
    if mode == "direct" and direction != "joint":
        out = np.zeros_like(masks)
        keep = 0 if direction == "forward" else 1
        out[:, keep] = masks[:, keep]
        return out
    if mode == "naive":
        return masks.copy()
    return sample_submask(masks, policy, rng)


def _torch(x, dtype):
    return torch.as_tensor(np.ascontiguousarray(x), dtype=dtype)


def _step_rng(seed, epoch, step):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 7, int(epoch) + 1, int(step) + 1]))


def train_step(model, optimizer, observations, masks, cond_masks, config, gen, lr=None):
    """One optimiser update on a batch; returns the loss.

    Args:
        model: ``FlowModel`` whose ``net`` is trained in place.
        optimizer: a torch optimiser over ``model.net`` parameters.
        observations: normalised masked observations ``(N, 2, H, W)``.
        masks: supervision masks ``A`` (bool, same shape).
        cond_masks: conditioning masks ``B~ <= A``.
        config: the ``TrainConfig``.
        gen: torch generator for flow time and noise.
    """
    dtype = model.dtype
    obs = _torch(observations, dtype)
    sup = _torch(masks, torch.bool)
    cond = _torch(cond_masks, torch.bool)
    x_masked = obs * cond
    n = obs.shape[0]
    if config.mode == "direct":
        t = torch.ones(n, dtype=dtype)
        states = x_masked
    else:
        t = torch.rand(n, generator=gen, dtype=dtype)
        noise = torch.randn(obs.shape, generator=gen, dtype=dtype)
        states = interpolate(x_masked, noise, t)
        if config.masked_states:
            states = states * cond
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    loss = masked_mse(model.net(states, x_masked, cond, t), obs, sup)
    if not torch.isfinite(loss):
        raise NumericalError("training loss is not finite")
    loss.backward()
    torch.nn.utils.clip_grad_norm_(model.net.parameters(), config.clip_grad)
    optimizer.step()
    return float(loss.detach())


def observed_statistics(observations, masks):
    """Per-channel mean and std computed only from observed entries."""
    c = observations.shape[1]
    mean, std = np.zeros(c), np.ones(c)
    for i in range(c):
        vals = observations[:, i][masks[:, i]]
        if vals.size:
            mean[i] = vals.mean()
            s = vals.std()
            std[i] = s if s > 0 else 1.0
    return mean, std


@dataclass
class TrainResult:
    model: FlowModel
    history: list  # one dict per epoch
    log_rows: list  # (epoch, step, loss, lr)

    def write_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "loss", "lr"])
            for e, s, loss, lr in self.log_rows:
                w.writerow([e, s, repr(float(loss)), repr(float(lr))])


def train(net, observations, masks, config, *, callback=None):
    """Train ``net`` on partial observations only.

    Args:
        net: an initialised ``FieldPredictor``.
        observations: ``(N, 2, H, W)`` values; entries outside ``masks`` are
            discarded on entry, so complete fields may be passed safely.
        masks: per-sample observation masks ``A`` (fixed across epochs).
        config: ``TrainConfig``.
        callback: optional ``callback(model, epoch)`` after each epoch; a
            returned dict is merged into that epoch's history entry.

    Returns:
        ``TrainResult`` with the trained ``FlowModel`` and loss records.
    """
    masks = np.asarray(masks, dtype=bool)
    observations = np.where(masks, np.asarray(observations, dtype=np.float64), 0.0)
    n = observations.shape[0]
    if n == 0:
        raise ConfigurationError("training set is empty")
    if config.normalize:
        mean, std = observed_statistics(observations, masks)
    else:
        mean, std = np.zeros(observations.shape[1]), np.ones(observations.shape[1])
    model = FlowModel(net, config.mode, config.direction, config.effective_submask, config.masked_states, mean, std)
    data = model.normalize(observations, masks)
    optimizer = torch.optim.AdamW(
        net.parameters(), lr=config.lr, betas=config.betas, eps=config.eps, weight_decay=config.weight_decay
    )
    gen = torch.Generator().manual_seed(int(config.seed))
    order_rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 11]))
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = max(1, steps_per_epoch * config.epochs)
    policy = config.effective_submask
    fixed_b = None
    history, rows = [], []
    step = 0
    net.train()
    for epoch in range(config.epochs):
        perm = order_rng.permutation(n)
        epoch_b = None
        if config.resample == "epoch":
            epoch_b = conditioning_masks(masks, config.mode, config.direction, policy, _step_rng(config.seed, epoch, -1))
        elif config.resample == "fixed":
            if fixed_b is None:
                fixed_b = conditioning_masks(masks, config.mode, config.direction, policy, _step_rng(config.seed, -1, -1))
            epoch_b = fixed_b
        losses = []
        for s in range(steps_per_epoch):
            idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
            if epoch_b is None:
                cond = conditioning_masks(masks[idx], config.mode, config.direction, policy, _step_rng(config.seed, epoch, s))
            else:
                cond = epoch_b[idx]
            lr = config.lr
            if config.lr_schedule == "cosine":
                lr = 0.5 * config.lr * (1 + math.cos(math.pi * step / total))
            try:
                loss = train_step(model, optimizer, data[idx], masks[idx], cond, config, gen, lr)
            except NumericalError as exc:
                raise NumericalError(f"{exc} at epoch {epoch}, step {step}") from exc
            losses.append(loss)
            rows.append((epoch, step, loss, lr))
            step += 1
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if callback is not None:
            net.eval()
            extra = callback(model, epoch)
            net.train()
            if extra:
                entry.update(extra)
        history.append(entry)
        log.info("epoch %d loss %.5f", epoch, entry["loss"])
    net.eval()
    return TrainResult(model, history, rows)


@torch.no_grad()
def _predict(model, states, x_masked, cond, t):
    return model.net(states, x_masked, cond, t)


@torch.no_grad()
def sample(model, observations, masks, config, *, member=0, batch_size=256, return_masks=False):
    """Reconstruct full fields from partial observations.

    Draws conditioning masks from the training-time sub-mask distribution,
    starts from Gaussian noise and takes ``config.nfe`` Euler steps on
    ``t_k = k / K``. The update ``x + (x_hat - x) / (K - k)`` equals
    ``x + v(t_k) / K`` and lands exactly on ``x_hat`` at the last step.
    Direct-regression models make a single forward pass.

    Returns:
        ``(N, 2, H, W)`` reconstructions in physical units (and the
        conditioning masks used when ``return_masks``).
    """
    masks = np.asarray(masks, dtype=bool)
    obs = model.normalize(np.asarray(observations, dtype=np.float64), masks)
    n = obs.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 13, int(member)]))
    if config.submask_at_sampling:
        cond = conditioning_masks(masks, model.mode, model.direction, model.submask, rng)
    else:
        cond = conditioning_masks(masks, "naive", model.direction if model.mode == "direct" else "joint", NO_SUBMASK, rng)
    gen = torch.Generator().manual_seed(int(np.random.SeedSequence([int(config.seed), 17, int(member)]).generate_state(1)[0]))
    dtype = model.dtype
    out = np.empty_like(obs)
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        c = _torch(cond[sl], torch.bool)
        xm = _torch(obs[sl], dtype) * c
        if model.mode == "direct":
            x = _predict(model, xm, xm, c, torch.ones(xm.shape[0], dtype=dtype))
        else:
            x = torch.randn(xm.shape, generator=gen, dtype=dtype)
            K = config.nfe
            for k in range(K):
                t_k = k / K
                states = x * c if model.masked_states else x
                x_hat = _predict(model, states, xm, c, torch.full((xm.shape[0],), t_k, dtype=dtype))
                r = 1.0 / (K - k)
                x = x_hat if k == K - 1 else x + r * (x_hat - x)
        out[sl] = x.double().numpy()
    out = model.denormalize(out)
    if config.clamp_levels is not None:
        levels = np.asarray(config.clamp_levels, dtype=np.float64)
        nearest = np.abs(out[:, 0, :, :, None] - levels).argmin(axis=-1)
        out[:, 0] = levels[nearest]
    return (out, cond) if return_masks else out


def sample_ensemble(model, observations, masks, config):
    """Mixture over sub-masks: ``config.ensemble`` independent (noise, B) draws.

    Returns:
        ``(mean, std, samples)`` with ``samples`` shaped ``(n, N, 2, H, W)``.
    """
    samples = np.stack(
        [sample(model, observations, masks, config, member=j) for j in range(config.ensemble)]
    )
    return samples.mean(axis=0), samples.std(axis=0), samples
