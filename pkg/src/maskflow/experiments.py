"""Experiment assembly: config-to-object builders, toy data and protocols."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError
from .flow import SampleConfig, TrainConfig, sample, train
from .measurement import MaskPolicy, Pattern, draw_observation_masks
from .metrics import relative_l2, mean_percentage
from .model import Architecture, init_network
from .oracle import build_prior, pair_prior, sample_prior
from .pde import Dataset, GRFParams, PDEKind, PDESpec, generate_pairs

log = logging.getLogger(__name__)


def pde_spec_from_config(cfg):
    kind = PDEKind.parse(cfg["data.kind"])
    grf = None
    if cfg["pde.grf_exponent"] is not None or cfg["pde.grf_amplitude"] is not None:
        base = PDESpec(kind).grf
        grf = GRFParams(
            cfg["pde.grf_exponent"] if cfg["pde.grf_exponent"] is not None else base.exponent,
            cfg["pde.grf_amplitude"] if cfg["pde.grf_amplitude"] is not None else base.amplitude,
        )
    return PDESpec(
        kind,
        wave_number=cfg["pde.wave_number"],
        viscosity=cfg["pde.viscosity"],
        horizon=cfg["pde.horizon"],
        time_steps=cfg["pde.time_steps"],
        grf=grf,
        darcy_threshold=cfg["pde.darcy_threshold"],
    )


def observation_policy_from_config(cfg):
    return MaskPolicy(
        pattern=cfg["mask.pattern"],
        ratio=cfg["mask.ratio"],
        patch_size=cfg["mask.patch_size"],
        factor=cfg["mask.factor"],
        shift=None if cfg["mask.pattern"] == "lattice" else (0, 0),
    )


def submask_policy_from_config(cfg):
    pattern = cfg["mask.pattern"]
    if pattern == "window":
        pattern = "random"  # a single observed window is thinned point-wise
    return MaskPolicy(
        pattern=pattern,
        patch_size=cfg["mask.patch_size"],
        factor=cfg["mask.factor"],
        withhold_count=cfg["train.withhold_count"],
        keep_fraction=None if cfg["train.withhold_count"] is not None else cfg["train.keep_fraction"],
    )


def architecture_from_config(cfg):
    padding = cfg["model.padding"]
    if cfg["data.kind"] == "navier_stokes" and padding == "reflect":
        padding = "circular"
    return Architecture(
        backbone=cfg["model.backbone"],
        width=cfg["model.width"],
        depth=cfg["model.depth"],
        kernel_size=cfg["model.kernel_size"],
        embed_dim=cfg["model.embed_dim"],
        padding=padding,
        modes=cfg["model.modes"],
        dilations=cfg["model.dilations"],
    )


def train_config_from_config(cfg):
    return TrainConfig(
        mode=cfg["train.mode"],
        direction=cfg["train.direction"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        betas=(cfg["train.beta1"], cfg["train.beta2"]),
        eps=cfg["train.eps"],
        clip_grad=cfg["train.clip_grad"],
        lr_schedule=cfg["train.lr_schedule"],
        submask=submask_policy_from_config(cfg),
        resample=cfg["train.resample"],
        masked_states=cfg["train.masked_states"],
        seed=cfg["train.seed"],
    )


def sample_config_from_config(cfg, nfe=None, levels=None):
    return SampleConfig(
        nfe=int(nfe if nfe is not None else cfg["sample.nfe"][0]),
        seed=cfg["sample.seed"],
        ensemble=cfg["sample.ensemble"],
        clamp_levels=levels if cfg["sample.clamp"] else None,
        submask_at_sampling=cfg["sample.submask"],
    )


def toy_prior(resolution=16, length_scale=0.2, variance=1.0):
    """Joint Gaussian prior over ``(a, u)`` pairs with ``u`` a scaled Poisson solve of ``a``."""
    return pair_prior(build_prior(resolution, length_scale, variance))


def toy_pairs(prior, n, seed):
    """``(n, 2, H, W)`` exact draws from the pair prior."""
    if n == 0:
        return np.zeros((0,) + tuple(prior.shape))
    return sample_prior(prior, np.random.SeedSequence([int(seed), 101]), n=n)


def make_dataset(cfg, split, resolution=None):
    """Generate the train or test split described by ``cfg`` (stored precision, float32)."""
    n = cfg["data.n_train"] if split == "train" else cfg["data.n_test"]
    seed = cfg["data.seed"] if split == "train" else cfg["data.seed"] + 1_000_003
    res = resolution or cfg["data.resolution"]
    if cfg["data.kind"] == "gaussian":
        x = toy_pairs(toy_prior(res, cfg["data.length_scale"], cfg["data.variance"]), n, seed)
        x = x.reshape((n, 2, res, res)).astype(np.float32)
        return Dataset(PDEKind.GAUSSIAN, x[:, 0].copy(), x[:, 1].copy())
    return generate_pairs(pde_spec_from_config(cfg), n, res, seed)


def observation_masks(cfg, n, split, resolution=None):
    seed = cfg["mask.seed"] if split == "train" else cfg["mask.seed"] + 1_000_003
    return draw_observation_masks(observation_policy_from_config(cfg), n, resolution or cfg["data.resolution"], seed)


# --- super-resolution -------------------------------------------------------


def lattice_region(masks, factor):
    """Full lattice containing each mask's observed points (one residue class per mask)."""
    masks = np.asarray(masks, dtype=bool)
    h, w = masks.shape[-2:]
    flat = masks.reshape(-1, h, w)
    out = np.zeros_like(flat)
    for k, m in enumerate(flat):
        pts = np.argwhere(m)
        if len(pts) == 0:
            raise DomainError("cannot locate the lattice of an empty mask")
        sx, sy = pts[0] % factor
        if np.any(pts[:, 0] % factor != sx) or np.any(pts[:, 1] % factor != sy):
            raise DomainError("mask is not confined to a single lattice")
        out[k, sx::factor, sy::factor] = True
    return out.reshape(masks.shape)


def extra_mask_ratio(total_unobserved_pct):
    """Observed grid fraction for a target total-unobserved percentage."""
    if not 0 <= total_unobserved_pct < 100:
        raise ConfigurationError("total unobserved percentage must lie in [0, 100)")
    return 1.0 - total_unobserved_pct / 100.0


@dataclass
class SuperresRow:
    total_unobserved_pct: float  # requested level; nan for the bare lattice
    observed_points: int  # per field, per sample
    actual_unobserved_pct: float
    coeff_offlattice_pct: float
    sol_offlattice_pct: float


def superres_masks(n, resolution, factor, total_unobserved_pct, seed, shift=(0, 0)):
    """Lattice masks ``(n, 2, H, W)`` thinned by an optional extra random subset.

    ``shift`` places the lattice; ``None`` draws a shift per sample.
    """
    lattice_fraction = 1.0 / factor**2
    if total_unobserved_pct is None:
        ratio = lattice_fraction
    else:
        ratio = extra_mask_ratio(total_unobserved_pct)
        if ratio >= lattice_fraction:
            warnings.warn(
                f"{total_unobserved_pct}% unobserved keeps the whole lattice; the lattice structure stays visible",
                RuntimeWarning, stacklevel=2,
            )
    shift = None if shift is None else tuple(int(v) for v in shift)
    policy = MaskPolicy(pattern=Pattern.LATTICE, ratio=min(ratio, lattice_fraction), factor=factor, shift=shift)
    # both fields are seen at the same low-resolution points
    return np.repeat(draw_observation_masks(policy, n, resolution, seed, channels=1), 2, axis=1)


def superres_protocol(train_fields, test_fields, factor, fractions, net_factory, train_config, sample_config,
                      *, include_zero=True, mask_seed=0, shift=(0, 0)):
    """Train on inflated (and extra-masked) observations and score off-lattice reconstruction.

    For each entry of ``fractions`` (total unobserved %, or ``None`` for the
    bare lattice) a model is trained in ambient mode in which training masks
    are the inflated low-resolution lattice thinned by an extra random mask.
    Test masks come from the same distribution; the error is relative L2
    over grid points off the sample's lattice. ``shift`` is the lattice
    offset shared by all samples, or ``None`` for a random offset per sample.
    """
    res = train_fields.shape[-1]
    rows = []
    levels = ([None] if include_zero else []) + list(fractions)
    for j, frac in enumerate(levels):
        a_tr = superres_masks(len(train_fields), res, factor, frac, 2 * mask_seed, shift)
        a_te = superres_masks(len(test_fields), res, factor, frac, 2 * mask_seed + 1, shift)
        result = train(net_factory(), train_fields, a_tr, train_config)
        pred = sample(result.model, test_fields, a_te, sample_config)
        off = ~lattice_region(a_te, factor)
        errs = [
            mean_percentage(lambda t, p, m: relative_l2(t[m], p[m]), test_fields[:, c], pred[:, c], off[:, c])
            for c in range(2)
        ]
        n_obs = int(a_te[0, 0].sum())
        rows.append(SuperresRow(
            float("nan") if frac is None else float(frac), n_obs, 100.0 * (1 - n_obs / a_te[0, 0].size), *errs
        ))
        log.info("superres %s: %s", frac, errs)
    return rows


def write_superres_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["total_unobserved_pct", "observed_points", "actual_unobserved_pct", "coeff_offlattice_pct",
                    "sol_offlattice_pct"])
        for r in rows:
            w.writerow([repr(r.total_unobserved_pct), r.observed_points, repr(r.actual_unobserved_pct),
                        repr(r.coeff_offlattice_pct), repr(r.sol_offlattice_pct)])
