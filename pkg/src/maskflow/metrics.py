"""Reconstruction error metrics and the withheld-point sweep."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError

REGIONS = ("observed", "unobserved")


def relative_l2(x_true, x_pred):
    """``100 * ||x_true - x_pred|| / ||x_true||`` over all entries."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    denom = np.linalg.norm(x_true.ravel())
    if denom == 0:
        raise DomainError("relative error undefined for an all-zero reference")
    return 100.0 * np.linalg.norm((x_true - x_pred).ravel()) / denom


def snap_to_levels(x, levels):
    levels = np.asarray(levels, dtype=np.float64)
    return levels[np.abs(np.asarray(x, dtype=np.float64)[..., None] - levels).argmin(axis=-1)]


def misclassification_rate(x_true, x_pred, levels):
    """Percentage of entries whose nearest level differs from the reference."""
    x_true = np.asarray(x_true)
    return 100.0 * float(np.mean(snap_to_levels(x_true, levels) != snap_to_levels(x_pred, levels)))


def restricted_error(x_true, x_pred, mask, region):
    """Relative L2 (%) over the observed or unobserved entries of ``mask`` only."""
    if region not in REGIONS:
        raise DomainError(f"region must be one of {REGIONS}")
    mask = np.asarray(mask, dtype=bool)
    sel = mask if region == "observed" else ~mask
    if not sel.any():
        raise DomainError(f"{region} region is empty")
    return relative_l2(np.asarray(x_true)[sel], np.asarray(x_pred)[sel])


def mean_percentage(fn, x_true, x_pred, *args):
    """Mean over the leading axis of per-example percentages; ``nan`` if every example is undefined."""
    vals = []
    for i in range(len(x_true)):
        try:
            vals.append(fn(x_true[i], x_pred[i], *[a[i] for a in args]))
        except DomainError:
            continue
    return float(np.mean(vals)) if vals else float("nan")


FIELD_NAMES = ("coefficient", "solution")


@dataclass
class EvalReport:
    """Per-field errors averaged over examples.

    ``errors[field][metric]`` with metrics ``rel_l2``, ``observed``,
    ``unobserved`` and, when levels are supplied, ``misclass``.
    """

    errors: dict
    count: int
    nfe: int
    pde: str = ""
    mode: str = ""

    def rows(self):
        for fname in FIELD_NAMES:
            for metric, value in self.errors[fname].items():
                yield (self.pde, self.mode, self.nfe, fname, metric, value)

    def write_csv(self, path, append=False):
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not append:
                w.writerow(["pde", "mode", "nfe", "field", "metric", "value"])
            for r in self.rows():
                w.writerow([*r[:5], repr(float(r[5]))])


def evaluate(truth, pred, masks, *, nfe=0, levels=None, pde="", mode=""):
    """Build an ``EvalReport`` from ``(N, 2, H, W)`` truth, prediction and observation masks."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    errors = {}
    for c, fname in enumerate(FIELD_NAMES):
        t, p, m = truth[:, c], pred[:, c], masks[:, c]
        e = {
            "rel_l2": mean_percentage(relative_l2, t, p),
            "observed": mean_percentage(lambda a, b, mm: restricted_error(a, b, mm, "observed"), t, p, m),
            "unobserved": mean_percentage(lambda a, b, mm: restricted_error(a, b, mm, "unobserved"), t, p, m),
        }
        if levels is not None and c == 0:
            e["misclass"] = mean_percentage(lambda a, b: misclassification_rate(a, b, levels), t, p)
        errors[fname] = e
    return EvalReport(errors, len(truth), nfe, pde, mode)


PAPER_COUNTS = (0, 1, 2, 4, 8, 16, 32, 64, 128, 256)


@dataclass
class SweepRow:
    count: int
    coeff_err_pct: float
    sol_err_pct: float
    coeff_unobs_pct: float = float("nan")
    sol_unobs_pct: float = float("nan")


def feasible_counts(counts, masks, max_withhold_fraction=0.5):
    """Drop counts that would withhold more than the allowed share of the sparsest sample's observations."""
    counts = [int(c) for c in counts]
    if not counts or counts[0] != 0 or counts != sorted(counts):
        raise DomainError("counts must be ascending and start at 0")
    budget = int(np.asarray(masks, dtype=bool).reshape(len(masks), masks.shape[1], -1).sum(-1).min() * max_withhold_fraction)
    kept = [c for c in counts if c <= budget]
    skipped = [c for c in counts if c > budget]
    if skipped:
        warnings.warn(f"withhold counts {skipped} exceed the observation budget {budget}; skipped", RuntimeWarning, stacklevel=2)
    return kept


def one_point_sweep(train_fields, train_masks, test_fields, test_masks, counts, net_factory, train_config, sample_config,
                    *, max_withhold_fraction=0.5, cache=None):
    """Train one model per withheld-point count and evaluate it on held-out data.

    Count 0 trains in naive mode; every other count trains in ambient mode
    with that many observed points withheld per field. All other settings
    (seeds included) are shared. ``cache`` (count -> ``FlowModel``) is
    consulted before training and receives every model trained here.

    Returns:
        list of ``SweepRow`` (full-grid and unobserved-only errors in %).
    """
    from .flow import sample, train
    from .measurement import with_withhold

    rows = []
    for count in feasible_counts(counts, train_masks, max_withhold_fraction):
        if count == 0:
            cfg = replace(train_config, mode="naive")
        else:
            cfg = replace(train_config, mode="ambient", submask=with_withhold(train_config.submask, count))
        if cache is not None and count in cache:
            model = cache[count]
        else:
            model = train(net_factory(), train_fields, train_masks, cfg).model
            if cache is not None:
                cache[count] = model
        pred = sample(model, test_fields, test_masks, sample_config)
        rep = evaluate(test_fields, pred, test_masks, nfe=sample_config.nfe)
        rows.append(SweepRow(
            count,
            rep.errors["coefficient"]["rel_l2"],
            rep.errors["solution"]["rel_l2"],
            rep.errors["coefficient"]["unobserved"],
            rep.errors["solution"]["unobserved"],
        ))
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["count", "coeff_err_pct", "sol_err_pct", "coeff_unobs_pct", "sol_unobs_pct"])
        for r in rows:
            w.writerow([r.count, repr(r.coeff_err_pct), repr(r.sol_err_pct), repr(r.coeff_unobs_pct), repr(r.sol_unobs_pct)])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [SweepRow(int(r["count"]), float(r["coeff_err_pct"]), float(r["sol_err_pct"]),
                         float(r["coeff_unobs_pct"]), float(r["sol_unobs_pct"])) for r in rd]
