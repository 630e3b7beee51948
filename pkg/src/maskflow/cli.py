"""Command-line experiment driver.

Every output file name embeds the hash of the resolved configuration, so
re-running a command with an unchanged config overwrites its own outputs
with byte-identical content.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import torch

from . import experiments as ex
from .config import default_config, load_config
from .errors import ConfigurationError, DatasetIOError, DomainError, NumericalError
from .flow import FlowModel, sample, sample_ensemble, train
from .metrics import evaluate, one_point_sweep, write_sweep_csv
from .model import init_network, load_checkpoint, save_checkpoint
from .pde import Dataset, PDEKind, pde_residual, read_dataset, write_dataset
from .svgplot import write_line_plot

log = logging.getLogger("maskflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
# stored pairs are float32; the audit threshold reflects that rounding
RESIDUAL_AUDIT_TOL = 1e-4


def _levels(cfg):
    if cfg["data.kind"] != "darcy":
        return None
    return tuple(ex.pde_spec_from_config(cfg).darcy_levels)


def _split(cfg, out, split, resolution=None):
    """Load the split written by ``generate`` if present, otherwise regenerate it in memory."""
    path = out / cfg.tagged(split, ".apde")
    ds = read_dataset(path) if path.exists() else ex.make_dataset(cfg, split, resolution)
    fields = ds.stacked()
    return fields, ex.observation_masks(cfg, len(fields), split, fields.shape[-1] if len(fields) else resolution)


def _net(cfg):
    return init_network(ex.architecture_from_config(cfg), cfg["model.seed"])


def _model_path(cfg, out, args):
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / cfg.tagged("model", ".aprm")


def _load_model(cfg, out, args):
    path = _model_path(cfg, out, args)
    net, meta = load_checkpoint(path)
    if "flow" not in meta:
        raise DatasetIOError(path, "checkpoint carries no flow metadata")
    return FlowModel.from_meta(net, meta["flow"]), meta


def cmd_generate(cfg, out, args):
    rows = []
    spec = None if cfg["data.kind"] == "gaussian" else ex.pde_spec_from_config(cfg)
    for split in ("train", "test"):
        ds = ex.make_dataset(cfg, split)
        path = out / cfg.tagged(split, ".apde")
        write_dataset(path, ds)
        worst = max((pde_residual(spec, ds[i]) for i in range(len(ds))), default=0.0) if spec else float("nan")
        rows.append((split, len(ds), worst))
        print(f"wrote {path} ({len(ds)} pairs)")
        if spec is not None and worst > RESIDUAL_AUDIT_TOL:
            warnings.warn(f"{split}: largest stored-pair residual {worst:.3g} exceeds {RESIDUAL_AUDIT_TOL:g}", RuntimeWarning)
    with open(out / cfg.tagged("audit", ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "count", "max_residual"])
        for split, n, worst in rows:
            w.writerow([split, n, repr(float(worst))])
    return EXIT_OK


def cmd_train(cfg, out, args):
    fields, masks = _split(cfg, out, "train")
    net = _net(cfg)
    if args.resume:
        net, meta = load_checkpoint(args.resume)
        if meta.get("config_hash") != cfg.hash:
            raise ConfigurationError(
                f"checkpoint {args.resume} was trained under config {meta.get('config_hash')}, not {cfg.hash}"
            )
    result = train(net, fields, masks, ex.train_config_from_config(cfg))
    ckpt = out / cfg.tagged("model", ".aprm")
    save_checkpoint(ckpt, result.model.net, {"config_hash": cfg.hash, "flow": result.model.meta()})
    result.write_loss_csv(out / cfg.tagged("loss", ".csv"))
    print(f"wrote {ckpt} (final loss {result.history[-1]['loss']:.6g})" if result.history else f"wrote {ckpt}")
    return EXIT_OK


def cmd_evaluate(cfg, out, args):
    model, _ = _load_model(cfg, out, args)
    fields, masks = _split(cfg, out, "test")
    path = out / cfg.tagged("eval", ".csv")
    for j, nfe in enumerate(cfg["sample.nfe"]):
        scfg = ex.sample_config_from_config(cfg, nfe, _levels(cfg))
        pred = sample_ensemble(model, fields, masks, scfg)[0] if scfg.ensemble > 1 else sample(model, fields, masks, scfg)
        rep = evaluate(fields, pred, masks, nfe=nfe, levels=_levels(cfg), pde=cfg["data.kind"], mode=model.mode)
        rep.write_csv(path, append=j > 0)
        e = rep.errors
        print(f"nfe={nfe}: coefficient {e['coefficient']['rel_l2']:.3f}% solution {e['solution']['rel_l2']:.3f}%")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sample(cfg, out, args):
    model, _ = _load_model(cfg, out, args)
    fields, masks = _split(cfg, out, "test")
    scfg = ex.sample_config_from_config(cfg, None, _levels(cfg))
    mean, std, _ = sample_ensemble(model, fields, masks, scfg)
    kind = PDEKind.parse(cfg["data.kind"])
    for stem, arr in (("samples", mean), ("std", std)):
        write_dataset(out / cfg.tagged(stem, ".apde"),
                      Dataset(kind, arr[:, 0].astype(np.float32), arr[:, 1].astype(np.float32)))
    # agreement with the measurements at observed entries
    with open(out / cfg.tagged("consistency", ".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "coeff_observed_pct", "sol_observed_pct"])
        from .metrics import restricted_error
        for i in range(len(fields)):
            vals = []
            for c in range(2):
                try:
                    vals.append(repr(restricted_error(fields[i, c], mean[i, c], masks[i, c], "observed")))
                except DomainError:
                    vals.append("nan")
            w.writerow([i, *vals])
    print(f"wrote {out / cfg.tagged('samples', '.apde')}")
    return EXIT_OK


def cmd_sweep(cfg, out, args):
    tr, trm = _split(cfg, out, "train")
    te, tem = _split(cfg, out, "test")
    rows = one_point_sweep(
        tr, trm, te, tem, cfg["sweep.counts"], lambda: _net(cfg), ex.train_config_from_config(cfg),
        ex.sample_config_from_config(cfg), max_withhold_fraction=cfg["sweep.max_withhold_fraction"],
    )
    write_sweep_csv(out / cfg.tagged("sweep", ".csv"), rows)
    series = {
        "coefficient (full grid)": [(r.count, r.coeff_err_pct) for r in rows],
        "solution (full grid)": [(r.count, r.sol_err_pct) for r in rows],
    }
    write_line_plot(out / cfg.tagged("sweep", ".svg"), series, title="Error vs withheld observed points",
                    xlabel="withheld points (count + 1, log)", ylabel="relative L2 error (%)")
    for r in rows:
        print(f"count={r.count}: coefficient {r.coeff_err_pct:.3f}% solution {r.sol_err_pct:.3f}%")
    return EXIT_OK


def cmd_superres(cfg, out, args):
    factor, low = cfg["superres.factor"], cfg["superres.lowres"]
    res = factor * low
    tr = ex.make_dataset(cfg, "train", res).stacked()
    te = ex.make_dataset(cfg, "test", res).stacked()
    tcfg = ex.train_config_from_config(cfg)
    if tcfg.mode == "naive":
        raise ConfigurationError("super-resolution needs ambient or direct training")
    rows = ex.superres_protocol(
        tr, te, factor, cfg["superres.unobserved"], lambda: _net(cfg), tcfg, ex.sample_config_from_config(cfg),
        include_zero=cfg["superres.include_zero"], mask_seed=cfg["mask.seed"], shift=cfg["superres.shift"],
    )
    path = out / cfg.tagged("superres", ".csv")
    ex.write_superres_csv(path, rows)
    for r in rows:
        print(f"unobserved={r.actual_unobserved_pct:.2f}%: off-lattice coefficient {r.coeff_offlattice_pct:.3f}% "
              f"solution {r.sol_offlattice_pct:.3f}%")
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "superres": cmd_superres,
}


def build_parser():
    p = argparse.ArgumentParser(prog="maskflow", description="Masked flow reconstruction of PDE fields.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value config file (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--checkpoint", help="checkpoint for evaluate/sample (default: the config's own)")
    p.add_argument("--resume", help="continue training from this checkpoint (must match the config hash)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else default_config()
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        cfg = cfg.with_overrides(overrides)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        torch.set_num_threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / cfg.tagged("config", ".txt")).write_text(cfg.text())
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
