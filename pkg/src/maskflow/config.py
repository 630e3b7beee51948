"""Flat ``key = value`` experiment configuration.

Keys carry a section prefix (``data.``, ``pde.``, ``mask.``, ``model.``,
``train.``, ``sample.``, ``sweep.``, ``superres.``). Unknown or duplicated
keys are rejected. Every key has a default, and the hash is computed over
the fully resolved document, so two files that differ only in defaulted
keys hash identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigurationError


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none") else float(s)


def _opt_int(s):
    return None if str(s).strip().lower() in ("", "none") else int(s)


def _ints(s):
    return tuple(int(x) for x in str(s).replace(" ", "").split(",") if x)


def _floats(s):
    return tuple(float(x) for x in str(s).replace(" ", "").split(",") if x)


def _shift(s):
    v = str(s).strip().lower()
    if v == "random":
        return None
    parts = _ints(v)
    if len(parts) != 2 or min(parts) < 0:
        raise ValueError(f"expected 'random' or two non-negative integers, got {s!r}")
    return parts


def _choice(*options):
    def parse(s):
        v = str(s).strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return v
    return parse


# key -> (parser, default text)
SCHEMA = {
    "data.kind": (_choice("gaussian", "poisson", "helmholtz", "darcy", "navier_stokes"), "gaussian"),
    "data.resolution": (int, "16"),
    "data.n_train": (int, "1000"),
    "data.n_test": (int, "100"),
    "data.seed": (int, "0"),
    "data.length_scale": (float, "0.4"),
    "data.variance": (float, "1.0"),
    "pde.wave_number": (float, "1.0"),
    "pde.viscosity": (float, "1e-3"),
    "pde.horizon": (float, "1.0"),
    "pde.time_steps": (int, "128"),
    "pde.grf_exponent": (_opt_float, "none"),
    "pde.grf_amplitude": (_opt_float, "none"),
    "pde.darcy_threshold": (float, "0.0"),
    "mask.pattern": (_choice("random", "patch", "column", "window", "lattice"), "random"),
    "mask.ratio": (float, "0.1"),
    "mask.patch_size": (int, "4"),
    "mask.factor": (int, "4"),
    "mask.seed": (int, "1"),
    "model.backbone": (_choice("conv", "spectral"), "conv"),
    "model.width": (int, "32"),
    "model.depth": (int, "4"),
    "model.kernel_size": (int, "3"),
    "model.embed_dim": (int, "8"),
    "model.padding": (_choice("reflect", "circular", "zeros"), "reflect"),
    "model.modes": (int, "8"),
    "model.dilations": (_ints, "1"),
    "model.seed": (int, "2"),
    "train.mode": (_choice("naive", "ambient", "direct"), "ambient"),
    "train.direction": (_choice("joint", "forward", "inverse"), "joint"),
    "train.withhold_count": (_opt_int, "none"),
    "train.keep_fraction": (_opt_float, "0.667"),
    "train.epochs": (int, "120"),
    "train.batch_size": (int, "32"),
    "train.lr": (float, "5e-3"),
    "train.weight_decay": (float, "1e-5"),
    "train.beta1": (float, "0.9"),
    "train.beta2": (float, "0.999"),
    "train.eps": (float, "1e-8"),
    "train.clip_grad": (float, "1.0"),
    "train.lr_schedule": (_choice("constant", "cosine"), "cosine"),
    "train.resample": (_choice("step", "epoch", "fixed"), "step"),
    "train.masked_states": (_bool, "true"),
    "train.seed": (int, "3"),
    "sample.nfe": (_ints, "1,4,16"),
    "sample.seed": (int, "4"),
    "sample.ensemble": (int, "1"),
    "sample.clamp": (_bool, "false"),
    "sample.submask": (_bool, "true"),
    "sweep.counts": (_ints, "0,1,2,4,8,16,32,64,128,256"),
    "sweep.max_withhold_fraction": (float, "0.5"),
    "superres.lowres": (int, "8"),
    "superres.factor": (int, "4"),
    "superres.unobserved": (_floats, "97,98,99,99.5"),
    "superres.include_zero": (_bool, "true"),
    "superres.shift": (_shift, "0,0"),
}

SEED_KEYS = ("data.seed", "mask.seed", "model.seed", "train.seed", "sample.seed")


def _canonical(key, raw):
    return " ".join(str(raw).split())


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: ``raw`` holds canonical text, ``values`` parsed values."""

    raw: dict
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def text(self):
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))

    @property
    def hash(self):
        """First 12 hex digits of the SHA-256 of the canonical resolved document."""
        return hashlib.sha256(self.text().encode()).hexdigest()[:12]

    def tagged(self, stem, suffix):
        """Output file name embedding the config hash."""
        return f"{stem}-{self.hash}{suffix}"

    def with_overrides(self, overrides):
        raw = dict(self.raw)
        for k, v in overrides.items():
            if k not in SCHEMA:
                raise ConfigurationError(f"unknown config key {k!r}")
            raw[k] = _canonical(k, v)
        return _resolve(raw)

    def with_seed(self, seed):
        return self.with_overrides({k: str(int(seed)) for k in SEED_KEYS})


def _resolve(raw):
    values = {}
    for key, (parser, _) in SCHEMA.items():
        try:
            values[key] = parser(raw[key])
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from None
    return ExperimentConfig(raw, values)


def parse_config(text):
    """Parse a config document; ``#`` starts a comment."""
    raw = {k: d for k, (_, d) in SCHEMA.items()}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        raw[key] = _canonical(key, value)
    return _resolve(raw)


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        from .errors import DatasetIOError
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc


def default_config():
    return parse_config("")
