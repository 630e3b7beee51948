"""Paired (coefficient, solution) datasets: generation, residual audit, binary I/O.

File layout (all integers little-endian)::

    b"APDE" | version u32 | kind u8 | H u32 | W u32 | N u64
    N records of 2*H*W float32 (coefficient then solution), row-major
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..errors import ConfigurationError, DatasetIOError
from .elliptic import darcy_apply, laplacian, solve_darcy, solve_helmholtz, solve_poisson
from .grf import sample_coefficient
from .navier_stokes import evolve_navier_stokes
from .spec import PDEKind, check_resolution

MAGIC = b"APDE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBIIQ")


class PairedSample(NamedTuple):
    coefficient: np.ndarray
    solution: np.ndarray


@dataclass
class Dataset:
    kind: PDEKind
    coefficients: np.ndarray  # (N, H, W) float32
    solutions: np.ndarray

    def __len__(self):
        return self.coefficients.shape[0]

    def __getitem__(self, i):
        return PairedSample(self.coefficients[i], self.solutions[i])

    @property
    def resolution(self):
        return int(self.coefficients.shape[-1])

    def stacked(self):
        """``(N, 2, H, W)`` float64 array with coefficient then solution channel."""
        return np.stack([self.coefficients, self.solutions], axis=1).astype(np.float64)


def sample_seed(seed, index):
    return np.random.SeedSequence([int(seed), int(index)])


def solve(spec, a):
    """Ground-truth solution for one coefficient field (float64)."""
    n = a.shape[0]
    if spec.kind is PDEKind.GAUSSIAN:
        raise ConfigurationError("Gaussian toy pairs have no solver; draw them from the pair prior")
    if spec.kind is PDEKind.POISSON:
        return solve_poisson(a)
    if spec.kind is PDEKind.HELMHOLTZ:
        return solve_helmholtz(a, spec.wave_number)
    if spec.kind is PDEKind.DARCY:
        return solve_darcy(a, spec.forcing_field(n))
    return evolve_navier_stokes(
        a, spec.forcing_field(n), spec.viscosity, spec.horizon, spec.time_steps
    )


def generate_pair(spec, n, seed, index):
    """One float32 pair, consistent under the storage precision.

    For the linear Dirichlet problems the stored coefficient interior is
    recomputed from the float32-rounded solution, so the stored pair
    satisfies the discrete equation to float32 rounding of the coefficient
    rather than of the (much more sensitive) solution. Navier-Stokes evolves
    from the rounded initial condition.
    """
    a = sample_coefficient(spec, n, sample_seed(seed, index))
    if spec.kind is PDEKind.NAVIER_STOKES:
        a32 = a.astype(np.float32)
        u = solve(spec, a32.astype(np.float64))
        return PairedSample(a32, u.astype(np.float32))
    u32 = solve(spec, a).astype(np.float32)
    if spec.kind in (PDEKind.POISSON, PDEKind.HELMHOLTZ):
        u64 = u32.astype(np.float64)
        h = 1.0 / (n - 1)
        a = a.copy()
        a[1:-1, 1:-1] = laplacian(u64, h)
        if spec.kind is PDEKind.HELMHOLTZ:
            a[1:-1, 1:-1] += spec.wave_number**2 * u64[1:-1, 1:-1]
    return PairedSample(a.astype(np.float32), u32)


def generate_pairs(spec, n_samples, resolution, seed):
    n = check_resolution(resolution)
    coeff = np.zeros((n_samples, n, n), dtype=np.float32)
    sol = np.zeros((n_samples, n, n), dtype=np.float32)
    for i in range(n_samples):
        coeff[i], sol[i] = generate_pair(spec, n, seed, i)
    return Dataset(spec.kind, coeff, sol)


def generate_dataset(spec, n_samples, resolution, seed, path):
    """Generate ``n_samples`` pairs and write them to ``path``; returns the ``Dataset``."""
    ds = generate_pairs(spec, n_samples, resolution, seed)
    write_dataset(path, ds)
    return ds


def pde_residual(spec, sample):
    """Relative discrete residual of a stored pair; 0 means exact consistency.

    Dirichlet problems combine the interior stencil residual with the
    boundary-ring violation (scaled like a stencil term) relative to the
    interior right-hand side. Navier-Stokes pairs are compared against a
    re-integration with four times as many steps.
    """
    a = np.asarray(sample[0], dtype=np.float64)
    u = np.asarray(sample[1], dtype=np.float64)
    n = a.shape[0]
    if spec.kind is PDEKind.NAVIER_STOKES:
        ref = evolve_navier_stokes(
            a, spec.forcing_field(n), spec.viscosity, spec.horizon, 4 * spec.time_steps
        )
        scale = np.linalg.norm(ref)
        return float(np.linalg.norm(u - ref) / (scale if scale > 0 else 1.0))
    h = 1.0 / (n - 1)
    if spec.kind is PDEKind.DARCY:
        rhs = spec.forcing_field(n)[1:-1, 1:-1]
        r = darcy_apply(a, u) - rhs
    else:
        rhs = a[1:-1, 1:-1]
        r = laplacian(u, h) - rhs
        if spec.kind is PDEKind.HELMHOLTZ:
            r += spec.wave_number**2 * u[1:-1, 1:-1]
    ring = np.concatenate([u[0, :], u[-1, :], u[1:-1, 0], u[1:-1, -1]]) / h**2
    scale = np.linalg.norm(rhs)
    total = np.sqrt(np.sum(r**2) + np.sum(ring**2))
    return float(total / (scale if scale > 0 else 1.0))


def write_dataset(path, ds):
    """Write atomically (temp file + rename) so readers never see partial files."""
    path = Path(path)
    n_rec, h, w = ds.coefficients.shape
    payload = np.empty((n_rec, 2, h, w), dtype="<f4")
    payload[:, 0] = ds.coefficients
    payload[:, 1] = ds.solutions
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, int(ds.kind), h, w, n_rec)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc


def read_dataset(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    if len(raw) < _HEADER.size:
        raise DatasetIOError(path, "truncated header")
    magic, version, kind, h, w, n_rec = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetIOError(path, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetIOError(path, f"unsupported format version {version}")
    expected = _HEADER.size + n_rec * 2 * h * w * 4
    if len(raw) != expected:
        raise DatasetIOError(path, f"size {len(raw)} does not match header ({expected})")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_rec, 2, h, w)
    return Dataset(PDEKind(kind), data[:, 0].astype(np.float32), data[:, 1].astype(np.float32))
