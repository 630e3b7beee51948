"""Problem descriptions and grid conventions for the four PDE families.

Fields are plain ``numpy`` arrays of shape ``(n, n)``. Axis 0 runs along
``x`` and axis 1 along ``y`` (``indexing="ij"``).

* Dirichlet problems (Darcy, Helmholtz, Poisson) live on the vertex grid
  ``x_i = i / (n - 1)``; the outer ring holds the boundary nodes and is
  stored as explicit zeros in solution fields.
* Navier-Stokes is periodic and lives on the cell-centred grid
  ``x_i = (i + 1/2) / n``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError


class PDEKind(enum.IntEnum):
    # values are the on-disk kind tags
    DARCY = 0
    HELMHOLTZ = 1
    NAVIER_STOKES = 2
    POISSON = 3
    # toy pairs drawn from the joint Gaussian prior; no solver attached
    GAUSSIAN = 4

    @classmethod
    def parse(cls, name):
        if isinstance(name, PDEKind):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "darcy": cls.DARCY,
            "helmholtz": cls.HELMHOLTZ,
            "navierstokes": cls.NAVIER_STOKES,
            "ns": cls.NAVIER_STOKES,
            "poisson": cls.POISSON,
            "gaussian": cls.GAUSSIAN,
            "toy": cls.GAUSSIAN,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigurationError(f"unknown PDE kind {name!r}") from None

    @property
    def periodic(self):
        return self is PDEKind.NAVIER_STOKES


@dataclass(frozen=True)
class GRFParams:
    """Spectral Gaussian random field: mode k scaled by amplitude*(1+|k|^2)^(-exponent/2)."""

    exponent: float = 2.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.exponent > 1.0:
            raise ConfigurationError(f"GRF exponent must exceed 1 for finite variance, got {self.exponent}")
        if not self.amplitude > 0.0:
            raise ConfigurationError(f"GRF amplitude must be positive, got {self.amplitude}")


def _default_grf(kind):
    if kind is PDEKind.DARCY:
        return GRFParams(exponent=2.5)
    if kind is PDEKind.NAVIER_STOKES:
        return GRFParams(exponent=2.5, amplitude=2.0)
    return GRFParams(exponent=2.0, amplitude=5.0)


@dataclass(frozen=True)
class PDESpec:
    kind: PDEKind
    wave_number: float = 1.0
    viscosity: float = 1e-3
    # scalar, array, or None for the family default
    forcing: object = None
    horizon: float = 1.0
    time_steps: int = 128
    grf: GRFParams = None
    darcy_threshold: float = 0.0
    darcy_levels: tuple = (3.0, 12.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", PDEKind.parse(self.kind))
        if self.grf is None:
            object.__setattr__(self, "grf", _default_grf(self.kind))
        if not self.viscosity > 0:
            raise ConfigurationError(f"viscosity must be positive, got {self.viscosity}")
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.horizon}")
        if int(self.time_steps) < 1:
            raise ConfigurationError(f"time_steps must be >= 1, got {self.time_steps}")
        if self.wave_number < 0:
            raise ConfigurationError(f"wave number must be non-negative, got {self.wave_number}")
        low, high = self.darcy_levels
        if not (0 < low and 0 < high):
            raise ConfigurationError("Darcy permeability levels must be positive")

    def forcing_field(self, n):
        """Return the forcing as an ``(n, n)`` array on this family's grid."""
        if self.forcing is not None:
            f = np.asarray(self.forcing, dtype=np.float64)
            return np.broadcast_to(f, (n, n)).copy()
        if self.kind is PDEKind.NAVIER_STOKES:
            x, y = periodic_grid(n)
            s = 2 * np.pi * (x + y)
            return 0.1 * (np.sin(s) + np.cos(s))
        return np.ones((n, n))


def check_resolution(n):
    n = int(n)
    if n < 4 or n & (n - 1):
        raise ConfigurationError(f"resolution must be a power of two >= 4, got {n}")
    return n


def dirichlet_grid(n):
    """Vertex grid on [0, 1]^2 including the boundary ring; returns (x, y, h)."""
    t = np.linspace(0.0, 1.0, n)
    x, y = np.meshgrid(t, t, indexing="ij")
    return x, y, 1.0 / (n - 1)


def periodic_grid(n):
    t = (np.arange(n) + 0.5) / n
    return np.meshgrid(t, t, indexing="ij")


def boundary_ring(n):
    ring = np.zeros((n, n), dtype=bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    return ring
