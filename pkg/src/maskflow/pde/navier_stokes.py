"""Periodic 2-D vorticity-form Navier-Stokes, pseudo-spectral in space.

Time stepping is a second-order IMEX predictor-corrector: Crank-Nicolson
for viscosity and an explicit trapezoidal (Heun) treatment of advection.
The advection term is de-aliased with the 2/3 rule.
"""

import logging
import math

import numpy as np

from ..errors import BlowUpError, DomainError

log = logging.getLogger(__name__)


class _Spectral:
    def __init__(self, n):
        freq = np.fft.fftfreq(n, d=1.0 / n)
        fx, fy = np.meshgrid(freq, freq, indexing="ij")
        self.kx = 2 * np.pi * fx
        self.ky = 2 * np.pi * fy
        self.k2 = self.kx**2 + self.ky**2
        self.inv_k2 = np.zeros_like(self.k2)
        self.inv_k2[self.k2 > 0] = 1.0 / self.k2[self.k2 > 0]
        cut = n / 3.0
        self.dealias = (np.abs(fx) < cut) & (np.abs(fy) < cut)
        self.dx = 1.0 / n

    def velocity(self, wh):
        # Lap psi = -w  =>  psi_hat = w_hat / |k|^2 ;  v = (d_y psi, -d_x psi)
        psih = wh * self.inv_k2
        vx = np.fft.ifft2(1j * self.ky * psih).real
        vy = np.fft.ifft2(-1j * self.kx * psih).real
        return vx, vy

    def advection(self, wh):
        vx, vy = self.velocity(wh)
        wx = np.fft.ifft2(1j * self.kx * wh).real
        wy = np.fft.ifft2(1j * self.ky * wh).real
        nh = np.fft.fft2(vx * wx + vy * wy) * self.dealias
        # v . grad w = div(v w) has zero mean for divergence-free v
        nh[0, 0] = 0.0
        return nh, max(np.abs(vx).max(), np.abs(vy).max())


def evolve_navier_stokes(w0, q=0.0, nu=1e-3, T=1.0, steps=128, *, cfl_max=1.0):
    """Integrate ``w_t + v.grad w = nu Lap w + q`` from ``w0`` to time ``T``.

    Args:
        w0: initial vorticity on the periodic cell-centred grid.
        q: time-independent forcing, scalar or field.
        nu: kinematic viscosity (> 0).
        T: horizon (> 0).
        steps: number of macro steps; a step whose CFL number exceeds
            ``cfl_max`` is split into equal substeps with a warning.

    Raises:
        BlowUpError: if the state becomes non-finite.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.ndim != 2 or w0.shape[0] != w0.shape[1]:
        raise DomainError(f"expected square vorticity field, got {w0.shape}")
    if not np.all(np.isfinite(w0)):
        raise DomainError("initial vorticity contains non-finite values")
    if not (nu > 0 and T > 0 and int(steps) >= 1):
        raise DomainError("need nu > 0, T > 0 and steps >= 1")
    n = w0.shape[0]
    ops = _Spectral(n)
    qh = np.fft.fft2(np.broadcast_to(np.asarray(q, dtype=np.float64), w0.shape))
    wh = np.fft.fft2(w0)
    dt = T / int(steps)

    with np.errstate(over="ignore", invalid="ignore"):
        wh = _march(ops, wh, qh, nu, dt, int(steps), cfl_max)
    return np.fft.ifft2(wh).real


def _march(ops, wh, qh, nu, dt, steps, cfl_max):
    for step in range(steps):
        nh, vmax = ops.advection(wh)
        cfl = vmax * dt / ops.dx
        sub = 1
        if cfl > cfl_max:
            sub = int(math.ceil(cfl / cfl_max))
            log.warning("step %d: CFL %.3f > %.3f, subdividing into %d substeps", step, cfl, cfl_max, sub)
        h = dt / sub
        lhs = 1.0 + 0.5 * h * nu * ops.k2
        rhs_op = 1.0 - 0.5 * h * nu * ops.k2
        for s in range(sub):
            if s > 0:
                nh, _ = ops.advection(wh)
            pred = (rhs_op * wh + h * (qh - nh)) / lhs
            nh_pred, _ = ops.advection(pred)
            wh = (rhs_op * wh + h * (qh - 0.5 * (nh + nh_pred))) / lhs
        if not np.all(np.isfinite(wh)):
            raise BlowUpError(step)
    return wh
