"""Dirichlet elliptic solvers on the vertex grid.

Poisson and Helmholtz are diagonalised exactly by the type-I sine
transform of the interior nodes. Darcy uses a conservative finite-volume
stencil with harmonic-mean face permeabilities, solved by preconditioned
conjugate gradients.
"""

import logging

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import DomainError, ResonanceError, SolverError

log = logging.getLogger(__name__)


def _as_field(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square 2-D field, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("field contains non-finite values")
    return a


def dirichlet_eigenvalues(n):
    """Eigenvalues of the 1-D negative second difference on the ``n - 2`` interior nodes."""
    h = 1.0 / (n - 1)
    p = np.arange(1, n - 1)
    return (4.0 / h**2) * np.sin(p * np.pi / (2 * (n - 1))) ** 2


def laplacian(u, h):
    """5-point Laplacian at interior nodes, reading boundary values from ``u``'s ring."""
    return (
        u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4.0 * u[1:-1, 1:-1]
    ) / h**2


def _solve_shifted(rhs, shift):
    """Solve ``(Lap_h + shift) u = rhs`` with u = 0 on the boundary ring."""
    n = rhs.shape[0]
    lam = dirichlet_eigenvalues(n)
    denom = shift - (lam[:, None] + lam[None, :])
    u = np.zeros_like(rhs)
    u[1:-1, 1:-1] = scipy.fft.idstn(scipy.fft.dstn(rhs[1:-1, 1:-1], type=1) / denom, type=1)
    return u


def solve_poisson(a):
    """Solve ``Lap u = a`` on (0,1)^2 with ``u = 0`` on the boundary.

    Only interior values of ``a`` enter; the returned ring is exactly zero.
    """
    a = _as_field(a)
    return _solve_shifted(a, 0.0)


def solve_helmholtz(a, k=1.0):
    """Solve ``Lap u + k^2 u = a`` with homogeneous Dirichlet data.

    Raises:
        ResonanceError: if ``k^2`` is within 1e-8 of a discrete Dirichlet eigenvalue.
    """
    a = _as_field(a)
    n = a.shape[0]
    lam = dirichlet_eigenvalues(n)
    gap = np.abs(k**2 - (lam[:, None] + lam[None, :]))
    idx = np.unravel_index(np.argmin(gap), gap.shape)
    if gap[idx] <= 1e-8:
        raise ResonanceError((int(idx[0]) + 1, int(idx[1]) + 1), float(gap[idx]))
    return _solve_shifted(a, float(k) ** 2)


def face_permeabilities(a):
    """Harmonic means on x-faces ``(n-1, n)`` and y-faces ``(n, n-1)``."""
    ax = 2.0 * a[1:, :] * a[:-1, :] / (a[1:, :] + a[:-1, :])
    ay = 2.0 * a[:, 1:] * a[:, :-1] / (a[:, 1:] + a[:, :-1])
    return ax, ay


def darcy_operator(a):
    """Sparse SPD matrix of ``-div(a grad u)`` on interior nodes (row-major)."""
    n = a.shape[0]
    h2 = (1.0 / (n - 1)) ** 2
    m = n - 2
    ax, ay = face_permeabilities(a)
    # faces around interior node (i, j), interior index (i-1, j-1)
    west = ax[:-1, 1:-1]   # between i-1 and i
    east = ax[1:, 1:-1]    # between i and i+1
    south = ay[1:-1, :-1]  # between j-1 and j
    north = ay[1:-1, 1:]   # between j and j+1
    diag = (west + east + south + north).ravel() / h2
    idx = np.arange(m * m).reshape(m, m)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]
    for coef, (di, dj) in ((west, (-1, 0)), (east, (1, 0)), (south, (0, -1)), (north, (0, 1))):
        i0, i1 = max(0, -di), m - max(0, di)
        j0, j1 = max(0, -dj), m - max(0, dj)
        rows.append(idx[i0:i1, j0:j1].ravel())
        cols.append(idx[i0 + di:i1 + di, j0 + dj:j1 + dj].ravel())
        vals.append(-coef[i0:i1, j0:j1].ravel() / h2)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )


def darcy_apply(a, u):
    """Apply ``-div(a grad u)`` at interior nodes through face fluxes (boundary read from ``u``)."""
    n = a.shape[0]
    h2 = (1.0 / (n - 1)) ** 2
    ax, ay = face_permeabilities(a)
    fx = ax * (u[1:, :] - u[:-1, :])
    fy = ay * (u[:, 1:] - u[:, :-1])
    div = (fx[1:, 1:-1] - fx[:-1, 1:-1]) + (fy[1:-1, 1:] - fy[1:-1, :-1])
    return -div / h2


def solve_darcy(a, f=1.0, *, rtol=1e-10, maxiter=None, full_output=False):
    """Solve ``-div(a grad u) = f`` with ``u = 0`` on the boundary.

    Args:
        a: strictly positive permeability on all nodes.
        f: scalar or field forcing.
        rtol: relative tolerance handed to CG.
        maxiter: CG iteration cap (default ``10 * n^2``).
        full_output: also return ``{"iterations": ..., "residual": ...}``.
    """
    a = _as_field(a)
    if np.any(a <= 0):
        raise DomainError("Darcy permeability must be strictly positive")
    n = a.shape[0]
    f = np.broadcast_to(np.asarray(f, dtype=np.float64), a.shape)
    rhs = f[1:-1, 1:-1].ravel()
    u = np.zeros((n, n))
    info = {"iterations": 0, "residual": 0.0}
    if np.any(rhs != 0):
        A = darcy_operator(a)
        M = sp.diags(1.0 / A.diagonal())
        count = [0]

        def _tick(_):
            count[0] += 1

        maxiter = maxiter or 10 * n * n
        x, flag = spla.cg(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=_tick)
        resid = float(np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs))
        if flag != 0:
            raise SolverError(f"CG did not converge in {count[0]} iterations", resid)
        u[1:-1, 1:-1] = x.reshape(n - 2, n - 2)
        info = {"iterations": count[0], "residual": resid}
        log.debug("darcy CG converged in %d iterations, residual %.2e", count[0], resid)
    if full_output:
        return u, info
    return u
