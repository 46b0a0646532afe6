"""Proximal mappings and convex-conjugate utilities.

Covers the dual-update proxes used by the primal-dual solvers (quadratic
data-fit conjugate, l-inf clip, soft threshold, l1-ball projection by
bisection) plus a numeric 1D Legendre-Fenchel transform used as a test
oracle.  All mappings are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linop import Vector

# Bisection defaults: absolute tolerance scale and iteration cap.
L1_TOL_SCALE = 1e-10
L1_MAX_ITERS = 200


@dataclass
class ProxResult:
    """Prox output plus the scalar the root-finder solved for (if any)."""

    value: np.ndarray
    aux: float = 0.0


@dataclass
class Grid1D:
    """Uniformly sampled 1D function; values may be +inf (extended reals)."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.values.shape:
            raise ValueError("grid needs matching 1D x and value arrays")
        dx = np.diff(self.x)
        if self.x.size > 1 and not (
            np.all(dx > 0) and np.allclose(dx, dx[0], rtol=1e-9, atol=0)
        ):
            raise ValueError("grid x must be strictly increasing and uniform")

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0]) if self.x.size > 1 else 0.0


def prox_lsq_conjugate(lam: Vector, sigma, g: Vector) -> np.ndarray:
    """Prox of sigma * conjugate of the quadratic data fit 0.5||y - g||^2.

    Closed form (lam - sigma*g) / (1 + sigma), valid componentwise.
    A scalar sigma must be positive; a per-component sigma may contain
    zeros (rows with a zero step pass through unchanged).
    """
    lam = np.asarray(lam, dtype=float)
    g = np.asarray(g, dtype=float)
    if lam.shape != g.shape:
        raise ValueError(f"shape mismatch: lam {lam.shape} vs g {g.shape}")
    if np.ndim(sigma) == 0:
        if not sigma > 0:
            raise ValueError("sigma must be positive")
    elif np.any(np.asarray(sigma) < 0):
        raise ValueError("per-component sigma must be nonnegative")
    return (lam - sigma * g) / (1.0 + sigma)


def clip_linf(lam: Vector, c: float) -> np.ndarray:
    """Projection onto the l-inf ball of radius c.

    Equivalent to c*lam / max(c, |lam|) but clamped directly so clipped
    components land on +-c exactly (bitwise idempotent).
    """
    if not c > 0:
        raise ValueError("clip radius must be positive")
    lam = np.asarray(lam, dtype=float)
    return np.clip(lam, -c, c)


def shrink(v: Vector, beta: float) -> np.ndarray:
    """Soft threshold sign(v) * max(|v| - beta, 0)."""
    if beta < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - beta, 0.0)


def default_l1_tol(v: Vector) -> float:
    return L1_TOL_SCALE * max(1.0, float(np.abs(v).sum()))


def project_l1_ball(v: Vector, r: float, tol: float | None = None) -> ProxResult:
    """Euclidean projection onto the l1 ball of radius r by bisection.

    Solves ||shrink(v, beta)||_1 = r for beta in [0, ||v||_inf]; the
    result is shrink(v, beta).  Inputs already inside the ball return
    unchanged with beta = 0.
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    if not r > 0:
        raise ValueError("ball radius must be positive")
    if tol is None:
        tol = default_l1_tol(v)
    if not tol > 0:
        raise ValueError("tolerance must be positive")

    a = np.abs(v)
    if a.sum() <= r:
        return ProxResult(v.copy(), aux=0.0)

    lo, hi = 0.0, float(a.max())
    beta = 0.0
    for _ in range(L1_MAX_ITERS):
        beta = 0.5 * (lo + hi)
        gap = np.maximum(a - beta, 0.0).sum() - r
        if abs(gap) <= tol:
            break
        if gap > 0:
            lo = beta
        else:
            hi = beta
    return ProxResult(shrink(v, beta), aux=beta)


def project_l1_ball_sorted(v: Vector, r: float) -> ProxResult:
    """Exact l1-ball projection via the sort-and-threshold construction.

    Reference implementation used to cross-check the bisection path; the
    solvers never call it.
    """
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= r:
        return ProxResult(v.copy(), aux=0.0)
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, a.size + 1)
    # largest k with u_k > (sum of top k - r) / k
    theta_cand = (css - r) / k
    k_star = np.nonzero(u > theta_cand)[0].max()
    beta = float(theta_cand[k_star])
    return ProxResult(shrink(v, beta), aux=beta)


def prox_tvc_conjugate(lam_g: Vector, sigma: float, radius_times_sigma: float,
                       tol: float | None = None) -> ProxResult:
    """Prox of the conjugate of the l1-ball indicator, via Moreau.

    prox = lam_g - projection of lam_g onto the l1 ball of radius
    nu*gamma*sigma.  When lam_g is already inside the ball the output is
    exactly zero (and the reported threshold beta is zero).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not radius_times_sigma > 0:
        raise ValueError("ball radius must be positive")
    lam_g = np.asarray(lam_g, dtype=float)
    if np.abs(lam_g).sum() <= radius_times_sigma:
        return ProxResult(np.zeros_like(lam_g), aux=0.0)
    proj = project_l1_ball(lam_g, radius_times_sigma, tol=tol)
    return ProxResult(lam_g - proj.value, aux=proj.aux)


def lf_transform_numeric(f: Grid1D, m_grid: Vector) -> Grid1D:
    """Numeric Legendre-Fenchel transform f*(m) = max_x (m*x - f(x)).

    Samples with f(x) = +inf are skipped (indicator-function
    convention); an all-infinite input has no finite conjugate.
    """
    m_grid = np.asarray(m_grid, dtype=float)
    finite = np.isfinite(f.values)
    if not finite.any():
        raise ValueError("all samples are infinite; conjugate undefined on the grid")
    x = f.x[finite]
    fx = f.values[finite]
    conj = np.max(m_grid[:, None] * x[None, :] - fx[None, :], axis=1)
    return Grid1D(m_grid, conj)
