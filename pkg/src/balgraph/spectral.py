"""Spectral low-pass filtering on positive-graph Laplacians.

Two frequency responses are supported. The ideal response keeps the
``omega`` smallest-eigenvalue components (an orthogonal projection); the
sigmoid response g(lambda) = sigma(alpha * (omega - lambda)) is its smooth,
trainable relaxation where ``omega`` acts as an eigenvalue threshold.

Both can be evaluated exactly through a full symmetric eigendecomposition or
approximately through a Lanczos tridiagonalization of dimension m, which
costs O(m |E|) matrix-vector products plus an O(m^2) tridiagonal
eigendecomposition and therefore scales linearly in the edge count for
fixed m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import NoConvergence
from .graphs import Laplacian, as_matrix

IDEAL = "ideal"
SIGMOID = "sigmoid"
EXACT = "exact"
LANCZOS = "lanczos"

_BREAKDOWN_TOL = 1e-12


@dataclass(frozen=True)
class FilterSpec:
    """Low-pass filter parameters.

    ``omega`` is an integer count of retained eigenpairs in ideal mode and a
    continuous eigenvalue threshold in sigmoid mode. ``m`` is the Krylov
    dimension, used only by the lanczos backend.
    """

    omega: float
    alpha: float = 10.0
    mode: str = IDEAL
    backend: str = EXACT
    m: int | None = None

    def __post_init__(self):
        if self.mode not in (IDEAL, SIGMOID):
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.backend not in (EXACT, LANCZOS):
            raise ValueError(f"unknown filter backend {self.backend!r}")
        if self.mode == IDEAL:
            if self.omega < 1 or self.omega != int(self.omega):
                raise ValueError("ideal mode requires an integer omega >= 1")
        elif not np.isfinite(self.omega):
            raise ValueError("sigmoid mode requires a finite omega")
        if self.backend == LANCZOS and (self.m is None or self.m < 1):
            raise ValueError("lanczos backend requires a Krylov dimension m >= 1")


@dataclass(frozen=True)
class EigenPair:
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-magnitude entry of each column positive."""
    idx = np.argmax(np.abs(V), axis=0)
    flip = V[idx, np.arange(V.shape[1])] < 0
    V = V.copy()
    V[:, flip] *= -1.0
    return V


def eigh(L) -> EigenPair:
    """Full symmetric eigendecomposition, ascending, with fixed column signs."""
    M = as_matrix(L)
    try:
        lam, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise NoConvergence(str(exc)) from exc
    return EigenPair(eigenvalues=lam, eigenvectors=_fix_signs(V))


_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def sigmoid_response(lam: np.ndarray, omega: float, alpha: float) -> np.ndarray:
    """g(lambda) = sigma(alpha * (omega - lambda)), strictly inside (0, 1).

    The true sigmoid never reaches 0 or 1 for finite arguments; the output is
    clamped to the largest representable open interval so the bound survives
    float64 saturation.
    """
    z = alpha * (omega - np.asarray(lam, dtype=float))
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def lp_filter_exact(L, y: np.ndarray, spec: FilterSpec, pair: EigenPair | None = None) -> np.ndarray:
    """Exact low-pass filter output for one signal or a column-signal matrix.

    Ideal mode projects onto the span of the ``omega`` smallest-eigenvalue
    eigenvectors; sigmoid mode scales each spectral component by the smooth
    response. A precomputed :class:`EigenPair` may be supplied to amortize
    the decomposition across calls.
    """
    if spec.backend != EXACT:
        raise ValueError("lp_filter_exact requires an exact-backend FilterSpec")
    if pair is None:
        pair = eigh(L)
    y = np.asarray(y, dtype=float)
    n = pair.eigenvalues.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"signal has {y.shape[0]} rows, Laplacian has {n}")
    if spec.mode == IDEAL:
        k = min(int(spec.omega), n)
        Vk = pair.eigenvectors[:, :k]
        return Vk @ (Vk.T @ y)
    g = sigmoid_response(pair.eigenvalues, spec.omega, spec.alpha)
    V = pair.eigenvectors
    coeff = V.T @ y
    return V @ (g[:, None] * coeff if coeff.ndim > 1 else g * coeff)


@dataclass(frozen=True)
class LanczosBasis:
    """Orthonormal Krylov basis and the tridiagonal restriction of the operator.

    ``breakdown`` flags early termination on an invariant subspace; the basis
    is then truncated to the reached dimension and the filter remains exact
    on the Krylov-reachable component of the start vector.
    """

    u: np.ndarray
    diag: np.ndarray
    offdiag: np.ndarray
    breakdown: bool

    @property
    def h(self) -> np.ndarray:
        H = np.diag(self.diag)
        if self.offdiag.size:
            H += np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)
        return H


def lanczos_basis(L, y: np.ndarray, m: int) -> LanczosBasis:
    """Lanczos tridiagonalization started from y / ||y||.

    Full reorthogonalization (classical Gram-Schmidt applied twice per step)
    keeps the basis orthonormal to near machine precision at the O(n m^2)
    cost that is irrelevant at the matrix sizes handled here. ``L`` may be a
    Laplacian, a dense ndarray, or any scipy sparse matrix.
    """
    if isinstance(L, Laplacian):
        op = L.matrix
    else:
        op = L
    n = op.shape[0]
    y = np.asarray(y, dtype=float)
    ny = float(np.linalg.norm(y))
    if ny == 0.0:
        raise ValueError("start vector must be nonzero")
    if not (1 <= m <= n):
        raise ValueError(f"Krylov dimension m={m} must lie in [1, {n}]")

    U = np.zeros((n, m))
    alphas = np.zeros(m)
    betas = np.zeros(max(m - 1, 0))
    U[:, 0] = y / ny
    breakdown = False
    k_reached = m
    beta_prev = 0.0
    for k in range(m):
        w = op @ U[:, k]
        w = np.asarray(w).ravel()
        alphas[k] = float(U[:, k] @ w)
        r = w - alphas[k] * U[:, k]
        if k > 0:
            r -= beta_prev * U[:, k - 1]
        # Two rounds of classical Gram-Schmidt against all previous vectors.
        basis = U[:, : k + 1]
        r -= basis @ (basis.T @ r)
        r -= basis @ (basis.T @ r)
        if k == m - 1:
            break
        beta = float(np.linalg.norm(r))
        if beta < _BREAKDOWN_TOL:
            breakdown = True
            k_reached = k + 1
            break
        betas[k] = beta
        beta_prev = beta
        U[:, k + 1] = r / beta
    return LanczosBasis(
        u=U[:, :k_reached],
        diag=alphas[:k_reached],
        offdiag=betas[: max(k_reached - 1, 0)],
        breakdown=breakdown,
    )


def _tridiag_eigh(diag: np.ndarray, offdiag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if diag.size == 1:
        return diag.copy(), np.ones((1, 1))
    try:
        theta, Z = scipy.linalg.eigh_tridiagonal(diag, offdiag)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NoConvergence(str(exc)) from exc
    return theta, Z


def lp_filter_lanczos(L, y: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Approximate low-pass filter output ||y|| * U g(H) e1.

    The tridiagonal restriction H of the operator on the Krylov space is
    eigendecomposed and the frequency response applied to its eigenvalues.
    Ideal mode retains round(omega * m / n) components of the reduced
    spectrum; sigmoid mode evaluates the smooth response directly. Breakdown
    truncates silently: the Krylov space is then invariant and the filter is
    exact on it.
    """
    if spec.backend != LANCZOS:
        raise ValueError("lp_filter_lanczos requires a lanczos-backend FilterSpec")
    op = L.matrix if isinstance(L, Laplacian) else L
    n = op.shape[0]
    y = np.asarray(y, dtype=float)
    if y.ndim > 1:
        out = np.empty_like(y)
        for c in range(y.shape[1]):
            out[:, c] = lp_filter_lanczos(L, y[:, c], spec)
        return out

    basis = lanczos_basis(op, y, min(int(spec.m), n))
    theta, Z = _tridiag_eigh(basis.diag, basis.offdiag)
    k = theta.shape[0]
    if spec.mode == IDEAL:
        xi = int(round(spec.omega * k / n))
        xi = min(max(xi, 0), k)
        g = np.zeros(k)
        g[:xi] = 1.0
    else:
        g = sigmoid_response(theta, spec.omega, spec.alpha)
    e1 = Z[0, :]  # first row of Z equals Z^T e_1
    coeff = g * e1
    return float(np.linalg.norm(y)) * (basis.u @ (Z @ coeff))


def lp_filter(L, y: np.ndarray, spec: FilterSpec, pair: EigenPair | None = None) -> np.ndarray:
    """Dispatch on the spec backend."""
    if spec.backend == EXACT:
        return lp_filter_exact(L, y, spec, pair=pair)
    return lp_filter_lanczos(L, y, spec)
