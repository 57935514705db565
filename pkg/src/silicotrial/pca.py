"""Principal components of a row matrix.

Two eigen-solvers for the top-k eigenpairs of the sample covariance:

- ``"lanczos"`` (default): implicitly restarted Lanczos on the smaller of the
  covariance and Gram matrices; dense LAPACK when that matrix is small.
- ``"power"``: orthogonalized block power iteration with a Rayleigh-Ritz
  step, applied matrix-free to the centered data.

Components come back orthonormal and ordered by explained variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import eigsh

from . import SCHEMA_VERSION
from ._seeding import derive_seed
from .errors import DataError, DomainError, SchemaError


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), rows orthonormal except degenerate ones
    explained_variance: np.ndarray  # (k,)
    explained_variance_ratio: np.ndarray  # (k,)
    degenerate: np.ndarray  # (k,) bool, zero-padded components beyond the data rank
    iterations: int = 0

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


class ReducedRankWarning(UserWarning):
    pass


def _top_eigs_power(xc, denom, k, tol, max_iter, oversample, seed):
    n, d = xc.shape

    def cov_times(q):
        return xc.T @ (xc @ q) / denom

    b = min(k + oversample, d)
    rng = np.random.default_rng(derive_seed("pca", seed))
    q, _ = np.linalg.qr(rng.standard_normal((d, b)))
    ritz = np.zeros(b)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        q, _ = np.linalg.qr(cov_times(q))
        t = q.T @ cov_times(q)
        vals, vecs = np.linalg.eigh((t + t.T) / 2)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        q = q @ vecs
        change = np.max(np.abs(vals[:k] - ritz[:k])) / max(abs(vals[0]), 1e-300)
        ritz = vals
        if change < tol:
            break
    else:
        warnings.warn(f"PCA block iteration hit max_iter={max_iter}", RuntimeWarning, stacklevel=3)
    return ritz[:k], q[:, :k].T.copy(), iterations


def _top_eigs_lanczos(xc, denom, k, tol):
    n, d = xc.shape
    gram = n < d
    m = xc @ xc.T / denom if gram else xc.T @ xc / denom
    size = m.shape[0]
    if size <= max(200, 2 * k + 1):
        vals, vecs = np.linalg.eigh(m)
        vals, vecs = vals[::-1][:k], vecs[:, ::-1][:, :k]
    else:
        vals, vecs = eigsh(m, k=k, which="LA", tol=tol, v0=np.ones(size))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    vals = np.clip(vals, 0.0, None)
    if gram:
        # right singular vectors from left ones: v = X^T u / sqrt((n-1) lambda)
        comps = (xc.T @ vecs).T
        norms = np.linalg.norm(comps, axis=1)
        comps = np.divide(comps, norms[:, None], out=np.zeros_like(comps), where=norms[:, None] > 0)
    else:
        comps = vecs.T.copy()
    return vals, comps, 0


def fit_pca(
    rows,
    k: int = 17,
    solver: str = "lanczos",
    tol: float = 1e-10,
    max_iter: int = 10_000,
    oversample: int = 10,
    seed: int = 0,
) -> PcaModel:
    """Fit the top-``k`` principal components of ``rows``.

    When ``k`` exceeds the data rank the surplus components are zero rows,
    flagged in ``degenerate``, and a ``ReducedRankWarning`` is emitted.
    """
    x = np.asarray(rows, dtype=float)
    if x.ndim != 2:
        raise DomainError("rows must be a 2-d matrix")
    n, d = x.shape
    if n < k or k < 1:
        raise DomainError(f"need at least k={k} rows, got {n}")
    if k > d:
        raise DomainError(f"k={k} exceeds feature width {d}")
    if not np.all(np.isfinite(x)):
        raise DataError("rows contain non-finite values")

    mean = x.mean(axis=0)
    xc = x - mean
    denom = max(n - 1, 1)
    total_var = float(np.einsum("ij,ij->", xc, xc)) / denom

    if solver == "lanczos":
        variance, components, iterations = _top_eigs_lanczos(xc, denom, k, tol)
    elif solver == "power":
        variance, components, iterations = _top_eigs_power(xc, denom, k, tol, max_iter, oversample, seed)
    else:
        raise DomainError(f"unknown solver {solver!r}")

    variance = np.clip(variance, 0.0, None)
    degenerate = variance <= 1e-12 * max(variance[0], total_var, 1e-300)
    if degenerate.any():
        warnings.warn(
            f"k={k} exceeds data rank; {int(degenerate.sum())} components zero-padded",
            ReducedRankWarning,
            stacklevel=2,
        )
        components[degenerate] = 0.0
        variance[degenerate] = 0.0
    # one re-orthonormalization pass cleans accumulated rounding
    live = np.flatnonzero(~degenerate)
    if live.size:
        qr_q, qr_r = np.linalg.qr(components[live].T)
        components[live] = (qr_q * np.sign(np.diag(qr_r))).T
    # deterministic sign: largest-magnitude loading positive
    for i in live:
        j = np.argmax(np.abs(components[i]))
        if components[i, j] < 0:
            components[i] = -components[i]
    ratio = variance / total_var if total_var > 0 else np.zeros_like(variance)
    return PcaModel(mean, components, variance, ratio, degenerate, iterations)


def project(pca: PcaModel, v) -> np.ndarray:
    """(v - mean) @ components.T, for one vector or a row matrix."""
    arr = np.asarray(v, dtype=float)
    if arr.shape[-1] != pca.n_features:
        raise SchemaError(f"width {arr.shape[-1]} != PCA width {pca.n_features}")
    return (arr - pca.mean) @ pca.components.T


def reconstruct(pca: PcaModel, z) -> np.ndarray:
    return np.asarray(z, dtype=float) @ pca.components + pca.mean


def save_pca(pca: PcaModel, path) -> None:
    """Write as ``.npz``: mean, components, explained variance (+ ratio, flags)."""
    with open(path, "wb") as fh:
        np.savez(
            fh,
            schema_version=np.array(SCHEMA_VERSION),
            mean=pca.mean,
            components=pca.components,
            explained_variance=pca.explained_variance,
            explained_variance_ratio=pca.explained_variance_ratio,
            degenerate=pca.degenerate,
        )


def load_pca(path) -> PcaModel:
    with np.load(path, allow_pickle=False) as data:
        version = str(data["schema_version"])
        if version != SCHEMA_VERSION:
            raise SchemaError(f"PCA schema version {version} != {SCHEMA_VERSION}")
        return PcaModel(
            data["mean"],
            data["components"],
            data["explained_variance"],
            data["explained_variance_ratio"],
            data["degenerate"].astype(bool),
        )
