"""Dense linear algebra with deterministic SVD conventions.

Matrices are plain 2-D ``float64`` numpy arrays. Every SVD returned here obeys
the same conventions regardless of backend:

* singular values non-negative and non-increasing,
* numerically-zero singular values are exactly ``0.0``,
* the largest-magnitude entry of each left singular vector is non-negative
  (ties broken by the lowest row index),
* exactly tied singular values are ordered by the lexicographic order of
  their (sign-fixed) left singular vectors, largest first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ranklab.errors import LabError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise LabError("shape", f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LabError("numeric", "matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # d x r, singular vectors as columns
    s: np.ndarray  # r
    vt: np.ndarray  # r x n, singular vectors as rows

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise LabError("shape", f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_sq(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    return float(np.sum(a * a))


def _complete_columns(q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``q`` not flagged in ``keep`` by an orthonormal completion.

    Candidates are the standard basis vectors e_0, e_1, ... in order, orthogonalised
    (twice) against everything accepted so far, so the completion is deterministic.
    """
    q = q.copy()
    rows = q.shape[0]
    basis = [q[:, j] for j in range(q.shape[1]) if keep[j]]
    fill = [j for j in range(q.shape[1]) if not keep[j]]
    cand = 0
    for j in fill:
        while cand < rows:
            v = np.zeros(rows)
            v[cand] = 1.0
            cand += 1
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v /= nv
                basis.append(v)
                q[:, j] = v
                break
        else:  # pragma: no cover - rows >= columns guarantees a candidate
            raise LabError("numeric", "could not complete orthonormal basis")
    return q


def _canonicalize(u: np.ndarray, s: np.ndarray, vt: np.ndarray, scale: float) -> SvdResult:
    """Apply the zero threshold, sign and ordering conventions to a thin SVD."""
    u, s, vt = u.copy(), s.copy(), vt.copy()
    rows, cols = u.shape[0], vt.shape[1]
    tol = max(rows, cols) * np.finfo(np.float64).eps * scale
    s[s <= tol] = 0.0

    for i in range(s.shape[0]):
        col = u[:, i]
        k = int(np.argmax(np.abs(col)))  # argmax returns the first maximum
        if col[k] < 0:
            u[:, i] = -col
            vt[i, :] = -vt[i, :]

    order = sorted(range(s.shape[0]), key=lambda i: (-s[i], tuple(-u[:, i])))
    order = np.asarray(order, dtype=np.intp)
    return SvdResult(u=u[:, order], s=s[order], vt=vt[order, :])


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided (Hestenes) Jacobi on a matrix with rows >= cols."""
    w = a.copy()
    n = w.shape[1]
    v = np.eye(n)
    # columns below this squared norm are rounding noise of a rank-deficient input
    negligible = (np.finfo(np.float64).eps * max(w.shape) * np.linalg.norm(w)) ** 2
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp, wq = w[:, p], w[:, q]
                alpha = wp @ wp
                beta = wq @ wq
                gamma = wp @ wq
                if alpha <= negligible or beta <= negligible:
                    continue
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                sn = c * t
                new_p = c * wp - sn * wq
                w[:, q] = sn * wp + c * wq
                w[:, p] = new_p
                vp = v[:, p].copy()
                v[:, p] = c * vp - sn * v[:, q]
                v[:, q] = sn * vp + c * v[:, q]
        if not rotated:
            break
    else:
        raise LabError("numeric", "Jacobi SVD did not converge")

    s = np.linalg.norm(w, axis=0)
    # same cut as the skip test above: skipped columns were never orthogonalised
    keep = s * s > negligible
    u = np.zeros_like(w)
    u[:, keep] = w[:, keep] / s[keep]
    s = np.where(keep, s, 0.0)
    u = _complete_columns(u, keep)
    return u, s, v.T


def _full_svd(a: np.ndarray, method: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if method == "lapack":
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        return u, s, vt
    if method == "jacobi":
        if a.shape[0] >= a.shape[1]:
            return _jacobi_tall(a)
        u, s, vt = _jacobi_tall(a.T)
        return vt.T, s, u.T
    raise LabError("config", f"unknown SVD method {method!r}")


def svd_truncate(m, r: int, method: str = "lapack") -> SvdResult:
    """Top-``r`` singular triplets of ``m`` under the module conventions.

    ``method="lapack"`` uses numpy's LAPACK driver; ``method="jacobi"`` uses the
    in-house one-sided Jacobi iteration (off-diagonal threshold 1e-12). Both give
    the same canonical output up to rounding.
    """
    a = as_matrix(m)
    if not (isinstance(r, (int, np.integer)) and 1 <= r <= min(a.shape)):
        raise LabError("rank", f"r={r} outside [1, {min(a.shape)}]")
    u, s, vt = _full_svd(a, method)
    scale = float(np.max(s)) if s.size else 0.0
    full = _canonicalize(u, s, vt, scale)
    return SvdResult(u=full.u[:, :r], s=full.s[:r], vt=full.vt[:r, :])


def reconstruct(svd: SvdResult) -> np.ndarray:
    u, s, vt = svd.u, np.asarray(svd.s, dtype=np.float64), svd.vt
    if u.ndim != 2 or vt.ndim != 2 or u.shape[1] != s.shape[0] or vt.shape[0] != s.shape[0]:
        raise LabError("shape", f"inconsistent SVD shapes u{u.shape} s{s.shape} vt{vt.shape}")
    return (u * s) @ vt
