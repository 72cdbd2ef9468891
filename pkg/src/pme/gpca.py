"""Weighted generalized PCA by the snapshot method.

The eigenproblem ``A G W z = lambda z`` with ``A = P P^T / S`` is solved
through the ``S x S`` Gram operator ``B = P^T diag(gw) P / S``: if ``B y =
lambda y`` then ``z = P y`` solves the row-space problem.  Rows with zero
weight do not enter ``B`` but ``z = P y`` still has a component on them,
which is what lets the design variables ride along for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

__all__ = ["Spectrum", "solve_snapshot", "project", "gw_gram"]

DEFAULT_RANK_TOL = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Retained eigenpairs of the weighted problem.

    Attributes
    ----------
    eigenvalues : ndarray, shape (r,)
        Non-increasing.
    vectors : ndarray, shape (R, r)
        Columns of unit norm in the ``diag(gw)`` inner product.
    total_variance : float
        ``trace(B)``, which also counts any discarded noise modes.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    total_variance: float

    @property
    def rank(self) -> int:
        return self.eigenvalues.size


def _check_inputs(P, gw):
    P = np.asarray(P, dtype=float)
    gw = np.asarray(gw, dtype=float).reshape(-1)
    if P.ndim != 2:
        raise ValidationError("P must be a 2-D array [rows x samples]")
    R, S = P.shape
    if gw.size != R:
        raise ValidationError(f"weight vector has length {gw.size}, P has {R} rows")
    if S < 2:
        raise ValidationError("need at least 2 samples")
    if not np.all(np.isfinite(P)):
        raise NumericalError("P contains non-finite entries")
    if not np.all(np.isfinite(gw)) or np.any(gw < 0):
        raise ValidationError("weights must be finite and non-negative")
    if not np.any(gw > 0):
        raise NumericalError("degenerate inner product: every weight is zero")
    return P, gw


def _fix_signs(Z: np.ndarray, weighted: np.ndarray) -> np.ndarray:
    # largest |entry| on a weighted row is made positive; argmax picks the lowest index on ties
    if Z.shape[1] == 0:
        return Z
    rows = np.flatnonzero(weighted)
    pivot = rows[np.argmax(np.abs(Z[rows]), axis=0)]
    signs = np.sign(Z[pivot, np.arange(Z.shape[1])])
    signs[signs == 0] = 1.0
    return Z * signs


def solve_snapshot(P, gw, rank_tol: float = DEFAULT_RANK_TOL, method: str = "svd") -> Spectrum:
    """Solve ``(1/S) P P^T diag(gw) z = lambda z`` for its non-trivial modes.

    Parameters
    ----------
    P : array_like, shape (R, S)
        Centered data, one column per sample.
    gw : array_like, shape (R,)
        Diagonal of ``G W``; zero entries mark embedded (unweighted) rows.
    rank_tol : float
        Modes with ``lambda <= rank_tol * lambda_max`` are dropped.
    method : {"svd", "eigh"}
        ``"svd"`` factorizes ``diag(sqrt(gw)) P / sqrt(S)`` directly, which
        keeps the weighted rows orthonormal to machine precision even for
        small modes.  ``"eigh"`` diagonalizes the explicitly symmetrized Gram
        matrix ``B``; both give the eigenpairs of ``B``.

    Returns
    -------
    Spectrum
    """
    P, gw = _check_inputs(P, gw)
    S = P.shape[1]
    weighted = gw > 0
    A = np.sqrt(gw[weighted])[:, None] * P[weighted] / np.sqrt(S)
    total = float(np.sum(A * A))

    if method == "svd":
        _, sing, Vt = np.linalg.svd(A, full_matrices=False)
        lam = sing**2
        Y = Vt.T
    elif method == "eigh":
        B = A.T @ A
        B = 0.5 * (B + B.T)
        lam, Y = np.linalg.eigh(B)
        order = np.argsort(-lam, kind="stable")
        lam, Y = lam[order], Y[:, order]
    else:
        raise ValidationError(f"unknown method {method!r}")

    if lam.size == 0 or not lam[0] > 0:
        keep = np.zeros(lam.size, dtype=bool)
    else:
        keep = lam > rank_tol * lam[0]
    lam, Y = lam[keep], Y[:, keep]

    Z = P @ Y
    gamma = np.sqrt(np.einsum("ik,i,ik->k", Z, gw, Z))
    if np.any(gamma == 0) or not np.all(np.isfinite(gamma)):
        raise NumericalError("eigenvector with zero weighted norm")
    Z = _fix_signs(Z / gamma, weighted)
    lam = np.ascontiguousarray(lam)
    lam.setflags(write=False)
    Z.setflags(write=False)
    return Spectrum(eigenvalues=lam, vectors=Z, total_variance=total)


def project(P, gw, Z) -> np.ndarray:
    """Projection coefficients ``Theta = P^T diag(gw) Z``, shape (S, r)."""
    P = np.asarray(P, dtype=float)
    gw = np.asarray(gw, dtype=float).reshape(-1)
    Z = np.asarray(Z, dtype=float)
    if P.ndim != 2 or Z.ndim != 2:
        raise ValidationError("P and Z must be 2-D")
    if P.shape[0] != gw.size or Z.shape[0] != gw.size:
        raise ValidationError(
            f"dimension mismatch: P {P.shape}, gw ({gw.size},), Z {Z.shape}"
        )
    return P.T @ (gw[:, None] * Z)


def gw_gram(Z, gw) -> np.ndarray:
    """``Z^T diag(gw) Z``; the identity for a well-normalized basis."""
    Z = np.asarray(Z, dtype=float)
    return Z.T @ (np.asarray(gw, dtype=float)[:, None] * Z)
