"""Desk-scale synthetic test case.

A unit-chord camber line is perturbed by Hicks-Henne bumps

    b_i(xi) = sin(pi * xi**m_i) ** w,   m_i = log(1/2) / log(t_i)

peaking at ``t_i``.  The design vector ``u`` holds the bump amplitudes and the
geometry snapshot ``d`` is the camber displacement at ``L`` cosine-spaced
stations.  Physics comes from classical thin-airfoil theory applied to the
camber built from the *coupled* bumps only, so the remaining variables move
the shape without touching the aerodynamics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dataset import ElementMeasures, RawSample
from .errors import ValidationError

__all__ = ["SyntheticCase", "cosine_stations", "thin_airfoil_coefficients", "LUMPED_NAMES"]

LUMPED_NAMES = ("cl", "cm")


def cosine_stations(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chordwise stations ``xi = (1 - cos theta)/2`` with ``theta`` uniform on [0, pi]."""
    if n < 3:
        raise ValidationError("need at least 3 stations")
    theta = np.linspace(0.0, np.pi, n)
    xi = 0.5 * (1.0 - np.cos(theta))
    xi[0], xi[-1] = 0.0, 1.0
    return xi, theta


def thin_airfoil_coefficients(slope, theta, alpha: float, n_terms: int = 8) -> np.ndarray:
    """Glauert coefficients ``A_0 .. A_{n_terms-1}`` of a camber line.

    ``slope`` is ``dy/dx`` sampled at ``theta`` (last axis), integrated with the
    composite trapezoid rule.  Extra leading axes of ``slope`` are batched.
    """
    slope = np.asarray(slope, dtype=float)
    n = np.arange(n_terms)
    kernel = np.cos(np.outer(n, theta))
    integrals = np.trapezoid(slope[..., None, :] * kernel, theta, axis=-1)
    A = (2.0 / np.pi) * integrals
    A[..., 0] = alpha - integrals[..., 0] / np.pi
    return A


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


@dataclass(frozen=True)
class SyntheticCase:
    """Bump-parameterized camber line with thin-airfoil physics.

    Parameters
    ----------
    n_vars : int
        Number of bumps (design variables).
    n_stations : int
        Chordwise stations ``L``.
    coupled : tuple of int
        Zero-based indices of the bumps that shape the aerodynamic camber.
    centers : tuple of float, optional
        Bump peak locations in (0, 1); evenly spread over [0.05, 0.95] by default.
    width : float
        Bump exponent ``w``; larger is narrower.
    alpha : float
        Angle of attack in radians.
    amplitude : float
        Design variables range over ``[-amplitude, amplitude]``.
    n_terms : int
        Fourier terms kept for the distributed loading.
    """

    n_vars: int = 12
    n_stations: int = 129
    coupled: tuple = (2, 6, 10)
    centers: tuple | None = None
    width: float = 60.0
    alpha: float = 0.05
    amplitude: float = 0.01
    n_terms: int = 8

    def __post_init__(self):
        if self.n_vars < 1:
            raise ValidationError("n_vars must be >= 1")
        centers = self.centers
        if centers is None:
            centers = np.linspace(0.05, 0.95, self.n_vars) if self.n_vars > 1 else [0.5]
        centers = tuple(float(t) for t in centers)
        if len(centers) != self.n_vars or not all(0.0 < t < 1.0 for t in centers):
            raise ValidationError("need one bump center in (0, 1) per design variable")
        object.__setattr__(self, "centers", centers)
        coupled = tuple(sorted({int(i) for i in self.coupled}))
        if not coupled or coupled[0] < 0 or coupled[-1] >= self.n_vars:
            raise ValidationError("coupled must be a non-empty subset of the variable indices")
        object.__setattr__(self, "coupled", coupled)
        if self.width < 1:
            raise ValidationError("bump width exponent must be >= 1")
        if np.min(self._exponents()) * self.width < 1.0:
            raise ValidationError(
                "bump slope is unbounded at the leading edge; need width*log(1/2)/log(t) >= 1"
            )
        if self.amplitude <= 0:
            raise ValidationError("amplitude must be positive")
        if self.n_terms < 3:
            raise ValidationError("n_terms must be >= 3")
        cosine_stations(self.n_stations)

    def _exponents(self) -> np.ndarray:
        return np.log(0.5) / np.log(np.asarray(self.centers))

    @property
    def stations(self) -> np.ndarray:
        return cosine_stations(self.n_stations)[0]

    @property
    def theta(self) -> np.ndarray:
        return cosine_stations(self.n_stations)[1]

    def bumps(self, xi=None) -> np.ndarray:
        """Bump values at ``xi`` (the stations by default), shape (len(xi), M).

        Exactly zero at both ends of the chord.
        """
        xi = self.stations if xi is None else np.asarray(xi, dtype=float).reshape(-1)
        inside = np.clip(xi, 0.0, 1.0)
        B = np.sin(np.pi * inside[:, None] ** self._exponents()[None, :]) ** self.width
        B[(xi <= 0.0) | (xi >= 1.0)] = 0.0
        return B

    def bump_slopes(self) -> np.ndarray:
        """``db_i/dxi`` at the stations, shape (L, M)."""
        xi = self.stations
        m = self._exponents()[None, :]
        w = self.width
        inner = np.pi * xi[:, None] ** m
        with np.errstate(divide="ignore", invalid="ignore"):
            dB = w * np.sin(inner) ** (w - 1) * np.cos(inner) * np.pi * m * xi[:, None] ** (m - 1)
        # leading-edge limit: w*m*pi**w * xi**(w*m - 1)
        wm = (w * m)[0]
        dB[0] = np.where(np.isclose(wm, 1.0), w * m[0] * np.pi**w, 0.0)
        return dB

    def bounds(self) -> list[list[float]]:
        return [[-self.amplitude, self.amplitude] for _ in range(self.n_vars)]

    def measures(self) -> ElementMeasures:
        """Trapezoid chord-length weights for both geometry and loading rows."""
        w = _trapezoid_weights(self.stations)
        return ElementMeasures(geometry=w, physics=w.copy())

    def _check(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.shape[-1] != self.n_vars:
            raise ValidationError(f"design vector has length {U.shape[-1]}, expected {self.n_vars}")
        return U

    def geometry(self, u) -> np.ndarray:
        """Camber displacement at the stations; linear in ``u``.  Batched over leading axes."""
        return self._check(u) @ self.bumps().T

    def coefficients(self, u) -> np.ndarray:
        """Glauert coefficients of the coupled camber line."""
        u = self._check(u)
        k = list(self.coupled)
        slope = u[..., k] @ self.bump_slopes()[:, k].T
        return thin_airfoil_coefficients(slope, self.theta, self.alpha, self.n_terms)

    def physics(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Distributed loading and ``[cl, cm]``.

        The distributed output is the vortex-sheet strength times ``sin theta``,
        ``2 (A_0 (1 + cos theta) + sum_n A_n sin(n theta) sin theta)``, which
        stays finite at the leading edge.  ``cm`` is about the quarter chord.
        """
        A = self.coefficients(u)
        theta = self.theta
        s = np.sin(theta)
        s[0] = s[-1] = 0.0
        c = np.cos(theta)
        n = np.arange(1, self.n_terms)
        modes = np.sin(np.outer(theta, n)) * s[:, None]
        f = 2.0 * (A[..., :1] * (1.0 + c) + A[..., 1:] @ modes.T)
        cl = 2.0 * np.pi * (A[..., 0] + 0.5 * A[..., 1])
        cm = -0.25 * np.pi * (A[..., 1] - A[..., 2])
        return f, np.stack([cl, cm], axis=-1)

    def samples(self, U, ids: Sequence[str] | None = None, physics: bool = True) -> list[RawSample]:
        """Evaluate a batch of design vectors (rows of ``U``)."""
        U = np.atleast_2d(self._check(U))
        D = self.geometry(U)
        F, C = self.physics(U) if physics else (None, None)
        if ids is None:
            ids = [f"s{j:06d}" for j in range(U.shape[0])]
        return [
            RawSample(
                u=U[j],
                d=D[j],
                f=None if F is None else F[j],
                c=None if C is None else C[j],
                id=ids[j],
            )
            for j in range(U.shape[0])
        ]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["coupled"] = list(self.coupled)
        out["centers"] = list(self.centers)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticCase":
        data = dict(data)
        data.pop("kind", None)
        for key in ("coupled", "centers"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)
