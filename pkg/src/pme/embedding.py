"""Parametric model embedding and its physics-aware variants.

The data blocks are stacked as ``[D; U; F; C]`` (``[U; F; C]`` for the
physics-driven variant) and the design-variable rows get zero weight.  The
fitted eigenvectors therefore carry a design-variable part ``v_k`` that maps
reduced coordinates straight back to the original parameters::

    u = <u> + sum_k x_k v_k

Row weights (the diagonal of ``G W``):

* geometry: element measure times a per-element weight; in ``pi-pme`` the
  whole block is additionally divided by its total measure-weighted variance
  so that shape and physics enter on a comparable scale;
* design variables: always zero;
* distributed physics: element measure over the row variance;
* lumped physics: one over the row variance.

Variances use the ``1/S`` normalization.  A constant physics row cannot be
normalized; it gets weight zero and a warning is recorded.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gpca
from .dataset import ElementMeasures, Mode, RawSample, SnapshotSet, assemble
from .errors import NumericalError, ValidationError

__all__ = [
    "EmbeddingConfig",
    "EmbeddingModel",
    "Layout",
    "build_gw",
    "fit",
    "truncate",
    "backmap",
    "project_sample",
    "bounds",
    "participation",
    "normalized_components",
    "variance_convergence",
    "save_model",
    "load_model",
]

SCHEMA_VERSION = 1
# relative slack on the cumulative-variance test, absorbs roundoff at exact ties
_TRUNCATE_RTOL = 1e-10
# a physics row whose std is below this fraction of its scale is treated as constant
_CONSTANT_RTOL = 1e-12


@dataclass(frozen=True)
class EmbeddingConfig:
    """Fit settings.

    ``f_weights`` / ``c_weights`` replace the inverse-variance weights of the
    distributed / lumped rows when given (the element measure still multiplies
    ``f_weights``).  ``geometry_scaling`` is ``"auto"`` (inverse block variance
    for ``pi-pme``, none otherwise), ``"none"`` or ``"inverse-variance"``.
    """

    mode: Mode = Mode.PME
    confidence: float = 0.95
    geometry_weights: tuple | None = None
    f_weights: tuple | None = None
    c_weights: tuple | None = None
    geometry_scaling: str = "auto"
    rank_tol: float = gpca.DEFAULT_RANK_TOL

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not 0.0 < self.confidence <= 1.0:
            raise ValidationError(f"confidence must lie in (0, 1], got {self.confidence}")
        for name in ("geometry_weights", "f_weights", "c_weights"):
            value = getattr(self, name)
            if value is None:
                continue
            arr = np.asarray(value, dtype=float).reshape(-1)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValidationError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, tuple(float(v) for v in arr))
        if self.geometry_scaling not in ("auto", "none", "inverse-variance"):
            raise ValidationError(f"unknown geometry_scaling {self.geometry_scaling!r}")
        if not self.rank_tol >= 0:
            raise ValidationError("rank_tol must be non-negative")

    @property
    def physics_policy(self) -> str:
        if self.f_weights is None and self.c_weights is None:
            return "inverse-variance"
        return "explicit"

    @property
    def scales_geometry(self) -> bool:
        if self.geometry_scaling == "auto":
            return self.mode is Mode.PI_PME
        return self.geometry_scaling == "inverse-variance"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        for name in ("geometry_weights", "f_weights", "c_weights"):
            if out[name] is not None:
                out[name] = list(out[name])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddingConfig":
        return cls(**data)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Layout:
    """Row counts of the stacked blocks, in stacking order."""

    n_geometry: int
    n_vars: int
    n_distributed: int
    n_lumped: int

    @property
    def n_rows(self) -> int:
        return self.n_geometry + self.n_vars + self.n_distributed + self.n_lumped

    @property
    def geometry(self) -> slice:
        return slice(0, self.n_geometry)

    @property
    def variables(self) -> slice:
        a = self.n_geometry
        return slice(a, a + self.n_vars)

    @property
    def distributed(self) -> slice:
        a = self.n_geometry + self.n_vars
        return slice(a, a + self.n_distributed)

    @property
    def lumped(self) -> slice:
        a = self.n_geometry + self.n_vars + self.n_distributed
        return slice(a, a + self.n_lumped)


def _layout(snapshots: SnapshotSet) -> Layout:
    return Layout(*snapshots.row_counts)


def _stacked(snapshots: SnapshotSet) -> np.ndarray:
    blocks = [b for b in (snapshots.D, snapshots.U, snapshots.F, snapshots.C) if b is not None]
    return np.vstack(blocks)


def _is_constant(var: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return np.sqrt(var) <= _CONSTANT_RTOL * scale


def _inverse_variance(block, mean, scale, label, notes):
    var = np.mean(block * block, axis=1)
    flat = _is_constant(var, scale)
    rho = np.zeros_like(var)
    rho[~flat] = 1.0 / var[~flat]
    for i in np.flatnonzero(flat):
        notes.append(f"{label} row {i} has zero variance; weight set to 0")
    return rho


def _build_gw(snapshots: SnapshotSet, config: EmbeddingConfig):
    if snapshots.mode is not config.mode:
        raise ValidationError(
            f"mode/block mismatch: snapshot set assembled for {snapshots.mode.value}, "
            f"config asks for {config.mode.value}"
        )
    lay = _layout(snapshots)
    notes: list[str] = []
    parts = []

    if snapshots.D is not None:
        rho = np.ones(lay.n_geometry)
        if config.geometry_weights is not None:
            rho = np.asarray(config.geometry_weights, dtype=float)
            if rho.size != lay.n_geometry:
                raise ValidationError(
                    f"{rho.size} geometry weights for {lay.n_geometry} geometry rows"
                )
        w = snapshots.measures.geometry * rho
        if config.scales_geometry:
            var = float(np.sum(snapshots.measures.geometry * np.mean(snapshots.D**2, axis=1)))
            if var > 0:
                w = w / var
            else:
                notes.append("geometry block has zero variance; weight set to 0")
                w = np.zeros_like(w)
        parts.append(w)

    parts.append(np.zeros(lay.n_vars))

    if snapshots.F is not None:
        if config.f_weights is not None:
            rho = np.asarray(config.f_weights, dtype=float)
            if rho.size != lay.n_distributed:
                raise ValidationError(
                    f"{rho.size} distributed weights for {lay.n_distributed} rows"
                )
        else:
            std = np.sqrt(np.mean(snapshots.F**2, axis=1))
            scale = np.maximum(np.abs(snapshots.mean_f), std.max(initial=0.0))
            rho = _inverse_variance(snapshots.F, snapshots.mean_f, scale, "distributed", notes)
        parts.append(snapshots.measures.physics * rho)

    if snapshots.C is not None:
        if config.c_weights is not None:
            rho = np.asarray(config.c_weights, dtype=float)
            if rho.size != lay.n_lumped:
                raise ValidationError(f"{rho.size} lumped weights for {lay.n_lumped} rows")
        else:
            rho = _inverse_variance(snapshots.C, snapshots.mean_c, np.abs(snapshots.mean_c),
                                    "lumped", notes)
        parts.append(rho)

    gw = np.concatenate(parts)
    if not np.any(gw > 0):
        raise NumericalError("degenerate inner product: every row has zero weight")
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return gw, notes


def build_gw(snapshots: SnapshotSet, config: EmbeddingConfig) -> np.ndarray:
    """Diagonal of ``G W`` for the stacked rows of ``snapshots``."""
    gw, _ = _build_gw(snapshots, config)
    return gw


@dataclass(frozen=True)
class EmbeddingModel:
    """A fitted embedding.

    ``vectors`` holds the GW-normalized eigenvectors as columns, rows in
    stacking order; :attr:`q`, :attr:`v`, :attr:`phi` and :attr:`pi` are the
    geometry, design-variable, distributed and lumped parts.  ``theta`` are
    the training projections and ``lower``/``upper`` their per-mode extremes.
    """

    mode: Mode
    layout: Layout
    mean_u: np.ndarray
    mean_d: np.ndarray
    mean_f: np.ndarray
    mean_c: np.ndarray
    gw: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float
    vectors: np.ndarray
    theta: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    confidence: float
    n_modes: int
    config: EmbeddingConfig
    provenance: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def q(self) -> np.ndarray:
        return self.vectors[self.layout.geometry]

    @property
    def v(self) -> np.ndarray:
        return self.vectors[self.layout.variables]

    @property
    def phi(self) -> np.ndarray:
        return self.vectors[self.layout.distributed]

    @property
    def pi(self) -> np.ndarray:
        return self.vectors[self.layout.lumped]

    @property
    def reduction_percent(self) -> float:
        return 100.0 * (1.0 - self.n_modes / self.layout.n_vars)

    def variance_fractions(self) -> np.ndarray:
        return self.eigenvalues / self.total_variance

    def to_dict(self) -> dict:
        lay = self.layout
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode.value,
            "dimensions": asdict(lay) | {"rank": self.rank, "n_samples": int(self.theta.shape[0])},
            "config": self.config.to_dict(),
            "confidence": self.confidence,
            "n_modes": self.n_modes,
            "means": {
                "u": self.mean_u.tolist(),
                "d": self.mean_d.tolist(),
                "f": self.mean_f.tolist(),
                "c": self.mean_c.tolist(),
            },
            "gw": self.gw.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "total_variance": self.total_variance,
            "eigenvectors": {
                "q": self.q.tolist(),
                "v": self.v.tolist(),
                "phi": self.phi.tolist(),
                "pi": self.pi.tolist(),
            },
            "theta": self.theta.tolist(),
            "bounds": {"lower": self.lower.tolist(), "upper": self.upper.tolist()},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddingModel":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported model schema {data.get('schema_version')!r}")
        dims = data["dimensions"]
        lay = Layout(dims["n_geometry"], dims["n_vars"], dims["n_distributed"], dims["n_lumped"])
        r = dims["rank"]

        def arr(values, shape=None):
            a = np.array(values, dtype=float)
            if shape is not None:
                a = a.reshape(shape)
            a.setflags(write=False)
            return a

        ev = data["eigenvectors"]
        vectors = np.vstack([
            arr(ev["q"], (lay.n_geometry, r)),
            arr(ev["v"], (lay.n_vars, r)),
            arr(ev["phi"], (lay.n_distributed, r)),
            arr(ev["pi"], (lay.n_lumped, r)),
        ])
        vectors.setflags(write=False)
        means = data["means"]
        return cls(
            mode=Mode.parse(data["mode"]),
            layout=lay,
            mean_u=arr(means["u"]),
            mean_d=arr(means["d"]),
            mean_f=arr(means["f"]),
            mean_c=arr(means["c"]),
            gw=arr(data["gw"]),
            eigenvalues=arr(data["eigenvalues"]),
            total_variance=float(data["total_variance"]),
            vectors=vectors,
            theta=arr(data["theta"], (dims["n_samples"], r)),
            lower=arr(data["bounds"]["lower"]),
            upper=arr(data["bounds"]["upper"]),
            confidence=float(data["confidence"]),
            n_modes=int(data["n_modes"]),
            config=EmbeddingConfig.from_dict(data["config"]),
            provenance=data.get("provenance", {}),
        )


def save_model(model: EmbeddingModel, path) -> None:
    """Write the model as one JSON document (floats round-trip exactly)."""
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> EmbeddingModel:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"model file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return EmbeddingModel.from_dict(data)


def _empty_if_none(a):
    out = np.zeros(0) if a is None else np.asarray(a, dtype=float)
    out.setflags(write=False)
    return out


def _truncate_values(eigenvalues: np.ndarray, total: float, level: float) -> int:
    if not 0.0 < level <= 1.0:
        raise ValidationError(f"confidence must lie in (0, 1], got {level}")
    cum = np.cumsum(eigenvalues)
    target = level * total * (1.0 - _TRUNCATE_RTOL)
    hit = np.flatnonzero(cum >= target)
    return int(hit[0]) + 1 if hit.size else int(eigenvalues.size)


def fit(snapshots: SnapshotSet, config: EmbeddingConfig, metadata: dict | None = None) -> EmbeddingModel:
    """Fit the embedding to an assembled snapshot set.

    ``metadata`` is copied into the model's provenance (e.g. a description of
    the case that produced the data).
    """
    gw, notes = _build_gw(snapshots, config)
    P = _stacked(snapshots)
    spectrum = gpca.solve_snapshot(P, gw, rank_tol=config.rank_tol)
    if spectrum.rank == 0:
        raise NumericalError("no mode above the rank tolerance; data has no weighted variance")
    theta = gpca.project(P, gw, spectrum.vectors)
    theta.setflags(write=False)
    lower = theta.min(axis=0)
    upper = theta.max(axis=0)
    n_modes = _truncate_values(spectrum.eigenvalues, spectrum.total_variance, config.confidence)
    gw.setflags(write=False)
    provenance = {
        "n_samples": snapshots.n_samples,
        "sample_ids": list(snapshots.ids),
        "filter_report": snapshots.filter_report.to_dict(),
        "config_hash": config.digest(),
        "warnings": notes,
    }
    if metadata:
        provenance["metadata"] = metadata
    return EmbeddingModel(
        mode=snapshots.mode,
        layout=_layout(snapshots),
        mean_u=snapshots.mean_u,
        mean_d=_empty_if_none(snapshots.mean_d),
        mean_f=_empty_if_none(snapshots.mean_f),
        mean_c=_empty_if_none(snapshots.mean_c),
        gw=gw,
        eigenvalues=spectrum.eigenvalues,
        total_variance=spectrum.total_variance,
        vectors=spectrum.vectors,
        theta=theta,
        lower=lower,
        upper=upper,
        confidence=config.confidence,
        n_modes=n_modes,
        config=config,
        provenance=provenance,
    )


def truncate(model: EmbeddingModel, level: float) -> int:
    """Smallest N whose leading eigenvalues resolve ``level`` of the total variance.

    The total is ``trace(P^T G W P)/S``, so modes discarded as numerical noise
    still count.  Returns the rank if the retained modes never reach the target.
    """
    return _truncate_values(model.eigenvalues, model.total_variance, level)


def backmap(model: EmbeddingModel, x) -> np.ndarray:
    """Design vector for reduced coordinates ``x`` (the first ``len(x)`` modes).

    No clipping to :func:`bounds` is applied.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size > model.rank:
        raise ValidationError(f"{x.size} reduced coordinates but the model has rank {model.rank}")
    return model.mean_u + model.v[:, : x.size] @ x


def project_sample(model: EmbeddingModel, d=None, f=None, c=None, n_modes: int | None = None) -> np.ndarray:
    """Reduced coordinates of one evaluated design.

    Every block carrying a non-zero weight must be supplied; ``u`` is never
    needed since its weight is zero.
    """
    n = model.rank if n_modes is None else int(n_modes)
    if not 0 <= n <= model.rank:
        raise ValidationError(f"n_modes must lie in [0, {model.rank}]")
    lay = model.layout
    x = np.zeros(n)
    for name, value, sl, mean in (
        ("d", d, lay.geometry, model.mean_d),
        ("f", f, lay.distributed, model.mean_f),
        ("c", c, lay.lumped, model.mean_c),
    ):
        w = model.gw[sl]
        if not np.any(w > 0):
            continue
        if value is None:
            raise ValidationError(f"missing weighted block {name!r}")
        value = np.asarray(value, dtype=float).reshape(-1)
        if value.size != w.size:
            raise ValidationError(f"block {name!r} has length {value.size}, expected {w.size}")
        x += ((value - mean) * w) @ model.vectors[sl, :n]
    return x


def bounds(model: EmbeddingModel) -> np.ndarray:
    """Per-mode ``[min_j Theta_jk, max_j Theta_jk]``, shape (r, 2)."""
    return np.column_stack([model.lower, model.upper])


def participation(model: EmbeddingModel, k: int) -> dict:
    """Split of mode ``k``'s unit GW-energy among the weighted blocks.

    ``k`` is zero-based.  Returns ``geometry``, ``distributed`` and ``lumped``
    fractions (summing to one) plus ``lumped_split``, one entry per lumped row.
    """
    if not 0 <= k < model.rank:
        raise ValidationError(f"mode index {k} outside [0, {model.rank})")
    energy = model.gw * model.vectors[:, k] ** 2
    total = energy.sum()
    lay = model.layout
    split = energy[lay.lumped] / total
    return {
        "geometry": float(energy[lay.geometry].sum() / total),
        "distributed": float(energy[lay.distributed].sum() / total),
        "lumped": float(split.sum()),
        "lumped_split": split,
    }


def normalized_components(model: EmbeddingModel, k: int) -> np.ndarray:
    """``|v_k| / max_i |v_ik|`` for zero-based mode ``k``."""
    if not 0 <= k < model.rank:
        raise ValidationError(f"mode index {k} outside [0, {model.rank})")
    mag = np.abs(model.v[:, k])
    top = mag.max(initial=0.0)
    if top == 0:
        warnings.warn(f"design-variable component of mode {k} is identically zero", RuntimeWarning,
                      stacklevel=2)
        return np.zeros_like(mag)
    return mag / top


def variance_convergence(
    raw: Sequence[RawSample],
    measures: ElementMeasures | None,
    config: EmbeddingConfig,
    sizes: Sequence[int],
    iqr_k: float | None = 3.0,
) -> list[dict]:
    """Total weighted variance on nested prefixes of ``raw``.

    Each prefix is screened and centered on its own, but all prefixes share
    the weights of the largest one so the numbers are comparable.  The
    geometric column sums the geometry rows, the physical column the
    distributed and lumped rows.  Relative errors are against the largest size.
    """
    raw = list(raw)
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValidationError("need at least one sample size")
    if any(s < 2 for s in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError("sizes must be strictly ascending and each >= 2")
    if sizes[-1] > len(raw):
        raise ValidationError(f"largest size {sizes[-1]} exceeds the {len(raw)} available samples")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ref = assemble(raw[: sizes[-1]], measures, config.mode, iqr_k)
        gw, _ = _build_gw(ref, config)
    lay = _layout(ref)

    rows = []
    for size in sizes:
        snaps = assemble(raw[:size], measures, config.mode, iqr_k)
        per_row = gw * np.mean(_stacked(snaps) ** 2, axis=1)
        geo = float(per_row[lay.geometry].sum())
        phys = float(per_row[lay.distributed].sum() + per_row[lay.lumped].sum())
        rows.append({
            "n_samples": size,
            "n_retained": snaps.n_samples,
            "geometric": geo,
            "physical": phys,
            "total": geo + phys,
        })

    last = rows[-1]
    for row in rows:
        for key in ("geometric", "physical", "total"):
            ref_value = last[key]
            row[f"rel_error_{key}"] = (
                abs(row[key] - ref_value) / abs(ref_value) if ref_value != 0 else 0.0
            )
    return rows
