"""Snapshot ingestion, Sobol sampling, screening and centering.

A *snapshot* is one evaluated design: the design-variable vector ``u`` plus
whatever the evaluation produced (geometry displacements ``d``, a distributed
physical field ``f`` and lumped scalars ``c``).  :func:`assemble` turns a list
of raw snapshots into a :class:`SnapshotSet` of mean-centered blocks, one
column per retained sample.

On disk a snapshot collection is a directory of CSV block files (first row is
the sample ids, one column per sample) described by a JSON manifest, see
:func:`load_snapshots` and :func:`write_snapshots`.
"""

from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ValidationError

__all__ = [
    "Mode",
    "RawSample",
    "ElementMeasures",
    "FilterReport",
    "SnapshotSet",
    "MAX_SOBOL_DIM",
    "sobol_sample",
    "iqr_filter",
    "assemble",
    "read_block_csv",
    "write_block_csv",
    "read_vector_csv",
    "write_vector_csv",
    "load_snapshots",
    "write_snapshots",
]

# Size of the Joe-Kuo direction-number table shipped with scipy.
MAX_SOBOL_DIM = 21201

FLOAT_FMT = "%.17g"
MANIFEST_VERSION = 1


class Mode(str, enum.Enum):
    """Embedding variant; decides which data blocks take part."""

    PME = "pme"
    PI_PME = "pi-pme"
    PD_PME = "pd-pme"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValidationError(
            f"unknown mode {value!r}; expected one of {[m.value for m in cls]}"
        )

    @property
    def uses_geometry(self) -> bool:
        return self is not Mode.PD_PME

    @property
    def uses_physics(self) -> bool:
        return self is not Mode.PME


def _as_vector(value, name: str) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.array(value, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawSample:
    """One evaluated design before screening.

    ``feasible`` is the caller's verdict (e.g. the solver converged).  Non-finite
    entries are detected separately by :attr:`is_finite`; :meth:`validated`
    folds both into the flag.
    """

    u: np.ndarray
    d: np.ndarray | None = None
    f: np.ndarray | None = None
    c: np.ndarray | None = None
    feasible: bool = True
    id: str = ""

    def __post_init__(self):
        for name in ("u", "d", "f", "c"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))
        if self.u is None or self.u.size == 0:
            raise ValidationError("a sample needs a non-empty design vector u")

    @property
    def is_finite(self) -> bool:
        return all(
            bool(np.all(np.isfinite(b))) for b in (self.u, self.d, self.f, self.c) if b is not None
        )

    def validated(self) -> "RawSample":
        if self.feasible and not self.is_finite:
            return RawSample(self.u, self.d, self.f, self.c, feasible=False, id=self.id)
        return self


@dataclass(frozen=True)
class ElementMeasures:
    """Element sizes for the geometry rows and the distributed-physics rows.

    Either vector may be left ``None``; it then defaults to ones of the
    matching length when a :class:`SnapshotSet` is assembled.
    """

    geometry: np.ndarray | None = None
    physics: np.ndarray | None = None

    def __post_init__(self):
        for name in ("geometry", "physics"):
            arr = _as_vector(getattr(self, name), name)
            if arr is not None and not np.all(arr > 0):
                raise ValidationError(f"{name} element measures must be strictly positive")
            object.__setattr__(self, name, arr)

    def resolved(self, n_geometry: int, n_physics: int) -> "ElementMeasures":
        geo = self.geometry if self.geometry is not None else np.ones(n_geometry)
        phy = self.physics if self.physics is not None else np.ones(n_physics)
        if n_geometry and geo.size != n_geometry:
            raise ValidationError(
                f"geometry measures have length {geo.size}, geometry block has {n_geometry} rows"
            )
        if n_physics and phy.size != n_physics:
            raise ValidationError(
                f"physics measures have length {phy.size}, distributed block has {n_physics} rows"
            )
        return ElementMeasures(geo[:n_geometry] if n_geometry else None,
                               phy[:n_physics] if n_physics else None)


@dataclass(frozen=True)
class FilterReport:
    n_input: int
    infeasible: int = 0
    non_finite: int = 0
    iqr: int = 0
    rejected: dict = field(default_factory=dict)

    @property
    def retained(self) -> int:
        return self.n_input - self.infeasible - self.non_finite - self.iqr

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "infeasible": self.infeasible,
            "non_finite": self.non_finite,
            "iqr": self.iqr,
            "retained": self.retained,
            "rejected": {k: list(v) for k, v in self.rejected.items()},
        }


@dataclass(frozen=True)
class SnapshotSet:
    """Mean-centered data blocks, one column per retained sample.

    Blocks not used by ``mode`` are ``None``.  ``U`` is always present.
    """

    mode: Mode
    U: np.ndarray
    D: np.ndarray | None
    F: np.ndarray | None
    C: np.ndarray | None
    mean_u: np.ndarray
    mean_d: np.ndarray | None
    mean_f: np.ndarray | None
    mean_c: np.ndarray | None
    measures: ElementMeasures
    filter_report: FilterReport
    ids: tuple

    @property
    def n_samples(self) -> int:
        return self.U.shape[1]

    @property
    def n_vars(self) -> int:
        return self.U.shape[0]

    @staticmethod
    def _rows(block) -> int:
        return 0 if block is None else block.shape[0]

    @property
    def row_counts(self) -> tuple[int, int, int, int]:
        """Rows of (D, U, F, C); absent blocks count zero."""
        return (self._rows(self.D), self._rows(self.U), self._rows(self.F), self._rows(self.C))

    def uncentered(self) -> list[RawSample]:
        """Rebuild raw samples by adding the stored means back."""

        def col(block, mean, j):
            return None if block is None else block[:, j] + mean

        return [
            RawSample(
                u=col(self.U, self.mean_u, j),
                d=col(self.D, self.mean_d, j),
                f=col(self.F, self.mean_f, j),
                c=col(self.C, self.mean_c, j),
                id=self.ids[j],
            )
            for j in range(self.n_samples)
        ]


def sobol_sample(bounds: Sequence[Sequence[float]], count: int, skip: int = 0) -> np.ndarray:
    """Unscrambled Sobol points mapped affinely onto ``bounds``.

    Parameters
    ----------
    bounds : sequence of (lo, hi)
        One pair per design variable, ``lo < hi``.
    count : int
        Number of points returned.
    skip : int
        Leading points of the sequence to discard.

    Returns
    -------
    ndarray, shape (count, M)
    """
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] == 0:
        raise ValidationError("bounds must be a non-empty list of [lo, hi] pairs")
    if not np.all(b[:, 0] < b[:, 1]):
        raise ValidationError("every bound needs lo < hi")
    if count < 1:
        raise ValidationError("count must be >= 1")
    if skip < 0:
        raise ValidationError("skip must be >= 0")
    dim = b.shape[0]
    if dim > MAX_SOBOL_DIM:
        raise ValidationError(
            f"Sobol dimension {dim} exceeds the maximum supported dimension {MAX_SOBOL_DIM}"
        )
    engine = qmc.Sobol(dim, scramble=False)
    if skip:
        engine.fast_forward(skip)
    with warnings.catch_warnings():
        # balance warning for non power-of-two counts
        warnings.simplefilter("ignore", UserWarning)
        unit = engine.random(count)
    return b[:, 0] + unit * (b[:, 1] - b[:, 0])


def iqr_filter(values, k: float = 3.0) -> np.ndarray:
    """Per-metric interquartile screening.

    A sample (column) is kept when every metric (row) lies in
    ``[Q1 - k*IQR, Q3 + k*IQR]``, quartiles by linear interpolation between
    order statistics.  Columns with a non-finite entry are rejected and do not
    take part in the quartile estimate.
    """
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    if k < 0:
        raise ValidationError("k must be non-negative")
    finite_cols = np.all(np.isfinite(vals), axis=0)
    keep = finite_cols.copy()
    if vals.shape[0] == 0:
        return keep
    pop = vals[:, finite_cols]
    if pop.shape[1] < 4:
        raise ValidationError("IQR screening needs at least 4 finite values per metric")
    q1, q3 = np.percentile(pop, [25.0, 75.0], axis=1, method="linear")
    spread = q3 - q1
    lo = (q1 - k * spread)[:, None]
    hi = (q3 + k * spread)[:, None]
    with np.errstate(invalid="ignore"):
        inside = np.all((vals >= lo) & (vals <= hi), axis=0)
    return keep & inside


def _stack(samples: Sequence[RawSample], name: str) -> np.ndarray | None:
    present = [getattr(s, name) is not None for s in samples]
    if not any(present):
        return None
    if not all(present):
        raise ValidationError(f"block {name!r} is present in some samples but not in others")
    lengths = {getattr(s, name).size for s in samples}
    if len(lengths) != 1:
        raise ValidationError(f"block {name!r} has inconsistent lengths {sorted(lengths)}")
    return np.column_stack([getattr(s, name) for s in samples])


def _center(block: np.ndarray | None):
    if block is None:
        return None, None
    mean = block.mean(axis=1)
    return _frozen(block - mean[:, None]), _frozen(mean)


def assemble(
    raw: Iterable[RawSample],
    measures: ElementMeasures | None = None,
    mode: Mode | str = Mode.PME,
    iqr_k: float | None = 3.0,
) -> SnapshotSet:
    """Screen raw samples and build the centered snapshot blocks.

    Screening runs in order: caller-flagged infeasible samples, samples with a
    non-finite entry, then IQR screening over every physics row present in the
    data (``f`` and ``c``), whatever the mode, so that all modes see the same
    population.  ``iqr_k=None`` disables the IQR pass.  Sample order is kept.
    """
    mode = Mode.parse(mode)
    measures = measures or ElementMeasures()
    samples = list(raw)
    n_input = len(samples)
    rejected: dict[str, list] = {"infeasible": [], "non_finite": [], "iqr": []}

    survivors = []
    for s in samples:
        if not s.feasible:
            rejected["infeasible"].append(s.id)
        elif not s.is_finite:
            rejected["non_finite"].append(s.id)
        else:
            survivors.append(s)

    U = _stack(survivors, "u") if survivors else None
    D = _stack(survivors, "d") if survivors else None
    F = _stack(survivors, "f") if survivors else None
    C = _stack(survivors, "c") if survivors else None

    if mode.uses_geometry and D is None and survivors:
        raise ValidationError(f"mode/block mismatch: {mode.value} needs geometry block d")
    if mode.uses_physics and F is None and C is None and survivors:
        raise ValidationError(
            f"mode/block mismatch: {mode.value} needs a distributed (f) or lumped (c) block"
        )

    physics = [b for b in (F, C) if b is not None]
    if physics and iqr_k is not None and len(survivors) >= 4:
        keep = iqr_filter(np.vstack(physics), iqr_k)
        rejected["iqr"] = [s.id for s, kept in zip(survivors, keep) if not kept]
        survivors = [s for s, kept in zip(survivors, keep) if kept]
        U, D, F, C = (None if b is None else b[:, keep] for b in (U, D, F, C))

    report = FilterReport(
        n_input=n_input,
        infeasible=len(rejected["infeasible"]),
        non_finite=len(rejected["non_finite"]),
        iqr=len(rejected["iqr"]),
        rejected={k: tuple(v) for k, v in rejected.items()},
    )
    if len(survivors) < 2:
        raise ValidationError(
            f"insufficient samples: {len(survivors)} of {n_input} survived screening, need >= 2"
        )

    if not mode.uses_geometry:
        D = None
    if not mode.uses_physics:
        F = C = None

    U, mean_u = _center(U)
    D, mean_d = _center(D)
    F, mean_f = _center(F)
    C, mean_c = _center(C)
    resolved = measures.resolved(0 if D is None else D.shape[0], 0 if F is None else F.shape[0])
    return SnapshotSet(
        mode=mode,
        U=U,
        D=D,
        F=F,
        C=C,
        mean_u=mean_u,
        mean_d=mean_d,
        mean_f=mean_f,
        mean_c=mean_c,
        measures=resolved,
        filter_report=report,
        ids=tuple(s.id for s in survivors),
    )


# --------------------------------------------------------------------------
# CSV / JSON snapshot format
# --------------------------------------------------------------------------


def write_block_csv(path, ids: Sequence[str], matrix) -> None:
    """Write a block: first line the sample ids, then one row per data row."""
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    if mat.shape[1] != len(ids):
        raise ValidationError(f"{len(ids)} ids for a block with {mat.shape[1]} columns")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ids)
        for row in mat:
            writer.writerow([FLOAT_FMT % v for v in row])


def read_block_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty block file")
    ids = [s.strip() for s in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    data = data.reshape(-1, len(ids))
    return ids, data


def write_vector_csv(path, values) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(values, dtype=float).reshape(-1):
            fh.write(FLOAT_FMT % v + "\n")


def read_vector_csv(path) -> np.ndarray:
    with open(path) as fh:
        text = fh.read().replace(",", "\n").split()
    try:
        return np.array([float(t) for t in text], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_snapshots(
    directory,
    samples: Sequence[RawSample],
    measures: ElementMeasures | None = None,
    *,
    n: int = 1,
    conditions: int = 1,
    lumped_names: Sequence[str] | None = None,
    extra: dict | None = None,
) -> Path:
    """Write samples as CSV blocks plus ``manifest.json``; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ids = [s.id or f"s{j:06d}" for j, s in enumerate(samples)]
    blocks = {}
    for name in ("u", "d", "f", "c"):
        parts = [getattr(s, name) for s in samples]
        if all(p is None for p in parts):
            continue
        if any(p is None for p in parts):
            raise ValidationError(f"block {name!r} missing from some samples")
        write_block_csv(out / f"{name}.csv", ids, np.column_stack(parts))
        blocks[name] = f"{name}.csv"
    write_block_csv(out / "feasible.csv", ids, [[1.0 if s.feasible else 0.0 for s in samples]])

    M = samples[0].u.size
    n_geom = 0 if samples[0].d is None else samples[0].d.size
    manifest = {
        "version": MANIFEST_VERSION,
        "blocks": blocks,
        "feasible": "feasible.csv",
        "M": M,
        "n": n,
        "L": n_geom // n if n_geom else 0,
        "measures": {},
        "conditions": conditions,
    }
    if lumped_names is not None:
        manifest["lumped_names"] = list(lumped_names)
    if measures is not None:
        if measures.geometry is not None:
            write_vector_csv(out / "measures_geometry.csv", measures.geometry)
            manifest["measures"]["geometry"] = "measures_geometry.csv"
        if measures.physics is not None:
            write_vector_csv(out / "measures_physics.csv", measures.physics)
            manifest["measures"]["physics"] = "measures_physics.csv"
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_snapshots(manifest_path) -> tuple[list[RawSample], ElementMeasures, dict]:
    """Read a manifest and its block files into raw samples.

    Returns ``(samples, measures, manifest)``; block paths in the manifest are
    relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ValidationError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path}: invalid JSON ({exc})") from None
    root = manifest_path.parent
    blocks = manifest.get("blocks", {})
    if "u" not in blocks:
        raise ValidationError("manifest must name a design-variable block 'u'")

    def resolve(rel):
        p = root / rel
        if not p.is_file():
            raise ValidationError(f"file referenced by manifest not found: {p}")
        return p

    data = {}
    ids = None
    for name, rel in blocks.items():
        if name not in ("u", "d", "f", "c"):
            raise ValidationError(f"unknown block {name!r} in manifest")
        bids, mat = read_block_csv(resolve(rel))
        if ids is None:
            ids = bids
        elif bids != ids:
            raise ValidationError(f"block {name!r} ids differ from block 'u'")
        data[name] = mat

    M = manifest.get("M")
    if M is not None and data["u"].shape[0] != M:
        raise ValidationError(f"manifest says M={M}, u block has {data['u'].shape[0]} rows")
    if "d" in data and manifest.get("L"):
        expect = manifest.get("n", 1) * manifest["L"]
        if data["d"].shape[0] != expect:
            raise ValidationError(f"manifest says n*L={expect}, d block has {data['d'].shape[0]} rows")

    feasible = np.ones(len(ids), dtype=bool)
    if manifest.get("feasible"):
        fids, fmat = read_block_csv(resolve(manifest["feasible"]))
        if fids != ids:
            raise ValidationError("feasible ids differ from block 'u'")
        feasible = fmat.reshape(-1) != 0

    meas = manifest.get("measures", {})
    measures = ElementMeasures(
        geometry=read_vector_csv(resolve(meas["geometry"])) if meas.get("geometry") else None,
        physics=read_vector_csv(resolve(meas["physics"])) if meas.get("physics") else None,
    )
    samples = [
        RawSample(
            u=data["u"][:, j],
            d=data["d"][:, j] if "d" in data else None,
            f=data["f"][:, j] if "f" in data else None,
            c=data["c"][:, j] if "c" in data else None,
            feasible=bool(feasible[j]),
            id=ids[j],
        )
        for j in range(len(ids))
    ]
    return samples, measures, manifest
