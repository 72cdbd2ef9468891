"""Plot-ready tables built from a fitted model.

Every function returns ``(header, rows)``; :func:`write_csv` stores them.
Mode numbers in the tables are one-based.
"""

from __future__ import annotations

import csv
from typing import Callable, Sequence

import numpy as np

from .dataset import FLOAT_FMT
from .embedding import EmbeddingModel, backmap, normalized_components, participation
from .errors import ValidationError

__all__ = [
    "variance_table",
    "components_table",
    "participation_table",
    "bounds_table",
    "contour_table",
    "convergence_table",
    "write_csv",
]


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    return str(value)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def variance_table(model: EmbeddingModel):
    """Resolved variance against the number of reduced variables."""
    frac = model.eigenvalues / model.total_variance
    cum = np.cumsum(frac)
    rows = [
        (k + 1, float(model.eigenvalues[k]), float(frac[k]), float(cum[k]))
        for k in range(model.rank)
    ]
    return ["mode", "eigenvalue", "variance_fraction", "cumulative_fraction"], rows


def components_table(model: EmbeddingModel, modes: Sequence[int] | None = None):
    """Normalized design-variable components, one column per (one-based) mode."""
    if modes is None:
        modes = range(1, model.n_modes + 1)
    modes = list(modes)
    for k in modes:
        if not 1 <= k <= model.rank:
            raise ValidationError(f"mode {k} outside [1, {model.rank}]")
    cols = [normalized_components(model, k - 1) for k in modes]
    rows = [
        (i + 1, *(float(c[i]) for c in cols)) for i in range(model.layout.n_vars)
    ]
    return ["variable", *(f"mode_{k}" for k in modes)], rows


def participation_table(model: EmbeddingModel, lumped_names: Sequence[str] | None = None):
    """Per-mode energy split; the fraction columns of each row sum to one.

    The lumped block is reported scalar by scalar.  This split of the
    normalized eigenvector's weighted energy is a reconstruction: it is the
    natural reading of a mode's "participation" but not a quantity fixed by
    the method itself.
    """
    n_c = model.layout.n_lumped
    names = list(lumped_names) if lumped_names else [f"c{i + 1}" for i in range(n_c)]
    if len(names) != n_c:
        raise ValidationError(f"{len(names)} lumped names for {n_c} lumped rows")
    rows = []
    for k in range(model.rank):
        p = participation(model, k)
        rows.append((k + 1, p["geometry"], p["distributed"], *map(float, p["lumped_split"])))
    return ["mode", "geometry", "distributed", *(f"lumped:{n}" for n in names)], rows


def bounds_table(model: EmbeddingModel):
    rows = [(k + 1, float(model.lower[k]), float(model.upper[k])) for k in range(model.rank)]
    return ["mode", "lower", "upper"], rows


def contour_table(
    model: EmbeddingModel,
    evaluate: Callable[[np.ndarray], np.ndarray],
    modes: tuple[int, int] = (1, 2),
    n: int = 21,
    names: Sequence[str] | None = None,
):
    """Evaluate lumped outputs over a grid spanning the bounds of two modes.

    The other reduced variables stay at zero.  ``evaluate`` maps a batch of
    design vectors (rows) to a batch of lumped outputs.
    """
    a, b = modes
    for k in modes:
        if not 1 <= k <= model.rank:
            raise ValidationError(f"mode {k} outside [1, {model.rank}]")
    if a == b:
        raise ValidationError("contour needs two distinct modes")
    if n < 2:
        raise ValidationError("grid needs at least 2 points per axis")
    ga = np.linspace(model.lower[a - 1], model.upper[a - 1], n)
    gb = np.linspace(model.lower[b - 1], model.upper[b - 1], n)
    size = max(a, b)
    points = []
    designs = []
    for xa in ga:
        for xb in gb:
            x = np.zeros(size)
            x[a - 1], x[b - 1] = xa, xb
            points.append((float(xa), float(xb)))
            designs.append(backmap(model, x))
    values = np.atleast_2d(evaluate(np.array(designs)))
    if names is None:
        names = [f"c{i + 1}" for i in range(values.shape[1])]
    rows = [(*p, *map(float, v)) for p, v in zip(points, values)]
    return [f"x{a}", f"x{b}", *names], rows


def convergence_table(rows: Sequence[dict]):
    keys = [
        "n_samples",
        "n_retained",
        "geometric",
        "physical",
        "total",
        "rel_error_geometric",
        "rel_error_physical",
        "rel_error_total",
    ]
    return keys, [tuple(r[k] for k in keys) for r in rows]
