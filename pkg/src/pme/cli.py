"""Command line for parametric model embedding.

Exit codes: 0 success, 2 validation error, 3 numerical failure.  Errors are
reported on stderr as a single JSON object.  ``PME_THREADS`` caps the BLAS
thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import reports
from .dataset import (
    FLOAT_FMT,
    Mode,
    assemble,
    load_snapshots,
    read_block_csv,
    sobol_sample,
    write_block_csv,
    write_snapshots,
)
from .embedding import (
    EmbeddingConfig,
    backmap,
    fit,
    load_model,
    save_model,
    variance_convergence,
)
from .errors import PMEError, ValidationError
from .surrogate import LUMPED_NAMES, SyntheticCase


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str) -> int:
    parts = text.lower().split("x")
    try:
        sizes = {int(p) for p in parts}
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or NxN, got {text!r}") from None
    if len(sizes) != 1:
        raise argparse.ArgumentTypeError("only square grids are supported")
    return sizes.pop()


def _iqr_k(text: str) -> float | None:
    if text.lower() in ("none", "off"):
        return None
    return float(text)


def _read_bounds(path) -> list[list[float]]:
    bounds = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            try:
                lo, hi = (float(p) for p in parts)
            except ValueError:
                if not bounds:
                    continue  # header row
                raise ValidationError(f"{path}: bad bounds line {line!r}") from None
            bounds.append([lo, hi])
    return bounds


def cmd_sample(args) -> int:
    bounds = _read_bounds(args.bounds)
    if args.dim is not None and args.dim != len(bounds):
        raise ValidationError(f"--dim {args.dim} but the bounds file lists {len(bounds)} variables")
    U = sobol_sample(bounds, args.count, args.skip)
    ids = [f"s{j + args.skip:06d}" for j in range(args.count)]
    write_block_csv(args.out, ids, U.T)
    return 0


def cmd_simulate(args) -> int:
    ids, U = read_block_csv(args.samples)
    kwargs = {"n_vars": U.shape[0]}
    for key in ("coupled", "alpha", "width", "stations", "amplitude"):
        value = getattr(args, key)
        if value is not None:
            kwargs["n_stations" if key == "stations" else key] = tuple(value) if key == "coupled" else value
    case = SyntheticCase(**kwargs)
    samples = case.samples(U.T, ids=ids, physics=not args.no_physics)
    write_snapshots(
        args.out,
        samples,
        case.measures(),
        lumped_names=None if args.no_physics else LUMPED_NAMES,
        extra={"case": {"kind": "synthetic", **case.to_dict()}},
    )
    return 0


def _config(args) -> EmbeddingConfig:
    return EmbeddingConfig(mode=Mode.parse(args.mode), confidence=args.confidence,
                           rank_tol=args.rank_tol)


def cmd_fit(args) -> int:
    samples, measures, manifest = load_snapshots(args.manifest)
    config = _config(args)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        snaps = assemble(samples, measures, config.mode, args.iqr_k)
        metadata = {k: manifest[k] for k in ("case", "lumped_names") if k in manifest}
        model = fit(snaps, config, metadata=metadata)
    save_model(model, args.out)
    print(f"mode={model.mode.value} S={snaps.n_samples} rank={model.rank} "
          f"N={model.n_modes} M={model.layout.n_vars} "
          f"reduction={model.reduction_percent:.1f}%")
    for note in model.provenance["warnings"]:
        print(f"warning: {note}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    model = load_model(args.model)
    if args.what == "variance":
        header, rows = reports.variance_table(model)
    elif args.what == "components":
        header, rows = reports.components_table(model, args.modes)
    elif args.what == "participation":
        names = model.provenance.get("metadata", {}).get("lumped_names")
        header, rows = reports.participation_table(model, names)
        print("note: participation is the per-block split of each mode's weighted energy "
              "(reconstructed definition)", file=sys.stderr)
    else:
        header, rows = reports.bounds_table(model)
    reports.write_csv(args.out, header, rows)
    return 0


def cmd_reconstruct(args) -> int:
    model = load_model(args.model)
    x = np.asarray(args.x, dtype=float)
    u = backmap(model, x)
    if args.check_bounds:
        n = x.size
        lo, hi = model.lower[:n], model.upper[:n]
        outside = np.flatnonzero((x < lo) | (x > hi))
        if outside.size:
            raise ValidationError(
                "reduced coordinates outside the training bounds at modes "
                + ",".join(str(i + 1) for i in outside)
            )
    print(",".join(FLOAT_FMT % v for v in u))
    return 0


def cmd_contour(args) -> int:
    model = load_model(args.model)
    meta = model.provenance.get("metadata", {})
    case_meta = meta.get("case")
    if not case_meta or case_meta.get("kind") != "synthetic":
        raise ValidationError("contour needs a model fitted on synthetic-case data")
    case = SyntheticCase.from_dict(case_meta)
    if len(args.modes) != 2:
        raise ValidationError("--modes takes exactly two mode numbers")
    header, rows = reports.contour_table(
        model,
        lambda U: case.physics(U)[1],
        modes=tuple(args.modes),
        n=args.grid,
        names=list(LUMPED_NAMES),
    )
    reports.write_csv(args.out, header, rows)
    return 0


def cmd_convergence(args) -> int:
    samples, measures, manifest = load_snapshots(args.manifest)
    mode = args.mode
    if mode is None:
        mode = "pi-pme" if ("f" in manifest["blocks"] or "c" in manifest["blocks"]) else "pme"
    config = EmbeddingConfig(mode=mode)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = variance_convergence(samples, measures, config, args.sizes, args.iqr_k)
    header, table = reports.convergence_table(rows)
    reports.write_csv(args.out, header, table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pme", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="write Sobol design vectors")
    p.add_argument("--dim", type=int, help="number of design variables (checked against --bounds)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--bounds", required=True, help="CSV with one 'lo,hi' line per variable")
    p.add_argument("--skip", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="evaluate design vectors on a test case")
    p.add_argument("--case", choices=["synthetic"], default="synthetic")
    p.add_argument("--samples", required=True, help="design-vector block CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--coupled", type=_int_list, help="zero-based physics-coupled variables")
    p.add_argument("--alpha", type=float)
    p.add_argument("--width", type=float)
    p.add_argument("--stations", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--no-physics", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit an embedding model")
    p.add_argument("--mode", choices=[m.value for m in Mode], required=True)
    p.add_argument("--manifest", required=True, help="snapshot manifest.json written by simulate")
    p.add_argument("--confidence", type=float, default=0.95,
                   help="fraction of total variance the retained modes must resolve")
    p.add_argument("--iqr-k", type=_iqr_k, default=3.0, help="IQR fence multiplier, or 'none'")
    p.add_argument("--rank-tol", type=float, default=1e-12,
                   help="drop modes with eigenvalue below this fraction of the largest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("report", help="write a plot-ready CSV table")
    p.add_argument("--model", required=True)
    p.add_argument("--what", choices=["variance", "components", "participation", "bounds"],
                   required=True)
    p.add_argument("--modes", type=_int_list, help="one-based modes for 'components'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("reconstruct", help="map reduced coordinates back to a design vector")
    p.add_argument("--model", required=True)
    p.add_argument("--x", type=_float_list, required=True,
                   help="comma-separated coordinates; use --x=-1,2 for a leading minus")
    p.add_argument("--check-bounds", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("contour", help="lumped outputs over two reduced variables")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=_grid, default=21, help="N or NxN")
    p.add_argument("--modes", type=_int_list, default=[1, 2])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("convergence", help="total variance against sample count")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sizes", type=_int_list, required=True, help="ascending prefix sizes, e.g. 64,256,1024")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--iqr-k", type=_iqr_k, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convergence)
    return parser


def _run(args) -> int:
    threads = os.environ.get("PME_THREADS")
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(threads)):
            return args.func(args)
    return args.func(args)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except PMEError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        print(json.dumps(payload), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        payload = {"error": "ValidationError", "message": str(exc), "exit_code": 2}
        print(json.dumps(payload), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
