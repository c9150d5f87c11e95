"""Command-line surface: landau predict|assemble|count|eigs|trace|sweep|ldos.

Exit codes: 0 success, 2 validation/config failure, 3 solver failure.
Set LANDAU_THREADS to parallelize sweep rows across p values.
"""

import argparse
import json
import os
import sys

import numpy as np

from .discretize import assemble, build_gauge
from .errors import SolverError, ValidationError
from .gridio import write_grid
from .harness import ExperimentConfig, build_predictions, ldos_check, run_sweep
from .mmio import export_matrix, import_matrix
from .model import Grid, sample_fields, validate_model
from .predictor import TestFunction, k_set
from .spectral import count_interval, eigenpairs_in_interval, trace_phi


def _interval(text):
    lo, hi = text.split(":")
    return float(lo), float(hi)


def _emit(payload, out, name):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, name)
        with open(path, "w") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)


def cmd_predict(args):
    config = ExperimentConfig.from_file(args.config)
    pred = build_predictions(config)
    report = validate_model(config.model, pred.samples.grid)
    payload = {
        "validation": report.as_dict(),
        "bands": pred.bands.as_dict(),
        "measures": {f"{list(iv)}": mu for iv, mu in pred.measures.items()},
        "count_predictions": {
            f"p={p}": {f"{list(iv)}": pred.count_prediction(iv, p)
                       for iv in config.intervals}
            for p in config.p_list
        },
        "f0_pairing": pred.f0,
        "refinement": pred.refinement,
    }
    if args.out and config.intervals:
        os.makedirs(args.out, exist_ok=True)
        kset = k_set(pred.samples, config.intervals[0])
        dist = np.where(np.isfinite(kset.distance), kset.distance, -1.0)
        payload["kset_files"] = {
            "distance": write_grid(os.path.join(args.out, "kset_distance.grid"), dist),
            "indicator": write_grid(os.path.join(args.out, "kset_indicator.grid"),
                                    kset.indicator.astype(float)),
            "note": "16-byte header (two int64 dims), row-major float64; "
                    "distance -1 encodes the empty-K sentinel",
        }
    _emit(payload, args.out, "predict.json")
    return 0


def cmd_assemble(args):
    config = ExperimentConfig.from_file(args.config)
    spec = config.model
    if args.grid:
        ncells = [int(x) for x in args.grid.split(",")]
        if len(ncells) == 1:
            ncells *= spec.domain.d
        grid = Grid.build(spec.domain, ncells)
    else:
        samples = sample_fields(spec, Grid.build(spec.domain, [64] * spec.domain.d))
        grid = config.grid_for(args.p, samples.sup_b)
    gauge = build_gauge(spec, grid, args.p)
    H = assemble(spec, grid, args.p, gauge=gauge)
    export_matrix(H, args.out)
    sys.stdout.write(json.dumps({
        "out": args.out, "n": H.n, "grid": list(grid.ncells), "p": args.p,
        "flux_quanta": gauge.flux_quanta,
        "plaquette_defect": gauge.plaquette_defect,
    }, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_count(args):
    H = import_matrix(args.matrix)
    sl = count_interval(H, args.interval)
    _emit(sl.as_dict(), args.out, "count.json")
    return 0


def cmd_eigs(args):
    H = import_matrix(args.matrix)
    sl = eigenpairs_in_interval(H, args.interval, max_m=args.max_m)
    payload = sl.as_dict()
    if args.out and args.vectors and sl.count:
        os.makedirs(args.out, exist_ok=True)
        side = int(round(np.sqrt(H.shape[0])))
        files = []
        for j in range(sl.count):
            v = sl.vectors[:, j]
            if side * side == H.shape[0]:
                re = v.real.reshape(side, side)
                im = v.imag.reshape(side, side)
            else:
                re = v.real.reshape(1, -1)
                im = v.imag.reshape(1, -1)
            files.append(write_grid(os.path.join(args.out, f"vec{j:04d}_re.grid"), re))
            files.append(write_grid(os.path.join(args.out, f"vec{j:04d}_im.grid"), im))
        payload["vector_files"] = files
    _emit(payload, args.out, "eigs.json")
    return 0


def cmd_trace(args):
    H = import_matrix(args.matrix)
    phi = TestFunction(args.phi)
    tr = trace_phi(H, phi, method=args.method)
    _emit(tr.as_dict(), args.out, "trace.json")
    return 0


def cmd_sweep(args):
    config = ExperimentConfig.from_file(args.config)
    report = run_sweep(config)
    if args.out:
        path = report.write(args.out)
        print(path)
    else:
        sys.stdout.write(report.to_json())
    return 0


def cmd_ldos(args):
    config = ExperimentConfig.from_file(args.config)
    rows = ldos_check(config)
    _emit({"rows": rows}, args.out, "ldos.json")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="landau",
                                 description="Landau-level spectral laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="bands, gaps, measures, f0 pairing")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("assemble", help="assemble H_p and export Matrix Market")
    p.add_argument("--config", required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--grid", help="cells per dimension, e.g. 128 or 128,128")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_assemble)

    p = sub.add_parser("count", help="eigenvalue count in an interval")
    p.add_argument("--matrix", required=True)
    p.add_argument("--interval", type=_interval, required=True, metavar="a:b")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("eigs", help="validated eigenpairs in an interval")
    p.add_argument("--matrix", required=True)
    p.add_argument("--interval", type=_interval, required=True, metavar="a:b")
    p.add_argument("--max-m", type=int, default=512, dest="max_m")
    p.add_argument("--vectors", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eigs)

    p = sub.add_parser("trace", help="tr phi(H) for a bump test function")
    p.add_argument("--matrix", required=True)
    p.add_argument("--phi", type=_interval, required=True, metavar="a:b",
                   help="support of the bump")
    p.add_argument("--method", choices=["auto", "eigenpairs", "counting"],
                   default="auto")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_trace)

    p = sub.add_parser("sweep", help="full prediction-vs-measurement sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ldos", help="local density-of-states comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ldos)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
