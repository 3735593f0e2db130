"""Command-line entry point.

Subcommands: ``run`` (one case from a YAML config or a named preset),
``study`` (convergence study over a resolution list), ``check-surface``
(validate a surface file and print its statistics). Exit codes: 0 success,
1 configuration/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys


def _build_parser():
    ap = argparse.ArgumentParser(prog="ibflow")
    ap.add_argument("--log-level", default="INFO",
                    choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    ap.add_argument("--threads", type=int, default=None,
                    help="BLAS/OpenMP thread count (default: IBFLOW_THREADS or all)")
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run one case")
    src = runp.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="YAML case config")
    src.add_argument("--preset", help="built-in case name")
    runp.add_argument("--output-dir", default=None)

    studyp = sub.add_parser("study", help="convergence study over resolutions")
    ssrc = studyp.add_mutually_exclusive_group(required=True)
    ssrc.add_argument("config", nargs="?", help="YAML case config")
    ssrc.add_argument("--preset", help="built-in case name")
    studyp.add_argument("--resolutions", nargs="+", required=True, type=float)
    studyp.add_argument("--output-dir", default=None)

    chk = sub.add_parser("check-surface", help="validate an STL/OBJ surface")
    chk.add_argument("surface")
    chk.add_argument("--bins", type=int, default=None)
    return ap


def _set_threads(n: int | None):
    n = n if n is not None else os.environ.get("IBFLOW_THREADS")
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _set_threads(args.threads)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")

    # heavy imports after the thread environment is pinned
    from .errors import (ConfigurationError, CouplingError,
                         SingularSystemError, SolverConvergenceError,
                         SurfaceError)

    try:
        return _dispatch(args)
    except (ConfigurationError, SurfaceError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (SolverConvergenceError, SingularSystemError, CouplingError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2


def _load(args):
    from .config import load_config
    from .presets import get_preset

    if args.preset:
        return get_preset(args.preset)
    return load_config(args.config)


def _dispatch(args) -> int:
    if args.command == "run":
        from .runner import run_case

        result = run_case(_load(args), output_dir=args.output_dir)
        state = result.run.state
        print(f"{result.config.name}: {result.run.reason} after {state.step} steps "
              f"(t = {state.time:.6g} s, {result.elapsed:.1f} s wall)")
        if result.error_report is not None:
            rep = result.error_report
            print(f"  L_inf = {rep.l_inf:.6e}  L_2 = {rep.l_2:.6e} "
                  f"({rep.n_samples} samples)")
        if result.max_axial_velocity is not None:
            print(f"  max axial velocity = {result.max_axial_velocity:.6e} m/s")
        return 0

    if args.command == "study":
        from .runner import convergence_study

        study = convergence_study(_load(args), args.resolutions,
                                  output_dir=args.output_dir)
        print(f"{'h':>12} {'L_inf':>12} {'L_2':>12} {'p_inf':>7} {'p_2':>7}")
        for i, row in enumerate(study.rows):
            oi = f"{study.order_l_inf[i-1]:7.3f}" if i else "      -"
            o2 = f"{study.order_l_2[i-1]:7.3f}" if i else "      -"
            print(f"{row.h:12.4e} {row.l_inf:12.4e} {row.l_2:12.4e} {oi} {o2}")
        return 0

    if args.command == "check-surface":
        from .surface import facet_stats, load_surface

        surf = load_surface(args.surface)
        out = facet_stats(surf, bins=args.bins)
        stats = out[0] if args.bins else out
        print(f"{args.surface}: closed surface, {surf.n_facets} facets, "
              f"{len(surf.vertices)} vertices")
        print(f"  total area   {surf.total_area:.8e} m^2")
        print(f"  edge length  mean {stats.edge_mean:.6e}  std {stats.edge_std:.6e}")
        print(f"  facet area   mean {stats.area_mean:.6e}  std {stats.area_std:.6e}")
        if args.bins:
            counts, edges = out[1]
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                print(f"  [{lo:.4e}, {hi:.4e}): {c}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
