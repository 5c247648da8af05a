"""Command line interface ``cm-euler3d``.

Subcommands::

    cm-euler3d run --config <path> [--output <dir>] [--resume <checkpoint>]
    cm-euler3d resample --stack <dir> --grid N --quantity w|tracer|u [--output <dir>]
    cm-euler3d convergence --scenario abc|taylor_green --levels 24 36 48 [--reference 72]

Exit codes: 0 on success, 2 on configuration or I/O errors, 3 when the run
aborts numerically.  ``CM_THREADS`` caps FFT and kernel parallelism.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("cm_euler3d")


def _apply_thread_cap() -> None:
    n = os.environ.get("CM_THREADS")
    if not n:
        return
    try:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        raise ConfigError(f"CM_THREADS must be a positive integer, got {n!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cm-euler3d",
                                description="Characteristic mapping solver for 3D Euler flows.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured simulation")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--output", type=Path, help="output directory (overrides the config)")
    r.add_argument("--resume", type=Path, help="checkpoint directory to continue from")

    s = sub.add_parser("resample", help="sample a stored solution on a fine grid")
    s.add_argument("--stack", required=True, type=Path)
    s.add_argument("--grid", required=True, type=int)
    s.add_argument("--quantity", choices=("w", "tracer", "u"), default="w")
    s.add_argument("--output", type=Path)

    c = sub.add_parser("convergence", help="grid refinement study on an analytic flow")
    c.add_argument("--scenario", required=True, choices=("abc", "taylor_green"))
    c.add_argument("--levels", type=int, nargs="+", default=[24, 36, 48])
    c.add_argument("--reference", type=int, default=72)
    c.add_argument("--t-final", type=float, default=2.0)
    c.add_argument("--output", type=Path, help="file receiving the error report")
    return p


def _cmd_run(args) -> None:
    from .config import load_config
    from .driver import run
    cfg = load_config(args.config)
    run(cfg, output=args.output, resume=args.resume, log=log.info)


def _cmd_resample(args) -> None:
    from .driver import resample
    if args.grid < 8:
        raise ConfigError("resample grid must have at least 8 points per axis")
    summary = resample(args.stack, args.grid, args.quantity, args.output)
    for k, v in summary.items():
        if k != "spectrum":
            log.info("%s %.10e", k, v)


def _cmd_convergence(args) -> None:
    from .convergence import convergence_study
    res = convergence_study(args.scenario, args.levels, args.reference, args.t_final,
                            log=log.info)
    text = res.report()
    if args.output is not None:
        args.output.write_text(text)
    sys.stdout.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    handlers = {"run": _cmd_run, "resample": _cmd_resample, "convergence": _cmd_convergence}
    try:
        _apply_thread_cap()
        handlers[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
