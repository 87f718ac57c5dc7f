"""Command-line driver for convergence studies.

Configuration comes from a flat key=value file and/or command-line flags
(flags win).  Exit codes: 0 success, 2 usage/configuration error,
3 numerical failure during assembly or solve.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from .analysis import GRID_FAMILIES, convergence_study
from .polyalg import manufactured_case

__all__ = ["RunConfig", "parse_config", "run", "main"]

_CONFIG_KEYS = ("mesh", "k", "levels", "solver", "tol", "case",
                "output", "path", "threads")


@dataclass
class RunConfig:
    mesh: str = "square"
    k: int = 3
    level_min: int = 3
    level_max: int = 5
    solver: str = "schur"
    tol: float = 1e-12
    case: str = "poly2d"
    output: str = "markdown"
    path: str = ""          # empty: write the table to stdout
    threads: int = 0        # 0: leave the BLAS thread pool alone

    def validate(self) -> None:
        if self.mesh not in GRID_FAMILIES:
            raise ValueError(f"unknown mesh family {self.mesh!r}")
        if self.k < 3:
            raise ValueError("k must be >= 3")
        if self.level_min < 1 or self.level_min > self.level_max:
            raise ValueError("invalid level range")
        if self.solver not in ("schur", "full"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.case not in ("poly2d", "poly3d"):
            raise ValueError(f"unknown case {self.case!r}")
        if (self.mesh == "cube") != (self.case == "poly3d"):
            raise ValueError(
                f"mesh family {self.mesh!r} requires case "
                f"{'poly3d' if self.mesh == 'cube' else 'poly2d'}")
        if self.output not in ("csv", "markdown"):
            raise ValueError(f"unknown output format {self.output!r}")
        if not (self.tol > 0.0):
            raise ValueError("tol must be positive")
        if self.threads < 0:
            raise ValueError("threads must be >= 0")


def _parse_levels(spec: str) -> tuple[int, int]:
    txt = spec.replace(":", " ").split()
    if len(txt) == 1:
        a = b = int(txt[0])
    elif len(txt) == 2:
        a, b = int(txt[0]), int(txt[1])
    else:
        raise ValueError(f"bad level range {spec!r} (use min:max)")
    return a, b


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = val
    return values


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wgbiharm",
        description="Fourth-order (biharmonic) solver on polytopal grids: "
                    "run a refinement study and print the error table.")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--mesh", choices=sorted(GRID_FAMILIES))
    p.add_argument("--k", type=int, help="polynomial degree (>= 3)")
    p.add_argument("--levels", help="refinement levels, e.g. 5:7")
    p.add_argument("--solver", choices=("schur", "full"))
    p.add_argument("--tol", type=float, help="linear-solve residual tolerance")
    p.add_argument("--case", choices=("poly2d", "poly3d"),
                   help="manufactured solution (matches the mesh dimension)")
    p.add_argument("--output", choices=("csv", "markdown"))
    p.add_argument("--path", help="report file (default: stdout)")
    p.add_argument("--threads", type=int, help="BLAS thread cap (0 = leave)")
    return p


def parse_config(argv) -> RunConfig:
    """Merge config file, environment, and flags (increasing precedence)."""
    args = _build_parser().parse_args(argv)
    values: dict[str, str] = {}
    if args.config:
        values.update(_read_config_file(args.config))
    env_threads = os.environ.get("WGBIHARM_THREADS")
    if env_threads is not None:
        values["threads"] = env_threads
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    cfg = RunConfig()
    if "mesh" in values:
        cfg.mesh = values["mesh"]
    if "k" in values:
        cfg.k = int(values["k"])
    if "levels" in values:
        cfg.level_min, cfg.level_max = _parse_levels(values["levels"])
    if "solver" in values:
        cfg.solver = values["solver"]
    if "tol" in values:
        cfg.tol = float(values["tol"])
    if "case" in values:
        cfg.case = values["case"]
    elif cfg.mesh == "cube":
        cfg.case = "poly3d"
    if "output" in values:
        cfg.output = values["output"]
    if "path" in values:
        cfg.path = values["path"]
    if "threads" in values:
        cfg.threads = int(values["threads"])
    cfg.validate()
    return cfg


def _limit_threads(n: int):
    if n <= 0:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=n)


def run(cfg: RunConfig, out=None) -> int:
    """Execute the study described by `cfg` and emit the report."""
    if out is None:
        out = sys.stdout
    limiter = _limit_threads(cfg.threads)
    try:
        case = manufactured_case(3 if cfg.case == "poly3d" else 2)

        def progress(rep):
            i = len(rep.levels) - 1
            print(f"level {rep.levels[i]}: {rep.dofs[i]} unknowns, "
                  f"{rep.seconds[i]:.2f} s", file=out, flush=True)

        try:
            rep = convergence_study(
                cfg.mesh, cfg.k, range(cfg.level_min, cfg.level_max + 1),
                case=case, solver=cfg.solver, tol=cfg.tol, on_level=progress)
        except (RuntimeError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        text = rep.to_csv() if cfg.output == "csv" else rep.to_markdown()
        if cfg.path:
            with open(cfg.path, "w") as fh:
                fh.write(text)
        else:
            out.write(text)
        return 0
    finally:
        if limiter is not None:
            limiter.unregister()


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:           # argparse already printed usage
        return 2 if exc.code else 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
