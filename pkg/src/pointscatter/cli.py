"""Command line front end.

Subcommands ``norms``, ``solve``, ``stats``, ``equidist`` and ``verify`` share
one set of flags.  Values can also come from a key = value config file given
with ``--config``; flags on the command line win.  Norm tables are cached in
``--cache-dir`` keyed by (torus, cutoff), and every output file gets a JSON
sidecar ``<file>.json`` holding the resolved configuration, the package
version and the sha256 of the norm table cache it was computed from.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PointScatterError, UsageError
from .greens import default_cutoff, equidistribution_scan
from .lattice import (TorusSpec, build_norm_table, circle_law_report, distinct_counting,
                      export_csv, load_table, save_table)
from .spectrum import (DEFAULT_DELTA, Strong, Weak, intervals_up_to, solve_strong, solve_weak,
                       verify_truncation)
from .stats import gap_report, poisson_sample, spacing_report, trend_slope

LOGGER = logging.getLogger("pointscatter")

LANDAU_B = 0.764

DEFAULTS = {
    "torus": None,
    "aspect": None,
    "aspect_b": None,
    "dim": None,
    "coupling": "weak",
    "phi": 0.0,
    "alpha": 1.0,
    "delta": DEFAULT_DELTA,
    "xmax": 1e3,
    "cache_dir": ".pointscatter-cache",
    "out": ".",
    "threads": 1,
    "seed": None,
    "input": None,
    "synthetic": None,
    "count": None,
    "source": "norms",
    "zeta": "1,0",
    "xmin": 1e2,
    "x0": None,
}
FLOATS = {"phi", "alpha", "delta", "xmax", "xmin"}
INTS = {"dim", "threads", "seed", "count"}


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value file; command line flags take precedence")
    common.add_argument("--torus", choices=["square", "cubic", "rect"],
                        help="preset geometry; 'rect' takes --aspect (and --aspect-b)")
    common.add_argument("--aspect", help="a^2 as p/q, sqrt(p/q) or irr:<decimal>")
    common.add_argument("--aspect-b", dest="aspect_b", help="b^2 for 3D tori")
    common.add_argument("--dim", type=int, choices=[2, 3])
    common.add_argument("--coupling", choices=["weak", "strong"])
    common.add_argument("--phi", type=float, help="extension parameter, weak coupling")
    common.add_argument("--alpha", type=float, help="physical coupling, strong coupling")
    common.add_argument("--delta", type=float, help="strong-coupling window exponent")
    common.add_argument("--xmax", type=float, help="energy threshold")
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--seed", type=int, help="seed for synthetic samplers")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="pointscatter", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("norms", parents=[common], help="tabulate norms and multiplicities")
    sub.add_parser("solve", parents=[common], help="solve for the new eigenvalues")
    p = sub.add_parser("stats", parents=[common], help="spacing statistics and histogram")
    p.add_argument("--input", help="file of sorted values (one per line, or a CSV with a "
                                   "'lambda' or 'norm' column)")
    p.add_argument("--synthetic", choices=["poisson"], help="use a synthetic sequence")
    p.add_argument("--count", type=int, help="length of the synthetic sequence")
    p.add_argument("--source", choices=["norms", "eigenvalues"])
    p = sub.add_parser("equidist", parents=[common], help="position matrix elements of eigenstates")
    p.add_argument("--zeta", help="dual vectors in index coordinates, e.g. '1,0;1,1'")
    p.add_argument("--count", type=int, help="number of eigenvalues (default 200)")
    p.add_argument("--xmin", type=float, help="lower end of the energy range")
    p.add_argument("--x0", help="scatterer position, e.g. '0,0'")
    sub.add_parser("verify", parents=[common], help="run the numerical checks and report")
    return parser


def _read_config(path) -> dict:
    text = Path(path).read_text()
    cp = configparser.ConfigParser()
    cp.read_string("[run]\n" + text)
    out = {}
    for key, value in cp["run"].items():
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        out[key] = value
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (in increasing priority)."""
    cfg = dict(DEFAULTS)
    given = vars(args)
    if given.get("config"):
        cfg.update(_read_config(given["config"]))
    cfg.update({k: v for k, v in given.items() if k in DEFAULTS and v is not None})
    for key in FLOATS:
        if cfg[key] is not None:
            cfg[key] = float(cfg[key])
    for key in INTS:
        if cfg[key] is not None:
            cfg[key] = int(cfg[key])
    cfg["command"] = given["command"]
    return cfg


def torus_from(cfg) -> TorusSpec:
    preset = cfg["torus"]
    if preset == "square" or (preset is None and cfg["aspect"] is None and cfg["dim"] in (None, 2)):
        return TorusSpec.square()
    if preset == "cubic" or (preset is None and cfg["aspect"] is None and cfg["dim"] == 3):
        return TorusSpec.cubic()
    if cfg["aspect"] is None:
        raise UsageError("--torus rect needs --aspect")
    dim = cfg["dim"] or (3 if cfg["aspect_b"] is not None else 2)
    return TorusSpec.from_strings(cfg["aspect"], cfg["aspect_b"], dim)


def coupling_from(cfg):
    if cfg["coupling"] == "weak":
        return Weak(cfg["phi"])
    if cfg["coupling"] == "strong":
        return Strong(cfg["alpha"], cfg["delta"])
    raise UsageError(f"unknown coupling {cfg['coupling']!r}")


class Run:
    """Resolved configuration plus the norm table cache it works against."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.torus = torus_from(cfg)
        if cfg["xmax"] <= 0 or not math.isfinite(cfg["xmax"]):
            raise UsageError("--xmax must be positive and finite")
        if cfg["threads"] < 1:
            raise UsageError("--threads must be at least 1")
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache_dir = Path(cfg["cache_dir"])
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.cache_file: Path | None = None

    def table(self, cutoff: float):
        key = json.dumps({"torus": self.torus.to_dict(), "cutoff": float(cutoff).hex()}, sort_keys=True)
        path = self.cache_dir / (hashlib.sha256(key.encode()).hexdigest()[:20] + ".psnt")
        if path.exists():
            LOGGER.info("cache hit: %s", path)
            table = load_table(path)
        else:
            LOGGER.info("building norm table for %s up to %g", self.torus, cutoff)
            table = build_norm_table(self.torus, cutoff, workers=self.cfg["threads"])
            save_table(table, path)
        self.cache_file = path
        return table

    def sidecar(self, path: Path, **extra) -> Path:
        meta = {
            "config": {k: v for k, v in self.cfg.items()},
            "torus": str(self.torus),
            "version": __version__,
            "table_cache": self.cache_file.name if self.cache_file else None,
            "table_sha256": (hashlib.sha256(self.cache_file.read_bytes()).hexdigest()
                             if self.cache_file else None),
        }
        meta.update(extra)
        side = path.with_name(path.name + ".json")
        side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
        return side

    def spectrum(self, table, xmax: float):
        coupling = coupling_from(self.cfg)
        if isinstance(coupling, Weak):
            return solve_weak(table, coupling, xmax=xmax, threads=self.cfg["threads"])
        return solve_strong(table, coupling, xmax=xmax, threads=self.cfg["threads"])


def solve_cutoff(x: float) -> float:
    return max(1e3, 2.0 * x)


def cmd_norms(run: Run) -> int:
    table = run.table(run.cfg["xmax"])
    path = export_csv(table, run.out / "norms.csv")
    run.sidecar(path, rows=len(table))
    print(f"{len(table)} distinct norms up to {_fmt(table.cutoff)} -> {path}")
    return 0


def cmd_solve(run: Run) -> int:
    x = run.cfg["xmax"]
    table = run.table(solve_cutoff(x))
    spec = run.spectrum(table, x)
    path = spec.to_csv(run.out / "eigenvalues.csv")
    run.sidecar(path, rows=len(spec), table_cutoff=table.cutoff)
    print(f"{len(spec)} eigenvalues up to {_fmt(x)} -> {path}")
    return 0


def _read_sequence(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines and "," in lines[0]:
        header = lines[0].split(",")
        for name in ("lambda", "norm"):
            if name in header:
                col = header.index(name)
                return np.array([float(ln.split(",")[col]) for ln in lines[1:]])
        raise UsageError(f"{path}: CSV needs a 'lambda' or 'norm' column")
    return np.array([float(ln) for ln in lines])


def cmd_stats(run: Run) -> int:
    cfg = run.cfg
    gaps = None
    if cfg["synthetic"] == "poisson":
        seq = poisson_sample(cfg["count"] or 100_000, cfg["seed"])
        x = float(seq[-1])
        source = "synthetic-poisson"
    elif cfg["input"]:
        seq = _read_sequence(cfg["input"])
        x = float(seq[-1])
        source = str(cfg["input"])
    else:
        x = cfg["xmax"]
        table = run.table(solve_cutoff(x))
        if cfg["source"] == "eigenvalues":
            spec = run.spectrum(table, x)
            seq = spec.lam[spec.j > 0]
            gaps = gap_report(table, spec, x).to_dict()
        else:
            seq = table.norms
        source = cfg["source"]
    report = spacing_report(seq, x)
    hist = report.histogram_csv(run.out / "histogram.csv")
    run.sidecar(hist, source=source)
    data = report.to_dict()
    data.update(source=source, gaps=gaps)
    path = run.out / "report.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    run.sidecar(path, source=source)
    print(f"KS vs Poisson {_fmt(report.ks_vs_poisson)}, vs semi-Poisson "
          f"{_fmt(report.ks_vs_semipoisson)} ({report.count} spacings) -> {path}")
    return 0


def _parse_vectors(text: str) -> list[tuple[int, ...]]:
    try:
        return [tuple(int(v) for v in part.split(",")) for part in text.split(";") if part.strip()]
    except ValueError:
        raise UsageError(f"cannot parse vectors {text!r}") from None


def cmd_equidist(run: Run) -> int:
    cfg = run.cfg
    x = cfg["xmax"]
    table = run.table(max(solve_cutoff(x), default_cutoff(x, run.torus.dimension)))
    spec = run.spectrum(table, x)
    spec = spec[np.nonzero(spec.lam >= cfg["xmin"])[0].min():] if np.any(spec.lam >= cfg["xmin"]) else spec[:0]
    count = cfg["count"] or 200
    if len(spec) == 0:
        raise UsageError("no eigenvalues in [xmin, xmax]")
    pick = np.unique(np.linspace(0, len(spec) - 1, min(count, len(spec))).round().astype(int))
    x0 = tuple(float(v) for v in cfg["x0"].split(",")) if cfg["x0"] else None
    scan = equidistribution_scan(table, [spec[int(i)] for i in pick], x0, _parse_vectors(cfg["zeta"]))
    path = scan.to_csv(run.out / "equidist.csv")
    run.sidecar(path, rows=int(scan.values.size))
    print(f"{len(pick)} eigenvalues scanned -> {path}")
    return 0


def _check(name, value, threshold, passed, **extra) -> dict:
    out = {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}
    out.update(extra)
    return out


def verify_checks(run: Run) -> list[dict]:
    """The numerical checks that fit under the configured threshold."""
    x = run.cfg["xmax"]
    torus = run.torus
    delta = run.cfg["delta"]
    table = run.table(max(solve_cutoff(x), x + 10 * x**delta))
    checks = []
    xs = [t for t in (x / 100, x / 10, x) if t >= 10]

    reports = [circle_law_report(table, t) for t in xs]
    worst = max(abs(r.remainder) / r.x**0.5 for r in reports)
    checks.append(_check("circle_law_remainder_over_sqrt_x", worst, 1.0, worst < 1.0))

    if torus.dimension == 2 and torus.is_rational and str(torus) == str(TorusSpec.square()):
        landau = distinct_counting(table, x) * math.sqrt(math.log(x)) / x
        checks.append(_check("landau_constant", landau, [0.9 * LANDAU_B, 1.1 * LANDAU_B],
                             abs(landau / LANDAU_B - 1) < 0.1))
    if torus.dimension == 2 and not torus.is_rational:
        ratio = distinct_counting(table, x) / x / (math.pi / 4)
        checks.append(_check("irrational_counting_over_pi_4", ratio, [0.95, 1.05], abs(ratio - 1) < 0.05))

    if torus.dimension == 2:
        lams = [v for v in (1e2, 3e2, 1e3, 3e3, 1e4, 3e4, 1e5) if v <= x]
        if len(lams) >= 3:
            vals = [verify_truncation(table, v, delta) for v in lams]
            slope = trend_slope(lams, vals)
            spread = max(vals) - min(vals)
            checks.append(_check("truncation_slope", slope, 0.05, abs(slope) < 0.05,
                                 lambdas=lams, values=vals))
            checks.append(_check("truncation_range", spread, 5.0, spread < 5.0))

    spec = run.spectrum(table, x)
    gx = [t for t in xs if table.count_le(t) > 11]
    gaps = [gap_report(table, spec, t) for t in gx]
    if torus.dimension == 2 and len(gaps) >= 2:
        vals = [g.log_weighted_ratio for g in gaps]
        spread = max(vals) / min(vals)
        checks.append(_check("gap_log_weighted_ratio_spread", spread, 2.0, spread <= 2.0,
                             thresholds=gx, values=vals))
    if torus.dimension == 3 and gaps:
        ratio = gaps[-1].ratio
        checks.append(_check("gap_ratio_3d", ratio, [0.45, 0.55], abs(ratio - 0.5) < 0.05))

    interlaced = bool(np.all((spec.lam < spec.right) & ((spec.j == 0) | (spec.lam > spec.left))))
    checks.append(_check("interlacing", int(len(spec)), None, interlaced))
    return checks


def cmd_verify(run: Run) -> int:
    checks = verify_checks(run)
    path = run.out / "verify.json"
    path.write_text(json.dumps({"torus": str(run.torus), "xmax": run.cfg["xmax"], "checks": checks},
                               indent=2, sort_keys=True) + "\n")
    run.sidecar(path)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']}")
    return 0 if all(c["passed"] for c in checks) else 1


COMMANDS = {"norms": cmd_norms, "solve": cmd_solve, "stats": cmd_stats,
            "equidist": cmd_equidist, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(resolve(args))
        return COMMANDS[args.command](run)
    except PointScatterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
