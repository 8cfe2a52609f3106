"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 I/O, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as rio
from .datagen import OverlapInfeasibleError, PairSpec, make_pair, synthetic_figure
from .evaluation import alpha_recall, evaluate, summarize
from .geometry import DegenerateCloudError, DegenerateRotationError, PointCloud, RigidTransform, bounding_sphere, exp_se3
from .lines import make_rng, sample_chords
from .loss import ChamferLoss, ChamferMetric, LineLoss, NoIntersectionsError, WelschParams, gradient_check
from .solvers import METHODS, RankDeficiencyError, SolverConfig, solve

log = logging.getLogger("raylign")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "RAYLIGN_SEED"
NUMERICAL_ERRORS = (
    NoIntersectionsError,
    RankDeficiencyError,
    DegenerateRotationError,
    DegenerateCloudError,
    np.linalg.LinAlgError,
    FloatingPointError,
)
DEFAULT_ALPHAS = tuple(np.round(np.linspace(0.005, 0.2, 40), 6))


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "line-loss"
    solver: SolverConfig = field(default_factory=SolverConfig)
    alphas: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    jobs: int = 1
    paths: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "solver": self.solver.to_dict(),
            "alphas": [float(a) for a in self.alphas],
            "jobs": self.jobs,
            "paths": dict(self.paths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(SolverConfig)}
        solver = d.get("solver", {})
        unknown = set(solver) - known
        if unknown:
            raise UsageError(f"unknown solver settings: {sorted(unknown)}")
        return cls(
            method=d.get("method", "line-loss"),
            solver=SolverConfig(**solver),
            alphas=[float(a) for a in d.get("alphas", DEFAULT_ALPHAS)],
            jobs=int(d.get("jobs", 1)),
            paths=dict(d.get("paths", {})),
        )


def _coerce(field_type, raw: str):
    if field_type in (bool, "bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {raw!r}")
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.from_dict(rio.read_json(args.config))
        except (OSError, json.JSONDecodeError) as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
    solver = cfg.solver.to_dict()
    types = {f.name: f.type for f in dataclasses.fields(SolverConfig)}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in types:
            raise UsageError(f"bad --set {item!r}; known keys: {sorted(types)}")
        solver[key] = _coerce(types[key], raw.strip())
    if getattr(args, "iterations", None):
        solver["max_iterations"] = args.iterations
    if getattr(args, "lines", None):
        solver["lines_per_iteration"] = args.lines
    if getattr(args, "seed", None) is not None:
        solver["seed"] = args.seed
    if os.environ.get(SEED_ENV):
        solver["seed"] = int(os.environ[SEED_ENV])
    try:
        cfg.solver = SolverConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if getattr(args, "method", None):
        cfg.method = args.method
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    return cfg


def _load_base(spec: str) -> PointCloud:
    if spec.startswith("synthetic:"):
        _, _, rest = spec.partition(":")
        name, _, count = rest.partition(":")
        if name != "figure":
            raise UsageError(f"unknown synthetic shape {name!r}")
        return synthetic_figure(int(count or 8192))
    return rio.read_cloud(spec)


def _trace_rows(trace) -> list[dict]:
    rows = []
    for r in trace.records:
        row = {"iteration": r.iteration, "loss": r.loss, "d_med": r.d_med, "seconds": r.seconds}
        row.update({f"xi{i}": float(x) for i, x in enumerate(r.params)})
        rows.append(row)
    return rows


def _gt_from(path: str, pair_id: str | None, source_path: str) -> RigidTransform:
    p = Path(path)
    if p.suffix.lower() != ".json":
        return rio.read_transform(p)
    manifest = rio.read_json(p)
    src_name = Path(source_path).name
    for entry in manifest["pairs"]:
        if entry["pair_id"] == pair_id or (pair_id is None and Path(entry["source"]).name == src_name):
            return RigidTransform.from_matrix(np.array(entry["gt"]))
    raise UsageError(f"pair not found in manifest {path}")


def cmd_register(args) -> int:
    cfg = load_run_config(args)
    if cfg.method not in METHODS:
        raise UsageError(f"unknown method {cfg.method!r}; choose from {METHODS}")
    source = rio.read_cloud(args.source)
    target = rio.read_cloud(args.target)
    initial = rio.read_transform(args.init) if args.init else None
    gt = _gt_from(args.gt, args.pair_id, args.source) if args.gt else None
    out = Path(args.out)
    cfg.paths.update(source=str(args.source), target=str(args.target), out=str(out))
    rio.write_json(out / "config.json", cfg.to_dict())

    T, trace = solve(cfg.method, source, target, initial, cfg.solver)
    rio.write_transform(out / "transform.txt", T)
    rio.write_cloud(out / ("source_aligned" + (Path(args.source).suffix or ".xyz")), T.apply_cloud(source))
    rio.write_csv(out / "trace.csv", _trace_rows(trace))
    print(f"final loss {trace.records[-1].loss:.10g} after {len(trace)} iterations")
    if gt is not None:
        rep = evaluate(gt, T, source)
        print(
            f"err_r_deg {rep.err_r_deg:.6f} err_t_l1 {rep.err_t_l1:.6f} err_t_l2 {rep.err_t_l2:.6f} "
            f"err_pw_l1 {rep.err_pw_l1:.6f} err_pw_l2 {rep.err_pw_l2:.6f}"
        )
    return EXIT_OK


def cmd_genbench(args) -> int:
    base = _load_base(args.base)
    out = Path(args.out)
    seed = int(os.environ.get(SEED_ENV, args.seed))
    entries = []
    for i in range(args.count):
        spec = PairSpec(
            rotation_max_deg=args.rotation_max_deg,
            translation_range=args.translation_range,
            crop=args.crop,
            overlap=args.overlap,
            noise_sigma=args.noise_sigma,
            outlier_fraction=args.outlier_fraction,
            points=args.points,
            seed=seed + i,
        )
        pair = make_pair(base, spec)
        pid = f"pair_{i:04d}"
        rio.write_cloud(out / f"{pid}_source.xyz", pair.source)
        rio.write_cloud(out / f"{pid}_target.xyz", pair.target)
        entries.append(
            {
                "pair_id": pid,
                "source": f"{pid}_source.xyz",
                "target": f"{pid}_target.xyz",
                "gt": pair.gt.matrix().tolist(),
                "seed": spec.seed,
                "spec": spec.to_dict(),
                "source_outliers": pair.source_outliers.tolist(),
            }
        )
    manifest = {"base": args.base, "order": "scale, crop, transform", "count": args.count, "pairs": entries}
    rio.write_json(out / "manifest.json", manifest)
    print(f"wrote {args.count} pairs to {out}")
    return EXIT_OK


def _bench_task(task):
    bench_dir, entry, label, method, solver_dict = task
    row = {"pair_id": entry["pair_id"], "method": label}
    try:
        source = rio.read_cloud(Path(bench_dir) / entry["source"])
        target = rio.read_cloud(Path(bench_dir) / entry["target"])
        gt = RigidTransform.from_matrix(np.array(entry["gt"]))
        solver_dict = dict(solver_dict, seed=solver_dict["seed"] + int(entry.get("seed", 0)))
        started = time.perf_counter()
        T, trace = solve(method, source, target, None, SolverConfig(**solver_dict))
        rep = evaluate(gt, T, source, entry["pair_id"])
        row.update(dataclasses.asdict(rep))
        row.update(iterations=len(trace), seconds=time.perf_counter() - started, status="ok")
    except NUMERICAL_ERRORS as exc:
        row.update(status=f"failed: {type(exc).__name__}: {exc}")
    return row


PAIR_FIELDS = ["pair_id", "method", "err_r_deg", "err_t_l1", "err_t_l2", "err_pw_l1", "err_pw_l2", "iterations", "seconds", "status"]


def _variants(methods, cfg: RunConfig, nu0s):
    for m in methods:
        if nu0s and m in ("line-loss", "cd-w", "svd-surrogate"):
            for nu in nu0s:
                yield f"{m}@nu0={nu:g}", m, dict(cfg.solver.to_dict(), nu0=nu)
        else:
            yield m, m, cfg.solver.to_dict()


def cmd_bench(args) -> int:
    methods = [m for m in (args.methods or "").split(",") if m]
    if not methods:
        raise UsageError("at least one method is required (--methods)")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {METHODS}")
    cfg = load_run_config(args)
    manifest = rio.read_json(Path(args.bench_dir) / "manifest.json")
    out = Path(args.out)
    nu0s = [float(x) for x in args.nu0.split(",")] if args.nu0 else []
    cfg.paths.update(bench_dir=str(args.bench_dir), out=str(out))
    rio.write_json(out / "config.json", cfg.to_dict())

    variants = list(_variants(methods, cfg, nu0s))
    tasks = [(str(args.bench_dir), e, label, m, sd) for label, m, sd in variants for e in manifest["pairs"]]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_bench_task, tasks))
    else:
        rows = [_bench_task(t) for t in tasks]

    rio.write_csv(out / "pairs.csv", rows, PAIR_FIELDS)
    summary = []
    for label, _, _ in variants:
        ok = [r for r in rows if r["method"] == label and r["status"] == "ok"]
        reps = [SimpleReport(r) for r in ok]
        srow = {"method": label, "pairs": sum(r["method"] == label for r in rows), "ok": len(ok)}
        srow.update(summarize(reps))
        summary.append(srow)
        if reps:
            curve = alpha_recall(reps, cfg.alphas)
            rio.write_csv(
                out / f"recall_{_slug(label)}.csv",
                [{"alpha": float(a), "recall": float(r)} for a, r in zip(curve.alphas, curve.recalls)],
            )
    rio.write_csv(out / "summary.csv", summary)
    for s in summary:
        print(f"{s['method']:>28}  ok {s['ok']}/{s['pairs']}  mean Err_R {s['mean_err_r_deg']:.4f}  mean Err_pw(l2) {s['mean_err_pw_l2']:.5f}")
    return EXIT_OK


class SimpleReport:
    """Row-backed stand-in for an EvalReport."""

    def __init__(self, row: dict):
        for k in ("err_r_deg", "err_t_l1", "err_t_l2", "err_pw_l1", "err_pw_l2"):
            setattr(self, k, float(row[k]))


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def gradcheck_suite(states: int = 20, seed: int = 0, step: float = 1e-5, points: int = 30, lines: int = 200) -> dict[str, float]:
    """Max relative gradient error per objective over random states."""
    rng = make_rng(seed)
    worst = {"cd": 0.0, "cd-w": 0.0, "line-loss": 0.0}
    for _ in range(states):
        src = PointCloud(rng.uniform(-1, 1, (points, 3)))
        tgt = PointCloud(exp_se3(rng.normal(scale=0.2, size=6)).apply(src.points) + rng.normal(scale=0.01, size=(points, 3)))
        T = exp_se3(rng.normal(scale=0.1, size=6))
        worst["cd"] = max(worst["cd"], gradient_check(ChamferLoss(src, tgt, ChamferMetric.SQUARED_L2), T, step))
        worst["cd-w"] = max(worst["cd-w"], gradient_check(ChamferLoss(src, tgt, ChamferMetric.WELSCH), T, step))
        loss = LineLoss(src, tgt, WelschParams(0.5))
        chords = None
        for _ in range(5):
            chords = sample_chords(bounding_sphere(T.apply_cloud(src), tgt), lines, rng=rng)
            try:
                loss(T, chords)
                break
            except NoIntersectionsError:
                chords = None
        if chords is not None:
            worst["line-loss"] = max(worst["line-loss"], gradient_check(lambda X: loss(X, chords), T, step))
    return worst


def cmd_gradcheck(args) -> int:
    seed = int(os.environ.get(SEED_ENV, args.seed))
    worst = gradcheck_suite(args.states, seed, args.step)
    for name, err in worst.items():
        print(f"{name:>10}  max relative error {err:.3e}")
    return EXIT_OK


def cmd_lines_debug(args) -> int:
    source = rio.read_cloud(args.source)
    target = rio.read_cloud(args.target)
    T = rio.read_transform(args.transform) if args.transform else RigidTransform.identity()
    cfg = load_run_config(args)
    moved = T.apply_cloud(source)
    chords = sample_chords(
        bounding_sphere(moved, target), args.count, cfg.solver.sampler, (moved, target), make_rng(cfg.solver.seed), cfg.solver.perturbation
    )
    loss = LineLoss(source, target, WelschParams(cfg.solver.nu0))
    s, t = loss.intersections(T, chords)
    out = Path(args.out)
    rio.write_csv(
        out / "chords.csv",
        [dict(chord=i, ax=a[0], ay=a[1], az=a[2], bx=b[0], by=b[1], bz=b[2]) for i, (a, b) in enumerate(zip(chords.a.tolist(), chords.b.tolist()))],
    )
    rows = []
    for cloud, hits in (("source", s), ("target", t)):
        for c, p, par in zip(hits.chord_ids.tolist(), hits.points.tolist(), hits.params.tolist()):
            rows.append(dict(chord=c, cloud=cloud, x=p[0], y=p[1], z=p[2], param=par))
    rio.write_csv(out / "intersections.csv", rows, ["chord", "cloud", "x", "y", "z", "param"])
    print(f"{len(chords)} chords, {len(s.points)} source and {len(t.points)} target intersections -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raylign", description="Rigid point-cloud registration with a random-line intersection loss.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a solver setting")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--lines", type=int)
        sp.add_argument("--seed", type=int)

    r = sub.add_parser("register", help="register one source cloud onto a target")
    r.add_argument("source")
    r.add_argument("target")
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--out", required=True)
    r.add_argument("--init", help="initial 4x4 transform file")
    r.add_argument("--gt", help="ground truth: 4x4 transform file or genbench manifest.json")
    r.add_argument("--pair-id")
    solver_flags(r)
    r.set_defaults(func=cmd_register)

    g = sub.add_parser("genbench", help="generate synthetic benchmark pairs")
    g.add_argument("base", help="cloud file, or synthetic:figure[:N]")
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--out", required=True)
    g.add_argument("--rotation-max-deg", type=float, default=45.0)
    g.add_argument("--translation-range", type=float, default=0.2)
    g.add_argument("--crop", choices=["none", "half-space", "cone"], default="none")
    g.add_argument("--overlap", type=float, default=0.7)
    g.add_argument("--noise-sigma", type=float, default=0.0)
    g.add_argument("--outlier-fraction", type=float, default=0.0)
    g.add_argument("--points", type=int, default=1024)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_genbench)

    b = sub.add_parser("bench", help="run methods over a generated benchmark")
    b.add_argument("bench_dir")
    b.add_argument("--methods", default="", help=f"comma-separated subset of {','.join(METHODS)}")
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int)
    b.add_argument("--nu0", help="comma-separated nu0 sweep for the Welsch-based methods")
    solver_flags(b)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with central differences")
    c.add_argument("--states", type=int, default=20)
    c.add_argument("--step", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("lines-debug", help="dump sampled chords and their intersections")
    d.add_argument("source")
    d.add_argument("target")
    d.add_argument("--out", required=True)
    d.add_argument("--count", type=int, default=500)
    d.add_argument("--transform")
    solver_flags(d)
    d.set_defaults(func=cmd_lines_debug)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OverlapInfeasibleError, *NUMERICAL_ERRORS) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
