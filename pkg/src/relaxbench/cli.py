"""Command-line interface: ingestion, experiment orchestration, reports.

Subcommands: ``verify`` (per-sample verdicts at a fixed radius),
``eps-search`` (certified and attacked minimum-distortion radii with the
percentage-gap summary), ``robust-error`` (dataset-level error interval),
``bounds-dump`` (preactivation boxes as JSON), and ``oracle`` (exact margins
on tiny networks).  Dataset rows are ``label, v1, v2, ...`` with values in
[0, 1]; regions built from them are clipped to the unit box.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from relaxbench.attack import AttackConfig
from relaxbench.bounds import SlopePolicy, propagate_bounds
from relaxbench.certify import (
    CERTIFICATION_METHODS,
    ReportRow,
    SearchTolerances,
    eps_search_lower,
    eps_search_upper_pgd,
    percentage_gap,
    robust_error_bounds,
    verify_point,
    write_report_csv,
    write_summary_json,
)
from relaxbench.lp import SolverConfig, lp_all_bounds
from relaxbench.network import InputRegion, forward, load_network, margin_spec
from relaxbench.oracle import OracleRefused, exact_min

__all__ = ["main", "RunConfig", "load_dataset"]

BOUND_DUMP_METHODS = ("ibp", "greedy-fastlin", "greedy-crown", "lp-all")
ALL_METHOD_NAMES = ("ibp",) + CERTIFICATION_METHODS + ("oracle", "pgd")

_BOUND_METHOD_MAP = {
    "ibp": ("interval", SlopePolicy.FASTLIN),
    "greedy-fastlin": ("greedy-dual", SlopePolicy.FASTLIN),
    "greedy-crown": ("greedy-dual", SlopePolicy.CROWN_ADAPTIVE),
    "lp-all": ("lp", SlopePolicy.FASTLIN),
}


@dataclass
class RunConfig:
    command: str
    net: str
    dataset: str | None = None
    samples: list[int] | None = None
    eps: float = 0.05
    methods: tuple[str, ...] = ("greedy-fastlin",)
    pgd_steps: int = 100
    pgd_restarts: int = 10
    tol_feas: float = 1e-8
    tol_opt: float = 1e-8
    jobs: int = 1
    seed: int = 0
    out: str | None = None
    oracle_limit: int = 20

    def solver_config(self) -> SolverConfig:
        return SolverConfig(feas_tol=self.tol_feas, opt_tol=self.tol_opt)

    def attack_config(self, seed_offset: int = 0) -> AttackConfig:
        return AttackConfig(
            steps=self.pgd_steps, restarts=self.pgd_restarts, seed=self.seed + seed_offset
        )


def load_dataset(path) -> list[tuple[int, np.ndarray]]:
    """CSV rows of ``label, v1, ..., vn`` with every value in [0, 1]."""
    samples: list[tuple[int, np.ndarray]] = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                label = int(parts[0])
                values = np.array([float(p) for p in parts[1:]], dtype=float)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if width is None:
                width = values.size
            elif values.size != width:
                raise ValueError(
                    f"{path}:{lineno}: row has {values.size} values, expected {width}"
                )
            if values.size == 0:
                raise ValueError(f"{path}:{lineno}: row has no input values")
            if np.any(values < -1e-9) or np.any(values > 1.0 + 1e-9):
                raise ValueError(f"{path}:{lineno}: values outside [0, 1]")
            samples.append((label, np.clip(values, 0.0, 1.0)))
    if not samples:
        raise ValueError(f"{path}: dataset is empty")
    return samples


def _select(dataset, selection):
    if selection is None:
        return list(enumerate(dataset))
    return [(i, dataset[i]) for i in selection]


def _parse_samples(text: str | None) -> list[int] | None:
    """A bare integer selects the first N samples; a comma-separated list
    selects specific indices (a trailing comma makes a one-element list)."""
    if text is None:
        return None
    text = text.strip()
    if "," in text:
        return [int(p) for p in text.split(",") if p.strip()]
    return list(range(int(text)))


def _unit_clip(dim: int):
    return (np.zeros(dim), np.ones(dim))


def _default_jobs() -> int:
    env = os.environ.get("RELAXBENCH_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# subcommands


def cmd_verify(config: RunConfig) -> int:
    net = load_network(config.net)
    dataset = _select(load_dataset(config.dataset), config.samples)
    solver = config.solver_config()
    clip = _unit_clip(net.n_inputs)
    rows: list[ReportRow] = []
    counts: dict[str, int] = {m: 0 for m in config.methods}
    for sid, (label, x) in dataset:
        clean = int(np.argmax(forward(net, x))) == label
        for method in config.methods:
            start = time.perf_counter()
            verdict = verify_point(
                net, x, label, config.eps, method, clip=clip, config=solver, jobs=config.jobs
            )
            rows.append(
                ReportRow(
                    sid,
                    label,
                    clean,
                    method,
                    verdict.status.value,
                    margin_min=verdict.min_margin,
                    wall_time_s=time.perf_counter() - start,
                )
            )
            counts[method] += verdict.status.value == "robust"
    summary = {
        "command": "verify",
        "eps": config.eps,
        "n_samples": len(dataset),
        "certified": counts,
    }
    _emit(config, rows, summary)
    return 0


def cmd_eps_search(config: RunConfig) -> int:
    net = load_network(config.net)
    dataset = _select(load_dataset(config.dataset), config.samples)
    solver = config.solver_config()
    clip = _unit_clip(net.n_inputs)
    tolerances = SearchTolerances()
    rows: list[ReportRow] = []
    per_method_gaps: dict[str, list[float]] = {m: [] for m in config.methods}
    lower_sums: dict[str, list[float]] = {m: [] for m in config.methods}
    upper_values: list[float] = []

    for sid, (label, x) in dataset:
        clean = int(np.argmax(forward(net, x))) == label
        if not clean:
            rows.append(ReportRow(sid, label, False, "pgd", "not-robust", eps_upper=0.0))
            continue
        start = time.perf_counter()
        pgd = eps_search_upper_pgd(net, x, label, config.attack_config(sid), tolerances.pgd_abs, clip=clip)
        rows.append(
            ReportRow(
                sid,
                label,
                True,
                "pgd",
                "not-robust" if math.isfinite(pgd.eps_upper) else "unknown",
                eps_upper=pgd.eps_upper,
                wall_time_s=time.perf_counter() - start,
            )
        )
        if math.isfinite(pgd.eps_upper):
            upper_values.append(pgd.eps_upper)
        greedy_seed = None
        for method in config.methods:
            start = time.perf_counter()
            res = eps_search_lower(
                net,
                x,
                label,
                method,
                tolerances,
                clip=clip,
                config=solver,
                jobs=config.jobs,
                greedy_result=greedy_seed,
            )
            if method == "greedy-fastlin":
                greedy_seed = res
            gap = None
            if math.isfinite(pgd.eps_upper) and pgd.eps_upper > 0:
                gap = percentage_gap(pgd.eps_upper, res.eps_lower)
                per_method_gaps[method].append(gap)
            lower_sums[method].append(res.eps_lower)
            rows.append(
                ReportRow(
                    sid,
                    label,
                    True,
                    method,
                    "robust",
                    eps_lower=res.eps_lower,
                    eps_upper=pgd.eps_upper if math.isfinite(pgd.eps_upper) else None,
                    gap_percent=gap,
                    wall_time_s=time.perf_counter() - start,
                )
            )
    summary = {
        "command": "eps-search",
        "n_samples": len(dataset),
        "mean_eps_lower": {
            m: (float(np.mean(v)) if v else None) for m, v in lower_sums.items()
        },
        "mean_eps_upper_pgd": float(np.mean(upper_values)) if upper_values else None,
        "median_gap_percent": {
            m: _median_with_ci(v) for m, v in per_method_gaps.items()
        },
    }
    _emit(config, rows, summary)
    return 0


def _median_with_ci(values: list[float]):
    if not values:
        return None
    arr = np.sort(np.asarray(values, dtype=float))
    median = float(np.median(arr))
    # normal approximation for the sampling error of a median
    half_width = 1.96 * 1.2533 * float(arr.std(ddof=1) if arr.size > 1 else 0.0) / math.sqrt(arr.size)
    return {"median": median, "ci95": [median - half_width, median + half_width]}


def cmd_robust_error(config: RunConfig) -> int:
    net = load_network(config.net)
    dataset = [s for _, s in _select(load_dataset(config.dataset), config.samples)]
    report = robust_error_bounds(
        net,
        dataset,
        config.eps,
        methods=config.methods,
        attack_config=config.attack_config(),
        clip=_unit_clip(net.n_inputs),
        config=config.solver_config(),
        jobs=config.jobs,
    )
    summary = {"command": "robust-error", **report.summary()}
    _emit(config, report.rows, summary)
    return 0


def cmd_bounds_dump(config: RunConfig) -> int:
    net = load_network(config.net)
    dataset = _select(load_dataset(config.dataset), config.samples)
    if not dataset:
        raise ValueError("bounds-dump needs at least one sample")
    sid, (label, x) = dataset[0]
    method, policy = _BOUND_METHOD_MAP[config.methods[0]]
    region = InputRegion(x, config.eps, _unit_clip(net.n_inputs))
    bounds = propagate_bounds(
        net, region, method, policy, config.solver_config(), jobs=config.jobs
    )
    doc = [
        {"layer": l, "lower": b.lower.tolist(), "upper": b.upper.tolist()}
        for l, b in enumerate(bounds)
    ]
    if config.out:
        with open(config.out, "w") as fh:
            json.dump(doc, fh, indent=2)
    else:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_oracle(config: RunConfig) -> int:
    net = load_network(config.net)
    dataset = _select(load_dataset(config.dataset), config.samples)
    solver = config.solver_config()
    clip = _unit_clip(net.n_inputs)
    rows: list[ReportRow] = []
    for sid, (label, x) in dataset:
        clean = int(np.argmax(forward(net, x))) == label
        if not clean:
            rows.append(ReportRow(sid, label, False, "oracle", "not-robust"))
            continue
        region = InputRegion(x, config.eps, clip)
        start = time.perf_counter()
        bounds = lp_all_bounds(net, region, solver, upto=len(net.layers) - 1, jobs=config.jobs)
        try:
            worst = math.inf
            for j in range(net.n_outputs):
                if j == label:
                    continue
                res = exact_min(
                    net, region, margin_spec(net, label, j), bounds, config.oracle_limit, solver
                )
                worst = min(worst, res.value)
            verdict = "robust" if worst > 0 else "not-robust"
            rows.append(
                ReportRow(
                    sid,
                    label,
                    True,
                    "oracle",
                    verdict,
                    margin_min=worst,
                    wall_time_s=time.perf_counter() - start,
                )
            )
        except OracleRefused as exc:
            rows.append(ReportRow(sid, label, True, "oracle", "unknown"))
            print(f"sample {sid}: {exc}", file=sys.stderr)
    summary = {
        "command": "oracle",
        "eps": config.eps,
        "n_samples": len(dataset),
        "robust": sum(1 for r in rows if r.verdict == "robust"),
    }
    _emit(config, rows, summary)
    return 0


def _emit(config: RunConfig, rows, summary) -> None:
    if config.out:
        write_report_csv(rows, config.out)
        base, _ = os.path.splitext(config.out)
        write_summary_json(summary, base + ".json")
    else:
        write_report_csv(rows, sys.stdout, timestamp=False)
        json.dump(summary, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


# --------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaxbench",
        description="Certification and attack toolchain for dense ReLU classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, methods, default_methods):
        p.add_argument("--net", required=True, help="network JSON file")
        p.add_argument("--dataset", required=True, help="CSV dataset (label, values...)")
        p.add_argument("--eps", type=float, default=0.05, help="l-inf radius")
        p.add_argument(
            "--methods",
            default=",".join(default_methods),
            help=f"comma-separated subset of {{{','.join(methods)}}}",
        )
        p.add_argument("--samples", default=None, help="count N, or comma-separated indices")
        p.add_argument("--pgd-steps", type=int, default=100)
        p.add_argument("--pgd-restarts", type=int, default=10)
        p.add_argument("--tol-feas", type=float, default=1e-8)
        p.add_argument("--tol-opt", type=float, default=1e-8)
        p.add_argument("--jobs", type=int, default=None, help="worker processes (env RELAXBENCH_JOBS)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="CSV output path (summary JSON alongside)")

    p = sub.add_parser("verify", help="certification verdicts at a fixed radius")
    common(p, CERTIFICATION_METHODS, ("greedy-fastlin",))
    p = sub.add_parser("eps-search", help="certified and attacked distortion radii")
    common(p, CERTIFICATION_METHODS, ("greedy-fastlin", "lp-last", "lp-all"))
    p = sub.add_parser("robust-error", help="dataset robust-error interval")
    common(p, CERTIFICATION_METHODS, ("greedy-fastlin",))
    p = sub.add_parser("bounds-dump", help="preactivation boxes as JSON")
    common(p, BOUND_DUMP_METHODS, ("ibp",))
    p = sub.add_parser("oracle", help="exact margins by pattern enumeration")
    common(p, ("oracle",), ("oracle",))
    p.add_argument("--oracle-limit", type=int, default=20)
    return parser


_METHOD_SETS = {
    "verify": CERTIFICATION_METHODS,
    "eps-search": CERTIFICATION_METHODS,
    "robust-error": CERTIFICATION_METHODS,
    "bounds-dump": BOUND_DUMP_METHODS,
    "oracle": ("oracle",),
}

_COMMANDS = {
    "verify": cmd_verify,
    "eps-search": cmd_eps_search,
    "robust-error": cmd_robust_error,
    "bounds-dump": cmd_bounds_dump,
    "oracle": cmd_oracle,
}


def _config_from_args(args) -> RunConfig:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    allowed = _METHOD_SETS[args.command]
    for m in methods:
        if m not in allowed:
            raise ValueError(f"unknown method {m!r} for {args.command}; expected {allowed}")
    if not methods:
        raise ValueError("no methods given")
    for path in (args.net, args.dataset):
        if path is not None and not os.path.exists(path):
            raise ValueError(f"file not found: {path}")
    return RunConfig(
        command=args.command,
        net=args.net,
        dataset=args.dataset,
        samples=_parse_samples(args.samples),
        eps=args.eps,
        methods=methods,
        pgd_steps=args.pgd_steps,
        pgd_restarts=args.pgd_restarts,
        tol_feas=args.tol_feas,
        tol_opt=args.tol_opt,
        jobs=args.jobs if args.jobs is not None else _default_jobs(),
        seed=args.seed,
        out=args.out,
        oracle_limit=getattr(args, "oracle_limit", 20),
    )


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))  # exits with status 2
    try:
        return _COMMANDS[config.command](config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
