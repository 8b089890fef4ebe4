"""Command-line experiment runner.

Usage::

    cylex <subcommand> [--config PATH] [--seed U64] [--workers INT] [--out DIR]

Subcommands: ``exponent-direct``, ``exponent-resample``, ``spectrum``,
``couple``, ``hmeasure``, ``audit``.  Every output file starts with the
config hash, seed and tool version; numeric output is a pure function of
the resolved config (no timestamps), so reruns are byte-identical.

Exit status: 0 on success, 1 for configuration errors, 2 for runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import read_toml
from .cylinder import CylinderConfig, cylinder_from_mapping, make_stream
from .errors import ConfigError, CylexError

log = logging.getLogger("cylex")

_RUN_DEFAULTS = {
    "lambdas": [1.0],
    "n_min": 2,
    "n_max": 8,
    "replicas": 2000,
    "N": 200,
    "particles": 1000,
    "burn_in": 50,
    "depth": 10,
    "memory": [1, 2, 3],
    "T_max": 10,
    "delta": 0.25,
    "tol": 1e-12,
    "pad": 4,
    "traces": 1000,
    "steps": 30,
    "h_depth": 8,
    "h_target": -2,
    "h_replicas": 20000,
    "from_level": -6,
    "to_level": -1,
    "audit_n": 6,
    "audit_T": 10,
    "window": None,
}


@dataclass
class ExperimentConfig:
    """Resolved configuration: cylinder, run parameters, seed, output directory."""

    cylinder: CylinderConfig
    seed: int
    run: dict = field(default_factory=dict)
    out: Path = Path(".")

    def canonical(self) -> dict:
        return {"cylinder": {"d": self.cylinder.d, "L": self.cylinder.L, "p": self.cylinder.p},
                "seed": self.seed, "run": self.run}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _validate_run(run: dict) -> dict:
    out = dict(_RUN_DEFAULTS)
    unknown = set(run) - set(out)
    if unknown:
        raise ConfigError(f"unknown [run] keys: {', '.join(sorted(unknown))}")
    out.update(run)
    lams = out["lambdas"]
    if isinstance(lams, (int, float)):
        lams = [lams]
    if not lams or any(not isinstance(x, (int, float)) or isinstance(x, bool) or not x > 0 for x in lams):
        raise ConfigError("lambdas must be a nonempty list of numbers > 0")
    out["lambdas"] = [float(x) for x in lams]
    mem = out["memory"]
    out["memory"] = [mem] if isinstance(mem, int) else list(mem)
    ints = ["n_min", "n_max", "replicas", "N", "particles", "burn_in", "depth", "T_max", "pad", "traces",
            "steps", "h_depth", "h_replicas", "audit_n", "audit_T"]
    for k in ints:
        v = out[k]
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"{k} must be a nonnegative integer, got {v!r}")
    for k in ("replicas", "N", "particles", "depth", "T_max", "traces", "steps", "h_depth", "h_replicas",
              "audit_n", "audit_T"):
        if out[k] < 1:
            raise ConfigError(f"{k} must be >= 1")
    if any(isinstance(m, bool) or not isinstance(m, int) or m < 1 for m in out["memory"]):
        raise ConfigError("memory entries must be integers >= 1")
    if not out["n_min"] < out["n_max"]:
        raise ConfigError("need n_min < n_max")
    if not out["burn_in"] < out["N"]:
        raise ConfigError("need burn_in < N")
    if not (0 < float(out["delta"]) < 1):
        raise ConfigError("delta must lie in (0, 1)")
    if not float(out["tol"]) > 0:
        raise ConfigError("tol must be > 0")
    for k in ("h_target", "from_level", "to_level"):
        if isinstance(out[k], bool) or not isinstance(out[k], int):
            raise ConfigError(f"{k} must be an integer")
    if not (-out["h_depth"] < out["h_target"] <= 0):
        raise ConfigError("need -h_depth < h_target <= 0")
    if not (out["from_level"] < out["to_level"] <= 0):
        raise ConfigError("need from_level < to_level <= 0")
    return out


def load_config(path: str | None, seed: int | None, out: str | None) -> ExperimentConfig:
    data = read_toml(path) if path else {"cylinder": {"d": 2, "L": 2, "p": 0.75}}
    cyl, file_seed = cylinder_from_mapping(data.get("cylinder", {}))
    if seed is not None:
        if not (0 <= seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        file_seed = seed
    run = _validate_run(data.get("run", {}))
    outdir = Path(out if out is not None else data.get("output", {}).get("dir", "."))
    return ExperimentConfig(cyl, file_seed, run, outdir)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _header(cfg: ExperimentConfig, cmd: str) -> str:
    return f"# cylex {__version__} command={cmd} config_hash={cfg.hash()} seed={cfg.seed}\n"


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return x


def write_csv(path: Path, cfg: ExperimentConfig, cmd: str, header: list, rows) -> Path:
    buf = io.StringIO()
    buf.write(_header(cfg, cmd))
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_json(path: Path, cfg: ExperimentConfig, cmd: str, payload: dict) -> Path:
    doc = {"tool": "cylex", "version": __version__, "command": cmd, "config_hash": cfg.hash(),
           "seed": cfg.seed, "config": cfg.canonical(), "result": _jsonable(payload)}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def _start_window(cfg: ExperimentConfig):
    from .paths import straight_window, window_from_text
    wpath = cfg.run.get("window")
    if wpath:
        try:
            text = Path(wpath).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read window file {wpath}: {e}") from e
        return window_from_text(text, cfg.cylinder)
    return straight_window(cfg.cylinder, cfg.run["depth"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_exponent_direct(cfg: ExperimentConfig, workers: int) -> list[Path]:
    from .exponent import estimate_direct
    r = cfg.run
    w0 = _start_window(cfg)
    rows, summary = [], []
    for i, lam in enumerate(r["lambdas"]):
        est = estimate_direct(w0, lam, r["n_max"], r["replicas"], cfg.cylinder, seed=cfg.seed + i,
                              n_min=r["n_min"], pad=r["pad"], workers=workers)
        tab = est.extra["table"]
        for n in range(len(tab["n"])):
            rows.append([lam, int(tab["n"][n]), float(tab["log_mean"][n]), float(tab["stderr"][n]),
                         est.method.value, cfg.seed + i])
        summary.append(est.as_row() | {"r2": est.extra["r2"]})
    return [write_csv(cfg.out / "exponent_direct.csv", cfg, "exponent-direct",
                      ["lambda", "n", "log_mean", "stderr", "method", "seed"], rows),
            write_json(cfg.out / "exponent_direct.json", cfg, "exponent-direct", {"estimates": summary})]


def cmd_exponent_resample(cfg: ExperimentConfig, workers: int, snapshot: str | None = None,
                          resume: str | None = None) -> list[Path]:
    from .exponent import ExponentEstimate, Method, estimate_resample, load_ensemble, run_ensemble, save_ensemble
    from . import _stats
    r = cfg.run
    w0 = _start_window(cfg)
    rows, summary = [], []
    for i, lam in enumerate(r["lambdas"]):
        if resume or snapshot:
            ens, rng = (load_ensemble(resume, cfg.cylinder) if resume else (None, None))
            done = 0 if ens is None else ens.level
            ens, rng = run_ensemble(w0, lam, r["N"] - done, r["particles"], cfg.cylinder, seed=cfg.seed + i,
                                    depth=r["depth"], pad=r["pad"], stream_key=(0,), ens=ens, rng=rng)
            if snapshot:
                save_ensemble(ens, snapshot, rng)
            series = ens.log_norms
            mean, se = _stats.batch_means(series[r["burn_in"]:])
            est = ExponentEstimate(lam, 1, -mean, se, (r["burn_in"], r["N"]), Method.RESAMPLE)
        else:
            est = estimate_resample(w0, lam, r["N"], r["particles"], r["burn_in"], cfg.cylinder, seed=cfg.seed + i,
                                    depth=r["depth"], pad=r["pad"])
            series = est.extra["log_norms"][0]
        for n, v in enumerate(series, start=1):
            rows.append([lam, n, float(v), "", est.method.value, cfg.seed + i])
        summary.append(est.as_row())
    return [write_csv(cfg.out / "exponent_resample.csv", cfg, "exponent-resample",
                      ["lambda", "n", "log_mean", "stderr", "method", "seed"], rows),
            write_json(cfg.out / "exponent_resample.json", cfg, "exponent-resample", {"estimates": summary})]


def cmd_spectrum(cfg: ExperimentConfig, workers: int) -> list[Path]:
    from .exponent import transfer_eigen
    r = cfg.run
    rows, diag, tables = [], [], []
    for lam in r["lambdas"]:
        rhos = []
        last = None
        for m in sorted(r["memory"]):
            res = transfer_eigen(lam, m, r["T_max"], cfg.cylinder, pad=r["pad"], tol=r["tol"])
            rhos.append(res.eigenvalue)
            rows.append([lam, m, r["T_max"], res.eigenvalue, res.xi, len(res.states), res.band[0], res.band[1],
                         res.K_ratio, res.tail_mass])
            last = res
        inc = [abs(b - a) for a, b in zip(rhos, rhos[1:])]
        ratios = [b / a if a > 0 else float("nan") for a, b in zip(inc, inc[1:])]
        diag.append({"lambda": lam, "memory": sorted(r["memory"]), "rho": rhos, "increments": inc,
                     "increment_ratios": ratios,
                     "geometric": bool(all(x < 1 for x in ratios if math.isfinite(x)))})
        for t in last.table():
            tables.append([lam, last.memory, t["rows"], t["entries"], t["K"], t["pi"]])
    return [write_csv(cfg.out / "spectrum.csv", cfg, "spectrum",
                      ["lambda", "memory", "T_max", "rho", "xi", "n_states", "xi_lo", "xi_hi", "K_ratio",
                       "tail_mass"], rows),
            write_csv(cfg.out / "eigenfunction.csv", cfg, "spectrum",
                      ["lambda", "memory", "rows", "entries", "K", "pi"], tables),
            write_json(cfg.out / "spectrum.json", cfg, "spectrum", {"diagnostics": diag})]


def cmd_couple(cfg: ExperimentConfig, workers: int) -> list[Path]:
    from . import coupling as cp
    from .exponent import run_ensemble
    from .harmonic import harnack_constant
    r = cfg.run
    cyl = cfg.cylinder
    w0 = _start_window(cfg)
    st = cp.hprocess_setup(w0, r["h_depth"], r["h_target"], pad=r["pad"])
    starts = (int(st.live[0]), int(st.live[-1]))
    mc = cp.couple_hprocesses_batch(w0, r["h_depth"], r["h_target"], make_stream(cfg.seed, 0), starts,
                                    r["h_replicas"], r["pad"], setup=st)
    exact = cp.hprocess_coupling_exact(st, starts)
    a = harnack_constant(cyl)
    lam = r["lambdas"][0]
    ens, _ = run_ensemble(w0, lam, r["depth"] * 2, max(r["traces"], 16), cyl, seed=cfg.seed, depth=r["depth"],
                          pad=r["pad"], stream_key=(1,))
    partners = [ens.windows[i % ens.size] for i in range(r["traces"])]
    traces = cp.couple_weighted_chains([w0.truncated(r["depth"])] * r["traces"], partners, lam, r["steps"],
                                       r["delta"], cyl, make_stream(cfg.seed, 2), depth=r["depth"], pad=r["pad"])
    fit = cp.decoupling_fit(traces)
    payload = {
        "hprocess": {"starts": list(starts), "n_connected": st.n_connected, "failure_mc": mc.failure_rate,
                     "failure_se": mc.failure_se(), "failure_exact": exact["failure"],
                     "per_level_exact": exact["per_level"], "harnack_a": a,
                     "claimed_bound": ((1 - a * a) / 2) ** st.n_connected,
                     "proven_bound": (1 - a * a) ** st.n_connected, "endpoint_tv": exact["tv"]},
        "decoupling": {"rate": fit.rate, "r2": fit.r2, "k": fit.points, "hazard": fit.values},
        "couple_floor": cp.couple_step_floor(traces),
    }
    try:
        tail = cp.tail_bound_check(traces, min_traces=min(1000, len(traces)))
        payload["tail"] = {"n": tail.n, "prob": tail.prob, "beta1": tail.fit.rate, "r2": tail.fit.r2,
                           "monotone": tail.monotone}
        alpha = cp.calibrate_alpha(traces)
        dom = cp.domination_check(traces, alpha)
        payload["domination"] = {"alpha": alpha, "checks": dom.checks, "violations": dom.violations}
    except ValueError as e:
        payload["tail_error"] = str(e)
    csv_rows = []
    for t, tr in enumerate(traces):
        causes = dict(tr.decouple_events)
        for n, s in enumerate(tr.sigma):
            c = causes.get(n, "")
            csv_rows.append([t, n, s, getattr(c, "value", c)])
    return [write_csv(cfg.out / "sigma_traces.csv", cfg, "couple", ["trace", "step", "sigma", "cause"], csv_rows),
            write_json(cfg.out / "couple.json", cfg, "couple", payload)]


def cmd_hmeasure(cfg: ExperimentConfig, workers: int) -> list[Path]:
    from .harmonic import hitting_measure
    r = cfg.run
    w0 = _start_window(cfg)
    hm = hitting_measure(w0, r["from_level"], r["to_level"], pad=r["pad"])
    rows = [[s.level, " ".join(str(x) for x in s.torus), q] for s, q in sorted(hm.weights.items())]
    return [write_csv(cfg.out / "hitting_measure.csv", cfg, "hmeasure", ["level", "torus", "probability"], rows),
            write_json(cfg.out / "hmeasure.json", cfg, "hmeasure", {"defect": hm.defect, "level": hm.level})]


def _audit_windows(cyl: CylinderConfig, depth: int, max_len: int) -> list:
    """Distinct nice windows built from ``depth`` segments of at most
    ``max_len`` steps.  Windows are grown level by level; a prefix that is
    not nice is dropped (extra obstacles never make it avoidable again) and
    windows with the same site set are kept once, so the sup over starting
    windows is unchanged."""
    from .paths import Completion, PathWindow, concat_arrays, enumerate_segments, is_nice
    segs = [s for s, _ in enumerate_segments(cyl, max_len)]
    layer = None
    for _ in range(depth):
        nxt: dict = {}
        cands = ([PathWindow._raw(cyl, lv, cl, np.array([0, len(lv)]), Completion.STRAIGHT) for lv, cl in segs]
                 if layer is None else [concat_arrays(w, lv, cl) for w in layer for lv, cl in segs])
        for w in cands:
            key = frozenset(zip(w.levels.tolist(), w.cells.tolist()))
            if key not in nxt and is_nice(w):
                nxt[key] = w
        layer = list(nxt.values())
    return layer


def cmd_audit(cfg: ExperimentConfig, workers: int) -> list[Path]:
    from .exponent import enumerate_q, subadditivity_audit, transfer_eigen, upper_bound
    from .harmonic import harnack_readings
    r = cfg.run
    cyl = cfg.cylinder
    rows, reports = [], []
    reps = _audit_windows(cyl, 3, 6)
    if not reps:
        raise CylexError("no nice depth-3 windows enumerated")
    for lam in r["lambdas"]:
        qt = enumerate_q(reps, lam, r["audit_n"], r["audit_T"], pad=r["pad"])
        te = transfer_eigen(lam, max(r["memory"]), r["T_max"], cyl, pad=r["pad"])
        rep = subadditivity_audit(qt.q, qt.qbar, xi_ref=te.xi)
        for n in range(len(qt.q)):
            rows.append([lam, n + 1, float(qt.q[n]), float(qt.qbar[n]), float(qt.tail_bound[n])])
        reports.append({"lambda": lam, "checks": rep.checks, "violations": rep.violations,
                        "qbar_violations": rep.qbar_violations, "max_excess": rep.max_excess,
                        "band": rep.band, "xi_transfer": te.xi, "upper_bound": upper_bound(cyl, lam),
                        "lower_bound_ok": bool(np.all(qt.q >= np.exp(-te.xi * np.arange(1, len(qt.q) + 1))
                                                      * (1 - 1e-9)))})
    payload = {"harnack": harnack_readings(cyl), "reports": reports, "n_windows": len(reps)}
    return [write_csv(cfg.out / "audit_q.csv", cfg, "audit", ["lambda", "n", "q", "qbar", "tail_bound"], rows),
            write_json(cfg.out / "audit.json", cfg, "audit", payload)]


COMMANDS = {
    "exponent-direct": cmd_exponent_direct,
    "exponent-resample": cmd_exponent_resample,
    "spectrum": cmd_spectrum,
    "couple": cmd_couple,
    "hmeasure": cmd_hmeasure,
    "audit": cmd_audit,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cylex", description="Non-intersection exponents on discrete cylinders.")
    ap.add_argument("--version", action="version", version=f"cylex {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML file with [cylinder], [run] and [output] tables")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, default=1, metavar="INT", help="worker processes")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "exponent-resample":
            p.add_argument("--snapshot", metavar="PATH", help="write the final ensemble here")
            p.add_argument("--resume", metavar="PATH", help="continue from a saved ensemble")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.seed, args.out)
    except (ConfigError, ValueError) as e:
        print(f"cylex: configuration error: {e}", file=sys.stderr)
        return 1
    try:
        extra = {}
        if args.command == "exponent-resample":
            extra = {"snapshot": args.snapshot, "resume": args.resume}
        paths = COMMANDS[args.command](cfg, args.workers, **extra)
    except ConfigError as e:
        print(f"cylex: configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # surfaced with the module that raised it
        mod = type(e).__module__
        print(f"cylex {args.command}: runtime error [{mod}.{type(e).__name__}]: {e}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
