"""Command-line front end.

Every subcommand writes its data as CSV into ``--out``, together with
``meta.json`` (resolved configuration, seed and content hashes) and
``summary.json`` (named checks with an overall PASS/FAIL). The exit status
is 0 only when every applicable check passed.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, bench, channel
from .anneal import lz_infidelity, run_anneal
from .model import AnnealSetup, MeterSpec

LZ_PRESETS = {"text": 20.0, "caption": 5.0}  # protocol durations of the two LZ readings

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3


@dataclass
class RunConfig:
    experiment: str = ""
    preset: str = "lz"
    lz_preset: str = "text"
    n_qubits: list = field(default_factory=lambda: [3])
    instances: int = 20
    seed: int = 0
    x0: list = field(default_factory=list)
    omega: list = field(default_factory=list)
    t_grid: Optional[str] = None
    steps: int = channel.DEFAULT_STEPS
    scheme: str = "midpoint"
    mode: Optional[str] = None
    p_target: float = bench.DEFAULT_P_TARGET
    t_guess: float = bench.DEFAULT_T_GUESS
    n_t: int = bench.DEFAULT_N_T
    single_probe: bool = False
    coefficient: list = field(default_factory=lambda: [1.0, -1.0])
    samples: int = 401
    out: Optional[str] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data.get("config", data))  # a meta.json is accepted as well
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        if "n_qubits" in data and not isinstance(data["n_qubits"], list):
            data["n_qubits"] = [data["n_qubits"]]
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def parse_t_grid(spec: str) -> np.ndarray:
    """``min:max:count[:log|lin]`` to an array of durations."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise ValueError(f"t-grid {spec!r} is not min:max:count[:log|lin]")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    kind = parts[3] if len(parts) == 4 else "log"
    if count < 1 or not 0 < lo <= hi:
        raise ValueError(f"t-grid {spec!r} needs 0 < min <= max and count >= 1")
    if kind == "log":
        return np.geomspace(lo, hi, count)
    if kind == "lin":
        return np.linspace(lo, hi, count)
    raise ValueError(f"t-grid spacing must be 'log' or 'lin', got {kind!r}")


# ---------------------------------------------------------------------------
# output

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Output:
    """Collects CSV files and checks for one run; writing happens at the end."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.files: dict[str, bytes] = {}
        self.checks: list[dict] = []
        self.extra: dict = {}

    def table(self, name: str, header, rows) -> None:
        lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
        self.files[name] = ("\n".join(lines) + "\n").encode()

    def check(self, name: str, passed: bool, value=None, threshold=None, note: str = "") -> None:
        entry = {"name": name, "passed": bool(passed)}
        if value is not None:
            entry["value"] = float(value)
        if threshold is not None:
            entry["threshold"] = threshold
        if note:
            entry["note"] = note
        self.checks.append(entry)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def write(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name, data in sorted(self.files.items()):
            (self.dir / name).write_bytes(data)
            hashes[name] = git_blob_hash(data)
        config = self.cfg.to_dict()
        digest = git_blob_hash(json.dumps({"config": config, "files": hashes}, sort_keys=True).encode())
        meta = {"version": __version__, "experiment": self.cfg.experiment, "seed": self.cfg.seed,
                "config": config, "files": hashes, "content_hash": digest}
        (self.dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        summary = {"experiment": self.cfg.experiment, "status": "PASS" if self.passed else "FAIL",
                   "checks": self.checks, **self.extra}
        (self.dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# helpers shared by subcommands

def family(cfg: RunConfig):
    if cfg.preset == "lz":
        return "lz"
    return bench.random_ising(cfg.n_qubits[0], cfg.seed)


def lz_setup(cfg: RunConfig, meter=None, mode=None) -> AnnealSetup:
    return AnnealSetup.lz(T=LZ_PRESETS[cfg.lz_preset], meter=meter, mode=mode)


def preset_setup(cfg: RunConfig, meter=None, mode=None, T: float = 5.0) -> AnnealSetup:
    if cfg.preset == "lz":
        return lz_setup(cfg, meter, mode)
    return AnnealSetup.annealing(family(cfg), T, meter, mode)


def run_kw(cfg: RunConfig) -> dict:
    return {"steps": cfg.steps, "scheme": cfg.scheme}


def grid(cfg: RunConfig, default: str) -> np.ndarray:
    return parse_t_grid(cfg.t_grid or default)


def sample_times(setup: AnnealSetup, count: int) -> np.ndarray:
    return np.linspace(setup.t_start, setup.t_end, count)


# ---------------------------------------------------------------------------
# subcommands

def cmd_coherence(cfg: RunConfig, out: Output) -> None:
    x0 = (cfg.x0 or [2.0])[0]
    mode = cfg.mode or "full"
    bare = preset_setup(cfg)
    times = sample_times(bare, cfg.samples)
    dim = bare.system_dim
    psi0 = np.ones(dim, dtype=complex) / np.sqrt(dim)  # |+> on every qubit
    meter = MeterSpec.qubit(x0, 0.0, "+")
    coupled = preset_setup(cfg, meter, mode) if x0 != 0 else preset_setup(cfg, meter, "none")
    sub = max(1, cfg.steps // (cfg.samples - 1))
    c0 = channel.coherence_trace(bare, psi0, times, substeps=sub, scheme=cfg.scheme)
    c1 = channel.coherence_trace(coupled, psi0, times, substeps=sub, scheme=cfg.scheme)
    out.table("coherence.csv", ["t", "coherent", "meter"], zip(times, c0, c1))
    avg0, avg1 = float(np.mean(c0)), float(np.mean(c1))
    out.extra["time_average"] = {"coherent": avg0, "meter": avg1}
    if x0 == 0:
        out.check("identical_without_coupling", np.max(np.abs(c0 - c1)) <= 1e-12, np.max(np.abs(c0 - c1)), 1e-12)
    else:
        out.check("meter_lowers_average_coherence", avg1 < avg0, avg1 - avg0, 0.0)


def cmd_spectrum(cfg: RunConfig, out: Output) -> None:
    x0 = (cfg.x0 or [2.0])[0]
    setup = preset_setup(cfg, MeterSpec.qubit(x0, 0.0, "0"), cfg.mode or "full")
    times = sample_times(setup, cfg.samples)
    bare = channel.spectrum_trace(setup, times, "bare")
    br = channel.meter_branches(setup)
    top = int(np.argmax(br.m))
    qnd = channel.spectrum_trace(setup, times, "qnd", branch=top)
    cols = [bare, qnd]
    header = ["t"] + [f"bare_{k}" for k in range(bare.shape[1])] + [f"qnd_{k}" for k in range(qnd.shape[1])]
    if cfg.preset == "lz":
        cd = channel.spectrum_trace(setup, times, "cd")
        cols.append(cd)
        header += [f"cd_{k}" for k in range(cd.shape[1])]
    out.table("spectrum.csv", header, (np.concatenate([[t]] + [c[k] for c in cols]) for k, t in enumerate(times)))
    if setup.mode == "full":
        dev = float(np.max(np.abs(qnd - (1 + br.m[top]) * bare)))
        out.check("qnd_branch_rescaled", dev <= 1e-10, dev, 1e-10)


def cmd_fidelity_scan(cfg: RunConfig, out: Output) -> None:
    x0 = np.array(cfg.x0 or [0.0, 1.0, 2.0, 3.0])
    if 0.0 not in x0:
        x0 = np.concatenate([[0.0], x0])
    T = grid(cfg, "1:40:12:log")
    scan = bench.fidelity_scan(family(cfg), T, x0, exact=True, **run_kw(cfg))
    rows = [(T[b], x0[a], scan.F[a, b], (1 + x0[a]) * T[b], scan.residual[a, b])
            for a in range(len(x0)) for b in range(len(T))]
    out.table("fidelity.csv", ["T", "x0", "F", "T_effective", "residual"], rows)
    out.check("rescaling_law", scan.max_residual() <= 1e-6, scan.max_residual(), 1e-6)
    out.extra["min_fidelity"] = float(scan.F.min())


def cmd_lz_check(cfg: RunConfig, out: Output) -> None:
    x0 = cfg.x0 or [0.0, 1.0, 2.0, 3.0]
    T = grid(cfg, "2:60:12:log")
    rows, worst = [], 0.0
    for a in x0:
        for dur in T:
            meter = MeterSpec.qubit(a, 0.0, "0") if a != 0 else None
            setup = AnnealSetup.lz(T=dur, meter=meter, mode="full" if meter else None)
            q = run_anneal(setup, **run_kw(cfg)).infidelity
            ref = lz_infidelity(setup.problem.v / (1 + a), setup.problem.g)
            rel = abs(q - ref) / ref
            in_range = 1e-3 <= ref <= 0.5
            if in_range:
                worst = max(worst, rel)
            rows.append((dur, a, setup.problem.v, q, ref, rel, in_range))
    out.table("lz.csv", ["T", "x0", "v", "infidelity", "closed_form", "relative_deviation", "checked"], rows)
    out.check("closed_form_within_5pct", worst <= 0.05, worst, 0.05, "cells with closed form in [1e-3, 0.5]")


def cmd_omega_scan(cfg: RunConfig, out: Output) -> None:
    x0 = (cfg.x0 or [1.0])[0]
    omega = cfg.omega or [0.0, 0.25, 0.5, 1.0, 2.0]
    T = grid(cfg, "1:40:10:log")
    scan = bench.omega_scan(family(cfg), T, omega, x0, **run_kw(cfg))
    diff = scan.difference
    rows = [(T[b], scan.omega_grid[a], scan.F[a, b], diff[a, b])
            for a in range(len(scan.omega_grid)) for b in range(len(T))]
    out.table("omega.csv", ["T", "omega", "F", "difference"], rows)
    out.check("never_above_commuting", scan.max_difference() <= 1e-9, scan.max_difference(), 1e-9)


def cmd_tts(cfg: RunConfig, out: Output) -> None:
    x0 = (cfg.x0 or [2.0])[0]
    modes = [cfg.mode or "full"]
    report = bench.tts_ratio_sweep(cfg.n_qubits, cfg.instances, x0, modes, seed=cfg.seed, p=cfg.p_target,
                                   T_guess=cfg.t_guess, n_T=cfg.n_t, refine=not cfg.single_probe,
                                   **run_kw(cfg))
    rows = [(r.N, r.instance, r.mode, r.x0, r.T_ext, r.entry.tts, r.entry.T_best, r.baseline.tts,
             r.baseline.T_best, r.ratio, r.excluded) for r in report.rows]
    out.table("tts.csv", ["N", "instance", "mode", "x0", "T_ext", "tts", "T_best", "tts_coherent",
                          "T_best_coherent", "ratio", "excluded"], rows)
    summary = report.summary()
    out.table("tts_summary.csv", ["N", "mode", "mean_ratio", "stderr", "n_used", "n_excluded"],
              ([s["N"], s["mode"], s["mean_ratio"], s["stderr"], s["n_used"], s["n_excluded"]] for s in summary))
    out.extra["aggregates"] = summary
    target = 1 / (1 + x0)
    for s in summary:
        name = f"N{s['N']}_{s['mode']}"
        if s["mode"] == "full" or x0 == 0:
            out.check(f"{name}_ratio_near_{target:.4g}", abs(s["mean_ratio"] - target) <= 0.03,
                      s["mean_ratio"], [target - 0.03, target + 0.03])
        elif s["mode"] == "constrained":
            out.check(f"{name}_ratio_above_{target:.4g}", s["mean_ratio"] > target, s["mean_ratio"], target)
        else:
            out.check(f"{name}_ratio_one", abs(s["mean_ratio"] - 1) <= 1e-12, s["mean_ratio"], 1.0)


def cmd_x0_scan(cfg: RunConfig, out: Output) -> None:
    x0 = np.array(cfg.x0 or [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    if 0.0 not in x0:
        x0 = np.concatenate([[0.0], x0])
    scan = bench.x0_scan_constrained(cfg.n_qubits, x0, cfg.instances, cfg.seed, cfg.t_guess,
                                     not cfg.single_probe, **run_kw(cfg))
    rows = [(N, i, scan.T_ext[a, i], x0[c], scan.F[a, i, c])
            for a, N in enumerate(scan.N_values) for i in range(cfg.instances) for c in range(len(x0))]
    out.table("x0_scan.csv", ["N", "instance", "T_ext", "x0", "F"], rows)
    mean = scan.mean
    out.table("x0_mean.csv", ["N", "x0", "mean_F"],
              ((N, x0[c], mean[a, c]) for a, N in enumerate(scan.N_values) for c in range(len(x0))))
    out.check("plateau_below_one", bool(np.all(mean < 1.0)), float(mean.max()), 1.0)


def cmd_gadget(cfg: RunConfig, out: Output) -> None:
    rows = []
    for c in cfg.coefficient:
        rep = bench.gadget_verify((0, 1, 2), c)
        rows.append((c, rep.manifold_ok, rep.gap_ratio, " ".join(rep.original_ground),
                     " ".join(rep.decomposed_ground), " ".join(f"{k}:{b}" for k, b in rep.witnesses)))
        if c > 0:
            out.check(f"coefficient_{fmt(c)}", rep.passed, rep.gap_ratio, 1.0)
        elif c == 0:
            out.check("coefficient_0_vacuous", rep.passed)
    out.table("gadget.csv", ["coefficient", "manifold_ok", "gap_ratio", "original_ground", "decomposed_ground",
                             "witnesses"], rows)


COMMANDS = {
    "coherence": (cmd_coherence, "coherence magnitude with and without the meter"),
    "spectrum": (cmd_spectrum, "instantaneous spectra: bare, QND branch and counterdiabatic"),
    "fidelity-scan": (cmd_fidelity_scan, "fidelity over (T, x0) with the rescaling residual"),
    "lz-check": (cmd_lz_check, "Landau-Zener infidelity against the closed form"),
    "omega-scan": (cmd_omega_scan, "fidelity change from a non-commuting meter Hamiltonian"),
    "tts": (cmd_tts, "time-to-solution ratios over random instances"),
    "x0-scan": (cmd_x0_scan, "constrained-protocol fidelity versus coupling strength"),
    "gadget": (cmd_gadget, "three-body gadget verification by enumeration"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags given on the command line override it")
    common.add_argument("--preset", choices=["lz", "ising"])
    common.add_argument("--lz-preset", choices=sorted(LZ_PRESETS), help="LZ sweep over T=20 (text) or T=5 (caption)")
    common.add_argument("--n-qubits", type=int, action="extend", nargs="+")
    common.add_argument("--instances", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--x0", type=float, action="extend", nargs="+")
    common.add_argument("--omega", type=float, action="extend", nargs="+")
    common.add_argument("--t-grid", help="min:max:count[:log|lin]")
    common.add_argument("--steps", type=int)
    common.add_argument("--scheme", choices=["midpoint", "magnus4"])
    common.add_argument("--mode", choices=["none", "full", "constrained"])
    common.add_argument("--p-target", type=float)
    common.add_argument("--t-guess", type=float)
    common.add_argument("--n-t", type=int)
    common.add_argument("--single-probe", action="store_const", const=True,
                        help="centre duration grids on the one-probe extrapolation instead of the solved 50%% duration")
    common.add_argument("--coefficient", type=float, action="extend", nargs="+")
    common.add_argument("--samples", type=int, help="time samples for coherence and spectrum traces")
    common.add_argument("--out", metavar="DIR", help="output directory (required)")

    parser = argparse.ArgumentParser(prog="qndanneal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    cfg.experiment = args.experiment
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.preset not in ("lz", "ising"):
        raise ValueError(f"unknown preset {cfg.preset!r}")
    if cfg.steps < 1 or cfg.instances < 1 or cfg.samples < 2:
        raise ValueError("steps and instances must be positive, samples at least 2")
    if not 0 < cfg.p_target < 1:
        raise ValueError("p-target must lie in (0, 1)")
    if cfg.t_grid is not None:
        parse_t_grid(cfg.t_grid)
    if any(n < 1 for n in cfg.n_qubits):
        raise ValueError("n-qubits must be positive")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError, TypeError) as exc:
        parser.error(f"bad config: {exc}")
    if not cfg.out:
        parser.error("the following arguments are required: --out")
    try:
        validate(cfg)
    except ValueError as exc:
        parser.error(str(exc))
    out = Output(cfg)
    try:
        COMMANDS[cfg.experiment][0](cfg, out)
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out.write()
    status = "PASS" if out.passed else "FAIL"
    for c in out.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}" + (f"  value={fmt(c['value'])}" if "value" in c else ""))
    print(f"{status}: {cfg.experiment} -> {out.dir}")
    return EXIT_OK if out.passed else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
