"""Command-line entry point.

    dynrc <command> [--config FILE] [--out DIR] [key=value ...]

Keys may be bare (``n=8``) or qualified by their section (``model.n=8``).
Values given on the command line override the config file.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .coupling import CouplingConfig
from .dynamics import PlainState, evolve
from .estimators import (EstimationFailure, SweepConfig, cluster_moment, couple_replicas, default_delta,
                         msd, scaling_sweep)
from .event_stream import GENERATOR_NAME, EventSource, StreamSeed, UniformStream
from .exact_oracle import build_generator, spectral_quantities, state_space, stationary_distribution, tv_curve
from .random_cluster import CapacityError, EdgeConfig, RCParams, export_config, sample_stationary
from .star_process import StarConfig, export_star, project
from .tessellation import Classification, ConfigError as ScaleError, DependencyError, derive_scale_params
from .torus import TorusError, TorusSpec

EXIT_OK, EXIT_ESTIMATION, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "DYNRC_OUT"
COMMANDS = ("simulate", "classify", "couple", "mix-exact", "cluster-stats", "msd", "scale-sweep")


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _floats(s):
    return tuple(float(x) for x in str(s).replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in str(s).replace(",", " ").split())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(kind):
    def conv(s):
        return None if str(s).strip().lower() in ("", "none") else kind(s)
    return conv


def _field(section, conv, default):
    return field(default=default, metadata=dict(section=section, conv=conv))


@dataclass
class RunConfig:
    # model
    n: int = _field("model", int, 8)
    d: int = _field("model", int, 1)
    p: float = _field("model", float, 0.05)
    q: float = _field("model", float, 2.0)
    mu: float = _field("model", float, 0.1)
    # scale overrides
    ell: int = _field("scale", _opt(int), None)
    m: int = _field("scale", _opt(int), None)
    gamma: float = _field("scale", _opt(float), None)
    k_max_cap: int = _field("scale", _opt(int), None)
    t1_mu: float = _field("scale", _opt(float), None)
    bar_t1_mu: float = _field("scale", _opt(float), None)
    strict: bool = _field("scale", _bool, True)
    # phase constants
    c1: float = _field("coupling", float, 4.0)
    c2: float = _field("coupling", float, 50.0)
    c_i1: float = _field("coupling", float, 1.0)
    gate_c: float = _field("coupling", _opt(float), None)
    max_restarts: int = _field("coupling", int, 10)
    # execution
    seed: int = _field("run", int, 0)
    replicas: int = _field("run", int, 1)
    workers: int = _field("run", int, 1)
    out: str = _field("run", str, "")
    # simulate
    horizon: float = _field("simulate", float, 10.0)
    process: str = _field("simulate", str, "plain")
    init: str = _field("simulate", str, "closed")
    sweeps: int = _field("simulate", int, 50)
    # classify
    tau0: int = _field("classify", int, 1)
    tau1: int = _field("classify", int, 2)
    # estimators
    quantile: float = _field("estimate", float, 0.5)
    delta: float = _field("estimate", _opt(float), None)
    times: tuple = _field("estimate", _floats, ())
    # exact
    t_max: float = _field("exact", _opt(float), None)
    points: int = _field("exact", int, 101)
    threshold: float = _field("exact", float, 0.25)
    # sweep grid, cartesian product of the lists (each defaults to the model value)
    ns: tuple = _field("sweep", _ints, ())
    mus: tuple = _field("sweep", _floats, ())
    ps: tuple = _field("sweep", _floats, ())
    qs: tuple = _field("sweep", _floats, ())
    cluster_replicas: int = _field("sweep", int, 0)
    msd_replicas: int = _field("sweep", int, 0)

    @property
    def params(self):
        return RCParams(self.p, self.q, self.mu)

    @property
    def spec(self):
        return TorusSpec(self.n, self.d)

    @property
    def overrides(self):
        keys = ("ell", "m", "gamma", "k_max_cap", "t1_mu", "bar_t1_mu")
        ov = {k: getattr(self, k) for k in keys if getattr(self, k) is not None}
        ov["strict"] = self.strict
        return ov

    @property
    def coupling(self):
        return CouplingConfig(self.c1, self.c2, self.c_i1, self.gate_c, None, self.max_restarts)

    @property
    def grid(self):
        return list(product(self.ns or (self.n,), self.mus or (self.mu,), self.ps or (self.p,),
                            self.qs or (self.q,)))

    def sections(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out.setdefault(f.metadata["section"], {})[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def config_hash(self):
        """Hash of everything that affects results (output location and worker count excluded)."""
        d = self.sections()
        d["run"] = {k: v for k, v in d["run"].items() if k not in ("out", "workers")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


FIELDS = {f.name: f for f in fields(RunConfig)}
SECTIONS = {f.metadata["section"] for f in FIELDS.values()}


def _resolve_key(key):
    sec, _, name = key.rpartition(".")
    if name not in FIELDS:
        raise ConfigError(key, "unknown key")
    if sec and FIELDS[name].metadata["section"] != sec:
        raise ConfigError(key, f"key belongs to section [{FIELDS[name].metadata['section']}]")
    return name


def _read_file(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    items = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(sec, "unknown section")
        for k, v in cp.items(sec):
            items[_resolve_key(f"{sec}.{k}")] = v
    return items


def validate(cfg: RunConfig, command: str = None):
    checks = [
        ("p", 0 < cfg.p < 1, "must lie in (0, 1)"),
        ("q", cfg.q > 0, "must be positive"),
        ("mu", cfg.mu > 0, "must be positive"),
        ("n", cfg.n >= 3, "must be >= 3"),
        ("d", cfg.d >= 1, "must be >= 1"),
        ("replicas", cfg.replicas >= 1, "must be >= 1"),
        ("workers", cfg.workers >= 1, "must be >= 1"),
        ("max_restarts", cfg.max_restarts >= 0, "must be >= 0"),
        ("c1", cfg.c1 > 0, "must be positive"),
        ("c2", cfg.c2 > 0, "must be positive"),
        ("c_i1", cfg.c_i1 > 0, "must be positive"),
        ("horizon", cfg.horizon > 0, "must be positive"),
        ("process", cfg.process in ("plain", "star"), "must be plain or star"),
        ("init", cfg.init in ("closed", "stationary"), "must be closed or stationary"),
        ("sweeps", cfg.sweeps >= 1, "must be >= 1"),
        ("tau0", 0 <= cfg.tau0 <= cfg.tau1, "need 0 <= tau0 <= tau1"),
        ("quantile", 0 < cfg.quantile < 1, "must lie in (0, 1)"),
        ("delta", cfg.delta is None or cfg.delta >= 0, "must be nonnegative"),
        ("times", all(x >= 0 for x in cfg.times), "must be nonnegative"),
        ("t_max", cfg.t_max is None or cfg.t_max > 0, "must be positive"),
        ("points", cfg.points >= 2, "must be >= 2"),
        ("threshold", 0 < cfg.threshold < 1, "must lie in (0, 1)"),
        ("ns", all(x >= 3 for x in cfg.ns), "entries must be >= 3"),
        ("mus", all(x > 0 for x in cfg.mus), "entries must be positive"),
        ("ps", all(0 < x < 1 for x in cfg.ps), "entries must lie in (0, 1)"),
        ("qs", all(x > 0 for x in cfg.qs), "entries must be positive"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(key, msg)
    if command in ("classify", "couple", "scale-sweep"):
        for n, mu, p, _ in cfg.grid if command == "scale-sweep" else [(cfg.n, cfg.mu, cfg.p, cfg.q)]:
            try:
                derive_scale_params(RCParams(p, cfg.q, mu), n, cfg.d, cfg.overrides)
            except ScaleError as exc:
                key = next((k for k in ("ell", "m", "k_max_cap", "gamma", "t1_mu", "bar_t1_mu")
                            if k in str(exc)), "scale")
                raise ConfigError(key, str(exc)) from None
    if command == "mix-exact":
        try:
            state_space(cfg.spec)
        except CapacityError as exc:
            raise ConfigError("n", str(exc)) from None


def parse_config(path=None, assignments=(), out=None) -> RunConfig:
    """File values, then key=value assignments; unknown keys are rejected."""
    raw = _read_file(path) if path else {}
    for a in assignments:
        if "=" not in a:
            raise ConfigError(a, "expected key=value")
        k, v = a.split("=", 1)
        raw[_resolve_key(k.strip())] = v.strip()
    if out is not None:
        raw["out"] = out
    vals = {}
    for k, v in raw.items():
        try:
            vals[k] = FIELDS[k].metadata["conv"](v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(k, f"bad value {v!r} ({exc})") from None
    cfg = RunConfig(**vals)
    if not cfg.out:
        cfg.out = os.environ.get(OUT_ENV, "dynrc-runs")
    return cfg


# output -------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


class Output:
    """Collects files for one run and writes them with a config-hash header."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.out)
        self.hash = cfg.config_hash()
        self.files = []
        self.notes = []

    def _header(self):
        return f"# dynrc {self.command} config_hash={self.hash}\n"

    def csv(self, name, columns, rows):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            fh.write(self._header())
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.files.append(name)
        return path

    def text(self, name, body):
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(self._header() + body)
        self.files.append(name)

    def metadata(self, status):
        meta = dict(command=self.command, config_hash=self.hash, status=status, config=self.cfg.sections(),
                    seed=self.cfg.seed, generator=GENERATOR_NAME, files=self.files, notes=self.notes,
                    versions=dict(dynrc=__version__, python=platform.python_version(),
                                  numpy=np.__version__, scipy=scipy.__version__))
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{self.command}.meta.json"
        path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_fmt) + "\n")


# commands -----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Output) -> int:
    spec, params = cfg.spec, cfg.params
    rows, finals = [], []
    for r in range(cfg.replicas):
        rs = StreamSeed(cfg.seed, r)
        env = sample_stationary(rs, spec, params, cfg.sweeps) if cfg.init == "stationary" else EdgeConfig(spec)
        src = EventSource(rs, params.mu, 2 * spec.d)
        if cfg.process == "star":
            st = StarConfig(spec, params, 0, state=env.s, draws=UniformStream(src, "resolve"))
        else:
            st = PlainState(env, 0, params)
        st, traj = evolve(st, rs, params, cfg.horizon, source=src, inplace=True)
        rows += [(r, t) + tuple(x) for t, x in traj.samples]
        if cfg.process == "star":
            finals.append(export_star(st, params))
            _, proj = project(st)
            finals.append(export_config(proj, params))
        else:
            finals.append(export_config(st.edge_config(), params))
    out.csv("simulate.csv", ["replica", "time"] + [f"x{j}" for j in range(cfg.d)], rows)
    out.text("simulate_final.txt", "".join(finals))
    print(f"simulate: {cfg.replicas} replica(s), horizon {cfg.horizon}, {len(rows)} trajectory rows")
    return EXIT_OK


def cmd_classify(cfg: RunConfig, out: Output) -> int:
    spec, params = cfg.spec, cfg.params
    sp = derive_scale_params(params, cfg.n, cfg.d, cfg.overrides)
    src = EventSource(StreamSeed(cfg.seed, 0), params.mu, 2 * spec.d)
    cls = Classification(src, spec, params, sp)
    great = []
    try:
        for k in range(1, max(1, sp.k_max) + 1):
            for tau in range(cfg.tau0, cfg.tau1 + 1):
                for i in product(range(sp.n_boxes(k)), repeat=cfg.d):
                    cls.good(k, i, tau)
        for tau in range(cfg.tau0, cfg.tau1 + 1):
            for i in product(range(sp.n_boxes(1)), repeat=cfg.d):
                great.append(i + (tau, sp.k_max, cls.is_k_great(i, tau, sp.k_max)))
    except (DependencyError, ValueError) as exc:
        raise ConfigError("tau0", f"window not classifiable: {exc}") from None
    ids = [f"i{j}" for j in range(cfg.d)]
    rows = [r for r in cls.export_rows() if cfg.tau0 <= r[-2] <= cfg.tau1]
    out.csv("classify.csv", ["k"] + ids + ["tau", "status"], rows)
    out.csv("classify_great.csv", ids + ["tau", "k", "great"], great)
    nbad = sum(1 for r in rows if r[-1] == "bad")
    print(f"classify: {len(rows)} boxes, {nbad} bad, ell={sp.ell} t1={sp.t1!r} k_max={sp.k_max}")
    return EXIT_OK


def cmd_couple(cfg: RunConfig, out: Output) -> int:
    res = couple_replicas(cfg.params, cfg.n, cfg.replicas, cfg.d, cfg.seed, cfg.overrides, cfg.coupling,
                          workers=cfg.workers)
    rows = [(r, x.coalescence_time if not x.censored else math.inf, x.censored, x.restarts, x.f1, x.f2, x.f3,
             x.srwm_attempts, x.srwm_successes) for r, x in enumerate(res)]
    out.csv("couple.csv", ["replica", "coalescence_time", "censored", "restarts", "f1", "f2", "f3",
                           "srwm_attempts", "srwm_successes"], rows)
    cens = sum(x.censored for x in res)
    times = sorted(x.coalescence_time for x in res if not x.censored)
    if times:
        print(f"couple: median coalescence time {times[len(times) // 2]!r} over {len(times)} runs")
    if cens:
        note = f"censored: {cens} of {cfg.replicas} replicas exhausted the restart budget ({cfg.max_restarts})"
        out.notes.append(note)
        print(note, file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_mix_exact(cfg: RunConfig, out: Output) -> int:
    G = build_generator(cfg.spec, cfg.params)
    pi = stationary_distribution(G)
    sq = spectral_quantities(G, pi)
    t_max = cfg.t_max
    if t_max is None:
        t_max = sq.t_rel * (math.log(1 / pi.min()) + 2)
    grid = np.linspace(0.0, t_max, cfg.points).tolist()
    curve = tv_curve(G, range(G.space.size), grid, pi, cfg.threshold)
    out.csv("mix_exact.csv", ["t", "tv"], zip(curve.grid, curve.tv))
    out.csv("mix_exact_summary.csv", ["t_mix", "gap", "t_rel", "dirichlet_bound"],
            [(curve.t_mix, sq.gap, sq.t_rel, sq.dirichlet_bound)])
    print(f"T_mix={curve.t_mix!r} gap={sq.gap!r} T_rel={sq.t_rel!r}")
    if not math.isfinite(curve.t_mix):
        out.notes.append("TV never dropped below the threshold on the grid")
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_cluster_stats(cfg: RunConfig, out: Output) -> int:
    delta = default_delta(cfg.params) if cfg.delta is None else cfg.delta
    cm = cluster_moment(cfg.params, cfg.n, delta, cfg.replicas, cfg.d, cfg.seed, cfg.sweeps,
                        workers=cfg.workers)
    out.csv("cluster_stats.csv", ["replica", "diameter"], enumerate(cm.diameters))
    out.csv("cluster_stats_summary.csv", ["delta", "replicas", "mean_sq_diameter", "stderr"],
            [(delta, cm.replicas, cm.mean, cm.stderr)])
    print(f"cluster-stats: E[D^2]={cm.mean!r} +- {cm.stderr!r} (delta={delta!r})")
    return EXIT_OK


def cmd_msd(cfg: RunConfig, out: Output) -> int:
    times = cfg.times or tuple(np.linspace(0.0, cfg.horizon, 11).tolist())
    res = msd(cfg.params, cfg.n, times, cfg.replicas, cfg.d, cfg.seed, cfg.sweeps, cfg.delta,
              workers=cfg.workers)
    out.csv("msd.csv", ["t", "msd", "stderr"], zip(res.times, res.mean, res.stderr))
    out.csv("msd_fit.csv", ["delta", "slope", "slope_se", "exponent", "exponent_se", "replicas"],
            [(res.delta, res.slope, res.slope_se, res.exponent, res.exponent_se, res.replicas)])
    print(f"msd: slope vs t/delta {res.slope!r}, exponent {res.exponent!r}")
    return EXIT_OK


def cmd_scale_sweep(cfg: RunConfig, out: Output) -> int:
    sc = SweepConfig(cfg.grid, cfg.d, cfg.replicas, cfg.seed, cfg.quantile, cfg.overrides, cfg.coupling,
                     cfg.cluster_replicas, cfg.msd_replicas, cfg.times, cfg.delta, cfg.workers)
    res = scaling_sweep(sc)
    rows = res.rows()
    cols = list(rows[0])
    out.csv("sweep.csv", cols, [[r[c] for c in cols] for r in rows])
    for c in res.cells:
        if c.error:
            out.notes.append(f"cell n={c.n} mu={c.mu} p={c.p} q={c.q}: {c.error}")
    print(f"scale-sweep: {len(rows)} cells, collapse CV {res.coefficient_of_variation()!r}")
    if all(c.error for c in res.cells):
        return EXIT_ESTIMATION
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "classify": cmd_classify,
    "couple": cmd_couple,
    "mix-exact": cmd_mix_exact,
    "cluster-stats": cmd_cluster_stats,
    "msd": cmd_msd,
    "scale-sweep": cmd_scale_sweep,
}


def dispatch(command: str, cfg: RunConfig) -> int:
    out = Output(cfg, command)
    try:
        status = HANDLERS[command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationFailure as exc:
        out.notes.append(f"estimation failure: {exc} {exc.diagnostics}")
        print(f"estimation failure: {exc}", file=sys.stderr)
        status = EXIT_ESTIMATION
    out.metadata(status)
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="dynrc", description="Random walk on the dynamical random cluster model.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file with [section] headers")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./dynrc-runs)")
        sp.add_argument("assignments", nargs="*", metavar="key=value")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.assignments, args.out)
        validate(cfg, args.command)
    except (ConfigError, TorusError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
