"""Experiment runner behind the command-line interface.

Every ``run_*`` function returns ``(exit_code, bundle)`` where ``bundle`` is a
plain dict that embeds the fully resolved configuration. Exit codes: 0 success,
2 verdict-negative (ruled out, grid fail, mismatch), 1 operational error.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, closedloop as cl, corpus, graph as gr, plant as pa, sim
from .errors import SyncfreeError
from .plant import LTIPlant
from .serialize import dumps, write_rows_csv
from .synthesis import (
    Protocol,
    static_protocol,
    synthesize_ct_with_bounds,
    synthesize_dt_with_bounds,
    zero_protocol,
)

EXIT_OK, EXIT_OPERATIONAL, EXIT_NEGATIVE = 0, 1, 2
KINDS = ("analyze", "synthesize", "verify", "simulate", "scale_sweep", "reproduce")
CASES = ("example1", "example2", "theorem4_pipeline", "theorem5_falsify")
NAMED_PLANTS = {
    "harmonic_oscillator": corpus.HARMONIC_OSCILLATOR,
    "double_integrator": corpus.DOUBLE_INTEGRATOR,
    "double_integrator_full_state": corpus.DOUBLE_INTEGRATOR_FULL_STATE,
    "example1": corpus.EXAMPLE1,
    "example2": corpus.EXAMPLE2,
}
# horizons sized from the worst network margin, capped to stay at desk scale
HORIZON_FACTOR = 20.0
MAX_HORIZON = 200.0


class SpecError(SyncfreeError):
    """Malformed experiment specification or input file."""


def default_seed():
    return int(os.environ.get("SYNCFREE_SEED", "0"))


@dataclass
class ExperimentSpec:
    kind: str
    plant: object = None
    protocol: object = None
    graph: object = None
    config: object = None
    grid: object = None
    variant: str = None
    domain: str = None
    n_list: list = field(default_factory=list)
    graph_kind: str = "cycle"
    seeds: list = None
    weight_range: tuple = (1.0, 1.0)
    T: float = None
    h: float = None
    tol: float = 1e-6
    max_horizon: float = MAX_HORIZON
    workers: int = 1
    output_dir: str = None
    seed: int = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("plant", "protocol", "graph", "config", "grid"):
            ref = getattr(self, name)
            if isinstance(ref, (str, os.PathLike)) and not Path(ref).exists():
                raise SpecError(f"{name} file not found: {ref}")
        if self.seed is None:
            self.seed = default_seed()
        if self.seeds is None:
            self.seeds = [self.seed]
        if self.kind == "scale_sweep":
            if not self.n_list:
                raise SpecError("sweep N list is empty")
            if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
                raise SpecError("sweep N list must be strictly increasing")

    @classmethod
    def from_dict(cls, d, base=None):
        """Build from a JSON object; relative file paths resolve against ``base``."""
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown spec fields {sorted(unknown)}")
        d = dict(d)
        if base is not None:
            for name in ("plant", "protocol", "graph", "config", "grid"):
                if isinstance(d.get(name), str):
                    d[name] = str(Path(base) / d[name])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path), base=Path(path).parent)

    def to_dict(self):
        return asdict(self)


def read_json(path):
    """Read a JSON file, turning decode errors into line-numbered diagnostics."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc.strerror}") from None


def _resolve(ref, loader):
    if isinstance(ref, (str, os.PathLike)):
        ref = read_json(ref)
    try:
        return loader(ref)
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed input: missing or invalid field {exc}") from None


def resolve_plant(ref, domain=None):
    """Plant from a file path, a dict, or ``{"generator": name, "domain": ...}``.

    ``domain`` overrides the stored domain; named generators then switch to
    their discrete-time counterparts.
    """
    def load(d):
        if "generator" in d:
            name = d["generator"]
            if name not in NAMED_PLANTS:
                raise SpecError(f"unknown plant generator {name!r}; expected one of {sorted(NAMED_PLANTS)}")
            return corpus.plant(NAMED_PLANTS[name], domain or d.get("domain", "continuous"))
        p = LTIPlant.from_dict(d)
        return p.with_domain(domain) if domain else p

    if ref is None:
        raise SpecError("a plant is required")
    return _resolve(ref, load)


def resolve_protocol(ref, plant):
    """Protocol from a file/dict, ``{"static": Dc, "scaling": ...}``, or
    ``{"generator": "observer" | "zero"}``."""
    def load(d):
        if "static" in d:
            return static_protocol(d["static"], d.get("scaling", "none"))
        gen = d.get("generator")
        if gen == "observer":
            return synthesize(plant)[0]
        if gen == "zero":
            return zero_protocol(plant, d.get("scaling", "local_bounds"))
        if gen is not None:
            raise SpecError(f"unknown protocol generator {gen!r}")
        return Protocol.from_dict(d)

    if ref is None:
        raise SpecError("a protocol is required")
    return _resolve(ref, load)


def resolve_graph(ref, seed):
    def load(d):
        if "generator" in d:
            return gr.generate(d["generator"], d["n"], d.get("seed", seed),
                               tuple(d.get("weight_range", (1.0, 1.0))))
        return gr.WeightedDigraph.from_dict(d)

    return _resolve(ref, load)


def synthesize(plant, grid=None):
    if plant.domain == "continuous":
        return synthesize_ct_with_bounds(plant)
    return synthesize_dt_with_bounds(plant, grid)


def _bundle(spec, **body):
    return {"tool": f"syncfree {__version__}", "spec": spec.to_dict(), **body}


# --------------------------------------------------------------------------
# thin adapters


def run_analyze(spec):
    """Structural report plus the P4 and P5 classification."""
    p = resolve_plant(spec.plant, spec.domain)
    report = pa.analyze(p)
    verdicts = {prob: pa.classify(p, prob, report) for prob in pa.PROBLEMS}
    ruled_out = all(v.verdict == "ruled_out_by_necessity" for v in verdicts.values())
    code = EXIT_NEGATIVE if ruled_out else EXIT_OK
    return code, _bundle(spec, plant=p, report=report, verdicts=verdicts)


def run_synthesize(spec):
    p = resolve_plant(spec.plant, spec.domain)
    grid = _resolve(spec.grid, cl.GridSpec.from_dict) if spec.grid is not None else None
    protocol, cert = synthesize(p, grid)
    return EXIT_OK, _bundle(spec, plant=p, protocol=protocol, certificate=cert,
                            certificate_violations=cert.violations())


def run_verify(spec):
    p = resolve_plant(spec.plant, spec.domain)
    protocol = resolve_protocol(spec.protocol, p)
    variant = (spec.variant or protocol.variant).upper()
    grid = (_resolve(spec.grid, cl.GridSpec.from_dict) if spec.grid is not None
            else cl.GridSpec.default(variant))
    report = cl.grid_verify(p, protocol, variant, grid)
    positive_real = None
    if p.scalar_channel:
        positive_real = cl.positive_real_check(p, protocol, variant)
    ok = report.passed and (positive_real is None or positive_real.passes)
    return (EXIT_OK if ok else EXIT_NEGATIVE), _bundle(
        spec, plant=p, protocol=protocol, variant=variant, grid_report=report,
        positive_real=positive_real,
    )


def run_simulate(spec, csv_path=None):
    """Simulate a network config; writes the trace CSV when ``csv_path`` is given."""
    if spec.config is not None:
        config = _resolve(spec.config, sim.config_from_dict)
    else:
        p = resolve_plant(spec.plant, spec.domain)
        pr = resolve_protocol(spec.protocol, p)
        g = resolve_graph(spec.graph, spec.seed)
        bounds = gr.default_bounds(g) if pr.scaling == "local_bounds" else None
        x0 = np.random.default_rng(spec.seed).normal(size=(g.n_agents, p.n))
        config = sim.NetworkConfig(p, pr, g, bounds, x0)
    T = spec.T if spec.T is not None else (200 if config.plant.domain == "discrete" else 50.0)
    trace = sim.simulate(config, T, spec.h)
    v = sim.verdict(trace.sync_error, spec.tol)
    if csv_path is not None:
        trace.write_csv(csv_path)
    code = EXIT_NEGATIVE if v == "not_synchronized" else EXIT_OK
    return code, _bundle(spec, config=config, T=T, h=trace.h, verdict=v,
                         final_sync_error=float(trace.sync_error[-1])), trace


# --------------------------------------------------------------------------
# scale sweep

SWEEP_HEADER = ["N", "graph_seed", "verdict", "worst_modal_margin", "final_sync_error",
                "network_stable", "horizon", "error"]


def horizon_for(margin, domain, max_horizon=MAX_HORIZON):
    """Horizon of ``HORIZON_FACTOR / |margin|``, capped; a step count for discrete plants."""
    if not np.isfinite(margin) or margin == 0:
        T = 1.0
    else:
        if domain == "discrete":
            # margin is 1 - rho; decay per step is about rho
            T = HORIZON_FACTOR / min(abs(margin), 1.0)
        else:
            T = HORIZON_FACTOR / abs(margin)
    T = min(T, max_horizon)
    return float(np.ceil(T)) if domain == "discrete" else T


def sweep_row(p, pr, n, kind, seed, weight_range, T=None, h=None, tol=1e-6,
              max_horizon=MAX_HORIZON):
    row = {"N": n, "graph_seed": seed, "verdict": "", "worst_modal_margin": np.nan,
           "final_sync_error": np.nan, "network_stable": "", "horizon": np.nan, "error": ""}
    try:
        g = gr.generate(kind, n, seed, weight_range)
        bounds = gr.default_bounds(g) if pr.scaling == "local_bounds" else None
        margin = cl.worst_network_margin(p, pr, g, bounds)
        row["worst_modal_margin"] = margin
        row["network_stable"] = bool(margin > cl.NETWORK_MARGIN_THRESHOLD)
        horizon = T if T is not None else horizon_for(margin, p.domain, max_horizon)
        row["horizon"] = horizon
        x0 = np.random.default_rng(seed).normal(size=(n, p.n))
        trace = sim.simulate(sim.NetworkConfig(p, pr, g, bounds, x0), horizon, h,
                             record_every=10)
        row["final_sync_error"] = float(trace.sync_error[-1])
        row["verdict"] = sim.verdict(trace.sync_error, tol)
    except SyncfreeError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_scale_sweep(spec, csv_path=None):
    p = resolve_plant(spec.plant, spec.domain)
    pr = resolve_protocol(spec.protocol, p)
    jobs = [(n, s) for n in spec.n_list for s in spec.seeds]

    def job(args):
        return sweep_row(p, pr, args[0], spec.graph_kind, args[1], spec.weight_range,
                         spec.T, spec.h, spec.tol, spec.max_horizon)

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            rows = list(pool.map(job, jobs))  # map keeps spec order
    else:
        rows = [job(a) for a in jobs]
    if csv_path is not None:
        write_rows_csv(csv_path, SWEEP_HEADER, [[r[k] for k in SWEEP_HEADER] for r in rows])
    bad = any(r["error"] or r["verdict"] == "not_synchronized" for r in rows)
    return (EXIT_NEGATIVE if bad else EXIT_OK), _bundle(spec, plant=p, protocol=pr, rows=rows)


# --------------------------------------------------------------------------
# golden reproductions


def _check(name, expected, observed, passed):
    return {"field": name, "expected": expected, "observed": observed, "passed": bool(passed)}


def _sim_check(p, pr, g, bounds, seed, factor=HORIZON_FACTOR, tol=1e-6):
    margin = cl.worst_network_margin(p, pr, g, bounds)
    x0 = np.random.default_rng(seed).normal(size=(g.n_agents, p.n))
    T = factor / abs(margin)
    trace = sim.simulate(sim.NetworkConfig(p, pr, g, bounds, x0), T, record_every=20)
    return margin, T, float(trace.sync_error[-1]), sim.verdict(trace.sync_error, tol)


def reproduce_example1(seed):
    p = corpus.plant(corpus.EXAMPLE1)
    pr = static_protocol(corpus.EXAMPLE1_GAIN)
    report = cl.grid_verify(p, pr, "P4")
    checks = [_check("grid_passed", True, report.passed, report.passed)]
    for k, n in enumerate((5, 20, 100)):
        g = gr.generate("random_spanning_tree", n, seed + k, (0.5, 2.0))
        margin, T, err, v = _sim_check(p, pr, g, None, seed + k, factor=30.0)
        checks.append(_check(f"sync_N{n}", "synchronized", {"verdict": v, "final_sync_error": err,
                                                            "horizon": T, "margin": margin},
                             v == "synchronized"))
    return checks, {"grid_report": report}


def reproduce_example2(seed):
    p = corpus.plant(corpus.EXAMPLE2)
    zeros = pa.invariant_zeros(p)
    hit = bool(np.any(np.abs(zeros - 1.0) <= pa.ZERO_MATCH_TOL))
    pr = static_protocol(corpus.EXAMPLE2_GAIN)
    report = cl.grid_verify(p, pr, "P4")
    checks = [
        _check("invariant_zero_at_1", 1.0, [complex(z) for z in zeros], hit),
        _check("grid_passed", True, report.passed, report.passed),
    ]
    verdict = pa.classify(p, "P4")
    return checks, {"grid_report": report, "p4_verdict": verdict}


def reproduce_observer_pipeline(seed):
    p = corpus.plant(corpus.HARMONIC_OSCILLATOR)
    pr, cert = synthesize_ct_with_bounds(p)
    report = cl.grid_verify(p, pr, "P5")
    pos = cl.positive_real_check(p, pr, "P5")
    g = gr.generate("random_spanning_tree", 50, seed, (0.5, 2.0))
    margin, T, err, v = _sim_check(p, pr, g, gr.default_bounds(g), seed)
    checks = [
        _check("residual_neutral", "<= 1e-8", cert.residual_neutral, cert.residual_neutral <= 1e-8),
        _check("residual_lyap", "<= 1e-8", cert.residual_lyap, cert.residual_lyap <= 1e-8),
        _check("margin_boun", ">= 0", cert.margin_boun, cert.margin_boun >= 0),
        _check("margin_small", "> 0", cert.margin_small, cert.margin_small > 0),
        _check("grid_passed", True, {"worst_margin": report.worst_margin,
                                     "worst_lambda": report.worst_lambda}, report.passed),
        _check("grid_passed_scaled", True, report.worst_scaled_margin, report.passed_scaled),
        _check("positive_real", True, pos.worst_value, pos.passes),
        _check("sync_N50", "synchronized", {"verdict": v, "final_sync_error": err,
                                            "horizon": T, "margin": margin},
               v == "synchronized"),
    ]
    return checks, {"protocol": pr, "certificate": cert, "grid_report": report}


def reproduce_falsifier(seed):
    checks = []
    for k, (p, pr) in enumerate(corpus.falsifier_corpus(30, seed)):
        try:
            v = cl.falsify_dt_no_bounds(p, pr)
            ok = v is not None and abs(v.lambda_star) <= 2.0**60
            observed = None if v is None else v.to_dict()
        except SyncfreeError as exc:
            ok, observed = False, f"{type(exc).__name__}: {exc}"
        checks.append(_check(f"corpus_{k}_lambda_star", "finite", observed, ok))
    rng = np.random.default_rng(seed)
    for k in range(5):
        n = int(rng.integers(1, 5))
        A = corpus.random_stable_matrix(rng, n, "discrete")
        p = LTIPlant(A, rng.normal(size=(n, 1)), rng.normal(size=(1, n)), "discrete")
        v = cl.falsify_dt_no_bounds(p, zero_protocol(p, "none"))
        checks.append(_check(f"schur_{k}_no_violation", None, v, v is None))
    return checks, {}


REPRODUCERS = {
    "example1": reproduce_example1,
    "example2": reproduce_example2,
    "theorem4_pipeline": reproduce_observer_pipeline,
    "theorem5_falsify": reproduce_falsifier,
}


def run_reproduce(spec, case):
    if case not in REPRODUCERS:
        raise SpecError(f"unknown case {case!r}; expected one of {CASES}")
    checks, artifacts = REPRODUCERS[case](spec.seed)
    mismatches = [c["field"] for c in checks if not c["passed"]]
    code = EXIT_NEGATIVE if mismatches else EXIT_OK
    return code, _bundle(spec, case=case, checks=checks, mismatches=mismatches, **artifacts)


def write_bundle(bundle, path=None):
    text = dumps(bundle)
    if path is None:
        return text
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return text
