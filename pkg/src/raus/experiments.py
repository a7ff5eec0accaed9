"""Named experiment scenarios, their configuration and CSV output.

Configuration is line oriented::

    # comment
    K = 500
    snr_db = 4
    sweep = 5, 10, 20

Precedence, lowest first: built-in defaults, scenario defaults, config
file, ``--set`` overrides.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernels
from .analysis import (
    MseScenario,
    derive_rng,
    empirical_mse,
    subvector_split,
    synthetic_gradients,
    theoretical_mse_raus_bound,
)
from .estimators import Scheme, round_time
from .quantizer import CpCodebook, check_weights, convex_weights_cp, quantize, quantizer_mse_cp
from .trainer import TrainConfig, quadratic_population, svc_population, train

__all__ = ["SCENARIOS", "ConfigError", "ExperimentSpec", "parse_config", "run_scenario", "write_csv"]

SCENARIOS = ("mse-vs-minibatch", "mse-vs-devices", "mse-vs-sublength", "train", "quantizer-check")

# stream keys that keep population draws apart from trial draws
POPULATION_KEY = 1 << 30
SCHEME_KEYS = {Scheme.RAUS_NONCOHERENT: 1, Scheme.YANG: 2, Scheme.RAUS_ASYMPTOTIC: 3, Scheme.TDMA_ORACLE: 4, Scheme.RAUS_AWGN: 5}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class ExperimentSpec:
    scenario: str = "mse-vs-minibatch"
    seed: int = 0
    K: int = 500
    K_bar: int = 10
    L: int = 80
    L_bar: int | None = None
    D: int | None = None
    N: int = 100
    snr_db: float = 4.0
    V_max: float | None = None
    mu: float = 0.1
    mu_yang: float = 0.01
    lam: float = 1e-3
    T: int = 2000
    trials: int = 2000
    sweep: str | None = None
    task: str = "svc"
    out: str | None = None

    @property
    def P(self) -> float:
        return 1.0

    @property
    def N0(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    def param_hash(self) -> str:
        blob = {k: v for k, v in asdict(self).items() if k != "out"}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


# config keys that differ from the attribute name
_ALIASES = {"lambda": "lam"}
_KEYS = {f.name: f for f in fields(ExperimentSpec)}
_CONFIG_KEYS = sorted({*(k for k in _KEYS if k != "lam"), "lambda"})

_SCENARIO_DEFAULTS = {
    "mse-vs-minibatch": {"sweep": "5,10,15,20,25,30,35,40,45,50"},
    "mse-vs-devices": {"sweep": "100,200,300,400,500"},
    "mse-vs-sublength": {"L": 4096, "K": 200, "trials": 500, "sweep": "2,4,8,16,32,64,128"},
    "train": {"K": 1000, "L": 32, "snr_db": 10.0, "sweep": "raus:4,raus:8,raus:16,yang:10,yang:20,yang:50"},
    "quantizer-check": {"L_bar": 8, "trials": 1_000_000},
}


def _convert(key, raw, where):
    name = _ALIASES.get(key, key)
    if name not in _KEYS:
        raise ConfigError(f"unknown key '{key}'{where}; valid keys: {', '.join(_CONFIG_KEYS)}")
    ftype = str(_KEYS[name].type)
    text = str(raw).strip()
    if "None" in ftype and text.lower() in ("", "auto", "none"):
        return name, None
    try:
        if ftype.startswith("int"):
            value = int(text)
        elif ftype.startswith("float"):
            value = float(text)
        else:
            value = text
    except ValueError:
        kind = ftype.split(" ")[0]
        raise ConfigError(f"key '{key}'{where}: expected {kind}, got {text!r}") from None
    return name, value


def _lines(text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = body.split("=", 1)
        yield lineno, key.strip(), raw.strip()


def parse_config(text: str = "", scenario: str | None = None, overrides=()) -> ExperimentSpec:
    """Resolve a config text (plus ``key=value`` overrides) into a validated spec."""
    values, origin = {}, {}
    for lineno, key, raw in _lines(text or ""):
        name, value = _convert(key, raw, f" (line {lineno})")
        values[name], origin[name] = value, f" (line {lineno})"
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        name, value = _convert(key.strip(), raw, " (--set)")
        values[name], origin[name] = value, " (--set)"
    if scenario is not None:
        values["scenario"] = scenario
    scen = values.get("scenario", ExperimentSpec.scenario)
    if scen not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{scen}'{origin.get('scenario', '')}; choose from {', '.join(SCENARIOS)}")
    merged = dict(_SCENARIO_DEFAULTS[scen])
    merged.update(values)
    spec = ExperimentSpec(**merged)
    _validate(spec, origin)
    return spec


def _validate(spec, origin):
    def fail(key, msg):
        raise ConfigError(f"key '{key}'{origin.get(key, '')}: {msg}")

    for key in ("K", "K_bar", "L", "N", "T", "trials"):
        if getattr(spec, key) < 1:
            fail(key, "must be a positive integer")
    if spec.D is not None and spec.L_bar is not None and spec.D * spec.L_bar != spec.L:
        fail("D", f"D={spec.D} and L_bar={spec.L_bar} disagree with L={spec.L}")
    if spec.D is not None:
        if spec.D < 1 or spec.L % spec.D:
            fail("D", f"D={spec.D} does not divide L={spec.L}")
        spec.L_bar = spec.L // spec.D
    if spec.L_bar is None:
        spec.L_bar = 8 if spec.L % 8 == 0 else spec.L
    if spec.L_bar < 1 or spec.L % spec.L_bar:
        fail("L_bar", f"L_bar={spec.L_bar} does not divide L={spec.L}")
    spec.D = spec.L // spec.L_bar
    if spec.K_bar > spec.K:
        fail("K_bar", f"K_bar={spec.K_bar} exceeds K={spec.K}")
    if spec.V_max is not None and spec.V_max <= 0:
        fail("V_max", "must be positive")
    if spec.mu <= 0 or spec.mu_yang <= 0:
        fail("mu", "step sizes must be positive")
    if spec.task not in ("svc", "quadratic"):
        fail("task", "must be 'svc' or 'quadratic'")
    try:
        _sweep_values(spec)
    except ValueError as exc:
        fail("sweep", str(exc))


def _sweep_values(spec):
    items = [s.strip() for s in (spec.sweep or "").split(",") if s.strip()]
    if spec.scenario == "train":
        out = []
        for item in items:
            kind, _, val = item.partition(":")
            kind = kind.lower()
            if kind not in ("raus", "yang") or not val.isdigit() or int(val) < 1:
                raise ValueError(f"train sweep items look like raus:<L_bar> or yang:<K_bar>, got {item!r}")
            v = int(val)
            if kind == "raus" and spec.L % v:
                raise ValueError(f"L_bar={v} does not divide L={spec.L}")
            if kind == "yang" and v > spec.K:
                raise ValueError(f"K_bar={v} exceeds K={spec.K}")
            out.append((kind, v))
        return out
    if spec.scenario == "quantizer-check":
        return []
    try:
        vals = [int(s) for s in items]
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {spec.sweep!r}") from None
    if not vals or min(vals) < 1:
        raise ValueError("sweep needs positive integers")
    if spec.scenario == "mse-vs-minibatch" and max(vals) > spec.K:
        raise ValueError(f"K_bar={max(vals)} exceeds K={spec.K}")
    if spec.scenario == "mse-vs-sublength" and any(spec.L % v for v in vals):
        raise ValueError(f"every L_bar must divide L={spec.L}")
    return vals


def _population(spec, K, L):
    return synthetic_gradients(K, L, derive_rng(spec.seed, POPULATION_KEY))


def _v_max(spec, gradients, D):
    if spec.V_max is not None:
        return spec.V_max
    norms, _ = subvector_split(gradients, D)
    return math.sqrt(D) * float(norms.max())


def _mse_row(spec, axis_name, axis_value, report, rt):
    p = report.params
    return {
        axis_name: axis_value,
        "scheme": report.scheme.value,
        "mse_empirical": report.empirical,
        "mse_theoretical": report.theoretical,
        "mse_bound": theoretical_mse_raus_bound(p["L_bar"], p["V_sub"], p["K"]) * p["D"]
        if report.scheme.is_raus else "",
        "stderr": report.stderr,
        "round_time_symbols": rt,
        "trials": report.trials,
        "n_clamped": report.n_clamped,
        "seed": spec.seed,
        "param_hash": spec.param_hash(),
    }


def _run_minibatch(spec):
    V = _population(spec, spec.K, spec.L)
    V_max = _v_max(spec, V, spec.D)
    rows = []
    for i, K_bar in enumerate(_sweep_values(spec)):
        for scheme in (Scheme.RAUS_NONCOHERENT, Scheme.YANG):
            D = spec.D if scheme.is_raus else 1
            sc = MseScenario(V, D=D, V_max=V_max if scheme.is_raus else None, K_bar=K_bar,
                             P=spec.P, N=spec.N, N0=spec.N0)
            rep = empirical_mse(scheme, sc, spec.trials, spec.seed, key=(i, SCHEME_KEYS[scheme]))
            rows.append(_mse_row(spec, "K_bar", K_bar, rep, round_time(scheme, K_bar, spec.L, D)))
    return rows


def _run_devices(spec):
    sweep = _sweep_values(spec)
    full = _population(spec, max(sweep), spec.L)
    V_max = _v_max(spec, full, spec.D)
    rows = []
    for i, K in enumerate(sweep):
        # nested populations: the first K rows of the largest one
        V = full[:K]
        K_bar = min(spec.K_bar, K)
        for scheme in (Scheme.RAUS_NONCOHERENT, Scheme.YANG):
            D = spec.D if scheme.is_raus else 1
            sc = MseScenario(V, D=D, V_max=V_max if scheme.is_raus else None, K_bar=K_bar,
                             P=spec.P, N=spec.N, N0=spec.N0)
            rep = empirical_mse(scheme, sc, spec.trials, spec.seed, key=(i, SCHEME_KEYS[scheme]))
            rows.append(_mse_row(spec, "K", K, rep, round_time(scheme, K_bar, spec.L, D)))
    return rows


def _run_sublength(spec):
    V = _population(spec, spec.K, spec.L)
    rows = []
    for i, L_bar in enumerate(_sweep_values(spec)):
        D = spec.L // L_bar
        sc = MseScenario(V, D=D, V_max=spec.V_max, P=spec.P, N=spec.N, N0=spec.N0)
        rep = empirical_mse(Scheme.RAUS_NONCOHERENT, sc, spec.trials, spec.seed, key=(i, 1))
        rows.append({
            "L_bar": L_bar, "D": D,
            "mse_empirical": rep.empirical, "mse_theoretical": rep.theoretical, "stderr": rep.stderr,
            "trials": rep.trials, "n_clamped": rep.n_clamped, "seed": spec.seed, "param_hash": spec.param_hash(),
        })
    return rows


def _train_runs(spec):
    pop_rng = derive_rng(spec.seed, POPULATION_KEY)
    if spec.task == "svc":
        pop = svc_population(spec.K, spec.L, pop_rng)
    else:
        pop = quadratic_population(spec.K, spec.L, pop_rng)
    for kind, value in _sweep_values(spec):
        if kind == "raus":
            cfg = TrainConfig(Scheme.RAUS_NONCOHERENT, mu=spec.mu, T=spec.T, lam=spec.lam, D=spec.L // value,
                              V_max=spec.V_max, P=spec.P, N=spec.N, N0=spec.N0, seed=spec.seed)
            label = f"L_bar={value}"
        else:
            cfg = TrainConfig(Scheme.YANG, mu=spec.mu_yang, T=spec.T, K_bar=value, lam=spec.lam,
                              P=spec.P, N=spec.N, N0=spec.N0, seed=spec.seed)
            label = f"K_bar={value}"
        yield label, train(cfg, pop)


def _run_train(spec):
    rows = []
    h = spec.param_hash()
    for label, trace in _train_runs(spec):
        for t in range(spec.T):
            rows.append({
                "round": t + 1, "scheme": trace.scheme.value, "variant": label,
                "cost": float(trace.cost[t]), "cumulative_symbols": int(trace.symbols[t]),
                "seed": spec.seed, "param_hash": h,
            })
    return rows


def _run_quantizer_check(spec):
    rng = derive_rng(spec.seed, 0)
    cb = CpCodebook(spec.L_bar)
    u = rng.standard_normal(cb.dim)
    u /= np.linalg.norm(u)
    idx = quantize(u, cb, rng, size=spec.trials)
    draws = cb.codewords[idx]
    bias = float(np.max(np.abs(draws.mean(axis=0) - u)))
    mse = float(np.mean(np.sum((draws - u) ** 2, axis=1)))
    target = quantizer_mse_cp(cb.dim)
    ball = rng.standard_normal((1000, cb.dim))
    ball *= (rng.random(1000) ** (1.0 / cb.dim) / np.linalg.norm(ball, axis=1))[:, None]
    failures = 0
    for v in ball:
        try:
            check_weights(convex_weights_cp(v, cb), cb, v)
        except ValueError:
            failures += 1
    h = spec.param_hash()
    checks = [
        ("unbiasedness_max_abs_error", bias, 0.0, 0.01, bias <= 0.01),
        ("mse", mse, target, 0.01 * max(target, 1e-12), abs(mse - target) <= 0.01 * max(target, 1e-12)),
        ("convex_weight_failures", float(failures), 0.0, 0.0, failures == 0),
    ]
    return [
        {"check": name, "value": value, "expected": expected, "tolerance": tol, "passed": bool(ok),
         "L_bar": cb.dim, "trials": spec.trials, "seed": spec.seed, "param_hash": h}
        for name, value, expected, tol, ok in checks
    ]


_RUNNERS = {
    "mse-vs-minibatch": _run_minibatch,
    "mse-vs-devices": _run_devices,
    "mse-vs-sublength": _run_sublength,
    "train": _run_train,
    "quantizer-check": _run_quantizer_check,
}


def run_scenario(spec: ExperimentSpec) -> list[dict]:
    """Run the named scenario; rows come back in sweep order."""
    return _RUNNERS[spec.scenario](spec)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue()


def metadata(spec: ExperimentSpec) -> dict:
    return {
        "spec": asdict(spec),
        "param_hash": spec.param_hash(),
        "N0": spec.N0,
        "P": spec.P,
        "kernel_backend": kernels.BACKEND,
        "notes": [
            "round_time for TDMA excludes the time to upload gradient norms",
            "round_time for YANG excludes feedback of phase-compensation coefficients",
            "trial counts default to values giving roughly 2% standard error or better",
        ],
    }


def write_csv(rows, path: str, spec: ExperimentSpec) -> None:
    """Write the rows to ``path`` and the run metadata to ``path + '.meta.json'``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(to_csv(rows))
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(metadata(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
