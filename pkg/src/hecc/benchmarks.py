"""Comparison schemes as pinned variants of the two-timescale pipeline.

Each scheme fixes a subset of the decision variables and hands the rest to the
standard long-term and short-term solvers, so every scheme is scored by the
same evaluators on the same channel and request realizations.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario, ScenarioConfig, substream

PROPOSED = "PROPOSED"
FUAS = "FUAS"
RUAS = "RUAS"
NEEC = "NEEC"
WO_CLOUD = "WO_CLOUD"
EB = "EB"
FIXED_OFFLOAD = "FIXED_OFFLOAD"
SCHEME_IDS = (PROPOSED, FUAS, RUAS, NEEC, WO_CLOUD, EB, FIXED_OFFLOAD)
FIXED_RATES = (0.3, 0.8, 1.0)

METRICS = ("objective", "latency_total", "cost_total", "offload_fraction", "feasible_rate", "triggers")


@dataclass(frozen=True)
class SchemeSpec:
    """A scheme id plus, for fixed offloading, the offloaded share ``rho``."""

    scheme: str
    rho: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEME_IDS:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEME_IDS)}")
        if self.scheme == FIXED_OFFLOAD:
            if self.rho is None or not 0.0 <= self.rho <= 1.0:
                raise ValueError("FIXED_OFFLOAD needs an offload share rho in [0, 1]")
        elif self.rho is not None:
            raise ValueError(f"{self.scheme} takes no offload share")

    @property
    def name(self) -> str:
        if self.scheme == FIXED_OFFLOAD:
            return f"FIXED_OFFLOAD({round(100 * self.rho):d})"
        return self.scheme


_FIXED_RE = re.compile(r"^FIXED_OFFLOAD\(\s*([0-9.]+)\s*(%?)\s*\)$")


def parse_scheme(text: str) -> SchemeSpec:
    """``"FUAS"``, ``"fixed_offload(30)"``, ``"FIXED_OFFLOAD(0.3)"`` ...

    Inside the parentheses a value above 1 or a trailing ``%`` means percent.
    """
    t = text.strip().upper().replace("W/O_CLOUD", WO_CLOUD).replace("W/O CLOUD", WO_CLOUD)
    m = _FIXED_RE.match(t)
    if m:
        value = float(m.group(1))
        if m.group(2) or value > 1.0:
            value /= 100.0
        return SchemeSpec(FIXED_OFFLOAD, value)
    return SchemeSpec(t)


def default_schemes() -> list[SchemeSpec]:
    out = [SchemeSpec(s) for s in (PROPOSED, FUAS, RUAS, NEEC, WO_CLOUD, EB)]
    return out + [SchemeSpec(FIXED_OFFLOAD, r) for r in FIXED_RATES]


@dataclass
class SchemeSetup:
    """What a scheme pins for one long-term frame."""

    lsp_pins: dict | None
    phi_pin: np.ndarray | None
    bw_pin: np.ndarray | None


def strongest_association(gains) -> np.ndarray:
    gains = np.asarray(gains, dtype=float)
    out = np.zeros_like(gains)
    out[np.arange(gains.shape[0]), np.argmax(gains, axis=1)] = 1.0
    return out


def random_association(rng: np.random.Generator, M: int, K: int) -> np.ndarray:
    out = np.zeros((M, K))
    out[np.arange(M), rng.integers(0, K, size=M)] = 1.0
    return out


def apply_scheme(spec: SchemeSpec, scenario: Scenario, frame: int) -> SchemeSetup:
    """Pins for ``spec`` at a long-term frame.

    Association draws for RUAS come from the scenario's scheme substream keyed
    by frame, so they are reproducible and only change when re-placement runs.
    """
    cfg = scenario.config
    M, K = cfg.num_ues, cfg.num_ess
    pins: dict = {}
    phi_pin = bw_pin = None
    if spec.scheme == FUAS:
        pins["assoc"] = strongest_association(scenario.channel(frame, 0).gain)
    elif spec.scheme == RUAS:
        pins["assoc"] = random_association(substream(cfg.rng_seed, "schemes", frame), M, K)
    elif spec.scheme == NEEC:
        pins["edge_edge"] = np.zeros((M, K, K))
    elif spec.scheme == WO_CLOUD:
        pins["edge_cloud"] = np.zeros((M, K))
    elif spec.scheme == EB:
        bw_pin = np.full(M, 1.0 / M)
    elif spec.scheme == FIXED_OFFLOAD:
        phi_pin = np.full(M, 1.0 - spec.rho)
    return SchemeSetup(pins or None, phi_pin, bw_pin)


@dataclass
class ComparisonRow:
    scheme: str
    seed: int
    metric: str
    value: float


def trial_metrics(trace) -> dict[str, float]:
    """Per-run summary used by the comparison tables."""
    rows = trace.slots
    if not rows:
        return {k: math.nan for k in METRICS}
    return {
        "objective": float(np.mean([r.objective for r in rows])),
        "latency_total": float(np.mean([r.latency.sum() for r in rows])),
        "cost_total": float(np.mean(trace.frame_costs)) if trace.frame_costs else math.nan,
        "offload_fraction": float(np.mean([np.mean(1.0 - r.phi) for r in rows])),
        "feasible_rate": float(np.mean([r.feasible for r in rows])),
        "triggers": float(trace.trigger_count),
    }


def run_comparison(
    config: ScenarioConfig,
    schemes,
    seeds,
    frames: int | None = None,
    slots: int | None = None,
    **run_kwargs,
) -> list[ComparisonRow]:
    """Run every scheme on every seed; rows are ordered scheme-major then seed.

    All schemes of one seed share the scenario, hence the same channel, task
    and request realizations.
    """
    from .orchestrator import run

    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    specs = [s if isinstance(s, SchemeSpec) else parse_scheme(s) for s in schemes]
    out: list[ComparisonRow] = []
    for spec in specs:
        for seed in seeds:
            scenario = Scenario(config.replace(rng_seed=int(seed)))
            trace = run(scenario, spec, frames=frames, slots=slots, **run_kwargs)
            for metric, value in trial_metrics(trace).items():
                out.append(ComparisonRow(spec.name, int(seed), metric, value))
    return out


def summarize(rows) -> dict[str, dict[str, float]]:
    """Mean of every metric per scheme, ignoring NaN trials."""
    acc: dict[str, dict[str, list]] = {}
    for r in rows:
        acc.setdefault(r.scheme, {}).setdefault(r.metric, []).append(r.value)
    return {
        s: {m: float(np.nanmean(v)) if np.any(np.isfinite(v)) else math.nan for m, v in ms.items()}
        for s, ms in acc.items()
    }
