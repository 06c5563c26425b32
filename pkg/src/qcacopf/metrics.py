"""Evaluation protocol: demand scenarios, gaps, distances, and statistics.

Scenarios scale each bus's active and reactive demand by one multiplier drawn
from a normal distribution with mean 1 and standard deviation 0.1. Sampling
uses the Philox 4x64 counter-based generator keyed by the user seed; scenario
``i`` consumes row ``i`` of a row-major ``(n_scenarios, n_bus)`` draw, so a
scenario file is reproducible from ``(seed, n, bus order)`` alone.

The quality measures follow the evaluation recipe: optimality gap as the
relative cost difference between a projected feasible dispatch and a local AC
reference, distance to feasibility as the RMSE between a model dispatch and
its projection, per-family correlation/error statistics with ECDF curves, and
runtime performance profiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .acmodel import LiftedState
from .netparse import Network

__all__ = [
    "Scenario",
    "sample_scenarios",
    "optimality_gap",
    "distance_to_feasibility",
    "variable_statistics",
    "FamilyStats",
    "performance_profile",
    "EvalReport",
]

_SIGMA = 0.1


@dataclass(frozen=True)
class Scenario:
    """One demand sample: per-bus multiplier applied to both P and Q."""

    index: int
    seed: int
    scale: np.ndarray
    pd: np.ndarray  # p.u.
    qd: np.ndarray  # p.u.

    def apply(self, net: Network) -> Network:
        return net.with_loads(self.pd, self.qd)


def sample_scenarios(net: Network, n: int, seed: int, sigma: float = _SIGMA) -> list[Scenario]:
    """Draw ``n`` demand scenarios; deterministic given ``seed``.

    Negative multipliers (ten standard deviations out) are clipped at zero.
    """
    if n < 1:
        raise ValueError("need at least one scenario")
    rng = np.random.Generator(np.random.Philox(key=seed))
    scale = rng.normal(1.0, sigma, size=(n, net.n_bus)) if sigma > 0 else np.ones((n, net.n_bus))
    scale = np.clip(scale, 0.0, None)
    pd0 = np.array([b.Pd for b in net.buses])
    qd0 = np.array([b.Qd for b in net.buses])
    return [
        Scenario(index=i, seed=seed, scale=scale[i], pd=scale[i] * pd0, qd=scale[i] * qd0)
        for i in range(n)
    ]


def optimality_gap(cost_projected: float, cost_ref: float) -> float:
    """Relative cost gap in percent against the reference solution."""
    if cost_ref <= 0:
        raise ValueError(f"reference cost must be positive, got {cost_ref}")
    return 100.0 * abs(cost_projected - cost_ref) / cost_ref


def distance_to_feasibility(target, projected) -> float:
    """RMSE between a model dispatch and its feasible projection (p.u.)."""
    target = np.asarray(target, float)
    projected = np.asarray(projected, float)
    if target.shape != projected.shape:
        raise ValueError("dispatch vectors must have equal length")
    return float(np.sqrt(np.mean((projected - target) ** 2)))


@dataclass
class FamilyStats:
    corr: float | None  # None marks an undefined (zero-variance) correlation
    mean_err: float
    max_err: float
    ecdf: tuple[np.ndarray, np.ndarray]  # sorted |error|, cumulative fraction


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return None
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def _ecdf(err: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    err = np.sort(np.abs(err))
    frac = np.arange(1, len(err) + 1) / len(err)
    return err, frac


def variable_statistics(
    ref_states: list[LiftedState], approx_states: list[LiftedState]
) -> dict[str, FamilyStats]:
    """Pooled per-family correlation, errors, and ECDF curves.

    Families: voltage magnitude (p.u.), voltage angle (rad, recovered through
    atan2), active and reactive generation (p.u.).
    """
    if len(ref_states) != len(approx_states):
        raise ValueError("state lists must be matched")
    pools: dict[str, tuple[list, list]] = {k: ([], []) for k in ("vm", "angle", "p", "q")}
    for ref, approx in zip(ref_states, approx_states):
        pools["vm"][0].append(np.hypot(ref.v_re, ref.v_im))
        pools["vm"][1].append(np.hypot(approx.v_re, approx.v_im))
        pools["angle"][0].append(np.arctan2(ref.v_im, ref.v_re))
        pools["angle"][1].append(np.arctan2(approx.v_im, approx.v_re))
        pools["p"][0].append(ref.p_g)
        pools["p"][1].append(approx.p_g)
        pools["q"][0].append(ref.q_g)
        pools["q"][1].append(approx.q_g)
    out = {}
    for fam, (rs, aps) in pools.items():
        r = np.concatenate(rs)
        a = np.concatenate(aps)
        err = a - r
        out[fam] = FamilyStats(
            corr=_pearson(r, a),
            mean_err=float(np.mean(np.abs(err))),
            max_err=float(np.max(np.abs(err), initial=0.0)),
            ecdf=_ecdf(err),
        )
    return out


def performance_profile(
    runtimes: dict[str, list[float]], tau_max: float | None = None, n_tau: int = 64
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Fraction of instances each model solves within factor tau of the best.

    Returns per-model ``(tau grid, fraction)`` curves on a shared geometric
    grid from 1 to the largest observed ratio.
    """
    models = sorted(runtimes)
    if not models:
        raise ValueError("need at least one model")
    times = np.array([runtimes[m] for m in models], float)
    if times.ndim != 2 or times.shape[1] < 1:
        raise ValueError("need at least one instance per model")
    best = times.min(axis=0)
    ratios = times / best
    top = tau_max or max(1.0, float(ratios.max()))
    taus = np.geomspace(1.0, max(top, 1.0 + 1e-12), n_tau)
    out = {}
    for k, m in enumerate(models):
        frac = (ratios[k][None, :] <= taus[:, None] * (1 + 1e-12)).mean(axis=1)
        out[m] = (taus, frac)
    return out


@dataclass
class EvalReport:
    """Gap/distance/runtime rows per model and scenario, plus aggregates."""

    models: list[str]
    rows: list[dict] = field(default_factory=list)  # scenario, model, gap_pct, distance_pu, ...

    def add(self, scenario: int, model: str, gap_pct: float, distance_pu: float,
            cost_projected: float, cost_ref: float, solve_s: float, project_s: float) -> None:
        if gap_pct < 0 or distance_pu < 0:
            raise ValueError("gap and distance are nonnegative")
        self.rows.append(
            {
                "scenario": scenario,
                "model": model,
                "gap_pct": gap_pct,
                "distance_pu": distance_pu,
                "cost_projected": cost_projected,
                "cost_ref": cost_ref,
                "solve_s": solve_s,
                "project_s": project_s,
            }
        )

    def aggregate(self) -> dict:
        """Mean and median per model over successful scenarios."""
        out: dict = {}
        for model in self.models:
            rows = [r for r in self.rows if r["model"] == model]
            if not rows:
                out[model] = {"count": 0}
                continue
            gaps = np.array([r["gap_pct"] for r in rows])
            dists = np.array([r["distance_pu"] for r in rows])
            out[model] = {
                "count": len(rows),
                "gap_pct_mean": float(gaps.mean()),
                "gap_pct_median": float(np.median(gaps)),
                "distance_pu_mean": float(dists.mean()),
                "distance_pu_median": float(np.median(dists)),
            }
        return out

    def to_csv(self) -> str:
        header = "scenario,model,gap_pct,distance_pu,cost_projected,cost_ref"
        lines = [header]
        for r in sorted(self.rows, key=lambda r: (r["scenario"], r["model"])):
            lines.append(
                f'{r["scenario"]},{r["model"]},{r["gap_pct"]!r},{r["distance_pu"]!r},'
                f'{r["cost_projected"]!r},{r["cost_ref"]!r}'
            )
        return "\n".join(lines) + "\n"

    def runtimes_csv(self) -> str:
        header = "scenario,model,solve_s,project_s"
        lines = [header]
        for r in sorted(self.rows, key=lambda r: (r["scenario"], r["model"])):
            lines.append(f'{r["scenario"]},{r["model"]},{r["solve_s"]:.6f},{r["project_s"]:.6f}')
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        return json.dumps({"models": self.models, "aggregate": self.aggregate()}, indent=1)
