"""Monte Carlo harness: scheme matrix, paired trials, and sweeps.

Each trial draws one random scenario that every requested scheme sees
unchanged, so scheme comparisons are paired.  Per-trial random streams
are derived from (master seed, sweep value index, trial index), making
results independent of execution order and safe to parallelize.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import combining
from .channel import (
    Scenario,
    ScenarioConfig,
    channel_matrix,
    perturb_fri,
    sample_scenario,
)
from .optimizer import (
    DescentConfig,
    InfeasibleScenarioError,
    OptimizeResult,
    maximize_channel_power,
    optimize_mmse,
    optimize_zf,
)

POSITIONINGS = ("FPA", "MCP", "MA")
COMBININGS = ("ZF", "MMSE")

SWEEP_PARAMETERS = (
    "rate",
    "users",
    "paths",
    "aoa_pool",
    "region",
    "aod_error",
    "prm_error",
)

#: How many times a degenerate/infeasible scenario draw is replaced with
#: a fresh one before the trial is declared failed.
MAX_RESAMPLES = 50


@dataclass(frozen=True)
class SchemeId:
    """One cell of the scheme matrix: positioning x combining."""

    positioning: str  # FPA | MCP | MA
    combining: str  # ZF | MMSE

    def __post_init__(self):
        if self.positioning not in POSITIONINGS or self.combining not in COMBININGS:
            raise ValueError(f"unknown scheme {self.positioning}-{self.combining}")

    def __str__(self):
        return f"{self.positioning}-{self.combining}"

    @classmethod
    def parse(cls, label: str) -> "SchemeId":
        pos, _, comb = label.partition("-")
        return cls(pos.upper(), comb.upper())


ALL_SCHEMES = tuple(
    SchemeId(p, c) for p in POSITIONINGS for c in COMBININGS
)


@dataclass(frozen=True)
class TrialResult:
    scheme: SchemeId
    total_power_w: float
    converged: bool
    iterations: int
    trace: np.ndarray | None = None
    signal_db_trace: np.ndarray | None = None
    interference_db_trace: np.ndarray | None = None


@dataclass(frozen=True)
class SweepSpec:
    """One sweep axis: parameter name, values, and the trial protocol."""

    parameter: str
    values: tuple
    base: ScenarioConfig
    trials: int
    schemes: tuple[SchemeId, ...]
    seed: int

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values or self.trials < 1:
            raise ValueError("values must be non-empty and trials >= 1")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "schemes", tuple(self.schemes))


def apply_sweep_value(
    base: ScenarioConfig, parameter: str, value
) -> tuple[ScenarioConfig, tuple[float, float] | None]:
    """Resolve one sweep point into (scenario config, FRI error levels)."""
    if parameter == "rate":
        return replace(base, rate_bps_hz=float(value)), None
    if parameter == "users":
        return replace(base, num_users=int(value)), None
    if parameter == "paths":
        return replace(base, num_paths=int(value)), None
    if parameter == "aoa_pool":
        return replace(base, aoa_pool_size=int(value)), None
    if parameter == "region":
        return replace(base, region_size_wavelengths=float(value)), None
    if parameter == "aod_error":
        return base, (float(value), 0.0)
    if parameter == "prm_error":
        return base, (0.0, float(value))
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def trial_rng(seed: int, value_index: int, trial_index: int, resample: int = 0):
    """Counter-derived random stream; order-independent across trials."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(value_index, trial_index, resample))
    )


def _scenario_usable(s: Scenario, need_mmse: bool) -> bool:
    """Full column rank at the origin, plus a feasible MMSE starting point."""
    H = channel_matrix(s, np.zeros(3 * s.num_users))
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] < combining.RANK_TOL * sv[0]:
        return False
    if need_mmse:
        sol = combining.min_power_fixed_point(H, s.snr_targets, s.noise_power)
        if not sol.power.feasible:
            return False
    return True


def sample_usable_scenario(
    cfg: ScenarioConfig,
    seed: int,
    value_index: int,
    trial_index: int,
    need_mmse: bool = True,
) -> tuple[Scenario, int]:
    """Draw a scenario, resampling degenerate realizations.

    Returns (scenario, resample_count).  Raises after MAX_RESAMPLES
    consecutive degenerate draws.
    """
    for resample in range(MAX_RESAMPLES + 1):
        s = sample_scenario(cfg, trial_rng(seed, value_index, trial_index, resample))
        if _scenario_usable(s, need_mmse):
            return s, resample
    raise InfeasibleScenarioError(
        f"no usable scenario after {MAX_RESAMPLES} resamples"
    )


def _evaluate_positions(
    s: Scenario, upos: np.ndarray, comb: str
) -> combining.CombinerSolution:
    """Combiner and minimum powers on the true channels at fixed positions."""
    H = channel_matrix(s, upos)
    if comb == "ZF":
        power = combining.zf_powers(H, s.snr_targets, s.noise_power)
        W = combining.zf_combiner(H)
        return combining.CombinerSolution(
            W, power, combining.sinr(W, H, power.powers, s.noise_power)
        )
    return combining.min_power_fixed_point(H, s.snr_targets, s.noise_power)


def _mcp_positions(s: Scenario, cfg: DescentConfig) -> np.ndarray:
    return np.concatenate([maximize_channel_power(u, cfg)[0] for u in s.users])


def run_trial(
    s: Scenario,
    scheme: SchemeId,
    cfg: DescentConfig | None = None,
    fri_error: tuple[float, float] | None = None,
    rng: np.random.Generator | None = None,
    record_trace: bool = False,
    mcp_uses_estimated_fri: bool = False,
) -> TrialResult:
    """Run one scheme on one scenario.

    With ``fri_error=(mu, nu)`` the MA position optimization runs on a
    perturbed copy of the scenario while the combiner and powers are
    recomputed on the true channels at the chosen positions.
    """
    cfg = cfg or DescentConfig()
    estimated = s
    if fri_error is not None and fri_error != (0.0, 0.0):
        if rng is None:
            raise ValueError("fri_error requires an rng for the perturbation draw")
        estimated = perturb_fri(s, fri_error[0], fri_error[1], rng)

    try:
        if scheme.positioning == "FPA":
            upos = np.zeros(3 * s.num_users)
            result = None
        elif scheme.positioning == "MCP":
            source = estimated if mcp_uses_estimated_fri else s
            upos = _mcp_positions(source, cfg)
            result = None
        else:
            optimize = optimize_zf if scheme.combining == "ZF" else optimize_mmse
            result = optimize(estimated, cfg)
            upos = result.positions.coords

        solution = _evaluate_positions(s, upos, scheme.combining)
    except (combining.RankDeficientError, InfeasibleScenarioError):
        return TrialResult(scheme, math.nan, False, 0)
    if not solution.power.feasible:
        return TrialResult(scheme, math.nan, False, 0)

    iterations = result.iterations if result is not None else 0
    trace = None
    sig = None
    intf = None
    if record_trace:
        if result is not None and estimated is s:
            trace = result.trace
            sig = result.signal_db_trace
            intf = result.interference_db_trace
        else:
            trace = np.asarray([solution.power.total])
    return TrialResult(
        scheme,
        solution.power.total,
        True,
        iterations,
        trace=trace,
        signal_db_trace=sig,
        interference_db_trace=intf,
    )


def run_paired_trial(
    spec: SweepSpec,
    value_index: int,
    trial_index: int,
    cfg: DescentConfig,
    record_trace: bool = False,
) -> tuple[dict[SchemeId, TrialResult], int]:
    """All requested schemes on the shared scenario of one trial slot."""
    scenario_cfg, fri = apply_sweep_value(
        spec.base, spec.parameter, spec.values[value_index]
    )
    need_mmse = any(sc.combining == "MMSE" for sc in spec.schemes)
    s, resamples = sample_usable_scenario(
        scenario_cfg, spec.seed, value_index, trial_index, need_mmse
    )
    rng = trial_rng(spec.seed, value_index, trial_index, MAX_RESAMPLES + 1)
    results = {
        scheme: run_trial(
            s, scheme, cfg, fri_error=fri, rng=rng, record_trace=record_trace
        )
        for scheme in spec.schemes
    }
    return results, resamples


def aggregate(results: list[TrialResult]) -> tuple[float, int, int]:
    """(mean dBm, converged count, failure count) over one result cell.

    The mean is taken in linear watts and converted once; an empty
    converged set yields a NaN sentinel.
    """
    totals = [r.total_power_w for r in results if r.converged]
    failures = len(results) - len(totals)
    if not totals:
        return math.nan, 0, failures
    mean_w = float(np.mean(totals))
    return watts_to_dbm(mean_w), len(totals), failures


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1000.0)


@dataclass(frozen=True)
class SweepRow:
    sweep_param: str
    sweep_value: float
    scheme: SchemeId
    trials: int
    failures: int
    mean_power_dbm: float
    mean_power_w: float


def _sweep_cell(args):
    spec, value_index, trial_index, cfg = args
    return value_index, trial_index, run_paired_trial(spec, value_index, trial_index, cfg)


def run_sweep(
    spec: SweepSpec,
    cfg: DescentConfig | None = None,
    jobs: int = 1,
    progress=None,
    collect_raw: bool = False,
):
    """Run a full sweep; returns aggregated rows (and raw results on request).

    Rows are ordered by (value, scheme) regardless of execution order.
    ``progress`` is called with (done, total) after each trial.
    """
    cfg = cfg or DescentConfig()
    tasks = [
        (spec, vi, ti, cfg)
        for vi in range(len(spec.values))
        for ti in range(spec.trials)
    ]
    raw: dict[tuple[int, SchemeId], list] = {
        (vi, scheme): [None] * spec.trials
        for vi in range(len(spec.values))
        for scheme in spec.schemes
    }
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = pool.map(_sweep_cell, tasks, chunksize=1)
            for done, (vi, ti, (results, _)) in enumerate(outcomes, 1):
                for scheme, res in results.items():
                    raw[(vi, scheme)][ti] = res
                if progress:
                    progress(done, len(tasks))
    else:
        for done, task in enumerate(tasks, 1):
            vi, ti, (results, _) = _sweep_cell(task)
            for scheme, res in results.items():
                raw[(vi, scheme)][ti] = res
            if progress:
                progress(done, len(tasks))

    rows = []
    for vi, value in enumerate(spec.values):
        for scheme in spec.schemes:
            results = raw[(vi, scheme)]
            mean_dbm, count, failures = aggregate(results)
            mean_w = float(np.mean([r.total_power_w for r in results if r.converged])) if count else math.nan
            rows.append(
                SweepRow(
                    sweep_param=spec.parameter,
                    sweep_value=float(value),
                    scheme=scheme,
                    trials=spec.trials,
                    failures=failures,
                    mean_power_dbm=mean_dbm,
                    mean_power_w=mean_w,
                )
            )
    if collect_raw:
        return rows, raw
    return rows


def run_convergence_study(
    base: ScenarioConfig,
    cfg: DescentConfig,
    trials: int,
    seed: int,
    jobs: int = 1,
    progress=None,
) -> dict[str, np.ndarray]:
    """Per-iteration mean traces of both MA algorithms.

    Traces shorter than the longest one are padded with their final
    value; totals are averaged in linear watts per iteration index.
    The MMSE signal/interference mixes (normalized by noise) are averaged
    in their linear ratios.
    """
    spec = SweepSpec(
        parameter="rate",
        values=(base.rate_bps_hz,),
        base=base,
        trials=trials,
        schemes=(SchemeId("MA", "ZF"), SchemeId("MA", "MMSE")),
        seed=seed,
    )
    zf_traces = []
    mmse_traces = []
    sig_traces = []
    intf_traces = []
    for ti in range(trials):
        results, _ = run_paired_trial(spec, 0, ti, cfg, record_trace=True)
        zf_traces.append(results[SchemeId("MA", "ZF")].trace)
        mmse_res = results[SchemeId("MA", "MMSE")]
        mmse_traces.append(mmse_res.trace)
        sig_traces.append(10.0 ** (mmse_res.signal_db_trace / 10.0))
        intf_traces.append(10.0 ** (mmse_res.interference_db_trace / 10.0))
        if progress:
            progress(ti + 1, trials)

    def padded_mean(traces):
        width = max(len(t) for t in traces)
        stack = np.stack(
            [np.concatenate([t, np.full(width - len(t), t[-1])]) for t in traces]
        )
        return np.mean(stack, axis=0)

    return {
        "zf_total_w": padded_mean(zf_traces),
        "mmse_total_w": padded_mean(mmse_traces),
        "mmse_signal": padded_mean(sig_traces),
        "mmse_interference": padded_mean(intf_traces),
    }
