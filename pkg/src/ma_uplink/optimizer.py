"""Projected gradient descent for movable-antenna positioning.

Three position optimizers share the same machinery: descent on the ZF
total-power objective, alternating descent/power updates on the MMSE
balanced-power objective, and per-user gradient ascent on the channel
power (which also provides the greedy max-channel-power baseline).

Gradients of the combining objectives are one-sided finite differences;
the channel-power objective has a closed-form gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import combining
from .channel import (
    Scenario,
    UserChannel,
    channel_matrix_batch,
    channel_power_quadratic,
    channel_vector,
    transmit_frv,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DescentConfig:
    """Gradient-descent controls shared by all three optimizers.

    ``fd_delta=None`` resolves to 1e-5 wavelengths at use, keeping the
    probe well inside the linear regime of the phase terms.
    """

    t_max: int = 200
    tau0: float = 10.0
    kappa: float = 0.5
    xi: float = 0.6
    epsilon: float = 1e-6
    fd_delta: float | None = None
    i_max: int = 60
    inner_tol: float = 1e-6
    inner_max_iter: int = 500

    def __post_init__(self):
        if self.tau0 <= 0 or not 0 < self.kappa < 1 or not 0 < self.xi < 1:
            raise ValueError("need tau0 > 0 and kappa, xi in (0, 1)")
        if self.epsilon <= 0 or (self.fd_delta is not None and self.fd_delta <= 0):
            raise ValueError("epsilon and fd_delta must be positive")

    def resolve_fd_delta(self, wavelength: float) -> float:
        return self.fd_delta if self.fd_delta is not None else wavelength * 1e-5


@dataclass(frozen=True)
class PositionVector:
    """Stacked 3K antenna-position vector with per-coordinate box bounds."""

    coords: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, float))
        object.__setattr__(self, "lower", np.asarray(self.lower, float))
        object.__setattr__(self, "upper", np.asarray(self.upper, float))

    @classmethod
    def origin(cls, s: Scenario):
        lower, upper = s.position_bounds
        return cls(np.zeros(lower.shape), lower, upper)


def project_box(pv: PositionVector) -> PositionVector:
    """Clamp every coordinate to its [lower, upper] interval."""
    return replace(pv, coords=np.clip(pv.coords, pv.lower, pv.upper))


@dataclass(frozen=True)
class OptimizeResult:
    positions: PositionVector
    combiner: np.ndarray
    powers: np.ndarray
    total_power: float
    trace: np.ndarray  # per-iteration objective totals, non-increasing
    iterations: int
    converged: bool
    signal_db_trace: np.ndarray | None = None
    interference_db_trace: np.ndarray | None = None


def finite_diff_gradient(objective, upos, delta, batch_eval=None):
    """Forward-difference gradient of a scalar objective of the 3K vector.

    If the forward probe is infeasible (infinite objective) that
    component falls back to a backward difference; if both sides are
    infeasible the component is set to zero.  ``batch_eval`` may be
    supplied to evaluate all probes in one vectorized call; it must
    return the same values as ``objective``.
    """
    upos = np.asarray(upos, float)
    n = upos.size
    f0 = objective(upos)
    probes = upos + delta * np.eye(n)
    if batch_eval is not None:
        fwd = np.asarray(batch_eval(probes))
    else:
        fwd = np.array([objective(q) for q in probes])
    grad = (fwd - f0) / delta
    bad = ~np.isfinite(fwd)
    if np.any(bad):
        back_probes = upos - delta * np.eye(n)[bad]
        if batch_eval is not None:
            bwd = np.asarray(batch_eval(back_probes))
        else:
            bwd = np.array([objective(q) for q in back_probes])
        grad[bad] = np.where(np.isfinite(bwd), (f0 - bwd) / delta, 0.0)
    return grad


def backtrack_step(
    objective,
    pv: PositionVector,
    grad: np.ndarray,
    cfg: DescentConfig,
    extra_ok=None,
    f0: float | None = None,
    batch_eval=None,
):
    """One projected gradient step with Armijo backtracking.

    Starting from tau0, the candidate project(x - tau*grad) is accepted
    once f(candidate) <= f(x) - xi*tau*||grad||^2 and ``extra_ok`` holds;
    tau shrinks by kappa otherwise.  Exhausting i_max shrinks returns the
    unchanged point with ``accepted=False``.

    Returns (new_position, f_new, tau, accepted).
    """
    if f0 is None:
        f0 = objective(pv.coords)
    gnorm2 = float(grad @ grad)
    taus = cfg.tau0 * cfg.kappa ** np.arange(cfg.i_max + 1)
    candidates = np.clip(
        pv.coords[None, :] - taus[:, None] * grad[None, :], pv.lower, pv.upper
    )
    if batch_eval is not None:
        values, ok = batch_eval(candidates)
        values = np.asarray(values, float)
        ok = np.ones(len(taus), bool) if ok is None else np.asarray(ok, bool)
        acceptable = (values <= f0 - cfg.xi * taus * gnorm2) & ok
        hits = np.flatnonzero(acceptable)
        if hits.size:
            i = hits[0]
            new = replace(pv, coords=candidates[i])
            return new, float(values[i]), float(taus[i]), True
        return pv, f0, 0.0, False
    for tau, cand in zip(taus, candidates):
        value = objective(cand)
        if value <= f0 - cfg.xi * tau * gnorm2 and (
            extra_ok is None or extra_ok(cand)
        ):
            return replace(pv, coords=cand), float(value), float(tau), True
    return pv, f0, 0.0, False


def optimize_zf(s: Scenario, cfg: DescentConfig | None = None) -> OptimizeResult:
    """Minimize the total ZF transmit power over the antenna positions.

    Starts every antenna at its local origin and runs projected gradient
    descent with backtracking on tr{(H^H H)^-1 Omega}; terminates when
    the per-iteration decrement drops below epsilon, the line search
    fails, or t_max is reached.
    """
    cfg = cfg or DescentConfig()
    eta = s.snr_targets
    sigma2 = s.noise_power
    delta = cfg.resolve_fd_delta(s.array.wavelength)

    def batch(upos_batch):
        return combining.zf_total_power_batch(
            channel_matrix_batch(s, upos_batch), eta, sigma2
        )

    def objective(upos):
        return float(batch(upos.reshape(1, -1))[0])

    def ls_batch(upos_batch):
        return batch(upos_batch), None

    pv = PositionVector.origin(s)
    # Raises with the conditioning diagnostic if H(0) is rank deficient.
    f = combining.zf_total_power(
        channel_matrix_batch(s, pv.coords.reshape(1, -1))[0], eta, sigma2
    )
    trace = [f]
    converged = False
    iterations = 0
    for _ in range(cfg.t_max):
        grad = finite_diff_gradient(objective, pv.coords, delta, batch_eval=batch)
        pv, f_new, _, accepted = backtrack_step(
            objective, pv, grad, cfg, f0=f, batch_eval=ls_batch
        )
        if not accepted:
            converged = True
            break
        iterations += 1
        trace.append(f_new)
        decrement = f - f_new
        f = f_new
        if decrement < cfg.epsilon:
            converged = True
            break

    H = channel_matrix_batch(s, pv.coords.reshape(1, -1))[0]
    W = combining.zf_combiner(H)
    power = combining.zf_powers(H, eta, sigma2)
    # report the trace-form objective so total_power and trace agree
    # bit-for-bit (the per-user power sum matches it only to ~1e-10)
    return OptimizeResult(
        positions=pv,
        combiner=W,
        powers=power.powers,
        total_power=float(trace[-1]),
        trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
    )


class InfeasibleScenarioError(RuntimeError):
    """No feasible power allocation exists for the scenario."""


def optimize_mmse(s: Scenario, cfg: DescentConfig | None = None) -> OptimizeResult:
    """Minimize total power with MMSE combining by alternating position
    descent and power updates.

    The powers are initialized by the combining/power fixed point at the
    origin; each outer iteration descends the balanced-power objective at
    fixed P (the line search additionally requires the spectral-radius
    feasibility of each candidate), then refreshes P from the newly
    solved powers.  A final fixed-point pass at the converged positions
    polishes (W, p) so the achieved SINRs meet the targets exactly.
    """
    cfg = cfg or DescentConfig()
    eta = s.snr_targets
    sigma2 = s.noise_power
    delta = cfg.resolve_fd_delta(s.array.wavelength)

    start = combining.min_power_fixed_point(
        channel_matrix_batch(s, np.zeros((1, 3 * s.num_users)))[0],
        eta,
        sigma2,
        tol=cfg.inner_tol,
        max_iter=cfg.inner_max_iter,
    )
    if not start.power.feasible:
        raise InfeasibleScenarioError("initial MMSE power balancing infeasible")

    pv = PositionVector.origin(s)
    p = start.power.powers
    f = start.power.total
    trace = [f]
    sig_trace = []
    intf_trace = []

    def balance_batch(upos_batch):
        # Balanced totals with the combiner powers fixed at the current p.
        return combining.mmse_balance_batch(
            channel_matrix_batch(s, upos_batch), p, eta, sigma2
        )

    def batch(upos_batch):
        return balance_batch(upos_batch)[0]

    def objective(upos):
        return float(batch(upos.reshape(1, -1))[0])

    def ls_batch(upos_batch):
        totals, spectral_ok, _ = balance_batch(upos_batch)
        return totals, spectral_ok

    def record_mix(powers):
        A, b = combining.mmse_coefficients(
            channel_matrix_batch(s, pv.coords.reshape(1, -1))[0], p, sigma2
        )
        signal = np.diag(A) * powers / b
        interference = (A @ powers - np.diag(A) * powers) / b
        sig_trace.append(10.0 * np.log10(np.mean(signal)))
        intf_trace.append(10.0 * np.log10(np.mean(interference)))

    record_mix(p)

    converged = False
    iterations = 0
    for _ in range(cfg.t_max):
        grad = finite_diff_gradient(objective, pv.coords, delta, batch_eval=batch)
        pv, _, _, accepted = backtrack_step(
            objective, pv, grad, cfg, f0=f, batch_eval=ls_batch
        )
        if not accepted:
            converged = True
            break
        iterations += 1
        # Powers solved at the accepted positions under the old P ...
        _, _, solved = balance_batch(pv.coords.reshape(1, -1))
        p = solved[0]
        # ... become the new P; the trace records the balanced total
        # under the refreshed P.
        totals, _, refreshed = balance_batch(pv.coords.reshape(1, -1))
        f_new = float(totals[0])
        trace.append(f_new)
        record_mix(refreshed[0])
        decrement = f - f_new
        f = f_new
        if abs(decrement) < cfg.epsilon:
            converged = True
            break

    final = combining.min_power_fixed_point(
        channel_matrix_batch(s, pv.coords.reshape(1, -1))[0],
        eta,
        sigma2,
        tol=cfg.inner_tol,
        max_iter=cfg.inner_max_iter,
    )
    if not final.power.feasible:
        raise InfeasibleScenarioError("MMSE power balancing infeasible at solution")
    if final.power.total < trace[-1]:
        trace.append(final.power.total)
        record_mix(final.power.powers)
    return OptimizeResult(
        positions=pv,
        combiner=final.combiner,
        powers=final.power.powers,
        total_power=float(min(final.power.total, trace[-1])),
        trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        signal_db_trace=np.asarray(sig_trace),
        interference_db_trace=np.asarray(intf_trace),
    )


def channel_power_gradient(u: UserChannel, pos) -> np.ndarray:
    """Closed-form gradient of ||h(pos)||^2 with respect to the position.

    Derived from the quadratic form g^H Q g: each (m, n) path pair
    contributes (a_m - a_n)|q_mn| sin((2*pi/lambda)(rho_n - rho_m) +
    angle(q_mn)) per coordinate.
    """
    Q = channel_power_quadratic(u)
    pos = np.asarray(pos, float)
    rho = u.tx_virtual @ pos  # (lt,)
    phase = (TWO_PI / u.wavelength) * (rho[None, :] - rho[:, None]) + np.angle(Q)
    weight = np.abs(Q) * np.sin(phase)  # (lt, lt)
    diff = u.tx_virtual[:, None, :] - u.tx_virtual[None, :, :]  # (m, n, 3)
    return (TWO_PI / u.wavelength) * np.einsum("mn,mnc->c", weight, diff)


def maximize_channel_power(
    u: UserChannel, cfg: DescentConfig | None = None
) -> tuple[np.ndarray, float]:
    """Per-user max-channel-power position via projected gradient ascent.

    Ascends ||h(pos)||^2 from the local origin using the closed-form
    gradient with Armijo backtracking; returns (position, power) with
    power >= the origin value.
    """
    cfg = cfg or DescentConfig()
    lower = u.region[:, 0]
    upper = u.region[:, 1]
    pos = np.zeros(3)

    def power_at(q):
        h = channel_vector(u, q)
        return float(np.vdot(h, h).real)

    f = power_at(pos)
    for _ in range(cfg.t_max):
        grad = channel_power_gradient(u, pos)
        gnorm2 = float(grad @ grad)
        tau = cfg.tau0
        accepted = False
        for _ in range(cfg.i_max + 1):
            cand = np.clip(pos + tau * grad, lower, upper)
            f_cand = power_at(cand)
            if f_cand >= f + cfg.xi * tau * gnorm2:
                pos = cand
                accepted = True
                break
            tau *= cfg.kappa
        if not accepted:
            break
        if f_cand - f < cfg.epsilon * f:  # relative: channel powers are tiny
            f = f_cand
            break
        f = f_cand
    return pos, f
