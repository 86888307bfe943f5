"""Receive combiners and transmit-power solutions.

Everything the position optimizers treat as an objective lives here:
ZF combining with its closed-form minimum powers, MMSE combining with
the SINR-balancing linear system, the single-user MRC special case, and
feasibility checks for the balanced power system.

Batched variants (``*_batch``) evaluate many channel matrices at once;
they exist purely for speed on the optimizer hot path and are verified
against the single-instance routines in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Relative singular-value threshold below which H is treated as column
#: rank deficient.
RANK_TOL = 1e-10

INFEASIBLE_TOTAL = np.inf


class RankDeficientError(ValueError):
    """Channel matrix is not of full column rank at the requested point."""

    def __init__(self, smallest: float, largest: float):
        self.smallest = smallest
        self.largest = largest
        super().__init__(
            f"channel matrix rank deficient: sigma_min={smallest:.3e}, "
            f"sigma_max={largest:.3e} (tol {RANK_TOL:g} relative)"
        )


@dataclass(frozen=True)
class PowerSolution:
    """Per-user transmit powers meeting the SINR targets (if feasible)."""

    powers: np.ndarray  # (K,) watts
    total: float
    feasible: bool

    @classmethod
    def infeasible(cls, k: int):
        return cls(np.full(k, np.nan), INFEASIBLE_TOTAL, False)


@dataclass(frozen=True)
class CombinerSolution:
    combiner: np.ndarray  # (N, K)
    power: PowerSolution
    sinr: np.ndarray  # (K,) achieved SINRs
    trace: np.ndarray | None = None  # per-iteration totals when iterative


def sinr(W: np.ndarray, H: np.ndarray, p: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-user receive SINR for combiner W, channel H, and powers p."""
    W = np.asarray(W)
    H = np.asarray(H)
    p = np.asarray(p, float)
    cross = np.abs(W.conj().T @ H) ** 2  # (K, K), [k, q] = |w_k^H h_q|^2
    signal = np.diag(cross) * p
    interference = cross @ p - signal
    noise = np.sum(np.abs(W) ** 2, axis=0) * sigma2
    return signal / (interference + noise)


def _check_rank(H: np.ndarray) -> None:
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] < RANK_TOL * sv[0]:
        raise RankDeficientError(sv[-1], sv[0])


def zf_combiner(H: np.ndarray) -> np.ndarray:
    """Zero-forcing combiner W = H (H^H H)^-1; satisfies W^H H = I.

    Computed from the reduced QR factorization (W = Q R^-H) rather than
    the normal equations, which keeps the nulling residual at the level
    of cond(H) instead of cond(H)^2.
    """
    _check_rank(H)
    Q, R = np.linalg.qr(H)
    return np.linalg.solve(R, Q.conj().T).conj().T


def zf_powers(H: np.ndarray, eta: np.ndarray, sigma2: float) -> PowerSolution:
    """Minimum per-user powers under ZF combining (always feasible)."""
    W = zf_combiner(H)
    p = np.sum(np.abs(W) ** 2, axis=0) * np.asarray(eta, float) * sigma2
    return PowerSolution(p, float(np.sum(p)), True)


def zf_total_power(H: np.ndarray, eta: np.ndarray, sigma2: float) -> float:
    """Total ZF transmit power tr{(H^H H)^-1 Omega}, Omega = diag(eta*sigma2)."""
    _check_rank(H)
    gram = H.conj().T @ H
    inv_diag = np.diagonal(np.linalg.inv(gram)).real
    return float(np.sum(inv_diag * np.asarray(eta, float) * sigma2))


def mmse_combiner(H: np.ndarray, p: np.ndarray, sigma2: float) -> np.ndarray:
    """MMSE combiner (H P H^H + sigma2 I)^-1 H for powers p (diagonal P)."""
    H = np.asarray(H)
    p = np.asarray(p, float)
    n = H.shape[0]
    M = (H * p) @ H.conj().T + sigma2 * np.eye(n)
    return np.linalg.solve(M, H)


def mmse_coefficients(
    H: np.ndarray, p: np.ndarray, sigma2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Coupling matrix A and noise vector b of the MMSE SINR expression.

    A[k, q] = |h_k^H M^-1 h_q|^2 and b[k] = ||M^-1 h_k||^2 * sigma2 with
    M = H P H^H + sigma2 I.  With these, the SINR of user k under MMSE
    combining is A[k,k] p_k / (sum_{q != k} A[k,q] p_q + b[k]).
    """
    X = mmse_combiner(H, p, sigma2)
    A = np.abs(H.conj().T @ X) ** 2
    b = np.sum(np.abs(X) ** 2, axis=0) * sigma2
    return A, b


def solve_power_balance(
    A: np.ndarray, b: np.ndarray, eta: np.ndarray
) -> PowerSolution:
    """Powers making every user's SINR exactly equal to its target.

    Solves (D - Psi) p = b with D = diag(A_kk / eta_k) and Psi the
    off-diagonal part of A.  Infeasible (singular system or any negative
    power) returns the +inf total sentinel.
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    eta = np.asarray(eta, float)
    k = A.shape[0]
    M = -A + np.diag(np.diag(A) + np.diag(A) / eta)
    try:
        p = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        return PowerSolution.infeasible(k)
    if not np.all(np.isfinite(p)) or np.any(p < -1e-15 * np.max(np.abs(p))):
        return PowerSolution.infeasible(k)
    p = np.maximum(p, 0.0)
    return PowerSolution(p, float(np.sum(p)), True)


def power_feasible(A: np.ndarray, eta: np.ndarray) -> bool:
    """Whether the balanced power system admits a non-negative solution.

    Standard Perron-Frobenius condition: the spectral radius of
    D^-1 Psi must be below one.
    """
    A = np.asarray(A, float)
    eta = np.asarray(eta, float)
    d = np.diag(A) / eta
    psi = A - np.diag(np.diag(A))
    radius = np.max(np.abs(np.linalg.eigvals(psi / d[:, None])))
    return bool(radius < 1.0)


def min_power_fixed_point(
    H: np.ndarray,
    eta: np.ndarray,
    sigma2: float,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> CombinerSolution:
    """Alternate MMSE combining and power balancing until convergence.

    Starts from the ZF powers and iterates W <- MMSE(H, p), p <- balance
    solution, stopping when the total-power decrement falls below
    ``tol``.  The total is non-increasing across iterations.
    """
    eta = np.asarray(eta, float)
    start = zf_powers(H, eta, sigma2)
    p = start.powers
    p_combiner = p  # powers the returned combiner is built from
    trace = [start.total]
    for _ in range(max_iter):
        A, b = mmse_coefficients(H, p, sigma2)
        sol = solve_power_balance(A, b, eta)
        if not sol.feasible:
            return CombinerSolution(
                mmse_combiner(H, p, sigma2), sol, np.full(len(eta), np.nan)
            )
        p_combiner = p
        p = sol.powers
        trace.append(sol.total)
        if trace[-2] - trace[-1] < tol:
            break
    # The combiner from the pre-update powers attains the targets exactly
    # with the post-update powers (they solve the balance system for it).
    W = mmse_combiner(H, p_combiner, sigma2)
    power = PowerSolution(p, float(np.sum(p)), True)
    return CombinerSolution(W, power, sinr(W, H, p, sigma2), np.asarray(trace))


def mrc_power(h: np.ndarray, eta: float, sigma2: float) -> PowerSolution:
    """Single-user minimum power eta*sigma2/||h||^2 under MRC."""
    gain = float(np.vdot(h, h).real)
    if gain <= 0.0:
        return PowerSolution.infeasible(1)
    p = eta * sigma2 / gain
    return PowerSolution(np.array([p]), p, True)


# ---------------------------------------------------------------------------
# Batched evaluators (optimizer hot path).


def zf_total_power_batch(
    H_batch: np.ndarray, eta: np.ndarray, sigma2: float
) -> np.ndarray:
    """Total ZF power for a batch of channel matrices, shape (B,).

    Rank-deficient members get +inf instead of raising, so line-search
    candidates falling on degenerate points are naturally rejected.
    """
    eta = np.asarray(eta, float)
    gram = np.einsum("bnk,bnq->bkq", H_batch.conj(), H_batch)
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        totals = np.empty(H_batch.shape[0])
        for i in range(H_batch.shape[0]):
            try:
                totals[i] = np.sum(
                    np.diagonal(np.linalg.inv(gram[i])).real * eta * sigma2
                )
            except np.linalg.LinAlgError:
                totals[i] = np.inf
        return totals
    diag = np.diagonal(inv, axis1=1, axis2=2).real
    totals = diag @ (eta * sigma2)
    totals[~np.isfinite(totals) | (totals < 0)] = np.inf
    return totals


def mmse_balance_batch(
    H_batch: np.ndarray, p: np.ndarray, eta: np.ndarray, sigma2: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Balanced-power totals for a batch of channels at fixed MMSE powers p.

    Returns (totals, spectral_ok, powers): totals carry the +inf sentinel
    where the balance system is singular or yields negative powers;
    spectral_ok flags members passing the spectral-radius feasibility
    condition.
    """
    eta = np.asarray(eta, float)
    p = np.asarray(p, float)
    B, n, k = H_batch.shape
    M = np.einsum("bnk,k,bmk->bnm", H_batch, p, H_batch.conj())
    M += sigma2 * np.eye(n)
    X = np.linalg.solve(M, H_batch)  # (B, N, K)
    A = np.abs(np.einsum("bnk,bnq->bkq", H_batch.conj(), X)) ** 2
    b = np.einsum("bnk,bnk->bk", X, X.conj()).real * sigma2

    d = np.einsum("bkk->bk", A) / eta  # (B, K)
    diag_idx = np.arange(k)
    psi = A.copy()
    psi[:, diag_idx, diag_idx] = 0.0

    radii = np.max(np.abs(np.linalg.eigvals(psi / d[:, :, None])), axis=1)
    spectral_ok = radii < 1.0

    system = -psi
    system[:, diag_idx, diag_idx] = d
    totals = np.full(B, np.inf)
    powers = np.full((B, k), np.nan)
    try:
        sols = np.linalg.solve(system, b[..., None])[..., 0]
        good = np.all(np.isfinite(sols), axis=1) & np.all(
            sols >= -1e-15 * np.max(np.abs(sols), axis=1, keepdims=True), axis=1
        )
    except np.linalg.LinAlgError:
        sols = np.full((B, k), np.nan)
        good = np.zeros(B, bool)
        for i in range(B):
            sol = solve_power_balance(A[i], b[i], eta)
            if sol.feasible:
                sols[i] = sol.powers
                good[i] = True
    powers[good] = np.maximum(sols[good], 0.0)
    totals[good] = np.sum(powers[good], axis=1)
    return totals, spectral_ok, powers
