"""Battery-state Markov chain of a harvesting sensor.

The state is the number of stored energy units (0..K). Each slot the sensor
may drain a level- and state-dependent number of units and then banks a random
number of harvested units; both ends saturate, so the chain lives on a finite
ladder. Harvested energy is exponential and is banked in whole units, which
makes the per-slot unit arrival count geometric-like with its tail folded into
the capacity state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import BatteryDistribution

__all__ = [
    "ConvergenceError",
    "GainLevelProbs",
    "ArrivalUnitPmf",
    "ChainSpec",
    "quantize_gain",
    "gain_level_probs",
    "arrival_unit_pmf",
    "transmit_probability",
    "transition_matrix",
    "battery_transition",
    "stationary_oracle",
    "steady_state_psi",
]


class ConvergenceError(RuntimeError):
    """A fixed-point iteration failed to settle."""

    def __init__(self, message: str, iterations: int, residual: float, psis=None):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual
        self.psis = psis


@dataclass(frozen=True)
class GainLevelProbs:
    """Occupation probabilities of the channel-gain quantizer cells."""

    pi: np.ndarray
    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        arr = np.array(self.pi, dtype=float)
        if arr.ndim != 1 or arr.size != len(self.thresholds) - 1:
            raise ValueError("need one probability per quantizer cell")
        if not (np.all(arr >= 0.0) and abs(float(arr.sum()) - 1.0) <= 1e-12):
            raise ValueError("cell probabilities must be >= 0 and sum to 1 within 1e-12")
        arr.flags.writeable = False
        object.__setattr__(self, "pi", arr)
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))

    @property
    def level_count(self) -> int:
        return self.pi.size


@dataclass(frozen=True)
class ArrivalUnitPmf:
    """Distribution of whole energy units banked per slot, tail folded at K.

    pmf[0] is exactly 0: any positive harvest banks at least one unit.
    """

    pmf: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pmf, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("pmf must cover states 0..K with K >= 1")
        if arr[0] != 0.0:
            raise ValueError("pmf[0] must be exactly 0")
        if not (np.all(arr >= 0.0) and abs(float(arr.sum()) - 1.0) <= 1e-12):
            raise ValueError("pmf must be >= 0 and sum to 1 within 1e-12")
        arr.flags.writeable = False
        object.__setattr__(self, "pmf", arr)

    @property
    def capacity(self) -> int:
        return self.pmf.size - 1


@dataclass(frozen=True)
class ChainSpec:
    """Everything the chain of one sensor needs besides its unit map."""

    gain_probs: GainLevelProbs
    arrivals: ArrivalUnitPmf
    transmit_prob: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.transmit_prob <= 1.0:
            raise ValueError("transmit_prob must lie in [0, 1]")


def quantize_gain(gain: float, thresholds) -> int:
    """Quantizer cell index of a gain draw: the l with mu_l <= gain < mu_{l+1}."""
    idx = int(np.searchsorted(thresholds, gain, side="right")) - 1
    return max(0, min(idx, len(thresholds) - 2))


def gain_level_probs(mean_gain: float, thresholds) -> GainLevelProbs:
    """Cell probabilities of an exponential gain under the given edges.

    Pr(level l) = exp(-mu_l / mean_gain) - exp(-mu_{l+1} / mean_gain); the last
    cell reaches to infinity, where the survival function is zero.
    """
    if mean_gain <= 0.0:
        raise ValueError("mean_gain must be > 0")
    edges = np.asarray(thresholds, dtype=float)
    surv = np.exp(-edges / mean_gain)  # exp(-inf) == 0.0
    return GainLevelProbs(pi=surv[:-1] - surv[1:], thresholds=tuple(thresholds))


def arrival_unit_pmf(mean_harvest: float, unit_energy: float, capacity: int) -> ArrivalUnitPmf:
    """Pmf of ceil(E / unit_energy) for exponential E, folded at the capacity.

    Pr(j) = exp(-(j-1) r) - exp(-j r) with r = unit_energy / mean_harvest for
    1 <= j < K, and the entire tail Pr(>= K) = exp(-(K-1) r) sits at K.
    """
    if mean_harvest <= 0.0 or unit_energy <= 0.0:
        raise ValueError("mean_harvest and unit_energy must be > 0")
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    r = unit_energy / mean_harvest
    j = np.arange(1, capacity + 1, dtype=float)
    pmf = np.zeros(capacity + 1)
    pmf[1:] = np.exp(-(j - 1.0) * r) - np.exp(-j * r)
    pmf[capacity] = math.exp(-(capacity - 1) * r)
    return ArrivalUnitPmf(pmf=pmf)


def transmit_probability(network, sensor) -> float:
    """Chance the chain spends energy in a slot, under the configured model.

    ``prior`` charges the spend branch with the prior of the alternative;
    ``decision`` charges it with the unconditional probability the sensor
    votes 1, which is what the physical simulator actually does.
    """
    if network.transmit_prob_model == "prior":
        return network.prior_h1
    return network.prior_h0 * sensor.p_f + network.prior_h1 * sensor.p_d


def _shift_rows(pmf: np.ndarray) -> np.ndarray:
    """rows[s + K, j] = Pr(clip(s + beta, 0, K) = j) for net drift s in -K..K.

    beta is treated as the folded arrival law itself, so every row is a proper
    distribution no matter how aggressive the drain is.
    """
    K = pmf.size - 1
    head = np.cumsum(pmf)                      # head[m] = Pr(beta <= m)
    tail = np.cumsum(pmf[::-1])[::-1]          # tail[m] = Pr(beta >= m)
    rows = np.zeros((2 * K + 1, K + 1))
    js = np.arange(1, K)
    for s in range(-K, K + 1):
        row = rows[s + K]
        if -s >= 0:
            row[0] = head[min(-s, K)]
        idx = js - s
        ok = (idx >= 0) & (idx <= K)
        row[1:K][ok] = pmf[idx[ok]]
        m = K - s
        row[K] = 1.0 if m <= 0 else tail[min(m, K)]
    return rows


def transition_matrix(alpha, gain_probs: GainLevelProbs, arrivals: ArrivalUnitPmf,
                      transmit_prob: float) -> np.ndarray:
    """One-slot transition matrix of the battery ladder under a unit map.

    alpha[l, k] is the units drained when transmitting at level l from state
    k. The no-spend branch (weight 1 - transmit_prob) climbs by the arrivals
    alone; the spend branch mixes the level-conditional drains with the cell
    probabilities.
    """
    alpha = np.asarray(alpha, dtype=np.int64)
    K = arrivals.capacity
    L1 = gain_probs.level_count
    if alpha.shape != (L1, K + 1):
        raise ValueError(f"alpha must have shape ({L1}, {K + 1}), got {alpha.shape}")
    rows = _shift_rows(arrivals.pmf)
    ks = np.arange(K + 1)
    idle = rows[ks + K]
    idx = ks[None, :] - alpha + K
    spend = np.tensordot(gain_probs.pi, rows[idx], axes=(0, 0))
    return (1.0 - transmit_prob) * idle + transmit_prob * spend


def battery_transition(psi: BatteryDistribution, alpha, gain_probs: GainLevelProbs,
                       arrivals: ArrivalUnitPmf, transmit_prob: float) -> BatteryDistribution:
    """Push a battery distribution through one slot."""
    M = transition_matrix(alpha, gain_probs, arrivals, transmit_prob)
    return BatteryDistribution(psi=psi.psi @ M)


def stationary_oracle(alpha, gain_probs: GainLevelProbs, arrivals: ArrivalUnitPmf,
                      transmit_prob: float) -> BatteryDistribution:
    """Stationary distribution by direct linear solve.

    Solves psi (M - I) = 0 with the normalization row appended; falls back to
    power iteration when the system is singular or ill-conditioned (for
    instance a reducible ladder, where any distribution may be stationary).
    """
    M = transition_matrix(alpha, gain_probs, arrivals, transmit_prob)
    K = M.shape[0] - 1
    A = M.T - np.eye(K + 1)
    A[K, :] = 1.0
    b = np.zeros(K + 1)
    b[K] = 1.0
    psi = None
    try:
        cand = np.linalg.solve(A, b)
        if (np.all(np.isfinite(cand)) and np.all(cand >= -1e-10)
                and np.max(np.abs(cand @ M - cand)) <= 1e-10):
            psi = cand
    except np.linalg.LinAlgError:
        psi = None
    if psi is None:
        psi = np.full(K + 1, 1.0 / (K + 1))
        for _ in range(1_000_000):
            nxt = psi @ M
            if np.max(np.abs(nxt - psi)) <= 1e-15:
                psi = nxt
                break
            psi = nxt
    psi = np.maximum(psi, 0.0)
    psi /= psi.sum()
    return BatteryDistribution(psi=psi)


def steady_state_psi(chains, alpha_update, eps2: float = 1e-6,
                     max_iters: int = 100_000):
    """Alternate unit-map updates with chain steps until the batteries settle.

    chains is one ChainSpec per sensor; alpha_update maps the current list of
    BatteryDistribution to the list of per-sensor unit maps for this round.
    Starts from full batteries. Stops when the sup-norm change of every
    sensor's distribution falls to eps2 or below; raises ConvergenceError on
    the iteration cap or on an exact short cycle (period 2..4), which signals
    an oscillating update rather than slow mixing.

    Returns (distributions, iterations).
    """
    psis = []
    for chain in chains:
        K = chain.arrivals.capacity
        start = np.zeros(K + 1)
        start[K] = 1.0
        psis.append(BatteryDistribution(psi=start))

    history: list[np.ndarray] = []
    residual = math.inf
    for it in range(1, max_iters + 1):
        alphas = alpha_update(psis)
        nxt = [
            battery_transition(p, a, c.gain_probs, c.arrivals, c.transmit_prob)
            for p, a, c in zip(psis, alphas, chains)
        ]
        residual = max(
            float(np.max(np.abs(n.psi - p.psi))) for n, p in zip(nxt, psis)
        )
        if residual <= eps2:
            return nxt, it
        flat = np.concatenate([n.psi for n in nxt])
        for lag in (2, 3, 4):
            if len(history) >= lag and np.max(np.abs(flat - history[-lag])) < 1e-13:
                raise ConvergenceError(
                    f"update oscillates with period {lag}", it, residual, psis=nxt,
                )
        history.append(flat)
        if len(history) > 4:
            history.pop(0)
        psis = nxt
    raise ConvergenceError("iteration cap exceeded", max_iters, residual, psis=psis)
