"""Consensus verdicts, initial-condition checks and Lyapunov diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedDepthError
from .graph import SccDecomposition, condense
from .nonlinearity import OutputFunction, antiderivative, lipschitz_bound
from .sim import SimulationRecord, _apply_outputs, _per_agent, min_inter_event

__all__ = [
    "DEFAULT_CONSENSUS_TOL",
    "DISSIPATION_TOL",
    "ConditionReport",
    "ConsensusVerdict",
    "LyapunovSeries",
    "weighted_initial_average",
    "weighted_average_series",
    "check_conditions",
    "lyapunov_V",
    "lyapunov_W",
    "detect_T1",
    "nonincreasing",
    "conservation_residual",
    "threshold_excess",
    "verdict",
    "summarize",
]

DEFAULT_CONSENSUS_TOL = 5e-2
DISSIPATION_TOL = 1e-6


def _as_states(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def weighted_initial_average(dec: SccDecomposition, x0) -> np.ndarray:
    """``xi``-weighted average over the closed component (the whole graph when ``M = 1``)."""
    x = _as_states(x0)
    closed = dec.closed
    return closed.xi @ x[list(closed.agents)]


def weighted_average_series(dec: SccDecomposition, states) -> np.ndarray:
    """Same average for a stack of states shaped ``(S, n, p)``."""
    closed = dec.closed
    return np.einsum("k,skl->sl", closed.xi, np.asarray(states)[:, list(closed.agents), :])


@dataclass(frozen=True)
class ConditionReport:
    value: np.ndarray
    h: float
    strict: bool
    sufficient: bool
    necessary: bool | None


def _band(f) -> tuple[float, bool]:
    fs = f if isinstance(f, OutputFunction) else None
    if fs is not None:
        return fs.h_min, fs.flat_outside
    fs = tuple(f)
    return min(g.h_min for g in fs), all(g.flat_outside for g in fs)


def check_conditions(dec: SccDecomposition, f, x0) -> ConditionReport:
    """Initial-condition checks on the weighted average.

    The sufficient test is ``|value_l| <= h`` for strongly connected graphs
    and ``|value_l| < h`` otherwise.  The necessary test ``|value_l| <= h``
    is only reported for saturation-like outputs.
    """
    value = weighted_initial_average(dec, x0)
    h, flat = _band(f)
    strict = dec.M > 1
    mag = np.abs(value)
    sufficient = bool(np.all(mag < h) if strict else np.all(mag <= h))
    necessary = bool(np.all(mag <= h)) if flat else None
    return ConditionReport(value, h, strict, sufficient, necessary)


def _block_V(dec, outputs, x, reference, m) -> float:
    block = dec.blocks[m]
    total = 0.0
    for w, a in zip(block.xi, block.agents):
        f = outputs[a]
        total += w * sum(antiderivative(f, l, reference[l], x[a, l]) for l in range(f.p))
    return total


def lyapunov_V(dec: SccDecomposition, f, x, reference, block: int | None = None) -> float:
    """``sum_i xi_i sum_l int_{ref_l}^{x_il} (g_l(s) - g_l(ref_l)) ds``.

    With ``block=None`` the graph must be strongly connected; otherwise the
    sum runs over component ``block`` with its own ``xi``.
    """
    xs = _as_states(x)
    ref = np.atleast_1d(np.asarray(reference, dtype=float))
    if block is None:
        if dec.M != 1:
            raise ValueError("pass block= for graphs with more than one component")
        block = 0
    return _block_V(dec, _per_agent(f, dec.n), xs, ref, block)


@dataclass
class LyapunovSeries:
    times: np.ndarray
    V: np.ndarray | None = None
    W: np.ndarray | None = None
    V1: np.ndarray | None = None
    V2: np.ndarray | None = None
    Wr: np.ndarray | None = None
    mu: np.ndarray | None = None
    q: np.ndarray | None = None
    T1: float | None = None
    T1_index: int | None = None
    constants: dict = field(default_factory=dict)

    def columns(self) -> dict:
        if self.W is not None:
            return {"t": self.times, "V": self.V, "W": self.W}
        return {"t": self.times, "V1": self.V1, "V2": self.V2, "Wr": self.Wr}


def _pairwise_q(adjacency, g) -> np.ndarray:
    # q_i = 1/2 sum_j a_ij ||g(x_j) - g(x_i)||^2, for every sample
    diff = g[:, None, :, :] - g[:, :, None, :]
    return 0.5 * np.einsum("ij,sij->si", adjacency, np.sum(diff**2, axis=-1))


def detect_T1(dec: SccDecomposition, record: SimulationRecord, h: float):
    """First sample after which every closed-component state stays inside ``(-h, h)``."""
    xs = record.sample_x[:, list(dec.closed.agents), :]
    inside = np.all(np.abs(xs) < h, axis=(1, 2))
    if not inside[-1]:
        return None, None
    outside = np.flatnonzero(~inside)
    k = int(outside[-1]) + 1 if outside.size else 0
    return float(record.sample_times[k]), k


def lyapunov_W(dec: SccDecomposition, f, record: SimulationRecord, scenario=None) -> LyapunovSeries:
    """Sampled Lyapunov candidates for a completed run.

    One component gives ``V`` and ``W``.  Two components give ``V1``, ``V2``
    and ``Wr`` with the coupling constants ``d1``, ``d2`` and ``K_v``.
    """
    scenario = scenario or record.scenario
    if dec.M > 2:
        raise UnsupportedDepthError(f"Lyapunov diagnostics support at most two components, got {dec.M}")
    outputs = _per_agent(f, dec.n)
    times = record.sample_times
    X = record.sample_x
    alpha, beta = scenario.alpha, scenario.beta
    L = dec.laplacian.entries
    ref = weighted_initial_average(dec, scenario.x0)
    G = np.stack([_apply_outputs(outputs, x) for x in X])

    if dec.M == 1:
        block = dec.blocks[0]
        V = np.array([_block_V(dec, outputs, x, ref, 0) for x in X])
        tail = np.zeros_like(times)
        for w, a in zip(block.xi, block.agents):
            tail += 2.0 * w * L[a, a] * alpha[a] / beta[a] * np.exp(-beta[a] * times)
        q = _pairwise_q(dec.laplacian.adjacency, G)
        return LyapunovSeries(times, V=V, W=V + tail, q=q, constants={"reference": ref.tolist()})

    b1, b2 = dec.blocks
    n1, n2 = b1.size, b2.size
    L11 = dec.block_matrix(0, 0)
    L12 = dec.block_matrix(0, 1)
    rho_Q1 = float(np.max(np.abs(np.linalg.eigvalsh(b1.Q))))
    d1 = np.sum((b1.xi[:, None] * L11) ** 2, axis=0) / rho_Q1
    d2 = np.sum((b1.xi[:, None] * L12) ** 2, axis=0) / rho_Q1
    h, _ = _band(f)
    radius = h if math.isfinite(h) else max(1.0, float(np.max(np.abs(X))))
    K_S2 = max(lipschitz_bound(g, radius) for g in {id(g): g for g in outputs}.values())
    varrho = min(min(g.varrho) for g in outputs)
    rho2_Q2, rho_U2 = dec.rho2_Q_last, dec.rho_U_last
    if n2 == 1 or rho2_Q2 <= 0:
        # a single closed agent never moves, so V2 is identically zero
        K_v = 0.0
    else:
        K_v = (2 * n2 * K_S2**2 * float(np.max(d2)) / float(np.min(b2.xi)) + 1.0) * (
            2 * rho_U2 / (varrho**2 * rho2_Q2)
        )

    V1 = np.array([_block_V(dec, outputs, x, ref, 0) for x in X])
    V2 = np.array([_block_V(dec, outputs, x, ref, 1) for x in X])
    tail = np.zeros_like(times)
    for dj, a in zip(d1, b1.agents):
        tail += 3 * n1 * dj * alpha[a] / beta[a] * np.exp(-beta[a] * times)
    for k, a in enumerate(b2.agents):
        decay = alpha[a] / beta[a] * np.exp(-beta[a] * times)
        tail += 3 * n2 * d2[k] * decay + K_v * b2.xi[k] * L[a, a] * decay
    Wr = V1 + K_v * V2 + tail
    g2 = G[:, list(b2.agents), :]
    mu = 0.5 * np.einsum("k,sk->s", b2.xi, np.sum((g2 - ref) ** 2, axis=-1))
    q = _pairwise_q(dec.laplacian.adjacency, G)
    T1, T1_index = detect_T1(dec, record, h)
    constants = {
        "reference": ref.tolist(),
        "K_v": K_v,
        "d1": d1.tolist(),
        "d2": d2.tolist(),
        "rho_Q1": rho_Q1,
        "rho2_Q2": rho2_Q2,
        "rho_U2": rho_U2,
        "K_S2": K_S2,
        "varrho": varrho,
    }
    return LyapunovSeries(times, V1=V1, V2=V2, Wr=Wr, mu=mu, q=q, T1=T1, T1_index=T1_index, constants=constants)


def nonincreasing(series, tol: float = DISSIPATION_TOL, start: int = 0):
    """``(ok, worst_step_increase, index)`` for a sampled series from ``start`` on."""
    s = np.asarray(series[start:], dtype=float)
    if s.size < 2:
        return True, 0.0, None
    steps = np.diff(s)
    k = int(np.argmax(steps))
    worst = float(steps[k])
    return worst <= tol, worst, start + k + 1


def conservation_residual(record: SimulationRecord, dec: SccDecomposition | None = None) -> np.ndarray:
    """``|nu(t) - nu(0)| / (1 + |nu(0)|)`` per sample and component."""
    dec = dec or condense(record.scenario.graph)
    nu0 = weighted_initial_average(dec, record.scenario.x0)
    nu = weighted_average_series(dec, record.sample_x)
    return np.abs(nu - nu0) / (1.0 + np.abs(nu0))


def threshold_excess(record: SimulationRecord) -> np.ndarray:
    """``||e_i(t)||^2 - alpha_i exp(-beta_i t)`` per sample and agent (no floor)."""
    sc = record.scenario
    e2 = np.sum(record.sample_errors**2, axis=-1)
    thr = sc.alpha[None, :] * np.exp(-np.outer(record.sample_times, sc.beta))
    return e2 - thr


@dataclass(frozen=True)
class ConsensusVerdict:
    achieved: bool
    consensus_value: np.ndarray
    terminal_spread: float
    sufficient_condition_holds: bool
    necessary_condition_holds: bool | None
    epsilon: float

    def as_dict(self) -> dict:
        return {
            "achieved": self.achieved,
            "consensus_value": [float(v) for v in self.consensus_value],
            "terminal_spread": self.terminal_spread,
            "sufficient_condition_holds": self.sufficient_condition_holds,
            "necessary_condition_holds": self.necessary_condition_holds,
            "epsilon_consensus": self.epsilon,
        }


def verdict(record: SimulationRecord, dec: SccDecomposition | None = None, epsilon: float = DEFAULT_CONSENSUS_TOL):
    sc = record.scenario
    dec = dec or condense(sc.graph)
    cond = check_conditions(dec, sc.outputs, sc.x0)
    spread = float(np.max(np.abs(record.final_x - cond.value[None, :])))
    return ConsensusVerdict(
        achieved=spread <= epsilon,
        consensus_value=cond.value,
        terminal_spread=spread,
        sufficient_condition_holds=cond.sufficient,
        necessary_condition_holds=cond.necessary,
        epsilon=epsilon,
    )


def summarize(record: SimulationRecord, dec: SccDecomposition | None = None, epsilon: float = DEFAULT_CONSENSUS_TOL) -> dict:
    """Flat, JSON-ready summary of a run."""
    sc = record.scenario
    dec = dec or condense(sc.graph)
    v = verdict(record, dec, epsilon)
    gaps = min_inter_event(record)
    out = {
        "name": sc.name,
        "n": sc.n,
        "p": sc.p,
        "horizon": sc.horizon,
        "stride": sc.stride,
        "threshold_floor": sc.threshold_floor,
        "components": dec.M,
        "event_counts": record.event_counts,
        "total_events": int(sum(record.event_counts)),
        "min_inter_event": gaps,
        "conservation_residual": float(np.max(conservation_residual(record, dec))),
        "max_threshold_excess": float(np.max(threshold_excess(record))),
        "agents_without_further_events": [i + 1 for i in record.silent_agents],
        "verdict": v.as_dict(),
    }
    return out
