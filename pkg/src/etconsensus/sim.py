"""Event-driven simulation of single integrators under the event-triggered protocol.

Between events every control input is constant, so each state moves on a
straight line and the only numerics are the searches for the next time an
agent's measurement error reaches its threshold.  Agent ``i`` triggers when

    ||g(xhat_i) - g(x_i(t))||^2  >=  alpha_i * exp(-beta_i * t) + floor

``floor`` defaults to ``DEFAULT_THRESHOLD_FLOOR``; set it to ``0.0`` for the
pure exponential threshold.  With the pure threshold, inter-event times shrink
geometrically whenever ``beta_i / 2`` exceeds the convergence rate of the
network, and the event budget guard fires long before moderate horizons.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import NumericError, ScenarioError, ZenoSuspected
from .graph import Connectivity, Laplacian, WeightedDigraph, build_laplacian, classify_connectivity
from .nonlinearity import OutputFunction, evaluate

__all__ = [
    "DEFAULT_STRIDE",
    "DEFAULT_THRESHOLD_FLOOR",
    "ROOT_TOL",
    "Scenario",
    "EngineState",
    "SimulationRecord",
    "control_input",
    "next_event_time",
    "run",
    "min_inter_event",
]

ROOT_TOL = 1e-10
DEFAULT_STRIDE = 1e-2
DEFAULT_THRESHOLD_FLOOR = 1e-9
DEFAULT_MAX_EVENTS = 10**6


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything a run needs.

    ``x0`` is ``(n, p)`` (a length-``n`` vector means ``p = 1``); ``alpha``
    and ``beta`` are per agent and broadcast from scalars.  ``output`` is one
    output function shared by all agents or a sequence with one per agent.
    """

    graph: WeightedDigraph
    output: OutputFunction | tuple
    x0: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    horizon: float
    stride: float = DEFAULT_STRIDE
    threshold_floor: float = DEFAULT_THRESHOLD_FLOOR
    name: str = ""

    def __post_init__(self):
        n = self.graph.n
        x0 = np.array(self.x0, dtype=float)
        if x0.ndim == 1:
            x0 = x0[:, None]
        if x0.ndim != 2 or x0.shape[0] != n:
            raise ScenarioError(f"x0 must have {n} rows, got shape {np.shape(self.x0)}", field="x0")
        if not np.all(np.isfinite(x0)):
            raise ScenarioError("x0 must be finite", field="x0")
        p = x0.shape[1]
        outputs = self.output
        if isinstance(outputs, OutputFunction):
            outputs = (outputs,) * n
        else:
            outputs = tuple(outputs)
            if len(outputs) != n:
                raise ScenarioError(f"need one output function per agent ({n}), got {len(outputs)}", field="output")
        for f in outputs:
            if f.p != p:
                raise ScenarioError(f"output dimension {f.p} does not match state dimension {p}", field="output")
        for name in ("alpha", "beta"):
            raw = np.asarray(getattr(self, name), dtype=float)
            try:
                vals = np.broadcast_to(raw, (n,)).copy()
            except ValueError:
                raise ScenarioError(f"{name} needs {n} entries, got shape {raw.shape}", field=name) from None
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                raise ScenarioError(f"{name} must be positive for every agent", field=name)
            vals.flags.writeable = False
            object.__setattr__(self, name, vals)
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ScenarioError("horizon must be positive and finite", field="horizon")
        if not (math.isfinite(self.stride) and self.stride > 0):
            raise ScenarioError("stride must be positive", field="stride")
        if not (math.isfinite(self.threshold_floor) and self.threshold_floor >= 0):
            raise ScenarioError("threshold_floor must be nonnegative", field="threshold_floor")
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "_outputs", outputs)
        object.__setattr__(self, "_laplacian", build_laplacian(self.graph))

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def p(self) -> int:
        return self.x0.shape[1]

    @property
    def outputs(self) -> tuple:
        return self._outputs

    @property
    def laplacian(self) -> Laplacian:
        return self._laplacian

    def threshold(self, i: int, t):
        return self.alpha[i] * np.exp(-self.beta[i] * np.asarray(t)) + self.threshold_floor

    def with_params(self, **changes) -> "Scenario":
        return replace(self, **changes)


def _per_agent(f, n):
    if isinstance(f, OutputFunction):
        return (f,) * n
    f = tuple(f)
    if len(f) != n:
        raise ValueError(f"need {n} output functions, got {len(f)}")
    return f


def _apply_outputs(outputs, x) -> np.ndarray:
    first = outputs[0]
    if all(f is first for f in outputs):
        return evaluate(first, x)
    return np.stack([evaluate(f, row) for f, row in zip(outputs, x)])


def _control_from_outputs(adjacency: np.ndarray, ghat: np.ndarray) -> np.ndarray:
    # u_i = sum_j a_ij (ghat_j - ghat_i): identical to -L ghat, and exactly
    # zero when every neighbour broadcasts the same output
    diff = ghat[None, :, :] - ghat[:, None, :]
    return np.einsum("ij,ijl->il", adjacency, diff)


def control_input(L, f, xhat) -> np.ndarray:
    """``u_i = -sum_j L_ij g(xhat_j)`` for all agents, shape ``(n, p)``."""
    lap = L.entries if isinstance(L, Laplacian) else np.asarray(L, dtype=float)
    xh = np.asarray(xhat, dtype=float)
    if xh.ndim == 1:
        xh = xh[:, None]
    n = lap.shape[0]
    if xh.shape[0] != n:
        raise ValueError(f"xhat has {xh.shape[0]} rows for {n} agents")
    adjacency = -lap.copy()
    np.fill_diagonal(adjacency, 0.0)
    ghat = _apply_outputs(_per_agent(f, n), xh)
    return _control_from_outputs(adjacency, ghat)


@dataclass
class EngineState:
    t: float
    x: np.ndarray
    xhat: np.ndarray
    ghat: np.ndarray
    u: np.ndarray
    event_log: list = field(default_factory=list)

    @classmethod
    def initial(cls, scenario: Scenario) -> "EngineState":
        """Every agent triggers at ``t = 0``, so ``xhat(0) = x(0)``."""
        x = scenario.x0.copy()
        ghat = _apply_outputs(scenario.outputs, x)
        adjacency = scenario.laplacian.adjacency
        u = _control_from_outputs(adjacency, ghat)
        return cls(0.0, x, x.copy(), ghat, u, [[0.0] for _ in range(scenario.n)])

    def error(self, outputs) -> np.ndarray:
        return self.ghat - _apply_outputs(outputs, self.x)


class _Crossing:
    """Squared measurement error of one agent along its current straight line."""

    __slots__ = ("t0", "x", "u", "gh", "comps", "h", "alpha", "beta", "floor", "p", "clamp")

    def __init__(self, state, scenario, i):
        f = scenario.outputs[i]
        self.t0 = state.t
        self.x = state.x[i].tolist()
        self.u = state.u[i].tolist()
        self.gh = state.ghat[i].tolist()
        self.comps = f.components
        self.alpha = float(scenario.alpha[i])
        self.beta = float(scenario.beta[i])
        self.floor = float(scenario.threshold_floor)
        self.p = len(self.x)
        # identity and saturation are clamps, evaluated inline with a known slope
        self.clamp = f.kind in ("identity", "saturation")
        self.h = f.h

    def sq(self, t):
        dt = t - self.t0
        if self.clamp:
            out = []
            for gh, h, x, u in zip(self.gh, self.h, self.x, self.u):
                v = x + dt * u
                if v > h:
                    v = h
                elif v < -h:
                    v = -h
                out.append((gh - v) * (gh - v))
            return out
        return [(gh - c(x + dt * u)) ** 2 for gh, c, x, u in zip(self.gh, self.comps, self.x, self.u)]

    def thr(self, t):
        return self.alpha * math.exp(-self.beta * t) + self.floor

    def phi(self, t):
        return sum(self.sq(t)) - self.thr(t)

    def phi_and_slope(self, t):
        """``phi(t)`` and its right derivative, for clamp outputs only."""
        dt = t - self.t0
        e2 = 0.0
        slope = 0.0
        for gh, h, x, u in zip(self.gh, self.h, self.x, self.u):
            v = x + dt * u
            if v > h or v == h and u >= 0:
                v = h
            elif v < -h or v == -h and u <= 0:
                v = -h
            else:
                slope -= 2.0 * (gh - v) * u
            e2 += (gh - v) * (gh - v)
        decay = self.alpha * math.exp(-self.beta * t)
        return e2 - decay - self.floor, slope + self.beta * decay

    def clear(self, a, ea, b, eb):
        # Each component of g(x_i(t)) is monotone in t on a straight line, so
        # |e_l| peaks at an interval endpoint and the threshold is smallest at b.
        return sum(max(p, q) for p, q in zip(ea, eb)) < self.thr(b)


def _search(c: _Crossing, lo, e_lo, t_max, step, tol):
    """First ``t`` in ``(lo, t_max]`` with ``phi(t) >= 0``, or ``None``."""
    while lo < t_max:
        b = min(lo + step, t_max)
        if b <= lo:
            break
        e_b = c.sq(b)
        if sum(e_b) >= c.thr(b):
            return _refine(c, lo, e_lo, b, tol)
        if c.clear(lo, e_lo, b, e_b):
            lo, e_lo = b, e_b
            step *= 2.0
        elif b - lo <= tol:
            lo, e_lo = b, e_b
        else:
            step = 0.5 * (b - lo)
    return None


def _refine(c: _Crossing, lo, e_lo, hi, tol):
    """Locate the first crossing in ``(lo, hi]`` given ``phi(lo) < 0 <= phi(hi)``."""
    if hi - lo <= tol:
        return hi
    if c.clamp:
        left, right = _newton_bracket(c, lo, sum(e_lo) - c.thr(lo), hi, tol)
        if c.phi(right) < 0:
            return _refine_bisect(c, lo, e_lo, hi, tol)
    else:
        try:
            r = optimize.brentq(c.phi, lo, hi, xtol=0.25 * tol, rtol=4 * np.finfo(float).eps)
        except ValueError as exc:
            raise NumericError(f"root bracketing failed on [{lo!r}, {hi!r}]", interval=(lo, hi)) from exc
        right = min(hi, r + 0.5 * tol)
        if c.phi(right) < 0:
            right = hi
        left = max(lo, right - tol)
    e_left = c.sq(left)
    if sum(e_left) >= c.thr(left):
        return _refine_bisect(c, lo, e_lo, left, tol)
    if not c.clear(lo, e_lo, left, e_left):
        earlier = _search(c, lo, e_lo, left, 0.5 * (left - lo), tol)
        if earlier is not None:
            return earlier
    return right


def _newton_bracket(c: _Crossing, a, fa, b, tol):
    """Shrink ``phi(a) = fa < 0 <= phi(b)`` to width ``tol`` by Newton steps, bisecting when they stray."""
    fb = c.phi(b)
    x = a + (b - a) * (-fa / (fb - fa)) if fb > fa else 0.5 * (a + b)
    if not a < x < b:
        x = 0.5 * (a + b)
    fx, dfx = c.phi_and_slope(x)
    if fx < 0:
        a = x
    else:
        b = x
    for _ in range(200):
        if b - a <= tol:
            break
        step_ok = dfx > 0
        if step_ok:
            nx = x - fx / dfx
            step_ok = a < nx < b
        if not step_ok:
            nx = 0.5 * (a + b)
        fn, dfn = c.phi_and_slope(nx)
        if fn < 0:
            a = nx
        else:
            b = nx
        if abs(nx - x) <= 0.25 * tol:
            # converged: pin the root from both sides
            probe = nx - 0.5 * tol if fn >= 0 else nx + 0.5 * tol
            if a < probe < b:
                if c.phi(probe) < 0:
                    a = probe
                else:
                    b = probe
        x, fx, dfx = nx, fn, dfn
    else:
        raise NumericError(f"root refinement stalled on [{a!r}, {b!r}]", interval=(a, b))
    return a, b


def _refine_bisect(c: _Crossing, lo, e_lo, hi, tol):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        e_mid = c.sq(mid)
        if sum(e_mid) >= c.thr(mid):
            hi = mid
        elif c.clear(lo, e_lo, mid, e_mid):
            lo, e_lo = mid, e_mid
        else:
            earlier = _search(c, lo, e_lo, mid, 0.5 * (mid - lo), tol)
            if earlier is not None:
                return earlier
            lo, e_lo = mid, e_mid
    return hi


def next_event_time(state: EngineState, scenario: Scenario, i: int, t_max: float, tol: float = ROOT_TOL):
    """Earliest ``t`` in ``(state.t, t_max]`` at which agent ``i`` triggers.

    Assumes every state keeps its current velocity ``state.u``.  Returns
    ``state.t`` if the threshold is already violated and ``None`` if it holds
    throughout.  The returned time has ``phi >= 0`` and lies within ``tol`` of
    the first root.
    """
    c = _Crossing(state, scenario, i)
    t0 = state.t
    if t_max <= t0:
        return None
    e0 = c.sq(t0)
    if sum(e0) >= c.thr(t0):
        return t0
    speed = math.sqrt(sum(v * v for v in c.u))
    span = t_max - t0
    if speed > 0:
        step = min(span, max(tol, math.sqrt(c.thr(t0)) / speed))
    else:
        step = span
    return _search(c, t0, e0, t_max, step, tol)


@dataclass(frozen=True, eq=False)
class SimulationRecord:
    """Result of :func:`run`.

    Segment ``k`` covers ``[seg_t0[k], seg_t1[k]]`` during which
    ``x(t) = seg_x0[k] + (t - seg_t0[k]) * seg_u[k]`` and the broadcast
    outputs are ``seg_ghat[k]``.  ``events[i]`` holds agent ``i``'s
    triggering times (starting at 0).
    """

    scenario: Scenario
    seg_t0: np.ndarray
    seg_t1: np.ndarray
    seg_x0: np.ndarray
    seg_u: np.ndarray
    seg_ghat: np.ndarray
    events: tuple
    event_times: np.ndarray
    event_x: np.ndarray
    sample_times: np.ndarray
    sample_x: np.ndarray
    sample_ghat: np.ndarray
    final_x: np.ndarray
    silent_agents: tuple = ()
    summary: dict = field(default_factory=dict)

    @property
    def event_counts(self) -> list[int]:
        return [len(ev) for ev in self.events]

    @property
    def sample_errors(self) -> np.ndarray:
        g = np.stack([_apply_outputs(self.scenario.outputs, x) for x in self.sample_x])
        return self.sample_ghat - g

    def state_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.seg_t0, t, side="right")) - 1
        k = min(max(k, 0), len(self.seg_t0) - 1)
        return self.seg_x0[k] + (t - self.seg_t0[k]) * self.seg_u[k]

    def with_summary(self, **entries) -> "SimulationRecord":
        merged = dict(self.summary)
        merged.update(entries)
        return replace(self, summary=merged)


def _sample_grid(horizon, stride):
    count = int(math.floor(horizon / stride + 1e-9))
    grid = np.arange(count + 1) * stride
    if horizon - grid[-1] > 1e-12 * max(1.0, horizon):
        grid = np.append(grid, horizon)
    return grid


def run(
    scenario: Scenario,
    max_events_per_agent: int = DEFAULT_MAX_EVENTS,
    root_tol: float = ROOT_TOL,
) -> SimulationRecord:
    """Simulate on ``[0, scenario.horizon]``.

    Agents whose crossing times agree to within ``root_tol`` trigger in one
    batch, after which every affected control input is recomputed.
    """
    n, p = scenario.n, scenario.p
    T = float(scenario.horizon)
    outputs = scenario.outputs
    adjacency = scenario.laplacian.adjacency
    if classify_connectivity(scenario.graph) is Connectivity.NEITHER:
        warnings.warn("graph has no directed spanning tree; consensus is not expected", RuntimeWarning)
    receivers = [sorted(set(scenario.graph.out_neighbors(i).tolist()) | {i}) for i in range(n)]

    state = EngineState.initial(scenario)
    counts = [1] * n
    pred = [next_event_time(state, scenario, i, T, root_tol) for i in range(n)]

    samples = _sample_grid(T, scenario.stride)
    S = samples.size
    sample_x = np.empty((S, n, p))
    sample_ghat = np.empty((S, n, p))
    s_idx = 0

    seg_t0, seg_t1, seg_x0, seg_u, seg_ghat = [], [], [], [], []
    event_times, event_x = [0.0], [state.x.copy()]

    while True:
        pending = [v for v in pred if v is not None]
        t_next = min(min(pending), T) if pending else T
        t = state.t
        while s_idx < S and samples[s_idx] < t_next:
            sample_x[s_idx] = state.x + (samples[s_idx] - t) * state.u
            sample_ghat[s_idx] = state.ghat
            s_idx += 1
        if t_next > t or not seg_t0:
            seg_t0.append(t)
            seg_t1.append(t_next)
            seg_x0.append(state.x.copy())
            seg_u.append(state.u.copy())
            seg_ghat.append(state.ghat.copy())
        state.x = state.x + (t_next - t) * state.u
        state.t = t_next

        batch = [i for i, v in enumerate(pred) if v is not None and v <= t_next + root_tol]
        if batch:
            fired = set()
            while batch:
                for i in batch:
                    state.xhat[i] = state.x[i]
                    state.ghat[i] = evaluate(outputs[i], state.x[i])
                    state.event_log[i].append(t_next)
                    counts[i] += 1
                    fired.add(i)
                    if counts[i] > max_events_per_agent:
                        _raise_zeno(i, state.event_log[i], t_next)
                state.u = _control_from_outputs(adjacency, state.ghat)
                affected = sorted({j for i in batch for j in receivers[i]})
                batch = []
                for j in affected:
                    pred[j] = next_event_time(state, scenario, j, T, root_tol)
                    if pred[j] is not None and pred[j] <= t_next + root_tol and j not in fired:
                        batch.append(j)
                    elif pred[j] is not None and pred[j] <= t_next:
                        raise NumericError(
                            f"agent {j + 1} violates its threshold immediately after triggering at t={t_next!r}",
                            interval=(t_next, t_next),
                        )
            event_times.append(t_next)
            event_x.append(state.x.copy())
        if t_next >= T:
            break

    while s_idx < S:
        sample_x[s_idx] = state.x + (samples[s_idx] - state.t) * state.u
        sample_ghat[s_idx] = state.ghat
        s_idx += 1

    silent = tuple(i for i in range(n) if pred[i] is None)
    events = tuple(np.array(ev) for ev in state.event_log)
    return SimulationRecord(
        scenario=scenario,
        seg_t0=np.array(seg_t0),
        seg_t1=np.array(seg_t1),
        seg_x0=np.array(seg_x0),
        seg_u=np.array(seg_u),
        seg_ghat=np.array(seg_ghat),
        events=events,
        event_times=np.array(event_times),
        event_x=np.array(event_x),
        sample_times=samples,
        sample_x=sample_x,
        sample_ghat=sample_ghat,
        final_x=state.x.copy(),
        silent_agents=silent,
    )


def _raise_zeno(i, log, t):
    tail = np.diff(np.asarray(log[-11:]))
    stats = {
        "agent": i + 1,
        "events": len(log),
        "time": t,
        "recent_intervals": tail.tolist(),
        "min_recent_interval": float(tail.min()) if tail.size else None,
    }
    raise ZenoSuspected(
        f"agent {i + 1} logged {len(log)} events by t={t:.6g}; recent intervals down to "
        f"{stats['min_recent_interval']!r}",
        stats,
    )


def min_inter_event(record: SimulationRecord) -> list:
    """Per agent smallest gap between consecutive triggers (``None`` if one event)."""
    out = []
    for ev in record.events:
        out.append(float(np.min(np.diff(ev))) if len(ev) >= 2 else None)
    return out
