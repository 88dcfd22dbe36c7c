"""Componentwise output nonlinearities ``g(s) = [g_1(s_1), ..., g_p(s_p)]``.

Every output function carries the band radius ``h`` on which its components
are strictly increasing and a lower slope bound ``varrho`` on that band.
Identity and saturation have closed-form primitives; custom components fall
back to adaptive quadrature.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import NumericError

__all__ = [
    "OutputFunction",
    "PartResult",
    "ValidationReport",
    "identity",
    "saturation",
    "custom",
    "parse_output_tag",
    "evaluate",
    "validate_assumption",
    "antiderivative",
    "lipschitz_bound",
]

QUAD_ABS_TOL = 1e-10


class _Identity:
    def __call__(self, s):
        return s

    def primitive(self, s):
        return 0.5 * s * s

    def __repr__(self):
        return "identity"


class _Saturation:
    def __init__(self, h):
        self.h = float(h)

    def __call__(self, s):
        h = self.h
        if s >= h:
            return h
        if s <= -h:
            return -h
        return s

    def primitive(self, s):
        h = self.h
        if abs(s) <= h:
            return 0.5 * s * s
        return h * abs(s) - 0.5 * h * h

    def __repr__(self):
        return f"saturation({self.h!r})"


@dataclass(frozen=True)
class OutputFunction:
    """A componentwise map ``R^p -> R^p`` with declared band data.

    ``components`` are scalar callables.  ``h`` and ``varrho`` hold one value
    per component; ``h`` may be ``inf`` for maps strictly increasing on all of
    ``R`` (identity).  ``flat_outside`` marks saturation-like maps that are
    constant outside ``[-h, h]``.
    """

    components: tuple
    h: tuple
    varrho: tuple
    kind: str = "custom"
    flat_outside: bool = False
    tag: str | None = field(default=None, compare=False)

    def __post_init__(self):
        p = len(self.components)
        if p == 0:
            raise ValueError("output function needs at least one component")
        if len(self.h) != p or len(self.varrho) != p:
            raise ValueError("h and varrho need one entry per component")
        if any(not (hl > 0) for hl in self.h):
            raise ValueError("h must be positive")
        if any(not (v > 0) for v in self.varrho):
            raise ValueError("varrho must be positive")

    @property
    def p(self) -> int:
        return len(self.components)

    @property
    def h_min(self) -> float:
        return min(self.h)

    def __call__(self, x):
        return evaluate(self, x)


def identity(p: int = 1) -> OutputFunction:
    comp = _Identity()
    return OutputFunction(
        components=(comp,) * p,
        h=(math.inf,) * p,
        varrho=(1.0,) * p,
        kind="identity",
        tag="identity",
    )


def saturation(h: float | Sequence[float] = 1.0, p: int | None = None) -> OutputFunction:
    """``sat_h`` in every component; ``h`` may be given per component."""
    hs = np.atleast_1d(np.asarray(h, dtype=float))
    if p is None:
        p = hs.size
    if hs.size == 1:
        hs = np.repeat(hs, p)
    if hs.size != p:
        raise ValueError(f"got {hs.size} saturation levels for p={p}")
    if np.any(hs <= 0) or not np.all(np.isfinite(hs)):
        raise ValueError("saturation level must be positive and finite")
    if np.all(hs == hs[0]):
        tag = f"saturation({_fmt(hs[0])})"
    else:
        tag = "saturation([" + ", ".join(_fmt(v) for v in hs) + "])"
    return OutputFunction(
        components=tuple(_Saturation(v) for v in hs),
        h=tuple(float(v) for v in hs),
        varrho=(1.0,) * p,
        kind="saturation",
        flat_outside=True,
        tag=tag,
    )


def custom(
    funcs: Callable[[float], float] | Sequence[Callable[[float], float]],
    h: float | Sequence[float],
    varrho: float | Sequence[float],
    p: int | None = None,
    flat_outside: bool = False,
) -> OutputFunction:
    """Wrap user scalar callables.

    The declared ``h`` and ``varrho`` are trusted; use
    :func:`validate_assumption` for sampled evidence.
    """
    if callable(funcs):
        funcs = [funcs] * (p or 1)
    funcs = tuple(funcs)
    p = len(funcs)
    hs = np.broadcast_to(np.asarray(h, dtype=float), (p,))
    vs = np.broadcast_to(np.asarray(varrho, dtype=float), (p,))
    return OutputFunction(
        components=funcs,
        h=tuple(float(v) for v in hs),
        varrho=tuple(float(v) for v in vs),
        kind="custom",
        flat_outside=flat_outside,
    )


def _fmt(v) -> str:
    return repr(float(v))


_SAT_RE = re.compile(r"^saturation\((.*)\)$")


def parse_output_tag(tag: str, p: int = 1) -> OutputFunction:
    """Build an output function from ``identity`` or ``saturation(h)``."""
    text = str(tag).strip().replace(" ", "")
    if text == "identity":
        return identity(p)
    m = _SAT_RE.match(text)
    if m:
        arg = m.group(1)
        if not arg:
            return saturation(1.0, p)
        if arg.startswith("[") and arg.endswith("]"):
            levels = [float(v) for v in arg[1:-1].split(",") if v]
            return saturation(levels, p)
        return saturation(float(arg), p)
    raise ValueError(f"unknown output function tag {tag!r}")


def evaluate(f: OutputFunction, x) -> np.ndarray:
    """Apply ``g`` along the last axis of ``x``."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericError("output function evaluated at non-finite input")
    scalar_in = arr.ndim == 0
    if scalar_in:
        arr = arr.reshape(1)
    if arr.shape[-1] != f.p:
        raise ValueError(f"expected trailing dimension {f.p}, got {arr.shape[-1]}")
    if f.kind == "identity":
        out = arr.copy()
    elif f.kind == "saturation":
        h = np.asarray(f.h)
        out = np.clip(arr, -h, h)
    else:
        out = np.empty_like(arr)
        for l, comp in enumerate(f.components):
            col = arr[..., l]
            out[..., l] = np.reshape([comp(float(v)) for v in col.ravel()], col.shape)
    return out[0] if scalar_in else out


def antiderivative(f: OutputFunction, l: int, a: float, x: float) -> float:
    """``G_l(x) = int_a^x (g_l(s) - g_l(a)) ds``, which is never negative."""
    if not 0 <= l < f.p:
        raise IndexError(f"component {l} out of range for p={f.p}")
    a = float(a)
    x = float(x)
    if x == a:
        return 0.0
    comp = f.components[l]
    primitive = getattr(comp, "primitive", None)
    if primitive is not None:
        val = primitive(x) - primitive(a) - comp(a) * (x - a)
        return max(val, 0.0)
    ga = comp(a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(
            lambda s: comp(s) - ga, a, x, epsabs=QUAD_ABS_TOL, epsrel=QUAD_ABS_TOL, limit=200
        )
    if err > max(QUAD_ABS_TOL, QUAD_ABS_TOL * abs(val)):
        raise NumericError(
            f"quadrature for G_{l}({x}) from {a} reached only {err:.3e}", residual=err
        )
    return max(val, 0.0)


def lipschitz_bound(f: OutputFunction, radius: float, grid_points: int = 2001) -> float:
    """Lipschitz constant of ``g`` on ``[-radius, radius]``.

    Exact (1.0) for identity and saturation; a finite-difference grid estimate
    otherwise.
    """
    if f.kind in ("identity", "saturation"):
        return 1.0
    grid = np.linspace(-radius, radius, grid_points)
    best = 0.0
    for comp in f.components:
        vals = np.array([comp(float(v)) for v in grid])
        best = max(best, float(np.max(np.abs(np.diff(vals)) / np.diff(grid))))
    return best


@dataclass
class PartResult:
    passed: bool
    detail: str = ""
    witness: tuple | None = None
    component: int | None = None


@dataclass
class ValidationReport:
    """Sampled evidence for the five-part monotone-output assumption.

    A failure is a certificate; a pass is evidence only, since the grid
    cannot cover the real line.
    """

    parts: dict
    lipschitz_estimate: float
    varrho_estimate: float
    grid_radius: float
    grid_points: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.parts.values())

    def failures(self) -> list[int]:
        return [k for k, r in sorted(self.parts.items()) if not r.passed]


def _sample(comp, grid):
    return np.array([comp(float(v)) for v in grid], dtype=float)


def _refine(grid, factor=4):
    n = (grid.size - 1) * factor + 1
    return np.linspace(grid[0], grid[-1], n)


def _persistent_jump(comp, a, b, ga, gb, tol, halvings=40):
    """Bisect toward the larger half-jump; return the final pair if it stays above ``tol``."""
    a, b = float(a), float(b)
    for _ in range(halvings):
        m = 0.5 * (a + b)
        if not a < m < b:
            break
        gm = comp(m)
        if abs(gm - ga) >= abs(gb - gm):
            b, gb = m, gm
        else:
            a, ga = m, gm
    return (a, b) if abs(gb - ga) > tol else None


def validate_assumption(f: OutputFunction, grid_radius: float, grid_points: int) -> ValidationReport:
    """Check the five assumption parts on sampled grids.

    Part 4 is estimated as the largest finite-difference slope on
    ``[-grid_radius, grid_radius]``; part 5 as the smallest slope on the band
    ``[-h, h]``.  Both are re-estimated on a 4x refined grid to catch slopes
    that blow up or vanish.
    """
    if grid_points < 3:
        raise ValueError("grid_points must be at least 3")
    parts = {k: PartResult(True) for k in range(1, 6)}

    def fail(k, l, detail, witness=None):
        if parts[k].passed:
            parts[k] = PartResult(False, detail, witness, l)

    k_est = 0.0
    rho_est = math.inf
    for l, comp in enumerate(f.components):
        grid = np.linspace(-grid_radius, grid_radius, grid_points)
        fine = _refine(grid)
        vals = _sample(comp, grid)
        fvals = _sample(comp, fine)

        # 1) continuity: a jump keeps its height under repeated bisection
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(fvals))):
            bad = float(grid[~np.isfinite(vals)][0]) if not np.all(np.isfinite(vals)) else math.nan
            fail(1, l, "non-finite output", (bad,))
        else:
            scale = max(1.0, float(np.max(np.abs(vals))))
            for idx in np.flatnonzero(np.abs(np.diff(vals)) > 1e-6 * scale):
                pair = _persistent_jump(comp, grid[idx], grid[idx + 1], vals[idx], vals[idx + 1], 1e-6 * scale)
                if pair is not None:
                    fail(1, l, "jump persists under refinement", pair)
                    break

        # 2) nondecreasing everywhere, strictly increasing on the band
        d = np.diff(fvals)
        if np.any(d < 0):
            idx = int(np.argmax(d < 0))
            fail(2, l, "decreasing between samples", (float(fine[idx]), float(fine[idx + 1])))
        hl = min(f.h[l], grid_radius)
        band = np.linspace(-hl, hl, grid_points)
        band_fine = _refine(band)
        bvals = _sample(comp, band)
        bfine = _sample(comp, band_fine)
        db = np.diff(bfine)
        if np.any(db <= 0):
            idx = int(np.argmax(db <= 0))
            fail(2, l, "not strictly increasing on the band", (float(band_fine[idx]), float(band_fine[idx + 1])))

        # 3) zero exactly at the origin
        g0 = comp(0.0)
        if abs(g0) > 1e-12:
            fail(3, l, f"g(0) = {g0!r}", (0.0,))
        zero_at = (np.abs(fvals) <= 1e-300) & (fine != 0)
        if np.any(zero_at):
            fail(3, l, "vanishes away from the origin", (float(fine[np.argmax(zero_at)]),))

        # 4) local Lipschitz estimate on S
        slopes = np.abs(np.diff(vals)) / np.diff(grid)
        fslopes = np.abs(np.diff(fvals)) / np.diff(fine)
        k_coarse = float(np.max(slopes)) if slopes.size else 0.0
        k_fine = float(np.max(fslopes)) if fslopes.size else 0.0
        if not math.isfinite(k_fine) or (k_coarse > 0 and k_fine > 1.5 * k_coarse):
            idx = int(np.argmax(fslopes))
            fail(4, l, "slope grows under refinement", (float(fine[idx]), float(fine[idx + 1])))
        k_est = max(k_est, k_fine)

        # 5) lower slope bound on the band; the minimum secant over any pair is
        # attained by adjacent samples when g is monotone
        bslopes = np.abs(np.diff(bvals)) / np.diff(band)
        bfslopes = np.abs(np.diff(bfine)) / np.diff(band_fine)
        r_coarse = float(np.min(bslopes))
        r_fine = float(np.min(bfslopes))
        rho_est = min(rho_est, r_fine)
        idx = int(np.argmin(bfslopes))
        pair = (float(band_fine[idx]), float(band_fine[idx + 1]))
        if r_fine < f.varrho[l] * (1 - 1e-9):
            fail(5, l, f"slope {r_fine:.3e} below declared varrho {f.varrho[l]}", pair)
        elif r_fine < 0.5 * r_coarse:
            fail(5, l, "slope vanishes under refinement", pair)

    return ValidationReport(
        parts=parts,
        lipschitz_estimate=k_est,
        varrho_estimate=rho_est,
        grid_radius=float(grid_radius),
        grid_points=int(grid_points),
    )
