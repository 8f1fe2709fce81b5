"""Freeze-measure fixed-point iteration and its empirical contraction window.

Iterate 0 is the constant flow pinned at the initial law.  Each subsequent
iterate solves the equation with the measure argument frozen at the previous
iterate's flow, re-using the exact same noise keys, so successive iterates
differ only through the measure argument.  On a short enough window the map
is a contraction with ratio one half; the window is certified empirically
(the contraction constant of the underlying estimate is never computed, only
the observed ratios), and the distance between iterates is the particle
average of the squared path supremum over the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measure import w2sq
from .model import Model
from .particle import (
    MeasureFlow,
    PathEnsemble,
    TimeGrid,
    constant_flow,
    resolve_initial,
    simulate_frozen,
    simulate_mv,
)
from .sampler import StreamRole


class PicardError(RuntimeError):
    pass


@dataclass
class IterationTrace:
    """Successive iterates and their common-noise path distances.

    ``diffs[k]`` is the average over particles of the grid supremum of the
    squared distance between iterates k+1 and k (iterate 0 being the constant
    path at the initial position).  ``ratios[k] = diffs[k] / diffs[k-1]`` with
    0/0 read as 0.
    """

    window: float
    diffs: list
    grid: TimeGrid
    n_particles: int
    iterates: Optional[list] = None
    diverged: bool = field(default=False)
    ratios: list = field(init=False)

    def __post_init__(self):
        ratios = []
        for prev, cur in zip(self.diffs, self.diffs[1:]):
            if cur == 0.0:
                ratios.append(0.0)
            elif prev == 0.0:
                ratios.append(float("inf"))
            else:
                ratios.append(cur / prev)
        self.ratios = ratios

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,diff,ratio\n")
            for k, d in enumerate(self.diffs):
                r = self.ratios[k - 1] if k >= 1 else float("nan")
                fh.write(f"{k},{repr(d)},{repr(r)}\n")


def _path_sup_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1/n) sum_i sup_grid |a_i(t) - b_i(t)|^2 for (n_times, n, d) arrays."""
    diff = a - b
    return float(np.mean(np.max(np.sum(diff * diff, axis=2), axis=0)))


def picard_iterate(
    model: Model,
    xi,
    n_particles: int,
    window_t0: float,
    h: float,
    n_iters: int,
    seed: int,
    *,
    jump_mode: str = "raw",
    keep_iterates: bool = True,
) -> IterationTrace:
    """Run the frozen-measure iteration on [0, t0] with common noise.

    The Brownian and jump draws are addressed by (seed, role, particle, step)
    and the addresses do not involve the iteration counter, so every iterate
    consumes bitwise-identical noise; only the measure argument changes.
    Divergence (three consecutive increasing diffs) is reported on the trace,
    not raised: a too-long window is an answer, not a failure.
    """
    if n_iters < 2:
        raise PicardError(f"need at least 2 iterations, got {n_iters}")
    grid = TimeGrid(0.0, window_t0, h)
    x0 = resolve_initial(xi, n_particles, model.dim_state, seed)
    n_times = grid.n_steps + 1

    prev_states = np.broadcast_to(x0, (n_times,) + x0.shape)
    prev_flow = constant_flow(grid, _wrap_cloud(x0))
    diffs = []
    iterates: Optional[list] = [] if keep_iterates else None

    for _ in range(n_iters):
        ens = simulate_frozen(
            model,
            prev_flow,
            x0,
            n_particles,
            grid,
            seed,
            jump_mode=jump_mode,
            brownian_role=StreamRole.BASE_BROWNIAN,
            jump_role=StreamRole.BASE_JUMPS,
        )
        diffs.append(_path_sup_distance(ens.states, prev_states))
        if iterates is not None:
            iterates.append((ens, ens.flow()))
        prev_states = ens.states
        prev_flow = ens.flow()

    diverged = any(
        diffs[k] < diffs[k + 1] < diffs[k + 2] and diffs[k] > 0.0
        for k in range(len(diffs) - 2)
    )
    return IterationTrace(
        window=window_t0,
        diffs=diffs,
        grid=grid,
        n_particles=n_particles,
        iterates=iterates,
        diverged=diverged,
    )


def _wrap_cloud(points):
    from .measure import EmpiricalMeasure

    return EmpiricalMeasure(points)


def contraction_window(
    model: Model,
    xi,
    h: float,
    seed: int,
    *,
    n_particles: int = 1024,
    t_max: float = 10.0,
    ratio_threshold: float = 0.45,
    n_seeds: int = 3,
    max_bisect: int = 8,
    jump_mode: str = "raw",
) -> float:
    """Largest tested window on which the iteration contracts empirically.

    A candidate window passes when the ratio of the third to the second diff
    stays at or below the threshold for every probe seed (the first diff
    measures the jump off the constant path and is excluded).  Bisection over
    (h, t_max]; windows are snapped to multiples of h.
    """

    def passes(t0: float) -> bool:
        for s in range(n_seeds):
            trace = picard_iterate(
                model, xi, n_particles, t0, h, 3, seed + s,
                jump_mode=jump_mode, keep_iterates=False,
            )
            d1, d2 = trace.diffs[1], trace.diffs[2]
            ratio = 0.0 if d2 == 0.0 else (float("inf") if d1 == 0.0 else d2 / d1)
            if ratio > ratio_threshold:
                return False
        return True

    def snap(t0: float) -> float:
        return max(1, round(t0 / h)) * h

    t_hi = snap(t_max)
    if passes(t_hi):
        return t_hi
    lo, hi = h, t_hi
    best = None
    for _ in range(max_bisect):
        mid = snap(0.5 * (lo + hi))
        if mid <= lo or mid >= hi:
            break
        if passes(mid):
            best = mid
            lo = mid
        else:
            hi = mid
    if best is None:
        raise PicardError(
            f"no contraction window found in ({h}, {t_max}] at ratio {ratio_threshold}; "
            f"model {model.label!r}, {n_seeds} seeds"
        )
    return best


@dataclass
class PicardReport:
    """Final iterate versus the direct self-consistent solve, same noise."""

    gap: float
    diffs: list
    ratios: list
    envelope_ok: bool
    envelope_margin: float
    last_diff: float


def picard_vs_direct(
    model: Model,
    xi,
    n_particles: int,
    window_t0: float,
    h: float,
    n_iters: int,
    seed: int,
    *,
    jump_mode: str = "raw",
) -> PicardReport:
    """Compare the final iterate's flow against the direct solve.

    Both runs consume identical noise, so with measure-independent
    coefficients the gap is exactly zero; in general the gap is bounded by
    the geometric tail of the measured diffs.  The report also re-checks the
    geometric envelope diffs[k] <= diffs[1] * r^(k-1) with r the worst
    observed ratio.
    """
    trace = picard_iterate(
        model, xi, n_particles, window_t0, h, n_iters, seed,
        jump_mode=jump_mode, keep_iterates=True,
    )
    final_flow = trace.iterates[-1][1]
    _, direct_flow = simulate_mv(
        model, xi, n_particles, trace.grid, seed, jump_mode=jump_mode
    )
    gap = 0.0
    for k in range(trace.grid.n_steps + 1):
        gap = max(gap, w2sq(final_flow.measure_at(k), direct_flow.measure_at(k), method="auto"))

    tail = [d for d in trace.diffs[1:]]
    envelope_ok = True
    margin = 0.0
    if len(tail) >= 2 and tail[0] > 0.0:
        r = max(b / a if a > 0 else 0.0 for a, b in zip(tail, tail[1:]))
        for k, d in enumerate(tail):
            bound = tail[0] * (r**k) if k else tail[0]
            margin = max(margin, d - bound * (1.0 + 1e-12))
        envelope_ok = margin <= 0.0
    return PicardReport(
        gap=gap,
        diffs=trace.diffs,
        ratios=trace.ratios,
        envelope_ok=envelope_ok,
        envelope_margin=margin,
        last_diff=trace.diffs[-1],
    )
