"""Per-camera grid timelines and novel-timestamp interpolation."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .grid import BilateralGrid, MultiScaleGrid

FINE_POLICIES = ("identity", "nearest")


@dataclass
class GridTimeline:
    """Sorted (timestamp, pyramid) entries for one camera."""

    camera_id: str
    entries: list[tuple[float, MultiScaleGrid]]

    def __post_init__(self) -> None:
        if len(self.entries) < 1:
            raise ValueError("timeline needs at least one entry")
        self.entries = [(float(t), g) for t, g in self.entries]
        times = [t for t, _ in self.entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("timeline timestamps must be strictly increasing")
        first = self.entries[0][1]
        shapes = [lvl.shape for lvl in first.levels]
        factors = list(first.guidance_factors)
        for _, g in self.entries[1:]:
            if [lvl.shape for lvl in g.levels] != shapes or list(g.guidance_factors) != factors:
                raise ValueError("all timeline entries must share pyramid shapes and factors")

    @property
    def timestamps(self) -> list[float]:
        return [t for t, _ in self.entries]

    def span(self) -> tuple[float, float]:
        return self.entries[0][0], self.entries[-1][0]


def interp_weight(t1: float, t2: float, t_novel: float) -> float:
    """Temporal weight (t2 - t_novel) / (t2 - t1); 1 at t1, 0 at t2."""
    if t1 == t2:
        raise ValueError("degenerate interval: t1 == t2")
    if t1 > t2:
        raise ValueError("interval must satisfy t1 < t2")
    if not t1 <= t_novel <= t2:
        raise ValueError(f"t_novel {t_novel} outside [{t1}, {t2}]")
    return (t2 - t_novel) / (t2 - t1)


def _assemble(template: MultiScaleGrid, lerped, fine_source: MultiScaleGrid | None) -> MultiScaleGrid:
    """Lerped levels plus a fine level that is identity or copied from a source."""
    nlev = len(template.levels)
    levels = [BilateralGrid(c) for c in lerped]
    if len(levels) < nlev:
        fine_shape = template.levels[-1].shape
        if fine_source is None:
            levels.append(BilateralGrid.identity(*fine_shape))
        else:
            levels.append(BilateralGrid(fine_source.levels[-1].coeffs.copy()))
    return MultiScaleGrid(levels, list(template.guidance_factors))


def interpolate(tl: GridTimeline, t_novel: float, fine_policy: str = "identity") -> MultiScaleGrid:
    """Pyramid for a novel timestamp.

    All levels below the finest are linearly interpolated between the two
    bracketing entries; the finest level is replaced by identity (or copied
    from the nearest entry under fine_policy="nearest").  Single-level
    timelines interpolate their only grid.  Out-of-span timestamps clamp to
    the nearest entry.
    """
    if fine_policy not in FINE_POLICIES:
        raise ValueError(f"fine_policy must be one of {FINE_POLICIES}")
    t_novel = float(t_novel)
    template = tl.entries[0][1]
    nlev = len(template.levels)
    n_lerp = nlev if nlev == 1 else nlev - 1

    times = tl.timestamps
    lo, hi = tl.span()
    if t_novel <= lo or t_novel >= hi or len(tl.entries) == 1:
        # exact hits and out-of-span queries clamp to the nearest entry
        if t_novel <= lo:
            entry = tl.entries[0][1]
        elif t_novel >= hi:
            entry = tl.entries[-1][1]
        else:
            entry = tl.entries[bisect.bisect_left(times, t_novel)][1]
        lerped = [entry.levels[i].coeffs.copy() for i in range(n_lerp)]
        return _assemble(template, lerped, entry if fine_policy == "nearest" else None)

    i = bisect.bisect_right(times, t_novel)
    if times[i - 1] == t_novel:
        entry = tl.entries[i - 1][1]
        lerped = [entry.levels[k].coeffs.copy() for k in range(n_lerp)]
        return _assemble(template, lerped, entry if fine_policy == "nearest" else None)
    t1, g1 = tl.entries[i - 1]
    t2, g2 = tl.entries[i]
    w = interp_weight(t1, t2, t_novel)
    lerped = [
        w * g1.levels[k].coeffs + (1.0 - w) * g2.levels[k].coeffs
        for k in range(n_lerp)
    ]
    if fine_policy == "nearest":
        nearest = g1 if (t_novel - t1) <= (t2 - t_novel) else g2
    else:
        nearest = None
    return _assemble(template, lerped, nearest)
