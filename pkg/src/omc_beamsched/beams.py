"""Beam descriptions shared by the verification service and the treatment simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class BeamSpec:
    """A beam with its outstanding beam-on time and per-axis position bounds.

    ``bounds`` holds one ``(lower, upper)`` pair per modelled axis.  Bounds
    are not validated here: malformed bounds travel through the protocol and
    are reported per beam by the service.
    """

    id: str
    remaining_time: float
    bounds: tuple[tuple[float, float], ...]
    started: bool = False
    running: bool = False

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "remaining_time", float(self.remaining_time))
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        if len(self.bounds) not in (1, 3):
            raise ValueError(f"beam {self.id}: expected 1 or 3 bound pairs, got {len(self.bounds)}")

    @classmethod
    def symmetric(cls, id, remaining_time, threshold, **kwargs) -> "BeamSpec":
        """1D beam whose threshold bounds the position to ``[-threshold, +threshold]``."""
        t = float(threshold)
        return cls(id, remaining_time, ((-t, t),), **kwargs)

    @property
    def dims(self) -> int:
        return len(self.bounds)

    @property
    def threshold(self) -> float:
        """Symmetric 1D threshold (upper bound of the single axis)."""
        if self.dims != 1:
            raise ValueError(f"beam {self.id} is not one-dimensional")
        return self.bounds[0][1]

    @property
    def min_width(self) -> float:
        return min(hi - lo for lo, hi in self.bounds)

    def problems(self) -> list[str]:
        out = []
        if not math.isfinite(self.remaining_time) or self.remaining_time < 0:
            out.append(f"invalid remaining time {self.remaining_time}")
        for axis, (lo, hi) in zip(AXES, self.bounds):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                out.append(f"non-finite {axis} bounds")
            elif lo > hi:
                out.append(f"{axis} lower bound {lo} exceeds upper bound {hi}")
        return out

    def feasible(self, position) -> bool:
        """Whether a position (scalar or per-axis sequence) lies inside all bounds."""
        pos = [position] if self.dims == 1 and not hasattr(position, "__len__") else position
        return all(lo <= p <= hi for p, (lo, hi) in zip(pos, self.bounds))

    def with_progress(self, remaining_time: float, started: bool, running: bool) -> "BeamSpec":
        return replace(self, remaining_time=remaining_time, started=started, running=running)
