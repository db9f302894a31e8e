"""Gradient-disorder metric and the scale freezing controller.

Disorder of a gradient window is the fraction of adjacent sign changes,
with sign taken in {-1, 0, +1} and any change (including to or from 0)
counting as a flip.  Low disorder means the variance-pass scale gradient
keeps pointing the same way; that is when handing the scale over to the
flatness gradient alone is safe.

Step indices are 1-based.  Flags refresh only at step multiples of the
window length K, from full windows, so every scale trains unfrozen through
the warm-up and the first refresh lands exactly at step K.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .quantizer import SCALE_FLOOR, ScaleFactor


def gradient_disorder(g) -> float:
    """Fraction of adjacent sign flips in a gradient window (length >= 2)."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or len(g) < 2:
        raise ValueError("disorder needs a 1-D window of length >= 2")
    s = np.sign(g)
    return float(np.sum(s[1:] != s[:-1])) / (len(g) - 1)


class FreezePolicy(str, enum.Enum):
    ADAPTIVE = "adaptive"
    NO_UNFREEZE = "no_unfreeze"
    REVERSE_FREEZE = "reverse_freeze"
    FREEZE_BOTH = "freeze_both"
    ALTERNATE_UPDATE = "alternate_update"
    OFF = "off"


class DisorderTracker:
    """Ring buffer of the last K variance-pass gradients for one scale."""

    def __init__(self, scale_id: str, window: int):
        if window < 2:
            raise ValueError("window length must be >= 2")
        self.scale_id = scale_id
        self.K = int(window)
        self.window: deque[float] = deque(maxlen=window)
        self.last_disorder: float | None = None

    @property
    def full(self) -> bool:
        return len(self.window) == self.K

    def disorder(self) -> float:
        d = gradient_disorder(list(self.window))
        self.last_disorder = d
        return d


def record_step(tracker: DisorderTracker, g_va_value: float) -> None:
    g = float(g_va_value)
    if not math.isfinite(g):
        raise ValueError(f"non-finite gradient for scale {tracker.scale_id!r}")
    tracker.window.append(g)


@dataclass
class FreezeState:
    frozen: dict[str, bool]
    policy: FreezePolicy
    r: float
    step_counter: int = 0
    scale_rule: str = "sum"
    last_delta: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.policy = FreezePolicy(self.policy)
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("threshold r must lie in [0, 1]")
        if self.scale_rule not in ("sum", "average"):
            raise ValueError(f"unknown scale rule {self.scale_rule!r}")


def refresh_freeze_flags(state: FreezeState,
                         trackers: dict[str, DisorderTracker]) -> dict[str, float]:
    """Recompute disorder for every registered scale and reset the flags."""
    delta: dict[str, float] = {}
    for sid in state.frozen:
        if sid not in trackers:
            raise KeyError(f"no tracker for registered scale {sid!r}")
        delta[sid] = trackers[sid].disorder()
    p = state.policy
    if p is FreezePolicy.ADAPTIVE or p is FreezePolicy.FREEZE_BOTH:
        state.frozen = {sid: d < state.r for sid, d in delta.items()}
    elif p is FreezePolicy.NO_UNFREEZE:
        state.frozen = {sid: state.frozen[sid] or d < state.r
                        for sid, d in delta.items()}
    elif p is FreezePolicy.REVERSE_FREEZE:
        state.frozen = {sid: d >= state.r for sid, d in delta.items()}
    else:
        state.frozen = {sid: False for sid in delta}
    state.last_delta = delta
    return delta


def apply_scale_update(scale: ScaleFactor, g_va: float, g_flat: float,
                       state: FreezeState, lr_scale: float, step: int) -> None:
    """One in-place scale update under the current flags; floors the result."""
    p = state.policy
    if p is FreezePolicy.ALTERNATE_UPDATE:
        g = g_va if step % 2 == 0 else g_flat
    elif state.frozen.get(scale.id, False) and p is not FreezePolicy.OFF:
        if p is FreezePolicy.FREEZE_BOTH:
            return
        g = g_flat
    else:
        g = g_va + g_flat
        if state.scale_rule == "average":
            g = 0.5 * g
    scale.value = max(scale.value - lr_scale * g, SCALE_FLOOR)


class FreezeController:
    """Drives trackers, flag refresh, and scale updates for a training loop."""

    def __init__(self, scale_ids: list[str], policy: FreezePolicy | str,
                 threshold: float, window: int, lr_scale: float,
                 rule: str = "sum"):
        self.state = FreezeState(frozen={sid: False for sid in scale_ids},
                                 policy=FreezePolicy(policy), r=threshold,
                                 scale_rule=rule)
        self.trackers = {sid: DisorderTracker(sid, window) for sid in scale_ids}
        self.window = int(window)
        self.lr_scale = float(lr_scale)

    @property
    def frozen(self) -> dict[str, bool]:
        return dict(self.state.frozen)

    def step(self, scales: dict[str, ScaleFactor], g_va: dict[str, float],
             g_flat: dict[str, float]) -> dict[str, float] | None:
        """Advance one step; returns fresh disorder values on refresh steps."""
        self.state.step_counter += 1
        step = self.state.step_counter
        for sid, sf in scales.items():
            apply_scale_update(sf, g_va[sid], g_flat[sid], self.state,
                               self.lr_scale, step)
            record_step(self.trackers[sid], g_va[sid])
        if step % self.window != 0:
            return None
        if any(not t.full for t in self.trackers.values()):
            return None
        return refresh_freeze_flags(self.state, self.trackers)
