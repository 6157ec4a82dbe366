"""Per-slot server dynamics: completion capacity, token-queue and
energy-queue updates, and computation energy.

All functions are pure and stateless. Token counts are exact integers; the
capacity floor is computed on exact rationals so that the minimum frequency
for a target count maps back to exactly that count.
"""

from __future__ import annotations

import math
from fractions import Fraction

from .model import SystemParams

__all__ = [
    "capacity",
    "completed_tokens",
    "update_token_queue",
    "compute_energy",
    "update_energy_queue",
    "min_frequency_for",
]


def capacity(f: float, p: SystemParams) -> int:
    """Tokens a server can finish in one slot at frequency ``f``:
    floor(slot_duration * f / cycles_per_token). Zero frequency processes
    nothing (the per-token computation time is undefined at f=0).
    """
    if not 0 <= f <= p.max_frequency:
        raise ValueError(f"frequency {f} outside [0, max_frequency={p.max_frequency}]")
    if f == 0:
        return 0
    # Floats are exact rationals, so Fraction arithmetic makes the floor
    # immune to boundary rounding (f = cycles*d/duration must yield exactly d).
    exact = Fraction(p.slot_duration) * Fraction(f) / Fraction(p.cycles_per_token)
    return math.floor(exact)


def completed_tokens(backlog: int, routed: int, f: float, p: SystemParams) -> int:
    """Tokens actually completed: min(available, capacity)."""
    if backlog < 0 or routed < 0:
        raise ValueError(f"backlog and routed must be >= 0, got {backlog}, {routed}")
    return min(backlog + routed, capacity(f, p))


def update_token_queue(backlog: int, routed: int, completed: int) -> int:
    """Successor token backlog: max(backlog + routed - completed, 0)."""
    if backlog < 0 or routed < 0 or completed < 0:
        raise ValueError("token counts must be >= 0")
    if completed > backlog + routed:
        raise ValueError(
            f"completed tokens ({completed}) exceed available tokens ({backlog + routed})"
        )
    return max(backlog + routed - completed, 0)


def compute_energy(completed: int, f: float, server: int, p: SystemParams) -> float:
    """Computation energy in joules: xi_j * completed * cycles * f^2.

    (Per-token time is cycles/f, dynamic power scales with f^3, hence the
    f^2 after cancelling.) Zero when nothing was completed.
    """
    if completed < 0:
        raise ValueError(f"completed must be >= 0, got {completed}")
    if completed == 0:
        return 0.0
    if f <= 0:
        raise ValueError("cannot complete tokens at zero frequency")
    return p.switched_capacitance[server] * completed * p.cycles_per_token * f * f


def update_energy_queue(backlog: float, consumed: float, budget: float) -> float:
    """Successor energy backlog: max(backlog + consumed - budget, 0)."""
    if backlog < 0 or consumed < 0:
        raise ValueError("energy backlog and consumption must be >= 0")
    if not budget > 0:
        raise ValueError(f"energy budget must be > 0, got {budget}")
    return max(backlog + consumed - budget, 0.0)


def min_frequency_for(target: int, p: SystemParams) -> float:
    """Smallest frequency whose capacity reaches ``target`` tokens.

    This is cycles*target/duration, nudged up by at most a few ulps so the
    float result's capacity is exactly ``target``. Energy rises strictly
    with frequency at fixed completions, so this is the energy-optimal
    frequency for that count.
    """
    if target == 0:
        return 0.0
    if target < 0:
        raise ValueError(f"target must be >= 0, got {target}")
    if target > capacity(p.max_frequency, p):
        raise ValueError(
            f"target {target} exceeds capacity at max_frequency "
            f"({capacity(p.max_frequency, p)})"
        )
    f = target * p.cycles_per_token / p.slot_duration
    while capacity(min(f, p.max_frequency), p) < target:
        f = math.nextafter(f, math.inf)
    return min(f, p.max_frequency)
