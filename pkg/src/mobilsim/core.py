"""Shared domain types and bumper-to-bumper geometry."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

# Finite stand-in for "no leader": IDM is evaluated at this gap with zero approach rate.
NO_LEADER_GAP = 10_000.0
DEFAULT_LENGTH = 5.0


@dataclass(frozen=True)
class IdmParams:
    """Longitudinal driver/vehicle parameters of the Intelligent Driver Model.

    Attributes:
        v0: desired speed (m/s)
        T: safe time gap (s)
        s0: minimum bumper-to-bumper gap (m)
        a: maximum acceleration (m/s^2)
        b: comfortable deceleration, positive (m/s^2)
        delta: acceleration exponent
    """

    v0: float = 120.0 / 3.6
    T: float = 1.5
    s0: float = 2.0
    a: float = 1.4
    b: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        if not self.v0 > 0:
            raise ValueError(f"v0 must be > 0, got {self.v0}")
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if not self.s0 >= 0:
            raise ValueError(f"s0 must be >= 0, got {self.s0}")
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if not self.b > 0:
            raise ValueError(f"b must be > 0, got {self.b}")
        if not self.delta >= 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")


@dataclass(frozen=True)
class MobilParams:
    """Lateral decision parameters.

    ``p`` weighs the followers' acceleration changes, ``delta_a_th`` is the
    switching threshold and ``b_safe`` the largest deceleration a lane change
    may impose on the new follower (all accelerations in m/s^2).
    """

    p: float = 0.5
    delta_a_th: float = 0.3
    b_safe: float = 4.0

    def __post_init__(self):
        if not self.p >= 0:
            raise ValueError(f"p must be >= 0, got {self.p}")
        if not self.delta_a_th >= 0:
            raise ValueError(f"delta_a_th must be >= 0, got {self.delta_a_th}")
        if not self.b_safe > 0:
            raise ValueError(f"b_safe must be > 0, got {self.b_safe}")


@dataclass
class Vehicle:
    """One driver-vehicle unit. ``x`` is the front bumper position.

    ``destination`` is ``None`` for the mainline exit, otherwise the index of
    the off-ramp (in network order) the vehicle leaves by.
    """

    id: int
    lane: int
    x: float
    v: float
    length: float = DEFAULT_LENGTH
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    entry_time: float = 0.0
    exit_time: Optional[float] = None
    destination: Optional[int] = None
    probe: bool = False

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"vehicle length must be > 0, got {self.length}")
        if self.v < 0:
            raise ValueError(f"vehicle speed must be >= 0, got {self.v}")


class Neighbor(NamedTuple):
    """A leader or follower as seen from a subject position.

    ``id`` is ``None`` for a virtual obstacle (lane end, off-ramp stop).
    ``params`` is the neighbor's own IDM parameter set, needed when the
    neighbor's acceleration is evaluated hypothetically.
    """

    gap: float
    speed: float
    id: Optional[int] = None
    params: Optional[IdmParams] = None


class NeighborView(NamedTuple):
    leader: Optional[Neighbor] = None
    follower: Optional[Neighbor] = None


class Action(enum.Enum):
    STAY = "stay"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Decision:
    """Outcome of a lane-change evaluation.

    ``inc_left``/``inc_right`` are ``None`` where no target lane exists or
    the hypothetical configuration had a nonpositive gap.
    """

    action: Action = Action.STAY
    inc_left: Optional[float] = None
    inc_right: Optional[float] = None


def gap(leader_x, leader_length, follower_x):
    """Bumper-to-bumper distance; negative values signal an overlap."""
    return leader_x - leader_length - follower_x


def approach_rate(v, v_l):
    return v - v_l
