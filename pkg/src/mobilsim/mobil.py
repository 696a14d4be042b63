"""MOBIL lane-change decisions for a single subject vehicle.

The engine evaluates the same rules vectorized over the whole population;
these scalar functions are the reference path and the public API.
"""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Optional

from mobilsim.core import (
    NO_LEADER_GAP,
    Action,
    Decision,
    IdmParams,
    Neighbor,
    NeighborView,
    Vehicle,
)
from mobilsim.idm import acceleration

logger = logging.getLogger(__name__)

AccelerationFn = Callable[[float, float, float, IdmParams], float]


class ChangeContext(NamedTuple):
    """Neighbor configuration for one candidate direction.

    ``target`` is measured at the subject's position in the candidate lane.
    """

    subject: Vehicle
    current: NeighborView
    target: NeighborView


class Accelerations(NamedTuple):
    """Pre-change (``a_*``) and hypothetical post-change (``at_*``) accelerations.

    ``c`` is the subject, ``n`` the new follower, ``o`` the old follower.
    Follower entries are ``None`` when that follower does not exist.
    """

    a_c: float
    at_c: float
    a_n: Optional[float]
    at_n: Optional[float]
    a_o: Optional[float]
    at_o: Optional[float]


def _params(nb: Neighbor) -> IdmParams:
    return nb.params if nb.params is not None else IdmParams()


def _leader_args(leader: Optional[Neighbor], v: float):
    if leader is None:
        return NO_LEADER_GAP, v
    return leader.gap, leader.speed


def hypothetical_gaps_positive(ctx: ChangeContext) -> bool:
    tl, tf = ctx.target.leader, ctx.target.follower
    return (tl is None or tl.gap > 0) and (tf is None or tf.gap > 0)


def accelerations(
    ctx: ChangeContext, idm_eval: AccelerationFn = acceleration
) -> Optional[Accelerations]:
    """Evaluate the six accelerations entering the incentive.

    Returns ``None`` if either hypothetical gap in the target lane is
    nonpositive (the change would place the subject inside another vehicle).
    """
    if not hypothetical_gaps_positive(ctx):
        return None
    sub = ctx.subject
    cl, of = ctx.current.leader, ctx.current.follower
    tl, tf = ctx.target.leader, ctx.target.follower

    s, vl = _leader_args(cl, sub.v)
    a_c = idm_eval(s, sub.v, vl, sub.idm)
    s, vl = _leader_args(tl, sub.v)
    at_c = idm_eval(s, sub.v, vl, sub.idm)

    a_n = at_n = None
    if tf is not None:
        fp = _params(tf)
        s = tf.gap + sub.length + tl.gap if tl is not None else NO_LEADER_GAP
        vl = tl.speed if tl is not None else tf.speed
        a_n = idm_eval(s, tf.speed, vl, fp)
        at_n = idm_eval(tf.gap, tf.speed, sub.v, fp)

    a_o = at_o = None
    if of is not None:
        fp = _params(of)
        a_o = idm_eval(of.gap, of.speed, sub.v, fp)
        s = of.gap + sub.length + cl.gap if cl is not None else NO_LEADER_GAP
        vl = cl.speed if cl is not None else of.speed
        at_o = idm_eval(s, of.speed, vl, fp)

    return Accelerations(a_c, at_c, a_n, at_n, a_o, at_o)


def incentive_from(acc: Accelerations, p: float) -> float:
    own = acc.at_c - acc.a_c
    new = acc.at_n - acc.a_n if acc.a_n is not None else 0.0
    old = acc.at_o - acc.a_o if acc.a_o is not None else 0.0
    return float(own + p * (new + old))


def incentive(ctx: ChangeContext, idm_eval: AccelerationFn = acceleration) -> Optional[float]:
    """Politeness-weighted acceleration advantage of changing into the target lane.

    ``None`` means the direction is unsafe because a hypothetical gap is not
    positive; no incentive is defined then.
    """
    acc = accelerations(ctx, idm_eval)
    if acc is None:
        return None
    return incentive_from(acc, ctx.subject.mobil.p)


def is_safe(ctx: ChangeContext, idm_eval: AccelerationFn = acceleration, b_safe: Optional[float] = None) -> bool:
    if b_safe is None:
        b_safe = ctx.subject.mobil.b_safe
    if not hypothetical_gaps_positive(ctx):
        return False
    tf = ctx.target.follower
    if tf is None:
        return True
    return bool(idm_eval(tf.gap, tf.speed, ctx.subject.v, _params(tf)) >= -b_safe)


def choose(inc_left, safe_left, inc_right, safe_right, threshold) -> Action:
    """Pick a direction; strict threshold, exact ties go right."""
    left_ok = safe_left and inc_left is not None and inc_left > threshold
    right_ok = safe_right and inc_right is not None and inc_right > threshold
    if left_ok and right_ok:
        return Action.LEFT if inc_left > inc_right else Action.RIGHT
    if left_ok:
        return Action.LEFT
    if right_ok:
        return Action.RIGHT
    return Action.STAY


def decide(
    subject: Vehicle,
    left_ctx: Optional[ChangeContext],
    right_ctx: Optional[ChangeContext],
    idm_eval: AccelerationFn = acceleration,
) -> Decision:
    """Discretionary lane-change decision. Contexts are ``None`` for missing lanes."""
    inc = {}
    safe = {}
    for side, ctx in (("left", left_ctx), ("right", right_ctx)):
        if ctx is None:
            inc[side], safe[side] = None, False
            continue
        inc[side] = incentive(ctx, idm_eval)
        safe[side] = inc[side] is not None and is_safe(ctx, idm_eval, subject.mobil.b_safe)

    action = choose(inc["left"], safe["left"], inc["right"], safe["right"], subject.mobil.delta_a_th)
    if subject.probe:
        logger.debug(
            "probe %d lane %d: left=%s right=%s th=%s -> %s",
            subject.id, subject.lane, inc["left"], inc["right"], subject.mobil.delta_a_th, action.value,
        )
    return Decision(action, inc["left"], inc["right"])
