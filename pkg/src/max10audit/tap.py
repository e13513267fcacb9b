"""IEEE 1149.1 TAP controller state machine.

The 16-state graph is encoded as a tuple of (tms=0, tms=1) successor pairs
indexed by state value.  States are plain ints for speed in the simulator's
per-clock hot path; TapState wraps them for readable code elsewhere.
"""

from __future__ import annotations

from enum import IntEnum
from functools import lru_cache


class TapState(IntEnum):
    TEST_LOGIC_RESET = 0
    RUN_TEST_IDLE = 1
    SELECT_DR_SCAN = 2
    CAPTURE_DR = 3
    SHIFT_DR = 4
    EXIT1_DR = 5
    PAUSE_DR = 6
    EXIT2_DR = 7
    UPDATE_DR = 8
    SELECT_IR_SCAN = 9
    CAPTURE_IR = 10
    SHIFT_IR = 11
    EXIT1_IR = 12
    PAUSE_IR = 13
    EXIT2_IR = 14
    UPDATE_IR = 15


# (successor for TMS=0, successor for TMS=1), indexed by TapState value.
STEP_TABLE = (
    (1, 0),    # TEST_LOGIC_RESET
    (1, 2),    # RUN_TEST_IDLE
    (3, 9),    # SELECT_DR_SCAN
    (4, 5),    # CAPTURE_DR
    (4, 5),    # SHIFT_DR
    (6, 8),    # EXIT1_DR
    (6, 7),    # PAUSE_DR
    (4, 8),    # EXIT2_DR
    (1, 2),    # UPDATE_DR
    (10, 0),   # SELECT_IR_SCAN
    (11, 12),  # CAPTURE_IR
    (11, 12),  # SHIFT_IR
    (13, 15),  # EXIT1_IR
    (13, 14),  # PAUSE_IR
    (11, 15),  # EXIT2_IR
    (1, 2),    # UPDATE_IR
)

# States a scan sequence may legally park in (per the standard's stable states).
STABLE_STATES = frozenset(
    {
        TapState.TEST_LOGIC_RESET,
        TapState.RUN_TEST_IDLE,
        TapState.SHIFT_DR,
        TapState.PAUSE_DR,
        TapState.SHIFT_IR,
        TapState.PAUSE_IR,
    }
)


def step(state: int, tms: int) -> int:
    """Advance one TCK with the given TMS level.  Total over all 16 states."""
    return STEP_TABLE[state][1 if tms else 0]


@lru_cache(maxsize=None)
def tms_path(src: int, dst: int) -> tuple[int, ...]:
    """Shortest TMS sequence steering the TAP from ``src`` to ``dst``.

    Breadth-first over the transition table; the graph is strongly
    connected so a path always exists.  Returns () when src == dst.
    """
    if src == dst:
        return ()
    frontier = [(src, ())]
    seen = {src}
    while frontier:
        nxt = []
        for state, path in frontier:
            for tms in (0, 1):
                succ = STEP_TABLE[state][tms]
                if succ == dst:
                    return path + (tms,)
                if succ not in seen:
                    seen.add(succ)
                    nxt.append((succ, path + (tms,)))
        frontier = nxt
    raise AssertionError("TAP graph is connected; unreachable")
