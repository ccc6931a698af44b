"""Built-in tabular environments."""
from __future__ import annotations

import numpy as np

from .mdp import MdpModel

# S start, F frozen, H hole, G goal; the standard 8x8 map
FROZENLAKE_8X8 = (
    "SFFFFFFF",
    "FFFFFFFF",
    "FFFHFFFF",
    "FFFFFHFF",
    "FFFHFFFF",
    "FHHFFFHF",
    "FHFFHFHF",
    "FFFHFFFG",
)

FROZENLAKE_4X4 = (
    "SFFF",
    "FHFH",
    "FFFH",
    "HFFG",
)

# action order: left, down, right, up
_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


def build_gridworld(layout, discount: float = 0.99, slippery: bool = True, name: str = "gridworld") -> MdpModel:
    """Grid MDP from a layout of ``S/F/H/G`` cells.

    With ``slippery`` the chosen direction and its two perpendiculars each happen
    with probability 1/3; moves off the grid leave the agent in place.  Entering a
    goal cell pays 1.  Holes and goals are absorbing with zero reward.  The reward
    table holds the expected reward of each (state, action).
    """
    rows = [str(r) for r in layout]
    n_rows, n_cols = len(rows), len(rows[0])
    if any(len(r) != n_cols for r in rows):
        raise ValueError("layout rows must have equal length")
    cells = "".join(rows)
    if set(cells) - set("SFHG"):
        raise ValueError(f"unknown cell kinds {set(cells) - set('SFHG')}")
    if cells.count("S") != 1:
        raise ValueError("layout needs exactly one start cell")
    if "G" not in cells:
        raise ValueError("layout needs at least one goal cell")
    S, A = n_rows * n_cols, 4
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for r in range(n_rows):
        for c in range(n_cols):
            s = r * n_cols + c
            if rows[r][c] in "HG":
                P[s, :, s] = 1.0
                continue
            for a in range(A):
                outcomes = ((a - 1) % 4, a, (a + 1) % 4) if slippery else (a,)
                p = 1.0 / len(outcomes)
                for b in outcomes:
                    dr, dc = _MOVES[b]
                    nr = min(max(r + dr, 0), n_rows - 1)
                    nc = min(max(c + dc, 0), n_cols - 1)
                    P[s, a, nr * n_cols + nc] += p
                    if rows[nr][nc] == "G":
                        R[s, a] += p
    xi = np.zeros(S)
    xi[cells.index("S")] = 1.0
    return MdpModel(P, xi, discount, R, name)


def build_frozenlake8x8(discount: float = 0.99) -> MdpModel:
    """Slippery FrozenLake 8x8 (64 states, 4 actions)."""
    return build_gridworld(FROZENLAKE_8X8, discount, slippery=True, name="frozenlake8x8")


def build_frozenlake4x4(discount: float = 0.99) -> MdpModel:
    return build_gridworld(FROZENLAKE_4X4, discount, slippery=True, name="frozenlake4x4")


def build_corridor(length: int = 5, discount: float = 0.9) -> MdpModel:
    """Deterministic corridor: action 0 moves left, action 1 moves right.

    Entering the rightmost (absorbing) cell pays 1.  Start is the leftmost cell.
    """
    if length < 2:
        raise ValueError("corridor needs at least two cells")
    P = np.zeros((length, 2, length))
    R = np.zeros((length, 2))
    for s in range(length):
        if s == length - 1:
            P[s, :, s] = 1.0
            continue
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, s + 1] = 1.0
        if s + 1 == length - 1:
            R[s, 1] = 1.0
    xi = np.zeros(length)
    xi[0] = 1.0
    return MdpModel(P, xi, discount, R, f"corridor{length}")


def build_tiny(kind: str, discount: float = 0.5) -> MdpModel:
    """Oracle-scale models small enough for exhaustive trajectory enumeration.

    ``single_state``       1 state, 1 action, self-loop, reward 1.
    ``two_state_switch``   action 0 stays, action 1 flips; starts in state 0;
                           reward 1 for any action taken in state 1.
    ``three_state_chain``  action 0 moves left, action 1 moves right (walls clamp);
                           starts in state 0; reward 1 for any action in state 2.
    """
    if kind == "single_state":
        return MdpModel(np.ones((1, 1, 1)), [1.0], discount, [[1.0]], kind)
    if kind == "two_state_switch":
        P = np.zeros((2, 2, 2))
        for s in range(2):
            P[s, 0, s] = 1.0
            P[s, 1, 1 - s] = 1.0
        return MdpModel(P, [1.0, 0.0], discount, [[0.0, 0.0], [1.0, 1.0]], kind)
    if kind == "three_state_chain":
        P = np.zeros((3, 2, 3))
        for s in range(3):
            P[s, 0, max(s - 1, 0)] = 1.0
            P[s, 1, min(s + 1, 2)] = 1.0
        return MdpModel(P, [1.0, 0.0, 0.0], discount, [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]], kind)
    raise ValueError(f"unknown tiny MDP {kind!r}")


BUILTIN = {
    "frozenlake8x8": build_frozenlake8x8,
    "frozenlake4x4": build_frozenlake4x4,
    "corridor5": lambda discount=0.9: build_corridor(5, discount),
    "single_state": lambda discount=0.5: build_tiny("single_state", discount),
    "two_state_switch": lambda discount=0.5: build_tiny("two_state_switch", discount),
    "three_state_chain": lambda discount=0.5: build_tiny("three_state_chain", discount),
}


def make_env(name: str, discount: float | None = None) -> MdpModel:
    """Build a built-in environment by name."""
    try:
        builder = BUILTIN[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(BUILTIN)}") from None
    return builder() if discount is None else builder(discount=discount)
