"""Slow, obviously-correct reference computations used to freeze expected values.

Nothing here imports the grounding, search or environment code under test except
for reading the raw ASTs and layout files.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from pathlib import Path

from planhrl import pddl

DATA = Path(pddl.__file__).parent / "data"
PDDL_DIR = DATA / "pddl"
LAYOUT_DIR = DATA / "layouts"

MAZE_DOMAIN = PDDL_DIR / "mazerooms-domain.pddl"
ROOMS_DOMAIN = PDDL_DIR / "rooms-domain.pddl"
SHIPPED_PROBLEMS = {
    "doorkey": (MAZE_DOMAIN, PDDL_DIR / "mazerooms-8by8-doorkey.pddl"),
    "balls": (MAZE_DOMAIN, PDDL_DIR / "mazerooms-2by2-balls.pddl"),
    "locked": (MAZE_DOMAIN, PDDL_DIR / "mazerooms-2by2-locked.pddl"),
    "nine-rooms": (MAZE_DOMAIN, PDDL_DIR / "mazerooms-3by3-lockeddoors.pddl"),
    "rooms-16-12": (ROOMS_DOMAIN, PDDL_DIR / "rooms-1-16-12.pddl"),
}


def asts(name: str):
    dom, prob = SHIPPED_PROBLEMS[name]
    return pddl.parse_domain(dom.read_text()), pddl.parse_problem(prob.read_text())


def _is_a(domain, typ: str, want: str) -> bool:
    parents = dict(domain.types)
    seen = set()
    while typ not in seen:
        if typ == want:
            return True
        seen.add(typ)
        typ = parents.get(typ, "object")
    return want == "object"


def brute_ground(domain, problem) -> list[tuple[str, frozenset, frozenset, frozenset]]:
    """Every typed instantiation via a full cartesian product, filtered on static facts in init."""
    touched = {atom[0] for a in domain.actions for atom, _ in a.effect}
    statics = {p.name for p in domain.predicates} - touched
    ops = []
    for action in domain.actions:
        pools = [[o for o, t in problem.objects if _is_a(domain, t, typ)] for _, typ in action.params]
        for combo in itertools.product(*pools):
            b = dict(zip((v for v, _ in action.params), combo))
            sub = lambda atom: (atom[0],) + tuple(b.get(x, x) for x in atom[1:])  # noqa: E731
            pre = [sub(a) for a in action.precondition]
            if any(a[0] in statics and a not in problem.init for a in pre):
                continue
            add = frozenset(sub(a) for a, pos in action.effect if pos)
            dele = frozenset(sub(a) for a, pos in action.effect if not pos) - add
            name = "(" + " ".join((action.name,) + combo) + ")"
            ops.append((name, frozenset(a for a in pre if a[0] not in statics), add, dele))
    return ops


def brute_reachable(init: frozenset, ops) -> set[frozenset]:
    seen = {init}
    queue = deque([init])
    while queue:
        s = queue.popleft()
        for _, pre, add, dele in ops:
            if pre <= s:
                t = (s - dele) | add
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
    return seen


def brute_distance(init: frozenset, goal: frozenset, ops) -> int | None:
    dist = {init: 0}
    queue = deque([init])
    while queue:
        s = queue.popleft()
        if goal <= s:
            return dist[s]
        for _, pre, add, dele in ops:
            if pre <= s:
                t = (s - dele) | add
                if t not in dist:
                    dist[t] = dist[s] + 1
                    queue.append(t)
    return None


def additive(state: frozenset, goal: frozenset, ops) -> float:
    """h_add by Bellman-Ford style relaxation until nothing changes."""
    cost = {f: 0.0 for f in state}
    for _ in range(len(ops) + len(state) + 2):
        changed = False
        for _, pre, add, _ in ops:
            if all(f in cost for f in pre):
                c = 1 + sum(cost[f] for f in pre)
                for f in add:
                    if c < cost.get(f, math.inf):
                        cost[f] = c
                        changed = True
        if not changed:
            break
    return sum(cost.get(f, math.inf) for f in goal)


def walkable_cells(map_path: Path) -> int:
    """Flood fill over non-wall characters from the first floor cell."""
    grid = map_path.read_text().splitlines()
    cells = {(r, c) for r, row in enumerate(grid) for c, ch in enumerate(row) if ch != "#"}
    start = min(cells)
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for nb in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if nb in cells and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen)


def grid_bfs(map_path: Path, start, goal) -> int:
    grid = map_path.read_text().splitlines()
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            return dist[cell]
        r, c = cell
        for nb in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
            if grid[nb[0]][nb[1]] != "#" and nb not in dist:
                dist[nb] = dist[cell] + 1
                queue.append(nb)
    raise ValueError("goal unreachable")


if __name__ == "__main__":
    for name in SHIPPED_PROBLEMS:
        d, p = asts(name)
        ops = brute_ground(d, p)
        touched = {atom[0] for a in d.actions for atom, _ in a.effect}
        init = frozenset(a for a in p.init if a[0] in touched)
        goal = frozenset(p.goal)
        reach = brute_reachable(init, ops)
        print(name, "ops", len(ops), "reachable", len(reach), "dist", brute_distance(init, goal, ops),
              "hadd", additive(init, goal, ops))
    for m in sorted(LAYOUT_DIR.glob("*.map")):
        print(m.stem, "walkable", walkable_cells(m))
