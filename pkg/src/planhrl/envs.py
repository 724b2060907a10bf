"""Deterministic, enumerable gridworlds annotated by the MazeRooms / rooms PDDL domains.

Two families share one state type:

* MiniGrid-style (``doorkey``, ``rooms-with-balls``, ``rooms-locked``, ``nine-rooms``):
  oriented agent, actions left/right/forward/pickup/drop/toggle, keys and doors.
* ``n-rooms``: agent moves up/down/left/right between rooms joined by corridor cells.

Layouts are a character map (``#`` wall, ``.`` floor, ``D`` door, ``C`` corridor,
``S`` start, ``G`` goal, ``K`` key, ``B`` ball) plus an INI manifest naming rooms,
doors and keys with the PDDL object names.
"""

from __future__ import annotations

import configparser
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

Cell = tuple[int, int]

MINIGRID_FAMILIES = ("doorkey", "rooms-with-balls", "rooms-locked", "nine-rooms")
FAMILIES = MINIGRID_FAMILIES + ("n-rooms",)
REWARD_MODES = ("minigrid-sparse", "minigrid-literal", "step-cost", "goal-only")

LEFT, RIGHT, FORWARD, PICKUP, DROP, TOGGLE = range(6)
MINIGRID_ACTIONS = ("left", "right", "forward", "pickup", "drop", "toggle")
UP, DOWN, WEST, EAST = range(4)
NROOMS_ACTIONS = ("up", "down", "left", "right")

# MiniGrid orientation: 0 east, 1 south, 2 west, 3 north
DIR_VEC = ((0, 1), (1, 0), (0, -1), (-1, 0))
MOVE_VEC = ((-1, 0), (1, 0), (0, -1), (0, 1))

STEP_COST = -0.05
LAYOUT_DIR = Path(__file__).parent / "data" / "layouts"
PDDL_DIR = Path(__file__).parent / "data" / "pddl"


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GridState:
    agent_pos: Cell
    agent_dir: int = 0
    carried: str | None = None
    doors: tuple[bool, ...] = ()  # True = locked, in EnvSpec.doors order
    keys: tuple[Cell | None, ...] = ()  # None while carried
    balls: tuple[Cell, ...] = ()
    goal: Cell | None = None
    step_count: int = field(default=0, compare=False)

    def key(self) -> tuple:
        """Hashable identity without the step counter."""
        return (self.agent_pos, self.agent_dir, self.carried, self.doors, self.keys, self.balls, self.goal)


@dataclass(frozen=True)
class Door:
    name: str
    cell: Cell
    locked: bool
    rooms: tuple[str, str]

    @property
    def room(self) -> str:
        """Room the door cell itself maps to (lexicographically first neighbour)."""
        return self.rooms[0]


@dataclass(frozen=True)
class Key:
    name: str
    cell: Cell
    room: str
    opens: frozenset[str]


@dataclass(frozen=True, eq=False)
class EnvSpec:
    family: str
    grid: tuple[str, ...]
    cell_room: dict
    room_cells: dict
    doors: tuple[Door, ...] = ()
    keys: tuple[Key, ...] = ()
    balls: tuple[Cell, ...] = ()
    start: Cell | None = None
    goal: Cell | None = None
    horizon: int = 1024
    reward_mode: str = "minigrid-sparse"
    randomize: frozenset[str] = frozenset()
    lockable: bool = True
    teleports: dict = field(default_factory=dict)
    name: str = ""
    domain_file: str | None = None
    problem_file: str | None = None
    corridors: frozenset[str] = frozenset()
    _door_at: dict = field(default_factory=dict, repr=False)
    _near_door: frozenset = field(default=frozenset(), repr=False)
    _map_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LayoutError(f"unknown family {self.family!r}")
        if self.reward_mode not in REWARD_MODES:
            raise LayoutError(f"unknown reward mode {self.reward_mode!r}")
        if self.horizon <= 0:
            raise LayoutError("horizon must be positive")
        object.__setattr__(self, "_door_at", {d.cell: i for i, d in enumerate(self.doors)})
        near = set()
        for d in self.doors:
            for dr, dc in MOVE_VEC:
                near.add((d.cell[0] + dr, d.cell[1] + dc))
        object.__setattr__(self, "_near_door", frozenset(near))

    @property
    def minigrid(self) -> bool:
        return self.family != "n-rooms"

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(range(len(MINIGRID_ACTIONS if self.minigrid else NROOMS_ACTIONS)))

    @property
    def action_names(self) -> tuple[str, ...]:
        return MINIGRID_ACTIONS if self.minigrid else NROOMS_ACTIONS

    @property
    def start_room(self) -> str | None:
        return self.cell_room.get(self.start)

    @property
    def goal_room(self) -> str | None:
        return self.cell_room.get(self.goal)

    def walkable(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < len(self.grid) and 0 <= c < len(self.grid[r]) and self.grid[r][c] != "#"

    def room_of(self, cell: Cell) -> str:
        try:
            return self.cell_room[cell]
        except KeyError:
            raise LayoutError(f"cell {cell} belongs to no room") from None

    def rooms(self) -> list[str]:
        return sorted(self.room_cells)


# ---------------------------------------------------------------------------
# layout loading


def _flood(grid: list[str], start: Cell, passable: set[str]) -> set[Cell]:
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVE_VEC:
            n = (r + dr, c + dc)
            if n in seen or not (0 <= n[0] < len(grid) and 0 <= n[1] < len(grid[n[0]])):
                continue
            if grid[n[0]][n[1]] in passable:
                seen.add(n)
                queue.append(n)
    return seen


def _cell(text: str) -> Cell:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) < 2:
        raise LayoutError(f"expected 'row, col', got {text!r}")
    return int(parts[0]), int(parts[1])


FLOOR_CHARS = set(".SGKB")


def build_spec(grid_text: str, manifest: dict[str, dict[str, str]], name: str = "") -> EnvSpec:
    """Build an :class:`EnvSpec` from a map and an already-parsed manifest."""
    grid = [line.rstrip("\n") for line in grid_text.strip("\n").splitlines()]
    if not grid:
        raise LayoutError("empty map")
    env = manifest.get("env", {})
    family = env.get("family", "n-rooms")

    cell_room: dict[Cell, str] = {}
    room_cells: dict[str, list[Cell]] = {}
    corridors = set()
    for room, where in manifest.get("rooms", {}).items():
        cell = _cell(where)
        r, c = cell
        if not (0 <= r < len(grid) and 0 <= c < len(grid[r])) or grid[r][c] in "#D":
            raise LayoutError(f"room {room} anchored on a non-floor cell {cell}")
        if cell in cell_room:
            raise LayoutError(f"rooms {room} and {cell_room[cell]} overlap")
        ch = grid[r][c]
        region = _flood(grid, cell, {"C"} if ch == "C" else FLOOR_CHARS)
        if ch == "C":
            corridors.add(room)
        for x in region:
            if x in cell_room:
                raise LayoutError(f"rooms {room} and {cell_room[x]} overlap")
            cell_room[x] = room
        room_cells[room] = sorted(region)

    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            if ch not in "#D" and (r, c) not in cell_room:
                raise LayoutError(f"cell {(r, c)} ({ch!r}) is not covered by any named room")

    doors = []
    door_cells = {}
    for dname, spec in manifest.get("doors", {}).items():
        parts = [p.strip() for p in spec.split(",")]
        cell = (int(parts[0]), int(parts[1]))
        state = parts[2] if len(parts) > 2 else "unlocked"
        if grid[cell[0]][cell[1]] != "D":
            raise LayoutError(f"door {dname} is not on a 'D' cell")
        nbrs = sorted({cell_room[(cell[0] + dr, cell[1] + dc)] for dr, dc in MOVE_VEC
                       if (cell[0] + dr, cell[1] + dc) in cell_room})
        if len(nbrs) != 2:
            raise LayoutError(f"door {dname} must separate exactly two rooms, touches {nbrs}")
        doors.append(Door(dname, cell, state == "locked", (nbrs[0], nbrs[1])))
        door_cells[cell] = dname
    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            if ch == "D" and (r, c) not in door_cells:
                raise LayoutError(f"door cell {(r, c)} is not named in the manifest")
    for d in doors:
        cell_room[d.cell] = d.room

    matches = manifest.get("keymatch", {})
    keys = []
    for kname, where in manifest.get("keys", {}).items():
        cell = _cell(where)
        if grid[cell[0]][cell[1]] != "K":
            raise LayoutError(f"key {kname} is not on a 'K' cell")
        opens = frozenset(p.strip() for p in matches.get(kname, "").split(",") if p.strip())
        unknown = opens - set(door_cells.values())
        if unknown:
            raise LayoutError(f"key {kname} matches unknown doors {sorted(unknown)}")
        keys.append(Key(kname, cell, cell_room[cell], opens))

    def find(ch: str) -> list[Cell]:
        return [(r, c) for r, row in enumerate(grid) for c, x in enumerate(row) if x == ch]

    starts, goals = find("S"), find("G")
    if len(goals) > 1:
        raise LayoutError("map has more than one 'G'")
    if len(starts) != 1:
        raise LayoutError("map needs exactly one 'S'")
    if len(find("K")) != len(keys):
        raise LayoutError("every 'K' cell must be named in [keys]")

    teleports = {_cell(k): _cell(v) for k, v in manifest.get("teleports", {}).items()}
    randomize = frozenset(p.strip() for p in env.get("randomize", "").split(",") if p.strip())
    unknown = randomize - {"agent", "goal", "key", "balls"}
    if unknown:
        raise LayoutError(f"unknown randomize entries {sorted(unknown)}")

    return EnvSpec(
        family=family,
        grid=tuple(grid),
        cell_room=cell_room,
        room_cells={k: tuple(v) for k, v in room_cells.items()},
        doors=tuple(doors),
        keys=tuple(keys),
        balls=tuple(find("B")),
        start=starts[0],
        goal=goals[0] if goals else None,
        horizon=int(env.get("horizon", 1024)),
        reward_mode=env.get("reward_mode", "minigrid-sparse" if family != "n-rooms" else "step-cost"),
        randomize=randomize,
        lockable=env.get("lockable", "true").lower() in ("1", "true", "yes"),
        teleports=teleports,
        name=name or env.get("name", ""),
        domain_file=env.get("domain"),
        problem_file=env.get("problem"),
        corridors=frozenset(corridors),
    )


def load_env(manifest_path: str | Path, **overrides) -> EnvSpec:
    """Load ``<name>.ini`` (and the map it references) from a path or a shipped layout name."""
    path = Path(manifest_path)
    if not path.exists() and not path.suffix:
        path = LAYOUT_DIR / f"{manifest_path}.ini"
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    parser.optionxform = str
    if not parser.read(path, encoding="utf8"):
        raise FileNotFoundError(path)
    manifest = {s: dict(parser[s]) for s in parser.sections()}
    env = manifest.setdefault("env", {})
    env.update({k: str(v) for k, v in overrides.items()})
    map_path = path.parent / env.get("map", path.with_suffix(".map").name)
    for k in ("domain", "problem"):
        if k in env:
            p = Path(env[k])
            if not p.is_absolute():
                local = path.parent / p
                env[k] = str(local if local.exists() else PDDL_DIR / p)
    return build_spec(map_path.read_text(encoding="utf8"), manifest, name=path.stem)


def shipped_layouts() -> list[str]:
    return sorted(p.stem for p in LAYOUT_DIR.glob("*.ini"))


# ---------------------------------------------------------------------------
# dynamics


def _free_cells(spec: EnvSpec, room: str | None, taken: set[Cell], avoid_doors: bool) -> list[Cell]:
    if room is None:
        cells = [c for r, cs in spec.room_cells.items() if r not in spec.corridors for c in cs]
    else:
        cells = list(spec.room_cells[room])
    return [
        c for c in cells
        if c not in taken and spec.grid[c[0]][c[1]] != "C"
        and not (avoid_doors and c in spec._near_door)
    ]


def reset(spec: EnvSpec, seed: int) -> GridState:
    """Deterministic initial state for ``seed``.

    Randomized elements stay inside their designated room, so the planning
    annotation of the initial state never changes (n-rooms excepted, where
    start and goal rooms are drawn from all rooms).
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    rng = random.Random(seed)
    taken: set[Cell] = set()
    nrooms = not spec.minigrid

    goal = spec.goal
    if "goal" in spec.randomize and goal is not None:
        room = None if nrooms else spec.goal_room
        pool = _free_cells(spec, room, taken, avoid_doors=not nrooms)
        if not pool:
            raise LayoutError("no free cell for the goal")
        goal = rng.choice(pool)
    if goal is not None:
        taken.add(goal)

    keys = []
    for k in spec.keys:
        cell = k.cell
        if "key" in spec.randomize:
            pool = _free_cells(spec, k.room, taken, avoid_doors=True)
            if not pool:
                raise LayoutError(f"no free cell for key {k.name}")
            cell = rng.choice(pool)
        keys.append(cell)
        taken.add(cell)

    balls = []
    for b in spec.balls:
        cell = b
        if "balls" in spec.randomize:
            pool = _free_cells(spec, spec.cell_room[b], taken, avoid_doors=True)
            if not pool:
                raise LayoutError("no free cell for a ball")
            cell = rng.choice(pool)
        balls.append(cell)
        taken.add(cell)

    pos = spec.start
    direction = 0
    if "agent" in spec.randomize:
        room = None if nrooms else spec.start_room
        pool = _free_cells(spec, room, taken, avoid_doors=False)
        if not pool:
            raise LayoutError("no free cell for the agent")
        pos = rng.choice(pool)
        if spec.minigrid:
            direction = rng.randrange(4)
    if pos in set(keys) | set(balls):
        raise LayoutError("agent start collides with an object")

    return GridState(
        agent_pos=pos,
        agent_dir=direction,
        carried=None,
        doors=tuple(d.locked for d in spec.doors),
        keys=tuple(keys),
        balls=tuple(sorted(balls)),
        goal=goal,
    )


def is_goal(spec: EnvSpec, state: GridState) -> bool:
    return state.agent_pos == state.goal


def _reward(spec: EnvSpec, at_goal: bool, steps: int) -> float:
    mode = spec.reward_mode
    if mode == "step-cost":
        return 1.0 if at_goal else STEP_COST
    if not at_goal:
        return 0.0
    if mode == "minigrid-sparse":
        return 1.0 - 0.9 * (steps / spec.horizon)
    if mode == "minigrid-literal":
        return 1.0 - 0.9 / steps
    return 1.0


def transition(spec: EnvSpec, state: GridState, action: int) -> GridState:
    """Successor state (step counter untouched). Blocked or invalid actions are no-ops."""
    if state.agent_pos == state.goal:
        return state
    if spec.minigrid:
        return _minigrid_transition(spec, state, action)
    if not 0 <= action < 4:
        return state
    dr, dc = MOVE_VEC[action]
    target = (state.agent_pos[0] + dr, state.agent_pos[1] + dc)
    if not spec.walkable(target):
        return state
    target = spec.teleports.get(target, target)
    return GridState(target, 0, None, (), (), state.balls, state.goal)


def _blocked(spec: EnvSpec, state: GridState, cell: Cell) -> bool:
    if not spec.walkable(cell):
        return True
    d = spec._door_at.get(cell)
    if d is not None and state.doors[d]:
        return True
    return cell in state.keys or cell in state.balls


def _minigrid_transition(spec: EnvSpec, s: GridState, action: int) -> GridState:
    pos, direction = s.agent_pos, s.agent_dir
    if action == LEFT:
        return GridState(pos, (direction - 1) % 4, s.carried, s.doors, s.keys, s.balls, s.goal)
    if action == RIGHT:
        return GridState(pos, (direction + 1) % 4, s.carried, s.doors, s.keys, s.balls, s.goal)
    dr, dc = DIR_VEC[direction]
    front = (pos[0] + dr, pos[1] + dc)
    if action == FORWARD:
        if _blocked(spec, s, front):
            return s
        front = spec.teleports.get(front, front)
        return GridState(front, direction, s.carried, s.doors, s.keys, s.balls, s.goal)
    on_door = pos in spec._door_at
    if action == PICKUP:
        if s.carried is not None or on_door or front not in s.keys:
            return s
        i = s.keys.index(front)
        keys = s.keys[:i] + (None,) + s.keys[i + 1:]
        return GridState(pos, direction, spec.keys[i].name, s.doors, keys, s.balls, s.goal)
    if action == DROP:
        if s.carried is None or on_door or front in spec._near_door:
            return s
        if not spec.walkable(front) or front in spec._door_at or front == s.goal:
            return s
        if front in s.keys or front in s.balls or spec.grid[front[0]][front[1]] == "C":
            return s
        if _splits_floor(spec, s, front):
            return s
        i = next(j for j, k in enumerate(spec.keys) if k.name == s.carried)
        keys = s.keys[:i] + (front,) + s.keys[i + 1:]
        return GridState(pos, direction, None, s.doors, keys, s.balls, s.goal)
    if action == TOGGLE:
        d = spec._door_at.get(front)
        if d is None or s.carried is None:
            return s
        door = spec.doors[d]
        key = next(k for k in spec.keys if k.name == s.carried)
        if door.name not in key.opens:
            return s
        locked = s.doors[d]
        if not locked and not spec.lockable:
            return s
        doors = s.doors[:d] + (not locked,) + s.doors[d + 1:]
        return GridState(pos, direction, s.carried, doors, s.keys, s.balls, s.goal)
    return s


def _splits_floor(spec: EnvSpec, s: GridState, cell: Cell) -> bool:
    """Would blocking ``cell`` cut the free floor around it into separate pieces?

    Keys, balls and the goal cell count as obstacles; doors count as floor whatever
    their lock state.
    """
    blocked = set(k for k in s.keys if k is not None) | set(s.balls) | {s.goal, cell}

    def free(c):
        return spec.walkable(c) and c not in blocked

    around = [(cell[0] + dr, cell[1] + dc) for dr, dc in MOVE_VEC]
    around = [c for c in around if free(c)]
    if len(around) <= 1:
        return False
    targets = set(around[1:])
    seen = {around[0]}
    queue = deque([around[0]])
    while queue and targets:
        r, c = queue.popleft()
        for dr, dc in MOVE_VEC:
            n = (r + dr, c + dc)
            if n not in seen and free(n):
                seen.add(n)
                targets.discard(n)
                queue.append(n)
    return bool(targets)


def step(spec: EnvSpec, state: GridState, action: int) -> tuple[GridState, float, bool]:
    """One environment step: ``(next_state, reward, done)``; done at the goal or the horizon."""
    nxt = transition(spec, state, action)
    steps = state.step_count + 1
    nxt = GridState(nxt.agent_pos, nxt.agent_dir, nxt.carried, nxt.doors, nxt.keys, nxt.balls, nxt.goal, steps)
    at_goal = nxt.agent_pos == nxt.goal
    return nxt, _reward(spec, at_goal, steps), at_goal or steps >= spec.horizon


# ---------------------------------------------------------------------------
# state mapping


def map_state(spec: EnvSpec, state: GridState) -> frozenset[tuple]:
    """The planning atoms describing ``state`` (agent room, keys, door lock states)."""
    cache_key = state.key()
    hit = spec._map_cache.get(cache_key)
    if hit is not None:
        return hit
    room = spec.room_of(state.agent_pos)
    if not spec.minigrid:
        atoms = frozenset({("in-room", room)})
    else:
        atoms = {("at-agent", room)}
        for door, locked in zip(spec.doors, state.doors):
            atoms.add(("locked" if locked else "unlocked", door.name))
        for key, cell in zip(spec.keys, state.keys):
            if cell is None:
                atoms.add(("carry", key.name))
            else:
                atoms.add(("at", key.name, spec.room_of(cell)))
        if state.carried is None:
            atoms.add(("empty-hand",))
        atoms = frozenset(atoms)
    if len(spec._map_cache) < 2_000_000:
        spec._map_cache[cache_key] = atoms
    return atoms


def goal_atoms(spec: EnvSpec, state: GridState) -> frozenset[tuple]:
    """Planning goal matching the episode's goal cell."""
    room = spec.room_of(state.goal)
    return frozenset({("in-room", room)} if not spec.minigrid else {("at-agent", room)})


class EnumerationCapExceeded(RuntimeError):
    pass


def enumerate_states(
    spec: EnvSpec, seed: int = 0, cap: int = 2_000_000, start: GridState | None = None
) -> list[GridState]:
    """All states reachable from ``reset(spec, seed)`` (or ``start``), BFS order.

    Goal states are terminal and not expanded; the step counter is ignored.
    """
    s0 = reset(spec, seed) if start is None else start
    s0 = GridState(*s0.key())
    states = [s0]
    seen = {s0}
    queue = deque([s0])
    actions = spec.actions
    while queue:
        s = queue.popleft()
        if s.agent_pos == s.goal:
            continue
        for a in actions:
            t = transition(spec, s, a)
            if t not in seen:
                if len(states) >= cap:
                    raise EnumerationCapExceeded(f"more than {cap} states")
                seen.add(t)
                states.append(t)
                queue.append(t)
    return states


def render(spec: EnvSpec, state: GridState) -> str:
    rows = [list(r.replace("S", ".").replace("G", ".").replace("K", ".").replace("B", ".")) for r in spec.grid]
    for door, locked in zip(spec.doors, state.doors):
        rows[door.cell[0]][door.cell[1]] = "L" if locked else "D"
    for cell in state.keys:
        if cell is not None:
            rows[cell[0]][cell[1]] = "K"
    for cell in state.balls:
        rows[cell[0]][cell[1]] = "B"
    if state.goal is not None:
        rows[state.goal[0]][state.goal[1]] = "G"
    arrow = ">v<^"[state.agent_dir] if spec.minigrid else "A"
    rows[state.agent_pos[0]][state.agent_pos[1]] = arrow
    return "\n".join("".join(r) for r in rows)


def agent_cells(spec: EnvSpec) -> Iterable[Cell]:
    return sorted(spec.cell_room)
