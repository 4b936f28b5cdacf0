"""Counter-augmented state-lattice A* planner.

A lattice state is a cell, a heading index (multiples of 360/H degrees) and
one usage counter per dictionary primitive. Informative motion primitives are
free and bump their counter; basic primitives connect them at a fixed cost.
Geometry is kept in cell units: cell (i, j) spans [i - 0.5, i + 0.5] x
[j - 0.5, j + 0.5]; a swept box collides when it overlaps a blocked cell with
positive area or leaves the map.
"""
import heapq
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.config import LATTICE_HEADINGS, BasicPrimitiveSpec, LibrarySection, PlanningSection
from services.design import Schedule
from services.errors import ConfigError, NonRepresentablePrimitiveError, PlanningInfeasibleError
from services.primitives import PrimitiveLibrary, basic_maneuver
from services.vessel import Pose, VesselParams, integrate_pose

logger = logging.getLogger(__name__)

Box = Tuple[float, float, float, float]
Delta = Tuple[int, int, int]

# integer rotation by one heading step (90 degrees)
_ROTATIONS = {0: ((1, 0), (0, 1)), 1: ((0, -1), (1, 0)), 2: ((-1, 0), (0, -1)), 3: ((0, 1), (-1, 0))}


@dataclass(frozen=True)
class LatticeState:
    cell_x: int
    cell_y: int
    heading_idx: int
    counters: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cell_x": self.cell_x,
            "cell_y": self.cell_y,
            "heading_idx": self.heading_idx,
            "counters": list(self.counters),
        }


@dataclass(frozen=True, eq=False)
class OccupancyMap:
    """Blocked cells as a boolean grid indexed ``[cell_y, cell_x]``."""

    blocked: np.ndarray
    cell_size: float = 1.0

    def __post_init__(self):
        grid = np.asarray(self.blocked, dtype=bool)
        if grid.ndim != 2 or grid.size == 0:
            raise ConfigError("occupancy grid must be a non-empty 2-D array", stage="plan")
        if self.cell_size <= 0:
            raise ConfigError("cell size must be positive", stage="plan")
        object.__setattr__(self, "blocked", grid)

    @property
    def width(self) -> int:
        return self.blocked.shape[1]

    @property
    def height(self) -> int:
        return self.blocked.shape[0]

    def inside(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height

    def is_free(self, cx: int, cy: int) -> bool:
        return self.inside(cx, cy) and not self.blocked[cy, cx]

    @classmethod
    def empty(cls, width: int, height: int, cell_size: float = 1.0) -> "OccupancyMap":
        return cls(np.zeros((height, width), dtype=bool), cell_size)

    @classmethod
    def from_cells(cls, width: int, height: int, cells, cell_size: float = 1.0) -> "OccupancyMap":
        grid = np.zeros((height, width), dtype=bool)
        for cx, cy in cells:
            if not 0 <= cx < width or not 0 <= cy < height:
                raise ConfigError(f"blocked cell ({cx}, {cy}) lies outside the map", stage="plan")
            grid[cy, cx] = True
        return cls(grid, cell_size)

    @classmethod
    def from_text(cls, text: str, cell_size: float = 1.0) -> "OccupancyMap":
        """'#' marks a blocked cell, '.' a free one; the first line is the top row."""
        rows = [line.rstrip("\n") for line in text.splitlines() if line.strip()]
        if not rows or len({len(row) for row in rows}) != 1:
            raise ConfigError("map rows must be non-empty and of equal width", stage="plan")
        unknown = set("".join(rows)) - {"#", "."}
        if unknown:
            raise ConfigError(f"unexpected map characters {sorted(unknown)}", stage="plan")
        grid = np.array([[char == "#" for char in row] for row in reversed(rows)], dtype=bool)
        return cls(grid, cell_size)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], cell_size: float = 1.0) -> "OccupancyMap":
        return cls.from_cells(
            int(data["width"]), int(data["height"]),
            [tuple(cell) for cell in data.get("blocked", [])],
            float(data.get("cell_size", cell_size)),
        )

    @classmethod
    def load(cls, path, cell_size: float = 1.0) -> "OccupancyMap":
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise ConfigError(f"map file not found: {path}", stage="plan")
        if path.suffix == ".json":
            return cls.from_dict(json.loads(text), cell_size)
        return cls.from_text(text, cell_size)

    def to_text(self) -> str:
        return "\n".join("".join("#" if cell else "." for cell in row) for row in self.blocked[::-1]) + "\n"


@dataclass(frozen=True, eq=False)
class MotionPrimitive:
    """Lattice edge, precomputed for every start heading.

    ``deltas[h]`` and ``swept_boxes[h]`` hold the cell displacement and the
    boxes (relative to the start cell centre) when starting at heading ``h``.
    """

    id: int
    name: str
    kind: str
    deltas: Tuple[Delta, ...]
    swept_boxes: Tuple[Tuple[Box, ...], ...]
    cost: float
    q: Optional[int] = None
    input_signal: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("informative", "basic"):
            raise ValueError(f"unknown primitive kind '{self.kind}'")
        if (self.kind == "informative") != (self.cost == 0):
            raise ValueError("informative primitives cost nothing and basic primitives cost something")
        if self.kind == "informative" and self.q is None:
            raise ValueError("an informative primitive needs its dictionary id")

    @property
    def informative(self) -> bool:
        return self.kind == "informative"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "kind": self.kind,
            "q": self.q,
            "cost": self.cost,
            "deltas": [list(delta) for delta in self.deltas],
        }


def rotate_cells(dx: float, dy: float, steps: int) -> Tuple[float, float]:
    (a, b), (c, d) = _ROTATIONS[steps % 4]
    return a * dx + b * dy, c * dx + d * dy


def _boxes_from_path(points: np.ndarray, inflation: float, stride: int) -> Tuple[Box, ...]:
    stride = max(int(stride), 1)
    boxes = []
    for start in range(0, max(len(points) - 1, 1), stride):
        chunk = points[start:start + stride + 1]
        lo = chunk.min(axis=0) - inflation
        hi = chunk.max(axis=0) + inflation
        boxes.append(tuple(round(float(value), 9) for value in (lo[0], lo[1], hi[0], hi[1])))
    return tuple(boxes)


def _rotate_box(box: Box, steps: int) -> Box:
    corners = [rotate_cells(x, y, steps) for x in (box[0], box[2]) for y in (box[1], box[3])]
    xs = [c[0] for c in corners]
    ys = [c[1] for c in corners]
    return (min(xs), min(ys), max(xs), max(ys))


def motion_primitive_from_path(
    id: int,
    name: str,
    kind: str,
    delta: Delta,
    path_cells: np.ndarray,
    cost: float,
    headings: int = 4,
    inflation: float = 0.5,
    box_stride: int = 8,
    q: Optional[int] = None,
    input_signal: Optional[np.ndarray] = None,
) -> MotionPrimitive:
    """Build a primitive from its heading-0 delta and swept path (in cells)."""
    if headings != LATTICE_HEADINGS:
        raise ConfigError("only four heading levels are supported", stage="plan")
    points = np.atleast_2d(np.asarray(path_cells, dtype=float))
    base_boxes = _boxes_from_path(points, inflation, box_stride)
    deltas, boxes = [], []
    for h in range(headings):
        dx, dy = rotate_cells(delta[0], delta[1], h)
        deltas.append((int(dx), int(dy), int(delta[2])))
        boxes.append(tuple(_rotate_box(box, h) for box in base_boxes))
    return MotionPrimitive(id, name, kind, tuple(deltas), tuple(boxes), cost, q, input_signal)


def snap_displacement(displacement: Pose, cell_size: float, headings: int = 4) -> Delta:
    dh = int(round(displacement.psi / (2.0 * math.pi / headings)))
    return (
        int(round(displacement.x / cell_size)),
        int(round(displacement.y / cell_size)),
        dh,
    )


def build_primitive_set(
    schedule: Schedule,
    library: PrimitiveLibrary,
    basic_specs: Sequence[BasicPrimitiveSpec],
    lattice: PlanningSection,
    params: VesselParams,
    dt: float,
    settings: LibrarySection = LibrarySection(),
) -> Tuple[MotionPrimitive, ...]:
    """Informative primitives for every scheduled q plus the basic connectors.

    Informative edges replay one segment of the primitive from heading 0; the
    swept path is sampled every ``lattice.box_stride`` steps.
    """
    cell = lattice.cell_size
    primitives: List[MotionPrimitive] = []
    for entry in schedule.segments:
        if entry.repetitions <= 0:
            continue
        primitive = library.get(entry.q)
        poses = integrate_pose(primitive.segment_trajectory(), dt)
        end = poses[-1]
        displacement = Pose(end[0], end[1], end[2])
        delta = snap_displacement(displacement, cell, lattice.headings)
        if abs(displacement.x) < cell / 2 and abs(displacement.y) < cell / 2 and delta[2] == 0:
            raise NonRepresentablePrimitiveError(
                f"primitive '{primitive.label}' moves less than half a cell "
                f"(dx={displacement.x:.3f} m, dy={displacement.y:.3f} m)"
            )
        primitives.append(motion_primitive_from_path(
            len(primitives) + 1, primitive.label, "informative", delta, poses[:, :2] / cell, 0.0,
            lattice.headings, lattice.inflation, lattice.box_stride, q=entry.q,
            input_signal=primitive.segment_signal(),
        ))
    for spec in basic_specs:
        dx, dy, dh = spec.delta
        path = np.array([[0.0, 0.0], [float(dx), float(dy)]])
        signal = basic_maneuver(spec, params, cell, dt, settings).input_signal
        primitives.append(motion_primitive_from_path(
            len(primitives) + 1, spec.name, "basic", (dx, dy, dh), path, lattice.basic_cost,
            lattice.headings, lattice.inflation, box_stride=1, input_signal=signal,
        ))
    logger.info("[PLANNER] %d motion primitives", len(primitives))
    return tuple(primitives)


def _box_collides(box: Box, occupancy: OccupancyMap) -> bool:
    x0, y0, x1, y1 = box
    if x0 < -0.5 or y0 < -0.5 or x1 > occupancy.width - 0.5 or y1 > occupancy.height - 0.5:
        return True
    # cells overlapping the box with positive area
    i0 = int(math.floor(x0 - 0.5)) + 1
    i1 = int(math.ceil(x1 + 0.5)) - 1
    j0 = int(math.floor(y0 - 0.5)) + 1
    j1 = int(math.ceil(y1 + 0.5)) - 1
    if i1 < i0 or j1 < j0:
        return False
    return bool(occupancy.blocked[max(j0, 0):j1 + 1, max(i0, 0):i1 + 1].any())


def collision_check(primitive: MotionPrimitive, state: LatticeState, occupancy: OccupancyMap) -> bool:
    """True when every swept box, placed at ``state``, stays clear."""
    for bx0, by0, bx1, by1 in primitive.swept_boxes[state.heading_idx]:
        box = (state.cell_x + bx0, state.cell_y + by0, state.cell_x + bx1, state.cell_y + by1)
        if _box_collides(box, occupancy):
            return False
    return True


def heuristic(
    state: LatticeState,
    goal: Tuple[int, int, int],
    required: Sequence[int],
    weights: Tuple[float, float, float],
    cell_size: float = 1.0,
    headings: int = 4,
) -> float:
    w1, w2, w3 = weights
    if min(weights) < 0:
        raise ValueError("heuristic weights must be non-negative")
    distance = math.hypot(state.cell_x - goal[0], state.cell_y - goal[1]) * cell_size
    gap = abs(state.heading_idx - goal[2]) % headings
    gap = min(gap, headings - gap)
    remaining = sum(max(n - g, 0) for n, g in zip(required, state.counters))
    return w1 * distance + w2 * gap + w3 * remaining


@dataclass(frozen=True)
class PlanStep:
    primitive_id: int
    start: LatticeState
    end: LatticeState


@dataclass(frozen=True, eq=False)
class Plan:
    states: Tuple[LatticeState, ...]
    primitive_ids: Tuple[int, ...]
    total_cost: float
    expanded: int = 0

    @property
    def steps(self) -> List[PlanStep]:
        return [
            PlanStep(pid, self.states[k], self.states[k + 1])
            for k, pid in enumerate(self.primitive_ids)
        ]

    def stitched_signal(self, primitives: Sequence[MotionPrimitive]) -> np.ndarray:
        """Concatenated input signals of the plan, ready for replay."""
        by_id = {p.id: p for p in primitives}
        pieces = [by_id[pid].input_signal for pid in self.primitive_ids if by_id[pid].input_signal is not None]
        return np.concatenate(pieces) if pieces else np.zeros((0, 3))

    def segment_labels(self, primitives: Sequence[MotionPrimitive]) -> np.ndarray:
        """Per-sample step index of the stitched signal."""
        by_id = {p.id: p for p in primitives}
        labels = [
            np.full(len(by_id[pid].input_signal), k)
            for k, pid in enumerate(self.primitive_ids)
            if by_id[pid].input_signal is not None
        ]
        return np.concatenate(labels) if labels else np.zeros(0, dtype=int)

    def to_dict(self, primitives: Sequence[MotionPrimitive] = (), cell_size: float = 1.0) -> Dict[str, Any]:
        by_id = {p.id: p for p in primitives}
        quarter = 360.0 / 4

        def pose(state: LatticeState) -> List[float]:
            return [state.cell_x * cell_size, state.cell_y * cell_size, state.heading_idx * quarter]

        return {
            "total_cost": self.total_cost,
            "expanded": self.expanded,
            "steps": [
                {
                    "primitive_id": step.primitive_id,
                    "name": by_id[step.primitive_id].name if step.primitive_id in by_id else None,
                    "start_pose": pose(step.start),
                    "end_pose": pose(step.end),
                    "counters": list(step.end.counters),
                }
                for step in self.steps
            ],
            "states": [state.to_dict() for state in self.states],
        }


def successor(primitive: MotionPrimitive, state: LatticeState, headings: int = 4) -> LatticeState:
    dx, dy, dh = primitive.deltas[state.heading_idx]
    counters = state.counters
    if primitive.informative:
        index = primitive.q - 1
        counters = counters[:index] + (counters[index] + 1,) + counters[index + 1:]
    return LatticeState(state.cell_x + dx, state.cell_y + dy, (state.heading_idx + dh) % headings, counters)


def astar_plan(
    start: Tuple[int, int, int],
    goal: Tuple[int, int, int],
    required: Sequence[int],
    primitives: Sequence[MotionPrimitive],
    occupancy: OccupancyMap,
    weights: Tuple[float, float, float] = (1.0, 0.5, 5.0),
    headings: int = 4,
    max_expansions: int = 2_000_000,
    trace: Optional[List[Tuple[LatticeState, float, float]]] = None,
) -> Plan:
    """A* over (cell, heading, counters) from zero counters to ``required``.

    Heap entries are ordered by (f, h, insertion order). Counters never exceed
    ``required``. ``trace`` collects (state, g, h) for every expansion.
    """
    required = tuple(int(n) for n in required)
    for label, (cx, cy, _) in (("start", start), ("goal", goal)):
        if not occupancy.is_free(cx, cy):
            raise ConfigError(f"{label} cell ({cx}, {cy}) is blocked or outside the map", stage="plan")
    missing = {q for q, n in enumerate(required, start=1) if n > 0} - {p.q for p in primitives if p.informative}
    if missing:
        raise PlanningInfeasibleError((0,) * len(required), 0)

    origin = LatticeState(start[0], start[1], start[2] % headings, (0,) * len(required))
    target = (goal[0], goal[1], goal[2] % headings)
    cell = occupancy.cell_size
    collision_cache: Dict[Tuple[int, int, int, int], bool] = {}

    def h_value(state: LatticeState) -> float:
        return heuristic(state, target, required, weights, cell, headings)

    best_g = {origin: 0.0}
    parents: Dict[LatticeState, Tuple[LatticeState, int]] = {}
    closed = set()
    insertion = 0
    h0 = h_value(origin)
    frontier = [(h0, h0, insertion, origin)]
    reached = origin.counters
    expanded = 0

    while frontier:
        _, h_current, _, state = heapq.heappop(frontier)
        if state in closed:
            continue
        closed.add(state)
        g = best_g[state]
        expanded += 1
        if trace is not None:
            trace.append((state, g, h_current))
        if (sum(state.counters), state.counters) > (sum(reached), reached):
            reached = state.counters
        if (state.cell_x, state.cell_y, state.heading_idx) == target and state.counters == required:
            return _reconstruct(state, parents, g, expanded)
        if expanded >= max_expansions:
            break

        for primitive in primitives:
            if primitive.informative and state.counters[primitive.q - 1] >= required[primitive.q - 1]:
                continue
            key = (primitive.id, state.cell_x, state.cell_y, state.heading_idx)
            free = collision_cache.get(key)
            if free is None:
                free = collision_check(primitive, state, occupancy)
                collision_cache[key] = free
            if not free:
                continue
            nxt = successor(primitive, state, headings)
            g_next = g + primitive.cost
            if nxt in closed or g_next >= best_g.get(nxt, math.inf):
                continue
            best_g[nxt] = g_next
            parents[nxt] = (state, primitive.id)
            h_next = h_value(nxt)
            insertion += 1
            heapq.heappush(frontier, (g_next + h_next, h_next, insertion, nxt))

    logger.warning("[PLANNER] search ended after %d expansions without a plan", expanded)
    raise PlanningInfeasibleError(reached, expanded)


def _reconstruct(
    state: LatticeState,
    parents: Dict[LatticeState, Tuple[LatticeState, int]],
    cost: float,
    expanded: int,
) -> Plan:
    states = [state]
    ids = []
    while state in parents:
        state, pid = parents[state]
        states.append(state)
        ids.append(pid)
    logger.info("[PLANNER] plan of %d steps, cost %g, %d expansions", len(ids), cost, expanded)
    return Plan(tuple(reversed(states)), tuple(reversed(ids)), float(cost), expanded)


def verify_plan(
    plan: Plan,
    primitives: Sequence[MotionPrimitive],
    occupancy: OccupancyMap,
    required: Sequence[int],
    headings: int = 4,
) -> List[str]:
    """Independent re-check of a plan; returns the list of violations."""
    by_id = {p.id: p for p in primitives}
    problems = []
    if len(plan.states) != len(plan.primitive_ids) + 1:
        return ["state and primitive sequences do not line up"]
    basic_cost = 0.0
    for k, pid in enumerate(plan.primitive_ids):
        primitive = by_id.get(pid)
        if primitive is None:
            problems.append(f"step {k}: unknown primitive {pid}")
            continue
        start, end = plan.states[k], plan.states[k + 1]
        if successor(primitive, start, headings) != end:
            problems.append(f"step {k}: {primitive.name} does not link the recorded states")
        for bx0, by0, bx1, by1 in primitive.swept_boxes[start.heading_idx]:
            box = (start.cell_x + bx0, start.cell_y + by0, start.cell_x + bx1, start.cell_y + by1)
            if _box_collides(box, occupancy):
                problems.append(f"step {k}: {primitive.name} collides")
                break
        if any(b < a for a, b in zip(start.counters, end.counters)):
            problems.append(f"step {k}: counters decrease")
        if not primitive.informative:
            basic_cost += primitive.cost
    if plan.states and tuple(plan.states[-1].counters) != tuple(required):
        problems.append(f"final counters {list(plan.states[-1].counters)} differ from {list(required)}")
    if not math.isclose(basic_cost, plan.total_cost, abs_tol=1e-9):
        problems.append(f"cost {plan.total_cost} differs from the basic-primitive cost {basic_cost}")
    return problems
