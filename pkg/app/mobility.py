"""Manhattan-grid vehicle mobility.

Horizontal streets run along y = j * block for j < n_rows, vertical streets
along x = i * block for i < n_cols. At every street node the vehicle goes
straight, left or right with probabilities 0.5 / 0.25 / 0.25. A draw that
points off the grid is redrawn among the available directions, and a dead end
forces a U-turn.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from app.errors import ConfigurationError
from app.schemas import GridSection

logger = logging.getLogger(__name__)

TURN_PROBABILITIES = {"straight": 0.5, "left": 0.25, "right": 0.25}
_EPS = 1e-9


@dataclass(frozen=True)
class TurnEvent:
    slot: int
    direction: str  # straight | left | right | u_turn
    drawn: str
    forced: bool


@dataclass
class Trajectory:
    positions: np.ndarray  # (n_slots, 2) meters
    headings: np.ndarray  # (n_slots, 2) unit vectors
    speed: float
    slot_duration_s: float
    turn_events: List[TurnEvent] = field(default_factory=list)

    @property
    def n_slots(self) -> int:
        return int(self.positions.shape[0])


class ManhattanGrid:
    """Street lattice with the node and extent queries the walker needs."""

    def __init__(self, grid: GridSection):
        if grid.n_rows < 0 or grid.n_cols < 0 or grid.n_rows + grid.n_cols < 1:
            raise ConfigurationError("grid needs at least one street", field="channel.grid")
        self.n_rows = grid.n_rows
        self.n_cols = grid.n_cols
        self.block = float(grid.block_m)
        self.width = self.block * (self.n_cols - 1) if self.n_cols >= 2 else self.block
        self.height = self.block * (self.n_rows - 1) if self.n_rows >= 2 else self.block

    @property
    def intersection_count(self) -> int:
        return self.n_rows * self.n_cols

    def on_horizontal(self, y: float) -> bool:
        j = round(y / self.block)
        return 0 <= j < self.n_rows and abs(y - j * self.block) < _EPS

    def on_vertical(self, x: float) -> bool:
        i = round(x / self.block)
        return 0 <= i < self.n_cols and abs(x - i * self.block) < _EPS

    def contains(self, p: np.ndarray) -> bool:
        x, y = float(p[0]), float(p[1])
        on_h = self.on_horizontal(y) and -_EPS <= x <= self.width + _EPS
        on_v = self.on_vertical(x) and -_EPS <= y <= self.height + _EPS
        return on_h or on_v

    def can_move(self, p: np.ndarray, heading: np.ndarray) -> bool:
        x, y = float(p[0]), float(p[1])
        hx, hy = int(round(heading[0])), int(round(heading[1]))
        if hy == 0:
            if not self.on_horizontal(y):
                return False
            return x < self.width - _EPS if hx > 0 else x > _EPS
        if not self.on_vertical(x):
            return False
        return y < self.height - _EPS if hy > 0 else y > _EPS

    def distance_to_stop(self, p: np.ndarray, heading: np.ndarray) -> float:
        """Distance to the next node or street end along the heading."""
        hx, hy = int(round(heading[0])), int(round(heading[1]))
        coord, limit, cross = (p[0], self.width, self.n_cols) if hy == 0 else (p[1], self.height, self.n_rows)
        sign = hx if hy == 0 else hy
        stops = [k * self.block for k in range(cross)] + [0.0, limit]
        if sign > 0:
            ahead = [s for s in stops if s > coord + _EPS]
            return min(ahead) - coord
        ahead = [s for s in stops if s < coord - _EPS]
        return coord - max(ahead)

    def snap(self, p: np.ndarray) -> np.ndarray:
        return np.round(p / self.block * 1e6) / 1e6 * self.block


def _turn(heading: np.ndarray, direction: str) -> np.ndarray:
    hx, hy = heading
    if direction == "straight":
        return np.array([hx, hy])
    if direction == "left":
        return np.array([-hy, hx])
    if direction == "right":
        return np.array([hy, -hx])
    return np.array([-hx, -hy])


def _choose_direction(grid: ManhattanGrid, p: np.ndarray, heading: np.ndarray,
                      rng: np.random.Generator) -> Tuple[str, str, bool]:
    names = list(TURN_PROBABILITIES)
    probs = np.array([TURN_PROBABILITIES[n] for n in names])
    pick = names[rng.choice(len(names), p=probs)]
    if grid.can_move(p, _turn(heading, pick)):
        return pick, pick, False
    available = [i for i, n in enumerate(names) if grid.can_move(p, _turn(heading, n))]
    if not available:
        return "u_turn", pick, True
    sub = probs[available] / probs[available].sum()
    return names[available[rng.choice(len(available), p=sub)]], pick, True


def _start(grid: ManhattanGrid, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    horizontal = grid.n_rows > 0 and (grid.n_cols == 0 or rng.random() < 0.5)
    if horizontal:
        j = rng.integers(grid.n_rows)
        p = np.array([rng.uniform(0.0, grid.width), j * grid.block])
        h = np.array([1.0, 0.0]) if rng.random() < 0.5 else np.array([-1.0, 0.0])
    else:
        i = rng.integers(grid.n_cols)
        p = np.array([i * grid.block, rng.uniform(0.0, grid.height)])
        h = np.array([0.0, 1.0]) if rng.random() < 0.5 else np.array([0.0, -1.0])
    if not grid.can_move(p, h):
        h = -h
    return p, h


def generate_trajectory(grid_cfg: GridSection, speed_mps: float, duration_slots: int,
                        seed: int, slot_duration_s: float = 1e-4) -> Trajectory:
    """Walk one vehicle over the grid for duration_slots slots.

    Args:
        grid_cfg: Street grid
        speed_mps: Constant vehicle speed
        duration_slots: Number of positions to produce
        seed: Seed for start point and turn draws
        slot_duration_s: Time between consecutive positions

    Returns:
        Trajectory with one position per slot
    """
    if speed_mps <= 0:
        raise ConfigurationError("speed must be positive", field="channel.speed_mps")
    if duration_slots < 1:
        raise ConfigurationError("duration must be at least one slot", field="duration_slots")
    grid = ManhattanGrid(grid_cfg)
    rng = np.random.default_rng(seed)
    p, h = _start(grid, rng)

    step = speed_mps * slot_duration_s
    positions = np.empty((duration_slots, 2))
    headings = np.empty((duration_slots, 2))
    events: List[TurnEvent] = []
    for m in range(duration_slots):
        positions[m] = p
        headings[m] = h
        remaining = step
        while remaining > _EPS:
            gap = grid.distance_to_stop(p, h)
            if remaining < gap - _EPS:
                p = p + remaining * h
                break
            p = grid.snap(p + gap * h)
            remaining -= gap
            direction, drawn, forced = _choose_direction(grid, p, h, rng)
            h = _turn(h, direction).astype(float)
            events.append(TurnEvent(slot=m + 1, direction=direction, drawn=drawn, forced=forced))

    logger.debug(f"Trajectory seed={seed}: {duration_slots} slots, {len(events)} node decisions")
    return Trajectory(positions=positions, headings=headings, speed=float(speed_mps),
                      slot_duration_s=float(slot_duration_s), turn_events=events)
