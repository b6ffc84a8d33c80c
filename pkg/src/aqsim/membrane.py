"""Membrane motion tracking the support of the state.

Grains sit on a cubic lattice, one grain per basic state.  A membrane cell
is an exposed grain face, represented by a point pulled a quarter spacing
inside the face.  With that offset, plain euclidean adjacency at
1.05 * spacing links exactly the face pairs that share an edge (coplanar
neighbours at distance s, edges of the same grain at s/sqrt(8)) while two
faces staring at each other across a one-grain gap sit 1.5 s apart and stay
disconnected, which is what split detection needs.

The membrane advances where the boundary amplitude modulus exceeds the
upper threshold and retreats where it falls below the lower one.  Newly
claimed grains are seeded with zero-net (+,-) pairs, so an extension
followed by a retraction on an unchanged amplitude field is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ALPHA, BETA, Bubble, MembraneCell, probability_weights
from .errors import ConfigError, EmptyBubble

_FACE_DIRS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64)


@dataclass
class MembraneConfig:
    """Thresholds in normalized amplitude units plus lattice geometry."""

    lower: float = 0.01
    upper: float = 0.1
    spacing: float = 1.0
    retract_first: bool = True
    seed_pairs: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.lower < self.upper:
            raise ConfigError(
                f"need 0 < lower < upper, got {self.lower!r}, {self.upper!r}")
        if self.spacing <= 0:
            raise ConfigError("grid spacing must be positive")


class Membrane:
    """Exposed faces of the current interior grain set."""

    def __init__(self, cells: list[MembraneCell], spacing: float) -> None:
        self.cells = cells
        self.spacing = spacing

    @property
    def adjacency_radius(self) -> float:
        return 1.05 * self.spacing

    def positions(self) -> np.ndarray:
        if not self.cells:
            return np.empty((0, 3), dtype=np.float64)
        return np.stack([c.position for c in self.cells])

    def __len__(self) -> int:
        return len(self.cells)


def _grid_map(bubble: Bubble, spacing: float) -> dict[tuple[int, int, int], int]:
    keys = np.rint(np.asarray(bubble.site_coords) / spacing).astype(np.int64)
    return {tuple(k): j for j, k in enumerate(keys)}


def build_membrane(bubble: Bubble, config: MembraneConfig) -> Membrane:
    """Collect exposed faces of interior grains, cid in (grain, face) order."""
    if bubble.site_coords is None or bubble.interior is None:
        raise ConfigError("bubble has no lattice embedding")
    spacing = config.spacing
    grid = _grid_map(bubble, spacing)
    keys = np.rint(np.asarray(bubble.site_coords) / spacing).astype(np.int64)
    cells: list[MembraneCell] = []
    for j in np.flatnonzero(bubble.interior):
        for d in _FACE_DIRS:
            nb = grid.get(tuple(keys[j] + d))
            if nb is not None and bubble.interior[nb]:
                continue
            pos = bubble.site_coords[j] + (spacing / 4.0) * d
            cells.append(MembraneCell(cid=len(cells), position=pos,
                                      retreat_site=int(j)))
    return Membrane(cells, spacing)


def refresh_meters(bubble: Bubble) -> None:
    """Copy each retreat grain's net counts onto its cells' meters."""
    if bubble.membrane is None:
        return
    net = bubble.net()
    for cell in bubble.membrane.cells:
        j = cell.retreat_site
        cell.meter = (float(net[ALPHA, j]), float(net[BETA, j]))


def amplitude_moduli(bubble: Bubble) -> np.ndarray:
    """Per-grain |amplitude| in normalized units; zeros for an empty bubble."""
    net = bubble.net().astype(np.float64)
    amp = np.hypot(net[ALPHA], net[BETA])
    norm = float(np.sqrt(np.sum(amp * amp)))
    if norm == 0.0:
        return np.zeros(bubble.n_states)
    return amp / norm


def _neighbors(bubble: Bubble, spacing: float) -> list[list[int]]:
    grid = _grid_map(bubble, spacing)
    keys = np.rint(np.asarray(bubble.site_coords) / spacing).astype(np.int64)
    out: list[list[int]] = []
    for j in range(bubble.n_states):
        nbs = [grid[t] for d in _FACE_DIRS
               if (t := tuple(keys[j] + d)) in grid]
        out.append(nbs)
    return out


def _eliminate(bubble: Bubble, doomed: np.ndarray) -> None:
    bubble.counts[:, :, doomed] = 0
    if bubble.gas is not None:
        rows = np.flatnonzero(np.isin(bubble.gas.state, doomed))
        if rows.size:
            bubble.gas.remove_rows(rows)
        bubble.refresh_counts()


def _retract(bubble: Bubble, config: MembraneConfig, neighbors,
             protected: frozenset[int] = frozenset()) -> None:
    # Sweeps run to a fixed point: removing a grain renormalizes the field
    # and exposes new boundary grains, either of which can re-trigger.
    while True:
        moduli = amplitude_moduli(bubble)
        doomed = []
        for j in np.flatnonzero(bubble.interior):
            if int(j) in protected or moduli[j] >= config.lower:
                continue
            exposed = any(not bubble.interior[nb] for nb in neighbors[j])
            if exposed or len(neighbors[j]) < 6:
                doomed.append(int(j))
        if not doomed:
            return
        arr = np.asarray(doomed)
        bubble.interior[arr] = False
        _eliminate(bubble, arr)
        if not bubble.interior.any():
            raise EmptyBubble("membrane retracted off the last grain")


def _extend(bubble: Bubble, config: MembraneConfig, neighbors) -> frozenset[int]:
    moduli = amplitude_moduli(bubble)
    hot = np.flatnonzero(bubble.interior & (moduli > config.upper))
    fresh = sorted({nb for j in hot for nb in neighbors[j]
                    if not bubble.interior[nb]})
    if not fresh:
        return frozenset()
    if config.seed_pairs is not None:
        pairs = config.seed_pairs
    else:
        totals = bubble.totals()[:, bubble.interior]
        pairs = int(totals.max()) // 2 if totals.size else 0
    for j in fresh:
        bubble.interior[j] = True
        bubble.counts[:, :, j] += pairs
    return frozenset(fresh)


def retract_sweep(bubble: Bubble, config: MembraneConfig) -> Bubble:
    """Retract exposed grains below the lower threshold (to a fixed point)."""
    _retract(bubble, config, _neighbors(bubble, config.spacing))
    return bubble


def extend_sweep(bubble: Bubble, config: MembraneConfig) -> Bubble:
    """Claim exterior grains next to boundary moduli above the upper threshold."""
    _extend(bubble, config, _neighbors(bubble, config.spacing))
    return bubble


def update_membrane(bubble: Bubble, config: MembraneConfig) -> Bubble:
    """One membrane step: threshold-driven retraction and extension.

    Grains whose modulus meter dropped below ``lower`` while exposed retreat
    (their quanta are eliminated); exterior grains next to a boundary modulus
    above ``upper`` are claimed and seeded with zero-net pairs.  Grains added
    in this call are exempt from this call's retraction, since they start at
    modulus zero by construction.
    """
    if bubble.site_coords is None or bubble.interior is None:
        raise ConfigError("bubble has no lattice embedding")
    if not bubble.interior.any():
        raise EmptyBubble("no interior grains")
    neighbors = _neighbors(bubble, config.spacing)
    if config.retract_first:
        _retract(bubble, config, neighbors)
        _extend(bubble, config, neighbors)
    else:
        added = _extend(bubble, config, neighbors)
        _retract(bubble, config, neighbors, protected=added)
    bubble.membrane = build_membrane(bubble, config)
    refresh_meters(bubble)
    return bubble


def bubble_centroid(bubble: Bubble) -> np.ndarray:
    """Probability-weighted mean of the grain coordinates."""
    if bubble.site_coords is None:
        raise ConfigError("bubble has no lattice embedding")
    w = probability_weights(bubble)
    return w @ np.asarray(bubble.site_coords, dtype=np.float64)


def embed_on_lattice(bubble: Bubble, coords, config: MembraneConfig,
                     interior=None) -> Bubble:
    """Attach lattice coordinates and a freshly built membrane."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (bubble.n_states, 3):
        raise ConfigError(
            f"need one 3-vector per basic state, got shape {coords.shape}")
    bubble.site_coords = coords
    if interior is None:
        bubble.interior = np.ones(bubble.n_states, dtype=bool)
    else:
        bubble.interior = np.asarray(interior, dtype=bool).copy()
    bubble.membrane = build_membrane(bubble, config)
    refresh_meters(bubble)
    return bubble
