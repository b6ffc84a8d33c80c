"""Scenario runner, config files, and the partitioned fault experiment.

A run config (JSON) names one scenario -- single, measure, multi, or
faulty -- plus the Hamiltonian, initial state, engine knobs, and output
directory.  ``run`` executes it end to end and leaves three artifacts:
``trajectory.jsonl`` (one canonical record per tick or trial),
``report.json`` (summary with oracle fidelity where computable), and
optional ``frames/NNNN.ppm`` renders for spatial runs.  Nothing in an
artifact depends on wall time, so a repeated run with the same seed is
byte-identical.

The faulty scenario splits the ballistic gas across k logical workers,
one equal-volume z-slab each, exchanging boundary crossers through
bounded per-tick channels; a chosen subset of workers hangs (receives
and never replies) and the report tracks how far the surviving
measurement statistics drift from the fault-free run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import spatial
from .compiler import RULE_CATALYSIS, block_record, pauli_decompose, \
    reactions_for_block, rule_record
from .core import ALPHA, BETA, Bubble, bubble_from_state, probability_weights, \
    state_from_bubble
from .engine import EngineConfig, evolve
from .errors import ConfigError, EscapedQuantum, IoError, TooFewWorkers
from .measurement import measure
from .membrane import MembraneConfig, bubble_centroid, embed_on_lattice
from .multiparticle import decohere_components, evolve_joint, \
    exchange_bosons, exchange_fermions, joint_from_state, \
    reduced_density_matrix
from .oracle import chi_square_test, exact_propagate, fidelity
from .snapshots import TrajectoryWriter, complex_pairs, write_ppm, write_report
from .spatial import calibrate_contact_rate, hash_u01, populate_gas
from ._kernels import advance_reflect, build_pairs

__all__ = [
    "RunConfig",
    "MultiSpec",
    "load_run_config",
    "run",
    "run_partitioned_faulty",
    "PartitionedRun",
    "evolve_partitioned",
    "total_variation",
    "slab_edges",
]

_PAULI = {
    "sx": np.array([[0, 1], [1, 0]], dtype=complex),
    "sy": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "sz": np.array([[1, 0], [0, -1]], dtype=complex),
}


# --- configuration -----------------------------------------------------------

@dataclass
class MultiSpec:
    """Joint-system scenario: particles, identity, coupling, decoherence."""

    n_particles: int
    n_states: int
    amplitudes: dict
    identity: str = "distinct"
    touches: tuple = ()
    hamiltonian: np.ndarray | None = None
    slots: tuple = (0, 1)
    decoherence: str | None = None
    eps1: float | None = None


@dataclass
class RunConfig:
    """Everything one run needs; built from a JSON file or dict.

    ``hang_fraction`` must sit in [0, 0.5): the hung workers are
    floor(fraction * workers) of the pool and have to stay a small
    minority for the degradation story to mean anything.
    """

    scenario: str
    engine: EngineConfig = field(default_factory=EngineConfig)
    hamiltonian: np.ndarray | None = None
    initial_state: np.ndarray | None = None
    time: float = 0.0
    out_dir: Path | None = None
    trials: int = 10_000
    record_every: int = 1
    frames_every: int = 0
    lattice_coords: np.ndarray | None = None
    membrane: MembraneConfig | None = None
    workers: int = 8
    hang_fraction: float = 0.0
    hang_seed: int = 0
    epsilons: tuple = (0.0, 0.02, 0.05, 0.1)
    channel_capacity: int = 16_384
    multi: MultiSpec | None = None

    def __post_init__(self) -> None:
        if self.scenario not in ("single", "measure", "multi", "faulty"):
            raise ConfigError(f"scenario: unknown scenario {self.scenario!r}")
        if not 0.0 <= self.hang_fraction < 0.5:
            raise ConfigError("hang_fraction: must lie in [0, 0.5)")
        for e in self.epsilons:
            if not 0.0 <= e < 0.5:
                raise ConfigError(f"epsilons: {e!r} outside [0, 0.5)")
        if self.time < 0:
            raise ConfigError("time: must be nonnegative")
        if self.channel_capacity < 1:
            raise ConfigError("channel_capacity: must be positive")


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}: required key missing")
    return cfg[key]


def _parse_matrix(obj, path: str) -> np.ndarray:
    try:
        rows = []
        for r in obj:
            rows.append([complex(v[0], v[1]) if isinstance(v, (list, tuple))
                         else complex(v) for v in r])
        mat = np.array(rows, dtype=complex)
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: not a matrix of numbers or [re, im] "
                          f"pairs ({exc})") from exc
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
        raise ConfigError(f"{path}: need a square matrix, got {mat.shape}")
    return mat


def _parse_hamiltonian(obj, path: str, base: Path) -> np.ndarray:
    if isinstance(obj, str):
        text = obj.strip()
        sign = 1.0
        if text.startswith("-"):
            sign, text = -1.0, text[1:]
        factors = []
        for name in text.split("@"):
            if name not in _PAULI:
                raise ConfigError(
                    f"{path}: unknown operator {name!r}; use sx, sy, sz, "
                    "optionally '-' prefixed and '@'-joined for products")
            factors.append(_PAULI[name])
        mat = factors[0]
        for f in factors[1:]:
            mat = np.kron(mat, f)
        return sign * mat
    if isinstance(obj, dict):
        if "matrix" in obj:
            return _parse_matrix(obj["matrix"], f"{path}.matrix")
        if "file" in obj:
            sub = base / str(obj["file"])
            try:
                payload = json.loads(sub.read_text())
            except OSError as exc:
                raise IoError(f"{path}.file: cannot read {sub}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise IoError(f"{path}.file: {sub}:{exc.lineno}:{exc.colno}: "
                              f"{exc.msg}") from exc
            return _parse_hamiltonian(payload, f"{path}.file:{sub}", base)
        raise ConfigError(f"{path}: need 'matrix' or 'file'")
    if isinstance(obj, list):
        return _parse_matrix(obj, path)
    raise ConfigError(f"{path}: expected name, matrix, or file reference")


def _parse_state(obj, path: str) -> np.ndarray:
    if isinstance(obj, dict):
        dim = int(_require(obj, "dim", path))
        basis = int(_require(obj, "basis", path))
        if not 0 <= basis < dim:
            raise ConfigError(f"{path}.basis: {basis} outside [0, {dim})")
        vec = np.zeros(dim, dtype=complex)
        vec[basis] = 1.0
        return vec
    try:
        return np.array([complex(v[0], v[1]) if isinstance(v, (list, tuple))
                         else complex(v) for v in obj], dtype=complex)
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: not an amplitude list ({exc})") from exc


def _parse_engine(obj: dict, path: str) -> EngineConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {f.name for f in fields(EngineConfig)}
    kwargs = {}
    for key, val in obj.items():
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown engine option")
        kwargs[key] = val
    try:
        return EngineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_label(label: str, n: int, state_dim: int, path: str) -> tuple:
    digits = label.split(",") if "," in label else list(label)
    if len(digits) != n:
        raise ConfigError(f"{path}: label {label!r} needs {n} digits")
    try:
        out = tuple(int(d) for d in digits)
    except ValueError as exc:
        raise ConfigError(f"{path}: label {label!r} is not numeric") from exc
    if any(not 0 <= d < state_dim for d in out):
        raise ConfigError(f"{path}: label {label!r} outside 0..{state_dim - 1}")
    return out


def _parse_multi(obj: dict, path: str, base: Path) -> MultiSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    n = int(_require(obj, "particles", path))
    state_dim = int(_require(obj, "states", path))
    raw = _require(obj, "amplitudes", path)
    amps = {}
    for label, val in raw.items():
        key = _parse_label(str(label), n, state_dim, f"{path}.amplitudes")
        amps[key] = complex(val[0], val[1]) if isinstance(val, (list, tuple)) \
            else complex(val)
    identity = str(obj.get("identity", "distinct"))
    if identity not in ("distinct", "boson", "fermion"):
        raise ConfigError(f"{path}.identity: unknown flag {identity!r}")
    touches = tuple((int(a), int(b)) for a, b in obj.get("touches", []))
    h = None
    if obj.get("hamiltonian") is not None:
        h = _parse_hamiltonian(obj["hamiltonian"], f"{path}.hamiltonian", base)
    slots = tuple(int(s) for s in obj.get("slots", (0, 1)))
    deco = obj.get("decoherence")
    if deco is not None and deco not in ("bubbles", "support"):
        raise ConfigError(f"{path}.decoherence: unknown mode {deco!r}")
    eps1 = obj.get("eps1")
    return MultiSpec(n, state_dim, amps, identity, touches, h, slots,
                     deco, None if eps1 is None else float(eps1))


def run_config_from_dict(cfg: dict, base: Path | None = None,
                         seed: int | None = None,
                         out: str | None = None) -> RunConfig:
    """Validate a config mapping; dotted paths locate any offending key."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root: expected an object")
    base = Path(".") if base is None else base
    known = {"scenario", "engine", "hamiltonian", "initial_state", "time",
             "out", "trials", "record_every", "frames_every", "lattice",
             "membrane", "workers", "hang_fraction", "hang_seed", "epsilons",
             "channel_capacity", "multi"}
    for key in cfg:
        if key not in known:
            raise ConfigError(f"config.{key}: unknown key")
    scenario = str(_require(cfg, "scenario", "config"))
    engine = _parse_engine(cfg.get("engine", {}), "config.engine")
    if seed is not None:
        engine = replace(engine, seed=int(seed))

    kwargs: dict = {"scenario": scenario, "engine": engine}
    if cfg.get("hamiltonian") is not None:
        kwargs["hamiltonian"] = _parse_hamiltonian(
            cfg["hamiltonian"], "config.hamiltonian", base)
    if cfg.get("initial_state") is not None:
        kwargs["initial_state"] = _parse_state(
            cfg["initial_state"], "config.initial_state")
    for key in ("time", "hang_fraction"):
        if key in cfg:
            kwargs[key] = float(cfg[key])
    for key in ("trials", "record_every", "frames_every", "workers",
                "hang_seed", "channel_capacity"):
        if key in cfg:
            kwargs[key] = int(cfg[key])
    if "epsilons" in cfg:
        kwargs["epsilons"] = tuple(float(e) for e in cfg["epsilons"])
    if cfg.get("lattice") is not None:
        coords = np.asarray(cfg["lattice"], dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ConfigError("config.lattice: need an (n_states, 3) array")
        kwargs["lattice_coords"] = coords
    if cfg.get("membrane") is not None:
        try:
            kwargs["membrane"] = MembraneConfig(**cfg["membrane"])
        except TypeError as exc:
            raise ConfigError(f"config.membrane: {exc}") from exc
    if cfg.get("multi") is not None:
        kwargs["multi"] = _parse_multi(cfg["multi"], "config.multi", base)
    out_name = out if out is not None else cfg.get("out")
    if out_name is not None:
        kwargs["out_dir"] = base / str(out_name) if not Path(out_name).is_absolute() \
            else Path(out_name)
    return RunConfig(**kwargs)


def load_run_config(path, seed: int | None = None,
                    out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"{path}: cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IoError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return run_config_from_dict(cfg, base=path.parent, seed=seed, out=out)


# --- scenario execution ------------------------------------------------------

def _counts_grid(counts, n: int) -> np.ndarray:
    """Count table as a (2, 2, n) array from either engine representation."""
    if isinstance(counts, np.ndarray):
        return counts
    grid = np.zeros((2, 2, n), dtype=np.int64)
    for (part, sign, state), v in counts.items():
        grid[part, 0 if sign > 0 else 1, state] += v
    return grid


def _net_weights(grid: np.ndarray) -> np.ndarray:
    net = (grid[:, 0, :] - grid[:, 1, :]).astype(np.float64)
    w = net[ALPHA] ** 2 + net[BETA] ** 2
    total = w.sum()
    return w / total if total > 0 else w


def total_variation(p, q) -> float:
    """Total-variation distance between two probability vectors."""
    return 0.5 * float(np.abs(np.asarray(p, dtype=np.float64)
                              - np.asarray(q, dtype=np.float64)).sum())


def _run_single(config: RunConfig) -> dict:
    h = config.hamiltonian
    psi0 = config.initial_state
    if h is None or psi0 is None:
        raise ConfigError("config: single scenario needs hamiltonian and "
                          "initial_state")
    if len(psi0) != h.shape[0]:
        raise ConfigError(
            f"config.initial_state: length {len(psi0)} does not match "
            f"hamiltonian dimension {h.shape[0]}")
    eng = config.engine
    bubble = bubble_from_state(psi0, eng.a_target)
    if config.lattice_coords is not None:
        mcfg = config.membrane if config.membrane is not None else MembraneConfig()
        bubble = embed_on_lattice(bubble, config.lattice_coords, mcfg)
    n = bubble.n_states

    frame_dir = config.out_dir / "frames"
    frame_idx = [0]
    records = [0]

    with TrajectoryWriter(config.out_dir / "trajectory.jsonl") as traj:
        def on_tick(i, t, counts):
            if i % config.record_every:
                return
            grid = _counts_grid(counts, n)
            rec = {"tick": i, "t": t, "counts": grid}
            if config.lattice_coords is not None:
                w = _net_weights(grid)
                rec["centroid"] = list(w @ config.lattice_coords)
            traj.write(rec)
            records[0] += 1
            if (config.frames_every and eng.backend == "spatial"
                    and i % config.frames_every == 0 and bubble.gas is not None):
                write_ppm(frame_dir / f"{frame_idx[0]:04d}.ppm", bubble.gas,
                          eng.bubble_radius)
                frame_idx[0] += 1

        if eng.backend == "meanfield":
            # mean-field integrates in closed form; record the endpoints
            on_tick(0, 0.0, bubble.counts.copy())
            evolve(bubble, h, config.time, eng)
            on_tick(config.record_every, config.time, bubble.counts.copy())
        else:
            evolve(bubble, h, config.time, eng, on_tick=on_tick)
        if records[0] == 0:
            on_tick(0, 0.0, bubble.counts.copy())

    final = state_from_bubble(bubble)
    want = exact_propagate(h, psi0, config.time)
    report = {
        "scenario": "single",
        "backend": eng.backend,
        "seed": eng.seed,
        "time": config.time,
        "final_state": complex_pairs(final),
        "probability_weights": list(probability_weights(bubble)),
        "fidelity_vs_oracle": fidelity(final, want),
        "records": records[0],
        "frames": frame_idx[0],
    }
    if config.lattice_coords is not None:
        report["centroid"] = list(bubble_centroid(bubble))
    return report


def _run_measure(config: RunConfig) -> dict:
    psi0 = config.initial_state
    if psi0 is None:
        raise ConfigError("config: measure scenario needs initial_state")
    eng = config.engine
    base = bubble_from_state(psi0, eng.a_target)
    expected = probability_weights(base)
    hist = np.zeros(base.n_states, dtype=np.int64)
    with TrajectoryWriter(config.out_dir / "trajectory.jsonl") as traj:
        for trial in range(config.trials):
            record, _ = measure(base.copy(), replace(eng, seed=eng.seed + trial))
            hist[record.outcome] += 1
            traj.write({"trial": trial, "outcome": record.outcome,
                        "ticks": record.ticks_to_completion})
    stat, ok = chi_square_test(hist, expected)
    return {
        "scenario": "measure",
        "seed": eng.seed,
        "trials": config.trials,
        "histogram": [int(v) for v in hist],
        "expected": list(expected),
        "chi_square": {"statistic": stat, "pass": bool(ok)},
    }


def _dense_lift(h: np.ndarray, slots, n: int, state_dim: int) -> np.ndarray:
    """Embed an operator on ``slots`` into the full n-particle space."""
    order = list(slots) + [p for p in range(n) if p not in slots]
    dim = state_dim ** n
    shape = (state_dim,) * n
    perm = np.empty(dim, dtype=np.intp)
    for m in range(dim):
        digits = np.unravel_index(m, shape)
        perm[m] = np.ravel_multi_index([digits[p] for p in order], shape)
    full = np.kron(h, np.eye(state_dim ** (n - len(slots)), dtype=complex))
    return full[np.ix_(perm, perm)]


def _run_multi(config: RunConfig) -> dict:
    spec = config.multi
    if spec is None:
        raise ConfigError("config: multi scenario needs a multi section")
    eng = config.engine
    joint = joint_from_state(spec.amplitudes, spec.n_particles, spec.n_states,
                             eng.a_target, touches=spec.touches)
    if spec.identity == "boson":
        exchange_bosons(joint, eng)
    elif spec.identity == "fermion":
        exchange_fermions(joint, eng)

    def label(key) -> str:
        part, sign, lists = key
        return f"{part}:{sign}:" + ",".join(str(d) for d in lists)

    with TrajectoryWriter(config.out_dir / "trajectory.jsonl") as traj:
        def on_tick(i, t, counts):
            if i % config.record_every:
                return
            traj.write({"tick": i, "t": t,
                        "counts": {label(k): v for k, v in counts.items() if v}})

        if spec.hamiltonian is not None:
            evolve_joint(joint, spec.hamiltonian, config.time, eng,
                         slots=spec.slots, on_tick=on_tick)
        else:
            on_tick(0, 0.0, joint.counts)

    amp = joint.net_amplitudes()
    shape = (spec.n_states,) * spec.n_particles
    final = np.zeros(spec.n_states ** spec.n_particles, dtype=complex)
    for lists, v in amp.items():
        final[np.ravel_multi_index(lists, shape)] = v

    fid = None
    if spec.identity == "distinct" and spec.hamiltonian is not None:
        psi0 = np.zeros_like(final)
        for lists, v in spec.amplitudes.items():
            psi0[np.ravel_multi_index(lists, shape)] = v
        h_full = _dense_lift(spec.hamiltonian, spec.slots, spec.n_particles,
                             spec.n_states)
        fid = fidelity(final, exact_propagate(h_full, psi0, config.time))

    report = {
        "scenario": "multi",
        "seed": eng.seed,
        "identity": spec.identity,
        "time": config.time,
        "net_amplitudes": {",".join(str(d) for d in k): [v.real, v.imag]
                           for k, v in amp.items()},
        "fidelity_vs_oracle": fid,
        "reduced_density": [
            [[ [z.real, z.imag] for z in row]
             for row in reduced_density_matrix(joint, j)]
            for j in range(spec.n_particles)],
        "peak_chains": joint.peak_chains,
        "initial_budget": joint.initial_budget,
    }
    if spec.decoherence is not None:
        pieces = decohere_components(joint, eng, mode=spec.decoherence,
                                     eps1=spec.eps1)
        report["decoherence"] = {
            "mode": spec.decoherence,
            "pieces": [{
                "kind": "bubble" if isinstance(p, Bubble) else "joint",
                "state": complex_pairs(
                    state_from_bubble(p) if isinstance(p, Bubble)
                    else _joint_dense(p)),
            } for p in pieces],
        }
    return report


def _joint_dense(joint) -> np.ndarray:
    shape = (joint.n_states,) * joint.n_particles
    out = np.zeros(joint.n_states ** joint.n_particles, dtype=complex)
    for lists, v in joint.net_amplitudes().items():
        out[np.ravel_multi_index(lists, shape)] = v
    return out


def run(config: RunConfig) -> dict:
    """Execute one scenario end to end and write its artifacts."""
    if config.out_dir is None:
        raise ConfigError("config.out: output directory required")
    runners = {"single": _run_single, "measure": _run_measure,
               "multi": _run_multi, "faulty": run_partitioned_faulty}
    report = runners[config.scenario](config)
    write_report(config.out_dir / "report.json", report)
    return report


# --- partitioned spatial backend ---------------------------------------------

def slab_edges(radius: float, k: int) -> np.ndarray:
    """z boundaries of k equal-volume slabs of a ball."""
    if k < 1:
        raise ConfigError("need at least one slab")

    def volume_fraction(z: float) -> float:
        u = z / radius
        return 0.25 * (2.0 + 3.0 * u - u ** 3)

    edges = [-radius]
    for i in range(1, k):
        edges.append(brentq(lambda z, f=i / k: volume_fraction(z) - f,
                            -radius, radius, xtol=1e-13))
    edges.append(radius)
    return np.array(edges)


_ROW_FIELDS = ("ids", "pos", "vel", "part", "sign", "state", "block", "prevp")


class _Rows:
    """Struct-of-arrays bundle of quanta held by one worker, id-sorted."""

    __slots__ = _ROW_FIELDS

    def __init__(self, ids, pos, vel, part, sign, state, block, prevp) -> None:
        self.ids = ids
        self.pos = pos
        self.vel = vel
        self.part = part
        self.sign = sign
        self.state = state
        self.block = block
        self.prevp = prevp

    @classmethod
    def empty(cls) -> "_Rows":
        return cls(np.empty(0, dtype=np.int64),
                   np.empty((0, 3)), np.empty((0, 3)),
                   np.empty(0, dtype=np.int8), np.empty(0, dtype=np.int8),
                   np.empty(0, dtype=np.int32), np.empty(0, dtype=np.int32),
                   np.empty(0, dtype=np.int64))

    @classmethod
    def from_gas(cls, gas) -> "_Rows":
        return cls(gas.ids.copy(), gas.pos.copy(), gas.vel.copy(),
                   gas.part.copy(), gas.sign.copy(), gas.state.copy(),
                   gas.block.copy(), np.full(len(gas), -1, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "_Rows":
        return _Rows(self.ids[idx], self.pos[idx], self.vel[idx],
                     self.part[idx], self.sign[idx], self.state[idx],
                     self.block[idx], self.prevp[idx])

    @classmethod
    def concat(cls, batches) -> "_Rows":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty()
        if len(batches) == 1:
            return batches[0]
        return cls(*(np.concatenate([getattr(b, name) for b in batches])
                     for name in _ROW_FIELDS))

    def order_by_id(self) -> "_Rows":
        idx = np.argsort(self.ids, kind="stable")
        if len(idx) and (idx != np.arange(len(idx))).any():
            return self.take(idx)
        return self


class _Worker:
    """One slab owner; a hung worker keeps its rows frozen and absorbs mail."""

    def __init__(self, idx: int, lo: float, hi: float) -> None:
        self.idx = idx
        self.lo = lo
        self.hi = hi
        self.rows = _Rows.empty()
        self.hung = False
        self.absorbed = 0


def _merge_intervals(intervals) -> list[tuple[float, float]]:
    ordered = sorted(intervals)
    out = [list(ordered[0])]
    for lo, hi in ordered[1:]:
        if lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(lo, hi) for lo, hi in out]


def _window_mask(z: np.ndarray, intervals) -> np.ndarray:
    mask = np.zeros(len(z), dtype=bool)
    for lo, hi in intervals:
        mask |= (z >= lo) & (z <= hi)
    return mask


class PartitionedRun:
    """Coordinator plus k slab workers over the ballistic backend.

    The tick protocol is message passing with a per-tick barrier:

    1. each live worker advances its own quanta and re-tags zone blocks;
    2. boundary crossers travel through per-pair channels, at most
       ``channel_capacity`` per channel per tick (the excess waits with
       the sender and is retried; nothing is ever dropped);
    3. workers exchange visibility windows (slab plus a two-contact-radius
       margin, widened around any waiting crossers) and reply with their
       rows inside the requested window;
    4. every worker runs the same mutual-nearest pairing and hash-thinned
       conversions on its own-plus-halo view, applying results only to
       rows it owns -- both owners of a straddling pair replay the same
       per-pair hash, so their verdicts agree without coordination;
    5. the coordinator closes the tick: it collects live totals, replays
       the serial replenishment streams, routes the padded quanta to
       the slab owners, and picks the globally lowest-id drop victims.

    Hung workers skip every phase: their rows freeze, their mail is
    absorbed (counted, never processed), and they answer no window
    requests, so their slab simply goes dark for the rest of the run.
    A fault-free run is bit-identical to ``evolve_spatial`` on one
    process because pairing inputs are id-sorted (ties break the same
    way), per-pair randomness is keyed by quantum ids, and barrier
    replenishment replays the serial hash streams verbatim.
    """

    def __init__(self, bubble: Bubble, lists, config: EngineConfig, dt: float,
                 workers: int, hung=(), channel_capacity: int = 16_384,
                 calibration_ticks: int | None = None,
                 contact_rate: float | None = None) -> None:
        if config.backend != "spatial":
            raise ConfigError("partitioned runs require backend='spatial'")
        if workers < 4:
            raise TooFewWorkers(f"need at least 4 workers, got {workers}")
        for lst in lists:
            for rule in lst.rules:
                if rule.kind != RULE_CATALYSIS:
                    raise ConfigError(
                        "partitioned runs support catalysis rules only")
        if any(not 0 <= i < workers for i in hung):
            raise ConfigError(f"hung worker index outside 0..{workers - 1}")
        self.config = config
        self.dt = dt
        self.seed = config.seed
        self.n_states = bubble.n_states
        self.grain = bubble.grain

        rng = config.rng()
        if bubble.gas is None:
            weights = spatial._list_weights(lists) if len(lists) > 1 else None
            populate_gas(bubble, config, rng, zone_weights=weights)
        lam = contact_rate
        needs_rate = any(r.kind == RULE_CATALYSIS
                         for lst in lists for r in lst.rules)
        if lam is None and config.spatial_thinning is None and needs_rate:
            ticks = config.calibration_ticks if calibration_ticks is None \
                else calibration_ticks
            lam = calibrate_contact_rate(bubble.gas, config, dt, ticks)
        self.contact_rate = lam
        self.program = spatial._compile_program(lists, config, lam, dt)

        edges = slab_edges(config.bubble_radius, workers)
        self.inner = edges[1:-1]
        self.workers = [_Worker(i, edges[i], edges[i + 1])
                        for i in range(workers)]
        for i in hung:
            self.workers[i].hung = True
        base = _Rows.from_gas(bubble.gas)
        owner = np.searchsorted(self.inner, base.pos[:, 2])
        for w in self.workers:
            w.rows = base.take(np.flatnonzero(owner == w.idx))
        self.next_id = bubble.gas.next_id
        self.capacity = channel_capacity
        self.tick_index = 0
        self.initial_total = len(base)
        self.pads = 0
        self.drops = 0
        self.channel_traffic = 0

    # -- per-tick protocol --

    def tick(self) -> None:
        cfg = self.config
        prog = self.program
        radius = cfg.bubble_radius
        self.tick_index += 1
        tick = self.tick_index
        live = [w for w in self.workers if not w.hung]

        for w in live:
            if not len(w.rows):
                continue
            hit, hit_z, escaped = advance_reflect(w.rows.pos, w.rows.vel,
                                                  self.dt, radius)
            if escaped:
                raise EscapedQuantum(
                    f"{escaped} quanta stuck outside the membrane")
            if prog.zone_bounds is not None:
                rows = np.flatnonzero(hit)
                if rows.size:
                    w.rows.block[rows] = np.searchsorted(
                        prog.zone_bounds, hit_z[rows]).astype(np.int32)

        self._migrate()
        if live:
            # coordinator-side snapshot standing in for the window replies
            pool = _Rows.concat([w.rows for w in live])
            if len(live) == 1:
                pool = pool.take(np.arange(len(pool)))
            pool_owner = np.concatenate(
                [np.full(len(w.rows), w.idx, dtype=np.int32) for w in live])
            for w in live:
                self._pair_and_convert(
                    w, [self._halo_for(w, pool, pool_owner)], tick)

        if cfg.replenish:
            self._replenish(tick)

    def _migrate(self) -> None:
        plan = []
        for w in self.workers:
            if w.hung or not len(w.rows):
                continue
            dst = np.searchsorted(self.inner, w.rows.pos[:, 2])
            mask = dst != w.idx
            if not mask.any():
                continue
            if np.bincount(dst[mask]).max() > self.capacity:
                # some channel saturates; replay with per-channel limits
                self._migrate_bounded()
                return
            plan.append((w, dst, mask))
        moving, move_dst = [], []
        for w, dst, mask in plan:
            sel = np.flatnonzero(mask)
            moving.append(w.rows.take(sel))
            move_dst.append(dst[sel])
            w.rows = w.rows.take(np.flatnonzero(~mask))
        if not moving:
            return
        packet = _Rows.concat(moving)
        dst_all = np.concatenate(move_dst)
        self.channel_traffic += len(packet)
        for d in np.unique(dst_all):
            target = self.workers[d]
            sel = np.flatnonzero(dst_all == d)
            if target.hung:
                target.absorbed += sel.size
            else:
                target.rows = _Rows.concat(
                    [target.rows, packet.take(sel)]).order_by_id()

    def _migrate_bounded(self) -> None:
        """Per-channel path for ticks where some channel hits capacity.

        The excess stays with its sender, which widens its visibility
        window around the straggler until the channel drains; traffic is
        delayed, never dropped.
        """
        transfers = []
        for w in self.workers:
            if w.hung or not len(w.rows):
                continue
            dst = np.searchsorted(self.inner, w.rows.pos[:, 2])
            moving = dst != w.idx
            if not moving.any():
                continue
            taken = []
            for d in np.unique(dst[moving]):
                rows_d = np.flatnonzero(moving & (dst == d))[: self.capacity]
                transfers.append((int(d), w.rows.take(rows_d)))
                taken.append(rows_d)
            keep = np.ones(len(w.rows), dtype=bool)
            keep[np.concatenate(taken)] = False
            w.rows = w.rows.take(np.flatnonzero(keep))
        arrivals: dict[int, list] = {}
        for d, packet in transfers:
            self.channel_traffic += len(packet)
            target = self.workers[d]
            if target.hung:
                target.absorbed += len(packet)
            else:
                arrivals.setdefault(d, []).append(packet)
        for d, packets in arrivals.items():
            w = self.workers[d]
            w.rows = _Rows.concat([w.rows] + packets).order_by_id()

    def _halo_for(self, w: _Worker, pool: _Rows,
                  pool_owner: np.ndarray) -> _Rows:
        """Foreign live rows inside the worker's visibility window.

        The window is the slab widened by two contact radii -- any row
        that can influence the pairing of an owned row sits inside it --
        plus the same margin around each owned straggler waiting out a
        full channel.
        """
        margin = 2.0 * self.config.r0
        intervals = [(w.lo - margin, w.hi + margin)]
        z_own = w.rows.pos[:, 2]
        for zi in z_own[(z_own < w.lo) | (z_own > w.hi)]:
            intervals.append((zi - margin, zi + margin))
        mask = _window_mask(pool.pos[:, 2], _merge_intervals(intervals))
        mask &= pool_owner != w.idx
        return pool.take(np.flatnonzero(mask))

    def _pair_and_convert(self, w: _Worker, halo_batches, tick: int) -> None:
        own = w.rows
        n_own = len(own)
        if n_own == 0:
            return
        local = _Rows.concat([own] + halo_batches)
        owned = np.zeros(len(local), dtype=bool)
        owned[:n_own] = True
        src = np.full(len(local), -1, dtype=np.intp)
        src[:n_own] = np.arange(n_own)
        order = np.argsort(local.ids, kind="stable")
        local = local.take(order)
        owned = owned[order]
        src = src[order]

        partner = build_pairs(local.pos, self.config.r0,
                              self.config.bubble_radius)
        conv = self.program.conv
        new_prev = np.full(n_own, -1, dtype=np.int64)
        rows = np.arange(len(local), dtype=np.intp)
        li = rows[(partner >= 0) & (rows < partner)]
        if li.size:
            # drop halo-halo pairs and persisting contacts up front
            lj = partner[li]
            keep = owned[li] | owned[lj]
            li, lj = li[keep], lj[keep]
        if li.size:
            oi = owned[li]
            oj = owned[lj]
            ids_i = local.ids[li]
            ids_j = local.ids[lj]
            new_prev[src[li[oi]]] = ids_j[oi]
            new_prev[src[lj[oj]]] = ids_i[oj]
            slot = np.where(oi, src[li], src[lj])
            ref = np.where(oi, ids_j, ids_i)
            fresh = own.prevp[slot] != ref
            for i, j, id_i, id_j in zip(li[fresh], lj[fresh],
                                        ids_i[fresh], ids_j[fresh]):
                id_i = int(id_i)
                id_j = int(id_j)
                for a, b in ((i, j), (j, i)):
                    hits = conv.get((
                        (local.part[a], local.sign[a], local.state[a]),
                        (local.part[b], local.sign[b], local.state[b])))
                    if not hits:
                        continue
                    fired = False
                    for zone, result, q, salt in hits:
                        if zone >= 0 and local.block[a] != zone:
                            continue
                        if hash_u01(self.seed, spatial._SALT_PAIR, tick,
                                    id_i, id_j, salt) < q:
                            if owned[a]:
                                r = src[a]
                                own.part[r], own.sign[r], own.state[r] = result
                            fired = True
                            break
                    if fired:
                        break
        own.prevp[:] = new_prev

    def _replenish(self, tick: int) -> None:
        cfg = self.config
        live = [w for w in self.workers if not w.hung and len(w.rows)]
        if live:
            part_all = np.concatenate([w.rows.part for w in live])
            state_all = np.concatenate([w.rows.state for w in live])
            sign_all = np.concatenate([w.rows.sign for w in live])
            ids_all = np.concatenate([w.rows.ids for w in live])
        else:
            part_all = state_all = sign_all = np.empty(0, dtype=np.int64)
            ids_all = np.empty(0, dtype=np.int64)
        totals = np.zeros((2, self.n_states), dtype=np.int64)
        np.add.at(totals, (part_all.astype(np.int64),
                           state_all.astype(np.int64)), 1)
        zone_weights = self.program.zone_weights
        drop_ids = []
        for p in (0, 1):
            for j in range(self.n_states):
                delta = (cfg.a_target - int(totals[p, j])) // 2
                if delta > 0:
                    self._pad_root(tick, p, j, delta, zone_weights)
                elif delta < 0:
                    m = (part_all == p) & (state_all == j)
                    plus = np.sort(ids_all[m & (sign_all == 1)])
                    minus = np.sort(ids_all[m & (sign_all == -1)])
                    take = min(-delta, plus.size, minus.size)
                    if take:
                        drop_ids.append(plus[:take])
                        drop_ids.append(minus[:take])
                        self.drops += 2 * take
        if drop_ids:
            doomed = np.concatenate(drop_ids)
            for w in live:
                gone = np.isin(w.rows.ids, doomed)
                if gone.any():
                    w.rows = w.rows.take(np.flatnonzero(~gone))

    def _pad_root(self, tick: int, p: int, j: int, delta: int,
                  zone_weights) -> None:
        cfg = self.config
        base = spatial._hash_base(self.seed, spatial._SALT_REPLENISH,
                                  tick, p, j)
        idx = np.arange(2 * delta)
        pos = spatial._ball_points(
            spatial._hash_u01_rows(spatial._hash_base(base, 1), idx),
            spatial._hash_u01_rows(spatial._hash_base(base, 2), idx),
            spatial._hash_u01_rows(spatial._hash_base(base, 3), idx),
            cfg.bubble_radius)
        vel = spatial._directions(
            spatial._hash_u01_rows(spatial._hash_base(base, 4), idx),
            spatial._hash_u01_rows(spatial._hash_base(base, 5), idx),
            cfg.speed)
        sgn = np.empty(2 * delta, dtype=np.int8)
        sgn[:delta] = 1
        sgn[delta:] = -1
        block = np.full(2 * delta, -1, dtype=np.int32)
        if zone_weights is not None:
            zmarks = spatial._hash_u01_rows(spatial._hash_base(base, 6), idx)
            quota = np.cumsum(zone_weights) / sum(zone_weights)
            block = np.searchsorted(quota, zmarks, side="right").astype(np.int32)
        ids = np.arange(self.next_id, self.next_id + 2 * delta, dtype=np.int64)
        self.next_id += 2 * delta
        self.pads += 2 * delta
        packet = _Rows(ids=ids, pos=pos, vel=vel,
                       part=np.full(2 * delta, p, dtype=np.int8), sign=sgn,
                       state=np.full(2 * delta, j, dtype=np.int32),
                       block=block,
                       prevp=np.full(2 * delta, -1, dtype=np.int64))
        owner = np.searchsorted(self.inner, pos[:, 2])
        for d in np.unique(owner):
            w = self.workers[d]
            sel = np.flatnonzero(owner == d)
            if w.hung:
                w.absorbed += sel.size
            else:
                w.rows = _Rows.concat([w.rows, packet.take(sel)]).order_by_id()

    # -- observation --

    def counts(self) -> np.ndarray:
        """Count table over live workers (a hung slab reports nothing)."""
        out = np.zeros((2, 2, self.n_states), dtype=np.int64)
        for w in self.workers:
            if w.hung or not len(w.rows):
                continue
            np.add.at(out, (w.rows.part.astype(np.int64),
                            (w.rows.sign < 0).astype(np.int64),
                            w.rows.state.astype(np.int64)), 1)
        return out

    def merged_bubble(self) -> Bubble:
        return Bubble(self.n_states, self.counts(), self.grain)

    def merged_rows(self) -> _Rows:
        """Live rows in canonical (id) order, comparable to a serial gas."""
        live = [w.rows for w in self.workers if not w.hung]
        return _Rows.concat([r.take(np.arange(len(r))) for r in live]).order_by_id()

    def census(self) -> dict:
        """Quanta bookkeeping; live + frozen + absorbed must balance."""
        live = sum(len(w.rows) for w in self.workers if not w.hung)
        frozen = sum(len(w.rows) for w in self.workers if w.hung)
        absorbed = sum(w.absorbed for w in self.workers)
        return {"live": live, "frozen": frozen, "absorbed": absorbed,
                "pads": self.pads, "drops": self.drops,
                "expected": self.initial_total + self.pads - self.drops,
                "held": live + frozen + absorbed}

    def run(self, t: float, on_tick=None) -> Bubble:
        ticks = int(math.ceil(t / self.dt - 1e-9))
        if on_tick is not None:
            on_tick(0, 0.0, self.counts())
        for i in range(1, ticks + 1):
            self.tick()
            if on_tick is not None:
                on_tick(i, i * self.dt, self.counts())
        return self.merged_bubble()


def evolve_partitioned(bubble: Bubble, lists, t: float, config: EngineConfig,
                       workers: int, hung=(), channel_capacity: int = 16_384,
                       on_tick=None) -> Bubble:
    """Partitioned twin of evolve_spatial; returns the merged readout bubble."""
    rates = [r.rate for lst in lists for r in lst.rules]
    dt = config.tick_length(max(rates, default=1.0))
    if int(math.ceil(t / dt - 1e-9)) <= 0:
        bubble.refresh_counts()
        return bubble
    prun = PartitionedRun(bubble, lists, config, dt, workers, hung=hung,
                          channel_capacity=channel_capacity)
    return prun.run(t, on_tick=on_tick)


def run_partitioned_faulty(config: RunConfig) -> dict:
    """Sweep hang fractions and report total-variation degradation.

    The same engine seed drives every sweep member, so each faulty run is
    the fault-free run with a worker subset frozen; hung sets are nested
    across the sweep (a prefix of one seeded shuffle), which keeps the
    degradation comparison paired.
    """
    if config.scenario != "faulty":
        raise ConfigError("config.scenario: run_partitioned_faulty needs "
                          "the faulty scenario")
    if config.engine.backend != "spatial":
        raise ConfigError("config.engine.backend: faulty scenario requires "
                          "the spatial backend")
    if config.workers < 4:
        raise TooFewWorkers(f"need at least 4 workers, got {config.workers}")
    h = config.hamiltonian
    psi0 = config.initial_state
    if h is None or psi0 is None:
        raise ConfigError("config: faulty scenario needs hamiltonian and "
                          "initial_state")
    eng = config.engine
    lists = [reactions_for_block(b) for b in pauli_decompose(h)]
    k = config.workers
    shuffle = np.random.Generator(np.random.Philox(key=config.hang_seed))
    order = [int(v) for v in shuffle.permutation(k)]
    dt = eng.tick_length(max((r.rate for lst in lists for r in lst.rules),
                             default=1.0))

    # every sweep member starts from the same seeded gas, so one
    # reaction-free calibration serves them all
    lam = None
    if eng.spatial_thinning is None and any(
            r.kind == RULE_CATALYSIS for lst in lists for r in lst.rules):
        probe = bubble_from_state(psi0, eng.a_target)
        weights = spatial._list_weights(lists) if len(lists) > 1 else None
        populate_gas(probe, eng, eng.rng(), zone_weights=weights)
        lam = calibrate_contact_rate(probe.gas, eng, dt,
                                     eng.calibration_ticks)

    def one_run(hung, writer=None) -> tuple[np.ndarray, dict]:
        bubble = bubble_from_state(psi0, eng.a_target)
        cb = None
        if writer is not None:
            def cb(i, t, counts):
                if i % config.record_every == 0:
                    writer.write({"tick": i, "t": t, "counts": counts})
        prun_local = PartitionedRun(
            bubble, lists, eng, dt, k, hung=hung,
            channel_capacity=config.channel_capacity, contact_rate=lam)
        merged = prun_local.run(config.time, on_tick=cb)
        return probability_weights(merged), prun_local.census()

    entries = []
    baseline = None
    if config.out_dir is not None:
        with TrajectoryWriter(config.out_dir / "trajectory.jsonl") as traj:
            baseline, base_census = one_run((), writer=traj)
    else:
        baseline, base_census = one_run(())

    for eps in config.epsilons:
        k0 = int(math.floor(eps * k))
        hung = tuple(sorted(order[:k0]))
        if k0 == 0:
            weights, census = baseline, base_census
        else:
            weights, census = one_run(hung)
        entries.append({
            "epsilon": eps,
            "hung_workers": list(hung),
            "distance": total_variation(weights, baseline),
            "census": census,
        })

    eps_arr = np.array([e["epsilon"] for e in entries])
    dist_arr = np.array([e["distance"] for e in entries])
    fit = None
    if len(entries) >= 2 and np.unique(eps_arr).size >= 2:
        slope, intercept = np.polyfit(eps_arr, dist_arr, 1)
        resid = float(np.abs(slope * eps_arr + intercept - dist_arr).max())
        fit = {"slope": float(slope), "intercept": float(intercept),
               "max_residual": resid}
    positive = sorted((e["epsilon"], e["distance"])
                      for e in entries if e["epsilon"] > 0)
    c_cal = positive[0][1] / positive[0][0] if positive else None
    return {
        "scenario": "faulty",
        "seed": eng.seed,
        "hang_seed": config.hang_seed,
        "workers": k,
        "time": config.time,
        "baseline_weights": list(baseline),
        "entries": entries,
        "fit": fit,
        "c_at_smallest_epsilon": c_cal,
    }


def compile_report(h: np.ndarray) -> dict:
    """Block and rule tables for a Hamiltonian, as the CLI prints them."""
    blocks = pauli_decompose(h)
    out = []
    for b in blocks:
        lst = reactions_for_block(b)
        out.append({"block": block_record(b),
                    "rules": [rule_record(r) for r in lst.rules]})
    return {"dimension": int(h.shape[0]), "blocks": out}
