"""Assembly-order inference and per-step training-sample construction.

Connectivity between parts is decided by thresholding the exact minimum
pairwise distance between their point clouds. A valid bottom-up order
starts at the part with the lowest point and repeatedly adds the lowest
unassembled part that touches the assembled set. Each step then yields a
(fixed cloud, moving cloud, target pose) triple: the moving part is
expressed in a randomized local frame and the target pose is the rigid
transform that puts it back into canonical placement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud, concat_clouds, farthest_point_sample, min_pairwise_distance
from .transforms import RigidTransform, random_se3

DEFAULT_TAU = 0.06


class PlannerError(ValueError):
    pass


class DisconnectedAssemblyError(PlannerError):
    """Connectivity graph has more than one component."""

    def __init__(self, components: list[list[int]]):
        self.components = components
        groups = "; ".join("{" + ", ".join(str(i) for i in c) + "}" for c in components)
        super().__init__(f"assembly is disconnected: isolated components {groups}")


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Symmetric boolean part-adjacency matrix under a distance threshold."""

    entries: np.ndarray
    threshold_tau: float

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.entries, dtype=bool))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise PlannerError(f"connectivity must be square, got {m.shape}")
        if not np.array_equal(m, m.T):
            raise PlannerError("connectivity must be symmetric")
        if m.trace() != 0:
            raise PlannerError("connectivity diagonal must be false")
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "threshold_tau", float(self.threshold_tau))

    def __len__(self) -> int:
        return len(self.entries)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.entries[i])]


def build_connectivity(clouds: list[PointCloud], tau: float = DEFAULT_TAU) -> ConnectivityMatrix:
    """Parts i, j are connected iff their minimum point distance is < tau."""
    if len(clouds) < 2:
        raise PlannerError(f"need at least 2 parts, got {len(clouds)}")
    if tau <= 0:
        raise PlannerError("tau must be positive")
    n = len(clouds)
    m = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            connected = min_pairwise_distance(clouds[i], clouds[j]) < tau
            m[i, j] = m[j, i] = connected
    return ConnectivityMatrix(m, tau)


def connected_components(m: ConnectivityMatrix) -> list[list[int]]:
    n = len(m)
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in m.neighbors(v):
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        components.append(sorted(comp))
    return components


def infer_order(clouds: list[PointCloud], m: ConnectivityMatrix) -> list[int]:
    """Bottom-up assembly order.

    The base part has the lowest minimum z. Each later slot takes the
    unassembled part that is connected to the assembled set and has the
    lowest minimum z, ties broken by lowest part index.
    """
    n = len(clouds)
    if len(m) != n:
        raise PlannerError(f"connectivity is {len(m)}x{len(m)} but there are {n} clouds")
    components = connected_components(m)
    if len(components) > 1:
        raise DisconnectedAssemblyError(components)
    min_z = np.array([c.points[:, 2].min() for c in clouds])
    order = [int(np.argmin(min_z))]
    assembled = {order[0]}
    while len(order) < n:
        candidates = [
            i
            for i in range(n)
            if i not in assembled and any(m.entries[i, j] for j in assembled)
        ]
        if not candidates:
            # unreachable for a connected graph; kept as a hard guard
            remaining = sorted(set(range(n)) - assembled)
            raise DisconnectedAssemblyError([sorted(assembled), remaining])
        nxt = min(candidates, key=lambda i: (min_z[i], i))
        order.append(nxt)
        assembled.add(nxt)
    return order


@dataclass(frozen=True)
class AssemblyStep:
    """One placement: put ``moving_cloud`` (in its randomized local frame)
    at ``target_pose`` against the already-assembled ``fixed_cloud``."""

    index: int
    fixed_cloud: PointCloud
    moving_cloud: PointCloud
    target_pose: RigidTransform
    part_id: int

    def __post_init__(self):
        if self.index < 1:
            raise PlannerError("step index starts at 1")


@dataclass(frozen=True)
class AssemblySequence:
    order: list[int]
    steps: list[AssemblyStep] = field(default_factory=list)

    def __post_init__(self):
        if len(self.steps) != max(len(self.order) - 1, 0):
            raise PlannerError(
                f"{len(self.order)} parts require {len(self.order) - 1} steps, "
                f"got {len(self.steps)}"
            )


def _step_rng(seed: int, step_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, step_index])


def build_steps(
    parts: list[PointCloud],
    order: list[int],
    seed: int,
    rotation_limit_degrees: float | None = None,
    translation_limit: float = 1.0,
    points: int = 1024,
    randomize_fixed: bool = False,
) -> AssemblySequence:
    """Construct per-step (fixed, moving, target pose) samples.

    ``parts`` are coarse canonical clouds (one per part). At step i the
    moving cloud is the FPS downsample of part order[i], re-expressed in a
    random local frame; the target pose maps it back to canonical
    placement. The fixed cloud is the FPS downsample of the concatenated
    coarse clouds of all earlier parts, kept in canonical coordinates
    unless ``randomize_fixed`` applies one shared transform to the fixed
    cloud and the pose label together.
    """
    if sorted(order) != list(range(len(parts))):
        raise PlannerError(f"order {order} is not a permutation of 0..{len(parts) - 1}")
    max_angle = None
    if rotation_limit_degrees is not None:
        max_angle = float(np.deg2rad(rotation_limit_degrees))
    steps = []
    for i in range(1, len(order)):
        rng = _step_rng(seed, i)
        canonical_moving = farthest_point_sample(parts[order[i]], points)
        t_rand = random_se3(rng, max_angle=max_angle, max_translation=translation_limit)
        moving = t_rand.inverse().apply(canonical_moving)
        fixed = farthest_point_sample(concat_clouds([parts[j] for j in order[:i]]), points)
        target = t_rand
        if randomize_fixed:
            t_shared = random_se3(rng, max_angle=max_angle, max_translation=translation_limit)
            fixed = t_shared.apply(fixed)
            target = t_shared @ t_rand
        steps.append(
            AssemblyStep(
                index=i,
                fixed_cloud=fixed,
                moving_cloud=moving,
                target_pose=target,
                part_id=int(order[i]),
            )
        )
    return AssemblySequence(order=list(order), steps=steps)
