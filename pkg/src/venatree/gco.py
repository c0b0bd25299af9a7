"""Global constructive optimization of venous trees.

Terminals are sampled inside a domain mask, attached to a small manually
specified seed tree, and the structure is then refined by sweeps of
relaxation (node descent), splitting (direction-clustered junction
refinement) and merge/prune cleanup, re-propagating flows and Murray
radii after every sweep. A sweep is kept only if it does not increase
the total cost, so the recorded cost trace is non-increasing.

Determinism: all randomness flows through a seeded PCG64 stream with
inverse-CDF sampling for the radius distribution, and every traversal
iterates in sorted-id order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    CapacityError,
    ConfigError,
    InvalidTreeError,
    PreconditionError,
    ValidationError,
)
from .graph import (
    DEFAULT_MURRAY_GAMMA,
    Edge,
    GcoConfig,
    Node,
    VesselTree,
    _postorder_edges,
    propagate_flows,
    total_cost,
    tree_from_dict,
    update_radii_murray,
    validate_tree,
)

MAX_SAMPLE_ATTEMPTS = 10 ** 6

#: Prebuilt trees are manually specified; anything bigger defeats the point.
MAX_PREBUILT_NODES = 20

SCHEDULE_OPERATIONS = ("relax", "split", "merge", "prune")


# ---------------------------------------------------------------------------
# domain masks


@dataclass(frozen=True)
class EllipsoidMask:
    """Analytic axis-aligned ellipsoid sampling domain (µm)."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]

    def __post_init__(self):
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValidationError("center and semi_axes must have 3 components")
        if any(not a > 0 for a in self.semi_axes):
            raise ValidationError(f"semi_axes must be > 0, got {self.semi_axes}")

    def contains(self, point) -> bool:
        s = 0.0
        for p, c, a in zip(point, self.center, self.semi_axes):
            u = (p - c) / a
            s += u * u
        return s < 1.0

    def bounding_box(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        lo = tuple(c - a for c, a in zip(self.center, self.semi_axes))
        hi = tuple(c + a for c, a in zip(self.center, self.semi_axes))
        return lo, hi


@dataclass
class VoxelMask:
    """Binary occupancy grid domain; a point lies inside an occupied voxel."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data) > 0
        if self.data.ndim != 3:
            raise ValidationError("voxel mask must be 3D")
        if np.isscalar(self.spacing):
            self.spacing = (float(self.spacing),) * 3
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if any(not s > 0 for s in self.spacing):
            raise ValidationError(f"spacing must be > 0, got {self.spacing}")
        if not self.data.any():
            raise ValidationError("voxel mask has empty interior")

    @classmethod
    def from_label(cls, label) -> "VoxelMask":
        return cls(label.data, label.grid.spacing, label.grid.origin)

    def contains(self, point) -> bool:
        idx = []
        for p, o, s, n in zip(point, self.origin, self.spacing, self.data.shape):
            i = int(math.floor((p - o) / s))
            if i < 0 or i >= n:
                return False
            idx.append(i)
        return bool(self.data[idx[0], idx[1], idx[2]])

    def bounding_box(self):
        lo = self.origin
        hi = tuple(o + n * s for o, s, n in zip(self.origin, self.spacing, self.data.shape))
        return lo, hi


# ---------------------------------------------------------------------------
# terminal sampling


@dataclass(frozen=True)
class Terminal:
    position: tuple[float, float, float]
    radius: float


def sample_terminals(mask, count: int, radius_mean: float, radius_sd: float,
                     rng_seed: int | None) -> list[Terminal]:
    """Draw terminal positions inside the mask and radii from a truncated normal.

    Radii follow N(mean, sd) truncated to (0, mean + 3 sd], sampled by
    inverse CDF so a fixed seed reproduces bit-identical output across
    platforms. Rejection sampling of positions shares a global budget of
    10^6 attempts.
    """
    if count < 1:
        raise PreconditionError(f"count must be >= 1, got {count}")
    if not (radius_mean > 0 and radius_sd > 0):
        raise PreconditionError("radius_mean and radius_sd must be > 0")

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    lo, hi = mask.bounding_box()
    span = tuple(h - l for l, h in zip(lo, hi))

    q_low = float(ndtr((0.0 - radius_mean) / radius_sd))
    q_high = float(ndtr(3.0))

    out: list[Terminal] = []
    attempts = 0
    for _ in range(count):
        while True:
            attempts += 1
            if attempts > MAX_SAMPLE_ATTEMPTS:
                raise CapacityError(
                    f"exceeded {MAX_SAMPLE_ATTEMPTS} rejection-sampling attempts; "
                    "mask interior too small for its bounding box")
            u = rng.random(3)
            point = tuple(l + ui * s for l, ui, s in zip(lo, u, span))
            if mask.contains(point):
                break
        # map u in [0,1) to quantile (q_low, q_high] so the radius stays > 0
        uq = q_low + (1.0 - rng.random()) * (q_high - q_low)
        radius = radius_mean + radius_sd * float(ndtri(uq))
        out.append(Terminal(position=point, radius=radius))
    return out


# ---------------------------------------------------------------------------
# prebuilt seed trees


def validate_prebuilt(prebuilt: VesselTree) -> None:
    """A prebuilt tree is small, structurally valid, and entirely fixed."""
    if len(prebuilt.nodes) >= MAX_PREBUILT_NODES:
        raise ValidationError(
            f"prebuilt tree has {len(prebuilt.nodes)} nodes; must be < {MAX_PREBUILT_NODES}")
    violations = validate_tree(prebuilt)
    if violations:
        raise InvalidTreeError(f"prebuilt tree invalid: {violations[0]}")
    loose = [nid for nid, n in sorted(prebuilt.nodes.items()) if not n.fixed]
    if loose:
        raise ValidationError(f"prebuilt nodes must all be fixed; node {loose[0]} is not")


def make_prebuilt(nodes, edges, root_id: int) -> VesselTree:
    """Build a prebuilt tree, forcing every node fixed, and validate it."""
    fixed_nodes = [replace(n, fixed=True) for n in nodes]
    tree = VesselTree(fixed_nodes, edges, root_id)
    validate_prebuilt(tree)
    return tree


def prebuilt_from_dict(data) -> VesselTree:
    tree = tree_from_dict(data)
    return make_prebuilt(tree.nodes.values(), tree.edges, tree.root_id)


def attach_terminals(prebuilt: VesselTree, terminals: list[Terminal]) -> VesselTree:
    """Connect every terminal as a leaf under its nearest prebuilt leaf.

    Ties in the Euclidean distance go to the smaller leaf id. Terminal
    node ids continue after the largest prebuilt id, in input order.
    """
    validate_prebuilt(prebuilt)
    if not terminals:
        raise PreconditionError("at least one terminal is required")
    leaves = prebuilt.leaf_ids()
    if not leaves:
        raise InvalidTreeError("prebuilt tree has no leaf to attach to")

    nodes = list(prebuilt.nodes.values())
    edges = list(prebuilt.edges)
    next_id = prebuilt.next_id()
    for term in terminals:
        best = min(
            leaves,
            key=lambda lid: (math.dist(prebuilt.nodes[lid].position, term.position), lid),
        )
        nodes.append(Node(next_id, tuple(term.position)))
        edges.append(Edge(best, next_id, radius=term.radius))
        next_id += 1
    return VesselTree(nodes, edges, prebuilt.root_id)


# ---------------------------------------------------------------------------
# relaxation


def _edge_weight(e: Edge, viscosity: float, material_weight: float) -> float:
    """Per-unit-length cost coefficient of a segment (flows/radii fixed)."""
    return (e.flow * e.flow * 8.0 * viscosity / (math.pi * e.radius ** 4)
            + material_weight * math.pi * e.radius * e.radius)


def relax(tree: VesselTree, config: GcoConfig) -> VesselTree:
    """Descend non-terminal, non-fixed node positions to reduce total cost.

    Per-node gradient steps with backtracking step halving; a move is kept
    only if it strictly lowers the node's local cost, so the tree cost is
    non-increasing. Sweeps stop when the per-sweep relative improvement
    drops below config.relax_tolerance or after config.max_iterations.
    """
    for e in tree.edges:
        if e.flow is None or e.radius is None:
            raise PreconditionError(
                f"edge {e.parent_id}->{e.child_id} is missing "
                + ("flow" if e.flow is None else "radius"))

    cmap = tree.children_map()
    pmap = tree.parent_edge_map()
    movable = [nid for nid in sorted(tree.nodes)
               if cmap[nid] and not tree.nodes[nid].fixed]
    if not movable:
        return tree

    pos: dict[int, tuple[float, float, float]] = {
        nid: n.position for nid, n in tree.nodes.items()}
    anchors: dict[int, list[tuple[int, float]]] = {}
    for nid in movable:
        items = [(e.child_id, _edge_weight(e, config.viscosity, config.material_weight))
                 for e in cmap[nid]]
        if nid in pmap:
            pe = pmap[nid]
            items.append((pe.parent_id, _edge_weight(pe, config.viscosity,
                                                     config.material_weight)))
        anchors[nid] = items

    def local_cost(p, items) -> float:
        total = 0.0
        for other, k in items:
            total += k * math.dist(p, pos[other])
        return total

    def tree_cost() -> float:
        terms = []
        for e in tree.edges:
            k = _edge_weight(e, config.viscosity, config.material_weight)
            terms.append(k * math.dist(pos[e.parent_id], pos[e.child_id]))
        return math.fsum(sorted(terms))

    step_size: dict[int, float] = {}
    cost = tree_cost()
    for _ in range(config.max_iterations):
        for nid in movable:
            items = anchors[nid]
            x = pos[nid]
            f0 = local_cost(x, items)
            gx = gy = gz = 0.0
            nearest = math.inf
            for other, k in items:
                o = pos[other]
                d = math.dist(x, o)
                nearest = min(nearest, d)
                if d <= 0.0:
                    continue
                gx += k * (x[0] - o[0]) / d
                gy += k * (x[1] - o[1]) / d
                gz += k * (x[2] - o[2]) / d
            gn = math.sqrt(gx * gx + gy * gy + gz * gz)
            if gn <= 0.0 or not math.isfinite(gn):
                continue
            ux, uy, uz = -gx / gn, -gy / gn, -gz / gn

            step = step_size.get(nid, 0.5 * nearest)
            accepted = False
            for _halving in range(40):
                cand = (x[0] + step * ux, x[1] + step * uy, x[2] + step * uz)
                fc = local_cost(cand, items)
                if fc < f0 and min(math.dist(cand, pos[o]) for o, _ in items) > 1e-9:
                    pos[nid] = cand
                    step_size[nid] = min(step * 2.0, nearest)
                    accepted = True
                    break
                step *= 0.5
                if step < 1e-12 * max(nearest, 1.0):
                    break
            if not accepted:
                step_size[nid] = max(step, 1e-12)
        new_cost = tree_cost()
        improvement = (cost - new_cost) / cost if cost > 0 else 0.0
        cost = new_cost
        if improvement < config.relax_tolerance:
            break
    return tree.with_positions(pos)


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitResult:
    """Outcome of a split attempt; applied is False when not applicable."""

    tree: VesselTree
    applied: bool
    node_id: int
    new_node_id: int | None = None


def _partition_objective(dirs: np.ndarray, mask: np.ndarray) -> float:
    total = 0.0
    for group in (dirs[mask], dirs[~mask]):
        if len(group):
            centroid = group.mean(axis=0)
            total += float(((group - centroid) ** 2).sum())
    return total


def _best_partition_bruteforce(dirs: np.ndarray) -> np.ndarray:
    k = len(dirs)
    best_mask = None
    best_obj = math.inf
    for bits in range(1, 2 ** k - 1):
        if not bits & 1:  # child 0 always in group A; skips mirror duplicates
            continue
        mask = np.array([(bits >> i) & 1 == 1 for i in range(k)])
        obj = _partition_objective(dirs, mask)
        if obj < best_obj:
            best_obj = obj
            best_mask = mask
    return best_mask


def _best_partition_kmeans(dirs: np.ndarray, restarts: int = 10) -> np.ndarray:
    k = len(dirs)
    pairs = sorted(
        itertools.combinations(range(k), 2),
        key=lambda ij: (-float(((dirs[ij[0]] - dirs[ij[1]]) ** 2).sum()), ij),
    )
    best_mask = None
    best_obj = math.inf
    for pair in pairs[:restarts]:
        c0 = dirs[pair[0]].copy()
        c1 = dirs[pair[1]].copy()
        assign = None
        for _ in range(100):
            d0 = ((dirs - c0) ** 2).sum(axis=1)
            d1 = ((dirs - c1) ** 2).sum(axis=1)
            new_assign = d1 < d0  # True -> cluster 1; ties stay with cluster 0
            if not new_assign.any():
                new_assign[int(np.argmax(d0))] = True
            elif new_assign.all():
                new_assign[int(np.argmax(d1))] = False
            if assign is not None and (new_assign == assign).all():
                break
            assign = new_assign
            c0 = dirs[~assign].mean(axis=0)
            c1 = dirs[assign].mean(axis=0)
        obj = _partition_objective(dirs, assign)
        if obj < best_obj:
            best_obj = obj
            best_mask = assign.copy()
    return best_mask


def split(tree: VesselTree, node_id: int,
          gamma: float | None = None) -> SplitResult:
    """Partition a >2-child node's children by direction and insert a junction.

    Children are 2-means clustered on their unit direction vectors (exact
    enumeration for up to 6 children); the new intermediate node sits at
    the centroid of the adopted group's endpoints and takes the larger
    group, so the node's degree strictly decreases. Flows and Murray radii
    are re-propagated afterwards.
    """
    gamma = DEFAULT_MURRAY_GAMMA if gamma is None else gamma
    result = _split_once(tree, node_id, gamma)
    if result.applied:
        result = replace(result, tree=_refresh_derived(result.tree, gamma))
    return result


def _split_once(tree: VesselTree, node_id: int, gamma: float) -> SplitResult:
    if node_id not in tree.nodes:
        raise PreconditionError(f"node {node_id} not in tree")
    cmap = tree.children_map()
    kids = cmap[node_id]
    if len(kids) <= 2:
        return SplitResult(tree=tree, applied=False, node_id=node_id)

    origin = np.asarray(tree.nodes[node_id].position, dtype=float)
    endpoints = np.stack([tree.nodes[e.child_id].pos_array() for e in kids])
    vectors = endpoints - origin
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    dirs = vectors / norms

    if len(kids) <= 6:
        mask = _best_partition_bruteforce(dirs)
    else:
        mask = _best_partition_kmeans(dirs)

    group_a = [kids[i] for i in range(len(kids)) if mask[i]]
    group_b = [kids[i] for i in range(len(kids)) if not mask[i]]
    if len(group_a) != len(group_b):
        adopted = group_a if len(group_a) > len(group_b) else group_b
    else:
        first_a = min(e.child_id for e in group_a)
        first_b = min(e.child_id for e in group_b)
        adopted = group_a if first_a < first_b else group_b

    centroid = np.stack([tree.nodes[e.child_id].pos_array() for e in adopted]).mean(axis=0)
    # the centroid may coincide with the junction (symmetric groups); nudge
    # toward the group so no zero-length edge appears
    if float(np.linalg.norm(centroid - origin)) <= 1e-9:
        direction = np.stack([dirs[i] for i in range(len(kids)) if kids[i] in adopted]
                             ).mean(axis=0)
        if float(np.linalg.norm(direction)) <= 1e-12:
            direction = dirs[[i for i in range(len(kids)) if kids[i] in adopted][0]]
        centroid = origin + direction / max(float(np.linalg.norm(direction)), 1e-12)

    new_id = tree.next_id()
    adopted_keys = {e.key() for e in adopted}
    new_edges = [e for e in tree.edges if e.key() not in adopted_keys]
    flows = [e.flow for e in adopted]
    group_flow = math.fsum(flows) if all(f is not None for f in flows) else None
    group_radius = math.fsum(
        e.radius ** gamma for e in adopted) ** (1.0 / gamma)
    new_edges.append(Edge(node_id, new_id, radius=group_radius, flow=group_flow))
    for e in adopted:
        new_edges.append(replace(e, parent_id=new_id))
    nodes = list(tree.nodes.values()) + [Node(new_id, tuple(float(v) for v in centroid))]
    out = VesselTree(nodes, new_edges, tree.root_id)
    return SplitResult(tree=out, applied=True, node_id=node_id, new_node_id=new_id)


def _refresh_derived(tree: VesselTree, gamma: float) -> VesselTree:
    """Re-propagate flows from terminal edges and radii via Murray's rule."""
    cmap = tree.children_map()
    terminal_edges = [e for e in tree.edges if not cmap[e.child_id]]
    if terminal_edges and all(e.flow is not None for e in terminal_edges):
        new_flow: dict[tuple[int, int], float] = {}
        for e in _postorder_edges(tree):
            children = cmap[e.child_id]
            if not children:
                new_flow[e.key()] = e.flow
            else:
                new_flow[e.key()] = math.fsum(new_flow[k.key()] for k in children)
        tree = VesselTree(
            tree.nodes.values(),
            [replace(e, flow=new_flow[e.key()]) for e in tree.edges],
            tree.root_id,
        )
    return update_radii_murray(tree, gamma)


def split_sweep(tree: VesselTree, gamma: float | None = None) -> VesselTree:
    """Split every node with more than two children until none remains."""
    gamma = DEFAULT_MURRAY_GAMMA if gamma is None else gamma
    applied_any = False
    while True:
        cmap = tree.children_map()
        over = [nid for nid in sorted(cmap) if len(cmap[nid]) > 2]
        if not over:
            break
        for nid in over:
            tree = _split_once(tree, nid, gamma).tree
            applied_any = True
    return _refresh_derived(tree, gamma) if applied_any else tree


# ---------------------------------------------------------------------------
# merge / prune cleanup


def merge_prune(tree: VesselTree, length_epsilon: float, *,
                merge: bool = True, prune: bool = True) -> VesselTree:
    """Collapse short internal edges and remove pass-through nodes.

    Merging folds the short edge's child into its parent (or, when the
    child is fixed, the parent upward into the child) so the child's
    children are adopted one level up. Pruning fuses the two edges of a
    degree-2 pass-through node, keeping the downstream radius and flow.
    Fixed (prebuilt) nodes and terminals are never removed; both flow
    conservation and Murray consistency are preserved exactly by these
    rewrites, so no re-propagation is required afterwards.
    """
    if not length_epsilon >= 0:
        raise PreconditionError(f"length_epsilon must be >= 0, got {length_epsilon}")
    nodes = dict(tree.nodes)
    kids: dict[int, dict[int, Edge]] = {nid: {} for nid in nodes}
    par: dict[int, Edge] = {}
    for e in tree.edges:
        kids[e.parent_id][e.child_id] = e
        par[e.child_id] = e
    root_id = tree.root_id

    def collapse_into_parent(p: int, c: int) -> None:
        for cc, e in sorted(kids[c].items()):
            adopted = replace(e, parent_id=p)
            kids[p][cc] = adopted
            par[cc] = adopted
        del kids[p][c]
        del kids[c]
        del par[c]
        del nodes[c]

    def collapse_into_child(p: int, c: int) -> None:
        upstream = par[p]  # grandparent -> p
        gp = upstream.parent_id
        for cc, e in sorted(kids[p].items()):
            if cc == c:
                continue
            adopted = replace(e, parent_id=c)
            kids[c][cc] = adopted
            par[cc] = adopted
        retargeted = replace(upstream, child_id=c)
        del kids[gp][p]
        kids[gp][c] = retargeted
        par[c] = retargeted
        del kids[p]
        del par[p]
        del nodes[p]

    def find_short_internal_edge():
        for p in sorted(kids):
            pos_p = nodes[p].position
            for c in sorted(kids[p]):
                if not kids.get(c):
                    continue  # terminal edge, always kept
                if math.dist(pos_p, nodes[c].position) >= length_epsilon:
                    continue
                if not nodes[c].fixed:
                    return ("child", p, c)
                if not nodes[p].fixed and p != root_id and p in par:
                    return ("parent", p, c)
        return None

    def find_passthrough_node():
        for nid in sorted(nodes):
            if nid == root_id or nodes[nid].fixed or nid not in par:
                continue
            if len(kids[nid]) == 1:
                return nid
        return None

    changed = True
    while changed:
        changed = False
        if merge:
            while (hit := find_short_internal_edge()) is not None:
                mode, p, c = hit
                if mode == "child":
                    collapse_into_parent(p, c)
                else:
                    collapse_into_child(p, c)
                changed = True
        if prune:
            while (nid := find_passthrough_node()) is not None:
                down = next(iter(kids[nid].values()))
                up = par[nid]
                fused = replace(down, parent_id=up.parent_id)
                del kids[up.parent_id][nid]
                kids[up.parent_id][down.child_id] = fused
                par[down.child_id] = fused
                del kids[nid]
                del par[nid]
                del nodes[nid]
                changed = True

    edges = [kids[p][c] for p in sorted(kids) for c in sorted(kids[p])]
    return VesselTree(nodes.values(), edges, root_id)


# ---------------------------------------------------------------------------
# schedule and the full pipeline


@dataclass(frozen=True)
class Phase:
    """One schedule phase: an ordered op list applied sweep_count times."""

    operations: tuple[str, ...]
    sweep_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))
        if not self.operations:
            raise ConfigError("phase needs at least one operation")
        bad = [op for op in self.operations if op not in SCHEDULE_OPERATIONS]
        if bad:
            raise ConfigError(f"unknown operation(s) {bad}; allowed: {SCHEDULE_OPERATIONS}")
        if self.sweep_count < 1:
            raise ConfigError(f"sweep_count must be >= 1, got {self.sweep_count}")


@dataclass(frozen=True)
class GcoSchedule:
    phases: tuple[Phase, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ConfigError("schedule needs at least one phase")

    @classmethod
    def default(cls) -> "GcoSchedule":
        """Three scales of: relax, restructure (+relax in-sweep), relax."""
        block = [
            Phase(("relax",), sweep_count=5),
            Phase(("split", "merge", "prune", "relax"), sweep_count=1),
            Phase(("relax",), sweep_count=5),
        ]
        return cls(tuple(block * 3))

    def to_list(self) -> list[dict]:
        return [{"operations": list(p.operations), "sweeps": p.sweep_count}
                for p in self.phases]

    @classmethod
    def from_list(cls, items) -> "GcoSchedule":
        try:
            phases = tuple(
                Phase(tuple(item["operations"]), int(item.get("sweeps", 1)))
                for item in items)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schedule: {exc}") from exc
        return cls(phases)


@dataclass
class SynthesisResult:
    tree: VesselTree
    cost_trace: list[float]
    terminals: list[Terminal]
    rng_seed: int
    accepted_sweeps: int


def default_merge_epsilon(config: GcoConfig) -> float:
    return 0.5 * config.terminal_radius_mean


def synthesize_with_trace(prebuilt: VesselTree, mask, config: GcoConfig,
                          schedule: GcoSchedule | None = None,
                          merge_epsilon: float | None = None) -> SynthesisResult:
    """Run the full pipeline and record the per-sweep cost trace.

    Each sweep applies its phase's operations tree-wide, re-propagates
    flows and Murray radii, and is accepted only if the total cost does
    not increase (within 1e-12); rejected sweeps leave the tree as-is and
    repeat the previous cost in the trace.
    """
    config.validate()
    validate_prebuilt(prebuilt)
    schedule = schedule or GcoSchedule.default()
    eps = default_merge_epsilon(config) if merge_epsilon is None else merge_epsilon
    seed = config.rng_seed
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2 ** 63))
        config = replace(config, rng_seed=seed)

    _, q_terminal = config.resolved_flows()
    terminals = sample_terminals(mask, config.terminal_count,
                                 config.terminal_radius_mean,
                                 config.terminal_radius_sd, seed)
    tree = attach_terminals(prebuilt, terminals)
    tree = propagate_flows(tree, q_terminal)
    tree = update_radii_murray(tree, config.murray_gamma)

    trace = [total_cost(tree, config).total]
    accepted = 0
    for phase in schedule.phases:
        for _ in range(phase.sweep_count):
            candidate = tree
            for op in phase.operations:
                if op == "relax":
                    candidate = relax(candidate, config)
                elif op == "split":
                    candidate = split_sweep(candidate, config.murray_gamma)
                elif op == "merge":
                    candidate = merge_prune(candidate, eps, merge=True, prune=False)
                elif op == "prune":
                    candidate = merge_prune(candidate, eps, merge=False, prune=True)
            candidate = _refresh_derived(candidate, config.murray_gamma)
            bad = validate_tree(candidate)
            if bad:  # pragma: no cover - every operation preserves validity
                raise InvalidTreeError(f"sweep produced an invalid tree: {bad[0]}")
            cost = total_cost(candidate, config).total
            if cost <= trace[-1] + 1e-12:
                tree = candidate
                trace.append(cost)
                accepted += 1
            else:
                trace.append(trace[-1])

    violations = validate_tree(tree)
    if violations:  # pragma: no cover - pipeline ops preserve validity
        raise InvalidTreeError(f"synthesis produced an invalid tree: {violations[0]}")
    return SynthesisResult(tree=tree, cost_trace=trace, terminals=terminals,
                           rng_seed=seed, accepted_sweeps=accepted)


def synthesize(prebuilt: VesselTree, mask, config: GcoConfig,
               schedule: GcoSchedule | None = None,
               merge_epsilon: float | None = None) -> VesselTree:
    """Sample, attach, and optimize a venous tree; deterministic per seed."""
    return synthesize_with_trace(prebuilt, mask, config, schedule, merge_epsilon).tree
