"""Rooted vessel-tree data model: flows, Murray radii, and cost.

Trees are value-semantic: every operation returns a new tree and never
mutates its input, so trees can be shared freely across threads.
Positions are in µm, flows in µm³/s.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, InvalidTreeError, PreconditionError

#: Default Murray bifurcation exponent.
DEFAULT_MURRAY_GAMMA = 3.0

#: Relative tolerance for flow-conservation checks.
FLOW_RTOL = 1e-9


@dataclass(frozen=True)
class Node:
    """Tree node: integer id, 3D position (µm), optional fixed flag.

    Fixed nodes belong to the manually specified seed tree and are never
    moved or removed by the optimizer.
    """

    id: int
    position: tuple[float, float, float]
    fixed: bool = False

    def pos_array(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class Edge:
    """Directed vessel segment parent -> child with radius (µm) and flow (µm³/s).

    Radius and flow may be None while a tree is under construction; a
    fully assembled tree carries both on every edge.
    """

    parent_id: int
    child_id: int
    radius: float | None = None
    flow: float | None = None

    def key(self) -> tuple[int, int]:
        return (self.parent_id, self.child_id)


@dataclass(frozen=True)
class Violation:
    """One broken invariant, naming the offending node or edge."""

    kind: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.message}"


class VesselTree:
    """Rooted directed tree of vessel segments.

    ``nodes`` maps id -> Node, ``edges`` is a flat list (so structurally
    broken inputs, e.g. a node with two parents, are representable and
    reportable by :func:`validate_tree`).
    """

    __slots__ = ("nodes", "edges", "root_id")

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge], root_id: int):
        self.nodes: dict[int, Node] = {n.id: n for n in nodes}
        self.edges: list[Edge] = list(edges)
        self.root_id = root_id

    # -- structure helpers (assume a structurally valid tree) ----------------

    def children_map(self) -> dict[int, list[Edge]]:
        out: dict[int, list[Edge]] = {nid: [] for nid in self.nodes}
        for e in self.edges:
            out.setdefault(e.parent_id, []).append(e)
        for lst in out.values():
            lst.sort(key=lambda e: e.child_id)
        return out

    def parent_edge_map(self) -> dict[int, Edge]:
        return {e.child_id: e for e in self.edges}

    def leaf_ids(self) -> list[int]:
        parents = {e.parent_id for e in self.edges}
        return sorted(nid for nid in self.nodes if nid not in parents)

    def terminal_ids(self) -> list[int]:
        """Leaves of the tree (where boundary flow exits)."""
        return self.leaf_ids()

    def edge_length(self, e: Edge) -> float:
        a = self.nodes[e.parent_id].position
        b = self.nodes[e.child_id].position
        return math.dist(a, b)

    def total_length(self) -> float:
        return math.fsum(self.edge_length(e) for e in self.edges)

    def next_id(self) -> int:
        return max(self.nodes) + 1 if self.nodes else 0

    def copy(self) -> "VesselTree":
        return VesselTree(self.nodes.values(), self.edges, self.root_id)

    def with_positions(self, positions: Mapping[int, tuple[float, float, float]]) -> "VesselTree":
        nodes = [
            replace(n, position=tuple(positions[nid])) if nid in positions else n
            for nid, n in sorted(self.nodes.items())
        ]
        return VesselTree(nodes, self.edges, self.root_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VesselTree):
            return NotImplemented
        return (
            self.root_id == other.root_id
            and self.nodes == other.nodes
            and sorted(self.edges, key=Edge.key) == sorted(other.edges, key=Edge.key)
        )

    def __repr__(self) -> str:
        return f"VesselTree(nodes={len(self.nodes)}, edges={len(self.edges)}, root={self.root_id})"


@dataclass
class GcoConfig:
    """Boundary conditions and optimizer weights for tree synthesis.

    Defaults are the renal-vein values: terminal radii ~ N(10.79, 2.41) µm,
    inlet flow 7 ml/min = 1.167e11 µm³/s, viscosity 3.6e-3 Pa·s and material
    weight 6e-8. Exactly one of ``inlet_flow``/``terminal_flow`` may be left
    None; the other is derived under the equal-terminal-flow assumption.
    """

    terminal_radius_mean: float = 10.79
    terminal_radius_sd: float = 2.41
    terminal_count: int = 200
    inlet_flow: float | None = 1.167e11
    terminal_flow: float | None = None
    viscosity: float = 3.6e-3
    material_weight: float = 6e-8
    murray_gamma: float = DEFAULT_MURRAY_GAMMA
    relax_tolerance: float = 1e-6
    max_iterations: int = 10
    rng_seed: int | None = None

    def validate(self) -> None:
        if self.terminal_count < 1:
            raise ConfigError(f"terminal_count must be >= 1, got {self.terminal_count}")
        for name in ("terminal_radius_mean", "terminal_radius_sd", "viscosity",
                     "material_weight", "relax_tolerance"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 2.0 <= self.murray_gamma <= 4.0:
            raise ConfigError(f"murray_gamma must lie in [2, 4], got {self.murray_gamma}")
        if self.inlet_flow is None and self.terminal_flow is None:
            raise ConfigError("one of inlet_flow / terminal_flow must be given")
        for name in ("inlet_flow", "terminal_flow"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value}")
        if self.inlet_flow is not None and self.terminal_flow is not None:
            q_from_terminals = self.terminal_flow * self.terminal_count
            if abs(q_from_terminals - self.inlet_flow) > 0.01 * self.inlet_flow:
                raise ConfigError(
                    "terminal_flow * terminal_count deviates from inlet_flow by more "
                    f"than 1% ({q_from_terminals:g} vs {self.inlet_flow:g})"
                )

    def resolved_flows(self) -> tuple[float, float]:
        """Return (inlet flow Q, per-terminal flow Q_t), deriving the missing one."""
        self.validate()
        if self.terminal_flow is None:
            return self.inlet_flow, self.inlet_flow / self.terminal_count
        if self.inlet_flow is None:
            return self.terminal_flow * self.terminal_count, self.terminal_flow
        return self.inlet_flow, self.terminal_flow

    def to_dict(self) -> dict:
        return {
            "terminal_radius_mean": self.terminal_radius_mean,
            "terminal_radius_sd": self.terminal_radius_sd,
            "terminal_count": self.terminal_count,
            "inlet_flow": self.inlet_flow,
            "terminal_flow": self.terminal_flow,
            "viscosity": self.viscosity,
            "material_weight": self.material_weight,
            "murray_gamma": self.murray_gamma,
            "relax_tolerance": self.relax_tolerance,
            "max_iterations": self.max_iterations,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GcoConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**dict(data))


@dataclass(frozen=True)
class CostBreakdown:
    """Poiseuille power loss plus weighted material (volume) cost."""

    power_loss: float
    material_cost: float
    total: float


# ---------------------------------------------------------------------------
# validation


def validate_tree(tree: VesselTree) -> list[Violation]:
    """Check every tree invariant; return [] iff the tree is valid.

    Diagnostics only, never raises. Flow conservation is checked only once
    every edge carries a flow; a partial assignment is itself a violation.
    """
    out: list[Violation] = []

    if tree.root_id not in tree.nodes:
        out.append(Violation("missing-root", f"node {tree.root_id}",
                             "root id not present in node set"))
        return out

    indeg: dict[int, int] = {nid: 0 for nid in tree.nodes}
    for e in tree.edges:
        subject = f"edge {e.parent_id}->{e.child_id}"
        if e.parent_id == e.child_id:
            out.append(Violation("self-loop", subject, "edge connects a node to itself"))
            continue
        missing = [nid for nid in (e.parent_id, e.child_id) if nid not in tree.nodes]
        if missing:
            out.append(Violation("unknown-node", subject,
                                 f"endpoint(s) {missing} not in node set"))
            continue
        indeg[e.child_id] += 1

    for nid in sorted(tree.nodes):
        d = indeg[nid]
        if nid == tree.root_id:
            if d != 0:
                out.append(Violation("root-has-parent", f"node {nid}",
                                     f"root has in-degree {d}, expected 0"))
        elif d == 0:
            out.append(Violation("no-parent", f"node {nid}",
                                 "non-root node has no incoming edge"))
        elif d > 1:
            out.append(Violation("multiple-parents", f"node {nid}",
                                 f"node has {d} parents"))

    # Reachability from the root; unreachable nodes also cover cycles, since
    # a cycle's nodes consume their single in-edge inside the cycle.
    children: dict[int, list[int]] = {nid: [] for nid in tree.nodes}
    for e in tree.edges:
        if e.parent_id in tree.nodes and e.child_id in tree.nodes and e.parent_id != e.child_id:
            children[e.parent_id].append(e.child_id)
    seen = {tree.root_id}
    stack = [tree.root_id]
    while stack:
        nid = stack.pop()
        for c in children[nid]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    for nid in sorted(set(tree.nodes) - seen):
        if indeg[nid] != 0 or nid == tree.root_id:
            out.append(Violation("unreachable", f"node {nid}",
                                 "node not reachable from the root"))

    for e in tree.edges:
        subject = f"edge {e.parent_id}->{e.child_id}"
        if e.parent_id not in tree.nodes or e.child_id not in tree.nodes:
            continue
        if e.radius is None:
            out.append(Violation("missing-radius", subject, "edge has no radius"))
        elif not e.radius > 0:
            out.append(Violation("nonpositive-radius", subject,
                                 f"radius {e.radius} is not > 0"))
        if e.parent_id != e.child_id and tree.edge_length(e) == 0.0:
            out.append(Violation("zero-length-edge", subject,
                                 "edge endpoints coincide"))

    flows = [e.flow for e in tree.edges]
    if any(f is None for f in flows):
        if any(f is not None for f in flows):
            out.append(Violation("incomplete-flows", "tree",
                                 "some edges carry flow, others do not"))
    elif not out and tree.edges:
        cmap = tree.children_map()
        for e in tree.edges:
            kids = cmap.get(e.child_id, [])
            if not kids:
                continue
            outflow = math.fsum(k.flow for k in kids)
            if abs(outflow - e.flow) > FLOW_RTOL * max(abs(e.flow), abs(outflow)):
                out.append(Violation(
                    "flow-conservation", f"node {e.child_id}",
                    f"inflow {e.flow!r} != child flow sum {outflow!r}"))
    return out


def require_valid(tree: VesselTree) -> None:
    """Raise InvalidTreeError naming the first violation, if any."""
    violations = validate_tree(tree)
    if violations:
        raise InvalidTreeError(str(violations[0]))


def _require_structurally_valid(tree: VesselTree) -> None:
    structural = {"missing-root", "self-loop", "unknown-node", "root-has-parent",
                  "no-parent", "multiple-parents", "unreachable"}
    for v in validate_tree(tree):
        if v.kind in structural:
            raise InvalidTreeError(str(v))


def _postorder_edges(tree: VesselTree) -> list[Edge]:
    """Edges ordered children-before-parents (iterative, id-deterministic)."""
    cmap = tree.children_map()
    pre: list[Edge] = []
    stack = [tree.root_id]
    while stack:
        nid = stack.pop()
        for e in cmap[nid]:
            pre.append(e)
            stack.append(e.child_id)
    # Every edge appears after its parent edge in preorder; reverse it.
    return list(reversed(pre))


# ---------------------------------------------------------------------------
# flow and radius propagation


def propagate_flows(tree: VesselTree, terminal_flow: float) -> VesselTree:
    """Assign terminal_flow to every terminal edge and sum flows rootward.

    Every internal edge carries the total flow of the terminals beneath it,
    so the single root edge (if the root has one child) carries N·Q_t.
    """
    if not terminal_flow > 0:
        raise PreconditionError(f"terminal_flow must be > 0, got {terminal_flow}")
    _require_structurally_valid(tree)

    cmap = tree.children_map()
    new_flow: dict[tuple[int, int], float] = {}
    for e in _postorder_edges(tree):
        kids = cmap[e.child_id]
        if not kids:
            new_flow[e.key()] = terminal_flow
        else:
            new_flow[e.key()] = math.fsum(new_flow[k.key()] for k in kids)
    edges = [replace(e, flow=new_flow[e.key()]) for e in tree.edges]
    return VesselTree(tree.nodes.values(), edges, tree.root_id)


def update_radii_murray(tree: VesselTree, gamma: float = DEFAULT_MURRAY_GAMMA) -> VesselTree:
    """Set every internal edge radius from its children: r^γ = Σ r_child^γ.

    Applied leaf-to-root; terminal edge radii are taken as given and must
    already be assigned.
    """
    if not gamma > 0:
        raise PreconditionError(f"gamma must be > 0, got {gamma}")
    _require_structurally_valid(tree)

    cmap = tree.children_map()
    new_radius: dict[tuple[int, int], float] = {}
    for e in _postorder_edges(tree):
        kids = cmap[e.child_id]
        if not kids:
            if e.radius is None or not e.radius > 0:
                raise PreconditionError(
                    f"terminal edge {e.parent_id}->{e.child_id} has no positive radius")
            new_radius[e.key()] = e.radius
        else:
            s = math.fsum(new_radius[k.key()] ** gamma for k in kids)
            new_radius[e.key()] = s ** (1.0 / gamma)
    edges = [replace(e, radius=new_radius[e.key()]) for e in tree.edges]
    return VesselTree(tree.nodes.values(), edges, tree.root_id)


# ---------------------------------------------------------------------------
# cost


def edge_cost_terms(length: float, radius: float, flow: float,
                    viscosity: float, material_weight: float) -> tuple[float, float]:
    """(Poiseuille power loss, weighted material cost) of one segment."""
    power = flow * flow * 8.0 * viscosity * length / (math.pi * radius ** 4)
    material = material_weight * math.pi * radius * radius * length
    return power, material


def total_cost(tree: VesselTree, config: GcoConfig) -> CostBreakdown:
    """Sum segment costs with exactly rounded (order-independent) summation."""
    power_terms: list[float] = []
    material_terms: list[float] = []
    for e in tree.edges:
        if e.flow is None or e.radius is None:
            raise PreconditionError(
                f"edge {e.parent_id}->{e.child_id} is missing "
                + ("flow" if e.flow is None else "radius"))
        p, m = edge_cost_terms(tree.edge_length(e), e.radius, e.flow,
                               config.viscosity, config.material_weight)
        power_terms.append(p)
        material_terms.append(m)
    # fsum is exactly rounded, so the totals do not depend on edge order.
    power = math.fsum(sorted(power_terms))
    material = math.fsum(sorted(material_terms))
    return CostBreakdown(power_loss=power, material_cost=material,
                         total=power + material)


# ---------------------------------------------------------------------------
# JSON serialization


def tree_to_dict(tree: VesselTree) -> dict:
    nodes = []
    for nid in sorted(tree.nodes):
        n = tree.nodes[nid]
        rec: dict = {"id": n.id, "pos_um": list(n.position)}
        if n.fixed:
            rec["fixed"] = True
        nodes.append(rec)
    edges = [
        {"from": e.parent_id, "to": e.child_id,
         "radius_um": e.radius, "flow_um3s": e.flow}
        for e in sorted(tree.edges, key=Edge.key)
    ]
    return {"nodes": nodes, "edges": edges, "root": tree.root_id}


def tree_from_dict(data: Mapping) -> VesselTree:
    try:
        nodes = [
            Node(id=int(rec["id"]),
                 position=tuple(float(x) for x in rec["pos_um"]),
                 fixed=bool(rec.get("fixed", False)))
            for rec in data["nodes"]
        ]
        edges = [
            Edge(parent_id=int(rec["from"]), child_id=int(rec["to"]),
                 radius=None if rec.get("radius_um") is None else float(rec["radius_um"]),
                 flow=None if rec.get("flow_um3s") is None else float(rec["flow_um3s"]))
            for rec in data["edges"]
        ]
        root = int(data["root"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidTreeError(f"malformed tree record: {exc}") from exc
    for rec in data["nodes"]:
        if len(rec["pos_um"]) != 3:
            raise InvalidTreeError(f"node {rec['id']}: pos_um must have 3 components")
    return VesselTree(nodes, edges, root)


def save_tree(tree: VesselTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_dict(tree), fh, indent=2)
        fh.write("\n")


def load_tree(path) -> VesselTree:
    with open(path, encoding="utf-8") as fh:
        return tree_from_dict(json.load(fh))
