"""Downhill relaxation trees built from the secular transfer rates."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bath import DissipatorSet
from .model import Eigensystem, ModelParameters

logger = logging.getLogger(__name__)

TREE_SCHEMA = "photoiso.tree/1"
TIE_TOL = 1e-12


@dataclass(frozen=True)
class RateTable:
    """``rates[j, i]``: transfer rate ``i -> j`` for ``e_j < e_i`` (zero otherwise)."""

    energies: np.ndarray
    rates: np.ndarray

    def downhill(self, i: int) -> np.ndarray:
        return np.flatnonzero((self.energies < self.energies[i]) & (self.rates[:, i] > 0))


def scattering_rates(diss: DissipatorSet) -> RateTable:
    e = np.asarray(diss.energies)
    K = np.asarray(diss.rates)
    mask = e[:, None] < e[None, :]
    r = np.where(mask, K, 0.0)
    has_lower = np.any(mask, axis=0)
    sinks = np.flatnonzero(has_lower & ~np.any(r > 0, axis=0))
    if len(sinks):
        logger.info("%d states have no downhill coupling (isolated sinks): %s", len(sinks), sinks[:10].tolist())
    return RateTable(e.copy(), r)


@dataclass(frozen=True)
class TreeNode:
    index: int
    energy: float
    transness: float


@dataclass(frozen=True)
class TreeEdge:
    source: int
    target: int
    rate: float


@dataclass
class RelaxationTree:
    root: int
    nodes: dict[int, TreeNode]
    edges: list[TreeEdge]
    meta: dict = field(default_factory=dict)

    def out_degree(self) -> dict[int, int]:
        deg = {i: 0 for i in self.nodes}
        for e in self.edges:
            deg[e.source] += 1
        return deg

    def is_acyclic(self) -> bool:
        # energies strictly decrease along edges, which rules out cycles
        return all(self.nodes[e.target].energy < self.nodes[e.source].energy for e in self.edges)

    def to_dict(self) -> dict:
        return {
            "schema": TREE_SCHEMA,
            "root": self.root,
            "nodes": [
                {"index": n.index, "energy": n.energy, "transness": n.transness}
                for n in sorted(self.nodes.values(), key=lambda n: n.index)
            ],
            "edges": [{"source": e.source, "target": e.target, "rate": e.rate} for e in self.edges],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RelaxationTree":
        if doc.get("schema") != TREE_SCHEMA:
            raise ValueError(f"unsupported tree schema {doc.get('schema')!r}")
        nodes = {int(n["index"]): TreeNode(int(n["index"]), float(n["energy"]), float(n["transness"])) for n in doc["nodes"]}
        edges = [TreeEdge(int(e["source"]), int(e["target"]), float(e["rate"])) for e in doc["edges"]]
        return cls(int(doc["root"]), nodes, edges, dict(doc.get("meta", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _top_targets(rates: RateTable, i: int, degree: int) -> list[int]:
    cand = rates.downhill(i)
    if len(cand) == 0:
        return []
    r = rates.rates[cand, i]
    order = np.lexsort((cand, -r))  # rate descending, then lower index
    chosen = cand[order[:degree]]
    if len(cand) > degree:
        cut = r[order[degree - 1]]
        nxt = r[order[degree]]
        if abs(cut - nxt) <= TIE_TOL * max(abs(cut), 1.0):
            logger.info("rate tie at state %d between %d and %d; kept the lower index", i, chosen[-1], cand[order[degree]])
    return [int(j) for j in chosen]


def build_tree(
    eigsys: Eigensystem,
    rates: RateTable,
    root: int,
    degree: int = 2,
    node_cap: int | None = None,
) -> RelaxationTree:
    """Breadth-first tree from ``root``; each expanded state links to its ``degree``
    fastest downhill partners (ties go to the lower state index)."""
    n = len(rates.energies)
    if not 0 <= root < n:
        raise ValueError(f"root {root} outside 0..{n - 1}")
    if degree < 1:
        raise ValueError("degree must be >= 1")
    l = np.asarray(eigsys.transness) if eigsys is not None else np.full(n, math.nan)
    e = rates.energies

    def node(i):
        return TreeNode(int(i), float(e[i]), float(l[i]))

    nodes = {root: node(root)}
    edges: list[TreeEdge] = []
    queue = deque([root])
    capped = False
    while queue:
        i = queue.popleft()
        for j in _top_targets(rates, i, degree):
            if j not in nodes:
                if node_cap is not None and len(nodes) >= node_cap:
                    capped = True
                    continue
                nodes[j] = node(j)
                queue.append(j)
            edges.append(TreeEdge(int(i), j, float(rates.rates[j, i])))
    return RelaxationTree(root, nodes, edges, {"degree": degree, "node_cap": node_cap, "capped": capped})


def brightest_root(fc_populations) -> int:
    return int(np.argmax(np.asarray(fc_populations)))


def torsional_spacing(params: ModelParameters, state: int = 0) -> float:
    """Harmonic spacing at the bottom of the cis torsional well of diabat ``state``."""
    v = params.V0 if state == 0 else params.V1
    return math.sqrt(params.m_inv * v / 2.0)


# ---------------------------------------------------------------------------
# export


def _dot_id(i: int) -> str:
    return f"s{i}"


def tree_to_dot(tree: RelaxationTree, name: str = "relaxation") -> str:
    """DOT text. Node attributes: ``energy`` (eV), ``transness``; edge: ``rate`` (eV)."""
    out = [f"digraph {name} {{", f'  graph [root="{_dot_id(tree.root)}"];']
    for n in sorted(tree.nodes.values(), key=lambda n: n.index):
        shape = "star" if n.index == tree.root else "circle"
        out.append(f'  {_dot_id(n.index)} [energy="{n.energy:.12g}", transness="{n.transness:.12g}", shape={shape}];')
    for e in tree.edges:
        out.append(f'  {_dot_id(e.source)} -> {_dot_id(e.target)} [rate="{e.rate:.12g}"];')
    out.append("}")
    return "\n".join(out) + "\n"


def export_tree(tree: RelaxationTree, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "json":
        path.write_text(tree.to_json())
    elif fmt in ("dot", "gv"):
        path.write_text(tree_to_dot(tree))
    else:
        raise ValueError(f"unknown tree format {fmt!r}")
    return path


def load_tree(path) -> RelaxationTree:
    return RelaxationTree.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# overlays


@dataclass
class Overlay:
    """Energy-matched comparison of the nodes of two trees."""

    matched: list[tuple[int, int]]
    only_a: list[int]
    only_b: list[int]
    tree_a: RelaxationTree
    tree_b: RelaxationTree
    tol: float

    def differing(self, lo: float, hi: float) -> int:
        """Unmatched nodes whose transness lies in ``[lo, hi]``."""
        na = sum(1 for i in self.only_a if lo <= self.tree_a.nodes[i].transness <= hi)
        nb = sum(1 for i in self.only_b if lo <= self.tree_b.nodes[i].transness <= hi)
        return na + nb


def overlay(tree_a: RelaxationTree, tree_b: RelaxationTree, tol: float) -> Overlay:
    """Pair nodes of equal energy (within ``tol`` eV), nearest first."""
    a = sorted(tree_a.nodes.values(), key=lambda n: n.energy)
    b = sorted(tree_b.nodes.values(), key=lambda n: n.energy)
    eb = np.array([n.energy for n in b])
    pairs = []
    for na in a:
        if len(eb):
            for jb in np.argsort(np.abs(eb - na.energy), kind="stable"):
                if abs(eb[jb] - na.energy) > tol:
                    break
                pairs.append((abs(eb[jb] - na.energy), na.index, b[jb].index))
    pairs.sort()
    used_a, used_b, matched = set(), set(), []
    for _, ia, ib in pairs:
        if ia not in used_a and ib not in used_b:
            used_a.add(ia)
            used_b.add(ib)
            matched.append((ia, ib))
    matched.sort()
    only_a = sorted(i for i in tree_a.nodes if i not in used_a)
    only_b = sorted(i for i in tree_b.nodes if i not in used_b)
    return Overlay(matched, only_a, only_b, tree_a, tree_b, tol)


def overlay_to_dot(ov: Overlay, name: str = "overlay") -> str:
    """Both trees in one graph. Node tag ``set`` is ``both``, ``a`` or ``b``."""
    out = [f"digraph {name} {{"]
    in_b = {ib: ia for ia, ib in ov.matched}
    in_a = {ia for ia, _ in ov.matched}
    for n in sorted(ov.tree_a.nodes.values(), key=lambda n: n.index):
        tag = "both" if n.index in in_a else "a"
        shape = "circle" if tag == "both" else "square"
        out.append(f'  a{n.index} [energy="{n.energy:.12g}", transness="{n.transness:.12g}", set="{tag}", shape={shape}];')
    for n in sorted(ov.tree_b.nodes.values(), key=lambda n: n.index):
        tag = "both" if n.index in in_b else "b"
        shape = "circle" if tag == "both" else "triangle"
        out.append(f'  b{n.index} [energy="{n.energy:.12g}", transness="{n.transness:.12g}", set="{tag}", shape={shape}];')
    for prefix, tree in (("a", ov.tree_a), ("b", ov.tree_b)):
        for e in tree.edges:
            out.append(f'  {prefix}{e.source} -> {prefix}{e.target} [rate="{e.rate:.12g}", tree="{prefix}"];')
    out.append("}")
    return "\n".join(out) + "\n"
