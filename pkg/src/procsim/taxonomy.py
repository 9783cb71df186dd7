"""Class hierarchies for semantic label noise.

A :class:`LexicalGraph` (concepts, child -> hypernym edges, and candidate
senses per class name) is searched depth-first from each class until the
required root concept is reached; the first successful path per class is
kept and all paths are merged into a rooted :class:`Taxonomy`.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .numerics import DomainError

__all__ = [
    "LexicalGraph",
    "Node",
    "Taxonomy",
    "UnresolvedClassError",
    "build_hierarchy",
    "prune_to_classes",
    "semantic_candidates",
    "read_lexical_graph",
    "read_taxonomy",
    "write_taxonomy",
]


class UnresolvedClassError(DomainError):
    """Raised when some classes have no hypernym path to the root."""

    def __init__(self, classes):
        self.classes = list(classes)
        super().__init__(f"no path to the root for classes: {', '.join(map(str, self.classes))}")


@dataclass
class LexicalGraph:
    """Hypernym graph. ``hypernyms[c]`` keeps edges in insertion (file) order."""

    hypernyms: dict[str, list[str]] = field(default_factory=dict)
    senses: dict[str, list[str]] = field(default_factory=dict)

    @property
    def nodes(self) -> set[str]:
        out = set(self.hypernyms)
        for hs in self.hypernyms.values():
            out.update(hs)
        for ss in self.senses.values():
            out.update(ss)
        return out

    def add_edge(self, child: str, hypernym: str) -> None:
        hs = self.hypernyms.setdefault(child, [])
        if hypernym not in hs:
            hs.append(hypernym)
        self.hypernyms.setdefault(hypernym, [])

    @classmethod
    def from_edges(cls, edges, senses=None) -> "LexicalGraph":
        g = cls(senses={k: list(v) for k, v in (senses or {}).items()})
        for child, hyper in edges:
            g.add_edge(child, hyper)
        return g


def read_lexical_graph(edges_path, senses_path) -> LexicalGraph:
    """TSV ``child<TAB>hypernym`` edges plus a JSON ``{class name: [concepts]}`` senses file."""
    edges = []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or not "".join(row).strip() or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise DomainError(f"{edges_path}:{lineno}: expected 'child<TAB>hypernym'")
            edges.append((row[0].strip(), row[1].strip()))
    with open(senses_path, encoding="utf-8") as fh:
        senses = json.load(fh)
    return LexicalGraph.from_edges(edges, senses)


@dataclass(eq=False)
class Node:
    name: str
    class_id: int | None = None
    children: list["Node"] = field(default_factory=list)
    parent: "Node | None" = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.class_id is not None

    def add(self, child: "Node") -> "Node":
        child.parent = self
        self.children.append(child)
        return child

    def leaves(self):
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            stack.extend(reversed(node.children))

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.class_id is not None:
            d["class_id"] = self.class_id
        d["children"] = [c.to_dict() for c in self.children]
        return d


class Taxonomy:
    """Rooted class tree; leaves carry class ids."""

    def __init__(self, root: Node):
        self.root = root
        self.leaf_of: dict[int, Node] = {}
        seen = set()
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                raise DomainError("taxonomy contains a cycle or shared node")
            seen.add(id(node))
            if node.is_leaf:
                if node.class_id in self.leaf_of:
                    raise DomainError(f"class {node.class_id} appears on two leaves")
                self.leaf_of[node.class_id] = node
            for c in node.children:
                if c.parent is not node:
                    c.parent = node
            stack.extend(node.children)

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.leaf_of)

    def path_to_root(self, class_id: int) -> list[str]:
        node = self.leaf_of[class_id]
        out = []
        while node is not None:
            out.append(node.name)
            node = node.parent
        return out

    def to_dict(self) -> dict:
        return self.root.to_dict()

    @classmethod
    def from_dict(cls, d) -> "Taxonomy":
        def build(dd):
            node = Node(dd["name"], dd.get("class_id"))
            for c in dd.get("children", []):
                node.add(build(c))
            return node

        return cls(build(d))

    def __eq__(self, other) -> bool:
        return isinstance(other, Taxonomy) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"Taxonomy(root={self.root.name!r}, classes={len(self.leaf_of)})"


def write_taxonomy(tax: Taxonomy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tax.to_dict(), fh, indent=1)


def read_taxonomy(path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        return Taxonomy.from_dict(json.load(fh))


def _dfs_path(graph: LexicalGraph, start: str, root: str) -> list[str] | None:
    # iterative DFS; first success in edge order wins
    if start == root:
        return [start]
    failed: set[str] = set()
    path = [start]
    iters = [iter(graph.hypernyms.get(start, ()))]
    while iters:
        nxt = next(iters[-1], None)
        if nxt is None:
            failed.add(path.pop())
            iters.pop()
            continue
        if nxt in failed or nxt in path:
            continue
        path.append(nxt)
        if nxt == root:
            return path
        iters.append(iter(graph.hypernyms.get(nxt, ())))
    return None


def build_hierarchy(class_names, graph: LexicalGraph, required_root: str, overrides=None) -> Taxonomy:
    """Merge the first root-reaching DFS path of every class into a tree.

    ``class_names[i]`` is the name of class ``i``. Senses are tried in the
    order given; ``overrides`` maps a class name to a forced hypernym concept
    from which the search continues instead.
    """
    overrides = overrides or {}
    if required_root not in graph.nodes:
        raise DomainError(f"root {required_root!r} is not in the graph")

    paths: dict[int, list[str]] = {}
    unresolved = []
    for cid, name in enumerate(class_names):
        starts = [overrides[name]] if name in overrides else graph.senses.get(name, [])
        if not starts:
            raise DomainError(f"class {name!r} has no senses")
        for s in starts:
            p = _dfs_path(graph, s, required_root)
            if p is not None:
                # the class leaf stands in for its own sense concept
                paths[cid] = p[1:] if s == name and name not in overrides else p
                break
        else:
            unresolved.append(name)
    if unresolved:
        raise UnresolvedClassError(unresolved)

    root = Node(required_root)
    internal = {required_root: root}
    for cid, path in paths.items():
        # path runs from the class's first concept up to (and including) the root
        parent = root
        for concept in reversed(path[:-1]):
            node = internal.get(concept)
            if node is None:
                node = internal[concept] = parent.add(Node(concept))
            parent = node
        parent.add(Node(class_names[cid], cid))
    return Taxonomy(root)


def _copy_pruned(node: Node, keep: set[int]) -> Node | None:
    if node.is_leaf:
        return Node(node.name, node.class_id) if node.class_id in keep else None
    out = Node(node.name)
    for c in node.children:
        cc = _copy_pruned(c, keep)
        if cc is not None:
            out.add(cc)
    return out if out.children else None


def prune_to_classes(tax: Taxonomy, keep) -> Taxonomy:
    """Restrict the tree to ``keep`` class ids; empty branches are dropped, the root stays."""
    keep = {int(k) for k in keep}
    if not keep:
        raise DomainError("cannot prune to an empty class set")
    missing = keep - set(tax.leaf_of)
    if missing:
        raise DomainError(f"classes {sorted(missing)} are not leaves of the taxonomy")
    return Taxonomy(_copy_pruned(tax.root, keep) or Node(tax.root.name))


def first_branching_ancestor(tax: Taxonomy, class_id: int) -> Node:
    """Nearest ancestor with two or more children (the root if none has)."""
    node = tax.leaf_of[class_id].parent
    while node is not None and len(node.children) < 2 and node.parent is not None:
        node = node.parent
    return node if node is not None else tax.root


def semantic_candidates(tax: Taxonomy, class_id: int) -> set[int]:
    """Leaf classes under the first branching ancestor of ``class_id``, minus itself."""
    if class_id not in tax.leaf_of:
        raise DomainError(f"class {class_id} is not a leaf of the taxonomy")
    anc = first_branching_ancestor(tax, class_id)
    return {leaf.class_id for leaf in anc.leaves()} - {class_id}
