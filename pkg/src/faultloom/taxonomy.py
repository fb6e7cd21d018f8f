"""Hierarchical fault taxonomies: loading, validation, traversal, rendering.

A taxonomy is a fixed 3-level category tree (primary category, subcategory,
specific type). It is loaded once from a YAML document and treated as
immutable afterwards, so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import yaml

from .errors import (
    AmbiguousLabelError,
    CyclicStructureError,
    DuplicateIdError,
    DuplicateNameError,
    LabelNotFoundError,
    LevelViolationError,
    MissingDefinitionError,
    MissingFieldInNodeError,
    NodeMembershipError,
    TaxonomyError,
)

MAX_LEVEL = 3

# Scoring granularity per taxonomy kind: symptoms are scored at specific-type
# leaves, root causes at subcategory level.
DEFAULT_LEAF_LEVEL = {"symptom": 3, "root_cause": 2}


def normalize_label(label: str) -> str:
    """Case-fold and collapse whitespace so LLM-emitted names compare stably."""
    return " ".join(label.split()).casefold()


@dataclass(frozen=True)
class TaxonomyNode:
    id: str
    name: str
    definition: str
    level: int
    children: tuple["TaxonomyNode", ...] = ()


@dataclass
class Taxonomy:
    kind: str
    roots: tuple[TaxonomyNode, ...]
    source: str
    leaf_level: int
    _by_id: dict[str, TaxonomyNode] = field(default_factory=dict, repr=False)
    _parent: dict[str, TaxonomyNode | None] = field(default_factory=dict, repr=False)
    _by_name: dict[str, list[TaxonomyNode]] = field(default_factory=dict, repr=False)

    def walk(self) -> Iterator[TaxonomyNode]:
        """All nodes in document order, depth first."""
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def nodes_at_level(self, level: int) -> list[TaxonomyNode]:
        return [n for n in self.walk() if n.level == level]

    def node_by_id(self, node_id: str) -> TaxonomyNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise NodeMembershipError(node_id) from None

    def is_leaf_granularity(self, node: TaxonomyNode) -> bool:
        """Whether a node is a valid classification target.

        Targets are nodes at the leaf level, plus shallower nodes with no
        children (e.g. a root-cause primary like "Unknown" that was never
        subdivided).
        """
        if node.level == self.leaf_level:
            return True
        return not node.children and node.level < self.leaf_level

    def leaves(self) -> list[TaxonomyNode]:
        return [n for n in self.walk() if self.is_leaf_granularity(n)]


def _build_node(
    raw: Any,
    level: int,
    seen_ids: dict[str, str],
    seen_objs: set[int],
    context: str,
) -> TaxonomyNode:
    if not isinstance(raw, dict):
        raise TaxonomyError(f"node entry is not a mapping ({context})")
    if id(raw) in seen_objs:
        raise CyclicStructureError(str(raw.get("id", "<unknown>")))
    seen_objs.add(id(raw))

    for key in ("id", "name", "definition"):
        if key not in raw or raw[key] is None:
            raise MissingFieldInNodeError(key, context)
    node_id = str(raw["id"])
    name = str(raw["name"])
    definition = str(raw["definition"]).strip()

    if node_id in seen_ids:
        raise DuplicateIdError(node_id)
    seen_ids[node_id] = name
    if not definition:
        raise MissingDefinitionError(node_id)
    if level > MAX_LEVEL:
        raise LevelViolationError(node_id, level, MAX_LEVEL)

    raw_children = raw.get("children") or []
    if not isinstance(raw_children, list):
        raise TaxonomyError(f"children of node {node_id!r} is not a list")
    children = []
    child_names: set[str] = set()
    for child_raw in raw_children:
        child = _build_node(child_raw, level + 1, seen_ids, seen_objs, f"child of {node_id}")
        norm = normalize_label(child.name)
        if norm in child_names:
            raise DuplicateNameError(child.name, node_id)
        child_names.add(norm)
        children.append(child)

    return TaxonomyNode(
        id=node_id, name=name, definition=definition, level=level,
        children=tuple(children),
    )


def load_taxonomy(document: str | Path | dict) -> Taxonomy:
    """Load and validate a taxonomy from a YAML file path or a parsed mapping.

    Raises a specific TaxonomyError subclass naming the offending node for
    duplicate ids, missing definitions, level violations, and cycles.
    """
    if isinstance(document, (str, Path)):
        with open(document, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    else:
        raw = document
    if not isinstance(raw, dict):
        raise TaxonomyError("taxonomy document must be a mapping")

    kind = raw.get("kind")
    if kind not in ("symptom", "root_cause"):
        raise TaxonomyError(f"unknown taxonomy kind: {kind!r}")
    source = str(raw.get("source", ""))
    leaf_level = int(raw.get("leaf_level", DEFAULT_LEAF_LEVEL[kind]))
    raw_roots = raw.get("nodes")
    if not isinstance(raw_roots, list) or not raw_roots:
        raise TaxonomyError("taxonomy document has no 'nodes' list")

    seen_ids: dict[str, str] = {}
    seen_objs: set[int] = set()
    roots = []
    root_names: set[str] = set()
    for raw_root in raw_roots:
        root = _build_node(raw_root, 1, seen_ids, seen_objs, "root")
        norm = normalize_label(root.name)
        if norm in root_names:
            raise DuplicateNameError(root.name, None)
        root_names.add(norm)
        roots.append(root)

    taxonomy = Taxonomy(kind=kind, roots=tuple(roots), source=source, leaf_level=leaf_level)
    for node in taxonomy.walk():
        taxonomy._by_id[node.id] = node
        taxonomy._by_name.setdefault(normalize_label(node.name), []).append(node)
        for child in node.children:
            taxonomy._parent[child.id] = node
    for root in roots:
        taxonomy._parent[root.id] = None
    return taxonomy


def resolve_label(taxonomy: Taxonomy, label: str) -> TaxonomyNode:
    """Exact-name lookup, case-insensitive with whitespace normalization."""
    matches = taxonomy._by_name.get(normalize_label(label), [])
    if not matches:
        raise LabelNotFoundError(label)
    if len(matches) > 1:
        raise AmbiguousLabelError(label, [n.id for n in matches])
    return matches[0]


def ancestors(taxonomy: Taxonomy, node: TaxonomyNode) -> list[TaxonomyNode]:
    """Path from a root down to the node, inclusive."""
    if taxonomy._by_id.get(node.id) is not node:
        raise NodeMembershipError(node.id)
    path = [node]
    parent = taxonomy._parent[node.id]
    while parent is not None:
        path.append(parent)
        parent = taxonomy._parent[parent.id]
    path.reverse()
    return path


def ancestor_at_level(taxonomy: Taxonomy, node: TaxonomyNode, level: int) -> TaxonomyNode:
    """Ancestor of a node at the given level; the node itself if shallower."""
    path = ancestors(taxonomy, node)
    return path[min(level, len(path)) - 1]


def render_prompt_section(taxonomy: Taxonomy) -> str:
    """Deterministic depth-indented outline of names and definitions."""
    lines = []
    for node in taxonomy.walk():
        indent = "  " * (node.level - 1)
        lines.append(f"{indent}- {node.name}: {node.definition}")
    return "\n".join(lines) + "\n"
