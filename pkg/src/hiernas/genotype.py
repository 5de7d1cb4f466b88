"""Discrete cell architectures and their JSON / DOT forms.

JSON schema::

    {"space": "S1",
     "normal": [[{"from": 0, "op": "SepConv3"}, {"from": 1, "op": "SkipConnect"}], ...],
     "reduce": [...],
     "meta": {...}}

``normal[j]`` lists the two incoming edges of internal node ``j + 2``; nodes 0
and 1 are the cell inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

from .operators import OperatorKind, kind

Node = List[Tuple[int, OperatorKind]]


class GenotypeError(ValueError):
    """Malformed genotype; ``path`` is a JSON path to the offending value."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Genotype:
    normal: List[Node]
    reduce: List[Node]
    space: str = "custom"
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.normal = [[(int(s), kind(o)) for s, o in node] for node in self.normal]
        self.reduce = [[(int(s), kind(o)) for s, o in node] for node in self.reduce]
        for cell_type in ("normal", "reduce"):
            _validate_cell(getattr(self, cell_type), f"$.{cell_type}")

    @property
    def n_nodes(self) -> int:
        return len(self.normal)

    def cell(self, cell_type: str) -> List[Node]:
        if cell_type not in ("normal", "reduce"):
            raise ValueError(f"cell type must be 'normal' or 'reduce', got {cell_type!r}")
        return getattr(self, cell_type)

    def to_dict(self) -> dict:
        def enc(cell):
            return [[{"from": s, "op": o.value} for s, o in node] for node in cell]

        return {"space": self.space, "normal": enc(self.normal), "reduce": enc(self.reduce), "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: Any) -> "Genotype":
        if not isinstance(obj, dict):
            raise GenotypeError("$", "genotype must be a JSON object")
        cells = {}
        for cell_type in ("normal", "reduce"):
            path = f"$.{cell_type}"
            if cell_type not in obj:
                raise GenotypeError(path, "missing")
            raw = obj[cell_type]
            if not isinstance(raw, list) or not raw:
                raise GenotypeError(path, "must be a non-empty list of nodes")
            nodes = []
            for j, node in enumerate(raw):
                npath = f"{path}[{j}]"
                if not isinstance(node, list) or len(node) != 2:
                    raise GenotypeError(npath, "each node needs exactly 2 incoming edges")
                edges = []
                for e, item in enumerate(node):
                    epath = f"{npath}[{e}]"
                    if not isinstance(item, dict):
                        raise GenotypeError(epath, "edge must be an object with 'from' and 'op'")
                    src = item.get("from")
                    if isinstance(src, bool) or not isinstance(src, int):
                        raise GenotypeError(f"{epath}.from", f"must be an integer node id, got {src!r}")
                    try:
                        op = kind(item.get("op"))
                    except ValueError as exc:
                        raise GenotypeError(f"{epath}.op", str(exc)) from None
                    edges.append((src, op))
                nodes.append(edges)
            _validate_cell(nodes, path)
            cells[cell_type] = nodes
        if len(cells["normal"]) != len(cells["reduce"]):
            raise GenotypeError("$.reduce", "normal and reduce cells must have the same number of nodes")
        meta = obj.get("meta", {})
        if not isinstance(meta, dict):
            raise GenotypeError("$.meta", "must be an object")
        return cls(cells["normal"], cells["reduce"], str(obj.get("space", "custom")), meta)

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GenotypeError("$", f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path) -> "Genotype":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _validate_cell(nodes, path: str) -> None:
    for j, node in enumerate(nodes):
        node_id = j + 2
        if len(node) != 2:
            raise GenotypeError(f"{path}[{j}]", f"node {node_id} needs exactly 2 incoming edges, got {len(node)}")
        srcs = [s for s, _ in node]
        for e, (src, op) in enumerate(node):
            if not 0 <= src < node_id:
                raise GenotypeError(f"{path}[{j}][{e}].from", f"source {src} must be in [0, {node_id})")
            if op is OperatorKind.Zero:
                raise GenotypeError(f"{path}[{j}][{e}].op", "Zero may not appear in a derived genotype")
        if srcs[0] == srcs[1]:
            raise GenotypeError(f"{path}[{j}]", f"node {node_id} uses input {srcs[0]} twice")


def count_skip(genotype: Genotype, cell_type: str = "normal") -> int:
    return sum(1 for node in genotype.cell(cell_type) for _, op in node if op is OperatorKind.SkipConnect)


def to_dot(genotype: Genotype, cell_type: str = "normal") -> str:
    """Graphviz description of one cell: inputs c_{k-2}, c_{k-1}, nodes, output c_{k}."""
    nodes = genotype.cell(cell_type)
    names = {0: "c_{k-2}", 1: "c_{k-1}"}
    lines = [f'digraph {cell_type} {{', "  rankdir=LR;", '  node [shape=box, style=filled, fillcolor="lightgray"];']
    for i in (0, 1):
        lines.append(f'  "{names[i]}" [fillcolor="darkseagreen2"];')
    for j in range(len(nodes)):
        names[j + 2] = str(j)
        lines.append(f'  "{j}" [fillcolor="lightblue"];')
    lines.append('  "c_{k}" [fillcolor="palegoldenrod"];')
    for j, node in enumerate(nodes):
        for src, op in node:
            lines.append(f'  "{names[src]}" -> "{j}" [label="{op.value}"];')
    for j in range(len(nodes)):
        lines.append(f'  "{j}" -> "c_{{k}}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
