"""Architecture graphs: an ordered DAG of layer nodes plus JSON round-trip.

File format (field names are normative for the CLI):

    {"name": ..., "input_shape": [C, H, W],
     "nodes": [{"name": ..., "kind": ..., "config": {...}, "inputs": [...]}]}

Node inputs refer to earlier node names or the reserved name "input".
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .errors import ArchError

INPUT = "input"

KINDS = frozenset({
    "conv", "conv_unit", "batchnorm", "relu", "maxpool", "global_avg_pool",
    "fc", "concat", "add", "se", "ghost_module", "ghost_bottleneck",
    "basic_block", "bottleneck_block", "gghost_block", "gghost_stage",
})

BLOCK_NODE_KINDS = frozenset({
    "basic_block", "bottleneck_block", "gghost_block", "ghost_bottleneck",
})


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    config: dict = field(default_factory=dict)
    inputs: Tuple[str, ...] = (INPUT,)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_shape: Tuple[int, int, int]
    nodes: Tuple[Node, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        self.validate()

    def validate(self) -> None:
        if len(self.input_shape) != 3:
            raise ArchError(f"input_shape must be [C, H, W], got {self.input_shape}")
        seen = {INPUT}
        consumed = set()
        for node in self.nodes:
            if node.name in seen:
                raise ArchError(f"duplicate node name {node.name!r}")
            if node.kind not in KINDS:
                raise ArchError(f"node {node.name!r}: unknown kind {node.kind!r}")
            if not node.inputs:
                raise ArchError(f"node {node.name!r} has no inputs")
            for ref in node.inputs:
                if ref not in seen:
                    raise ArchError(
                        f"node {node.name!r} references {ref!r} before definition")
                consumed.add(ref)
            seen.add(node.name)
        if self.nodes:
            sinks = [n.name for n in self.nodes if n.name not in consumed]
            if len(sinks) != 1:
                raise ArchError(f"expected exactly one output node, found {sinks}")

    @property
    def output_node(self) -> Optional[Node]:
        if not self.nodes:
            return None
        consumed = {ref for n in self.nodes for ref in n.inputs}
        return next(n for n in self.nodes if n.name not in consumed)

    @property
    def num_classes(self) -> Optional[int]:
        out = self.output_node
        if out is not None and out.kind == "fc":
            return int(out.config["out_features"])
        return None

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise ArchError(f"no node named {name!r}")

    def replace_nodes(self, nodes) -> "ArchSpec":
        return ArchSpec(self.name, self.input_shape, tuple(nodes))

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "nodes": [{"name": n.name, "kind": n.kind, "config": n.config,
                       "inputs": list(n.inputs)} for n in self.nodes],
        }
        return json.dumps(doc, indent=2)


def from_json(text: str) -> ArchSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchError(f"invalid JSON: {e}") from e
    try:
        nodes = tuple(Node(d["name"], d["kind"], d.get("config", {}),
                           tuple(d.get("inputs", [INPUT]))) for d in doc["nodes"])
        return ArchSpec(doc["name"], tuple(doc["input_shape"]), nodes)
    except KeyError as e:
        raise ArchError(f"missing field {e}") from e


def load(path: str) -> ArchSpec:
    with open(path, "r", encoding="utf-8") as f:
        return from_json(f.read())


def save(spec: ArchSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(spec.to_json() + "\n")
