"""Reference architecture builders and the two conversion passes.

Builders emit ArchSpec graphs (chains of conv units, residual blocks or
split stages). c_ghostify swaps every ordinary convolution for a ghost
module of the same kernel/stride; g_ghostify replaces every run of two or
more blocks at one spatial resolution with a split stage.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

from .arch import ArchSpec, BLOCK_NODE_KINDS, INPUT, Node
from .errors import ArchError, ConfigError


@dataclass(frozen=True)
class WidthMultiplier:
    """Uniform channel scaling; widths round to a multiple of 4, min 4."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"width multiplier must be > 0, got {self.alpha}")

    def apply(self, width: int) -> int:
        return max(4, int(self.alpha * width + 2) // 4 * 4)


# (expansion size, output channels, SE, stride) per bottleneck row.
C_GHOSTNET_ROWS = (
    (16, 16, 0, 1),
    (48, 24, 0, 2),
    (72, 24, 0, 1),
    (72, 40, 1, 2),
    (120, 40, 1, 1),
    (240, 80, 0, 2),
    (200, 80, 0, 1),
    (184, 80, 0, 1),
    (184, 80, 0, 1),
    (480, 112, 1, 1),
    (672, 112, 1, 1),
    (672, 160, 1, 2),
    (960, 160, 0, 1),
    (960, 160, 1, 1),
    (960, 160, 0, 1),
    (960, 160, 1, 1),
)

# (output channels, blocks) per split stage; first block strides.
G_GHOSTNET_STAGES = ((24, 2), (40, 2), (80, 6), (160, 6))


def _head_nodes(nodes: List[Node], prev: str, width_960: int,
                num_classes: int) -> None:
    nodes.append(Node("head_conv", "conv_unit",
                      {"out_channels": width_960, "kernel": 1, "stride": 1,
                       "padding": 0, "act": True}, (prev,)))
    nodes.append(Node("pool", "global_avg_pool", {}, ("head_conv",)))
    nodes.append(Node("feat_conv", "conv",
                      {"out_channels": 1280, "kernel": 1, "stride": 1,
                       "padding": 0, "bias": True}, ("pool",)))
    nodes.append(Node("feat_relu", "relu", {}, ("feat_conv",)))
    nodes.append(Node("fc", "fc", {"out_features": num_classes, "bias": True},
                      ("feat_relu",)))


def build_c_ghostnet(alpha: float = 1.0, num_classes: int = 1000,
                     small_input: bool = False) -> ArchSpec:
    """Stem conv, 16 ghost bottlenecks, 1x1/pool/1x1 head, classifier.

    small_input drops the stem stride to 1 for 32x32 inputs.
    """
    w = WidthMultiplier(alpha)
    nodes: List[Node] = [Node("stem", "conv_unit",
                              {"out_channels": w.apply(16), "kernel": 3,
                               "stride": 1 if small_input else 2, "padding": 1,
                               "act": True}, (INPUT,))]
    prev = "stem"
    for i, (exp, out, se, stride) in enumerate(C_GHOSTNET_ROWS, start=1):
        name = f"bneck{i:02d}"
        nodes.append(Node(name, "ghost_bottleneck",
                          {"exp_channels": w.apply(exp), "out_channels": w.apply(out),
                           "stride": stride, "se": bool(se)}, (prev,)))
        prev = name
    _head_nodes(nodes, prev, w.apply(960), num_classes)
    size = 32 if small_input else 224
    return ArchSpec(f"c_ghostnet_{alpha:g}x", (3, size, size), tuple(nodes))


def build_g_ghostnet(alpha: float = 1.0, num_classes: int = 1000,
                     ghost_ratio: float = 0.4, cheap: str = "conv1x1",
                     mix: bool = True, small_input: bool = False) -> ArchSpec:
    """Stem conv, four split stages of SE residual bottlenecks, same head."""
    w = WidthMultiplier(alpha)
    nodes: List[Node] = [Node("stem", "conv_unit",
                              {"out_channels": w.apply(16), "kernel": 3,
                               "stride": 1 if small_input else 2, "padding": 1,
                               "act": True}, (INPUT,))]
    prev = "stem"
    for i, (out, blocks) in enumerate(G_GHOSTNET_STAGES, start=1):
        cfg = {"out_channels": w.apply(out), "expansion": 3, "se": True}
        descs = [["gghost_block", dict(cfg, stride=2)]]
        descs += [["gghost_block", dict(cfg, stride=1)] for _ in range(blocks - 1)]
        name = f"stage{i}"
        nodes.append(Node(name, "gghost_stage",
                          {"ghost_ratio": ghost_ratio, "cheap": cheap, "mix": mix,
                           "blocks": descs}, (prev,)))
        prev = name
    _head_nodes(nodes, prev, w.apply(960), num_classes)
    size = 32 if small_input else 224
    return ArchSpec(f"g_ghostnet_{alpha:g}x", (3, size, size), tuple(nodes))


def build_vgg16_cifar(num_classes: int = 10) -> ArchSpec:
    """13 conv units with 2x2 pools, then a 512-wide classifier head."""
    plan = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
            512, 512, 512, "M", 512, 512, 512, "M")
    nodes: List[Node] = []
    prev = INPUT
    ci = pi = 0
    for item in plan:
        if item == "M":
            pi += 1
            name = f"pool{pi}"
            nodes.append(Node(name, "maxpool", {"kernel": 2, "stride": 2}, (prev,)))
        else:
            ci += 1
            name = f"conv{ci:02d}"
            nodes.append(Node(name, "conv_unit",
                              {"out_channels": item, "kernel": 3, "stride": 1,
                               "padding": 1, "act": True}, (prev,)))
        prev = name
    nodes.append(Node("fc1", "fc", {"out_features": 512, "bias": True}, (prev,)))
    nodes.append(Node("fc1_relu", "relu", {}, ("fc1",)))
    nodes.append(Node("fc2", "fc", {"out_features": num_classes, "bias": True},
                      ("fc1_relu",)))
    return ArchSpec("vgg16_cifar", (3, 32, 32), tuple(nodes))


def build_resnet(depth: int, num_classes: Optional[int] = None) -> ArchSpec:
    """ResNet-34/50 (224x224 input) or ResNet-56 (CIFAR, 32x32 input)."""
    nodes: List[Node] = []
    if depth == 56:
        num_classes = 10 if num_classes is None else num_classes
        nodes.append(Node("stem", "conv_unit",
                          {"out_channels": 16, "kernel": 3, "stride": 1,
                           "padding": 1, "act": True}, (INPUT,)))
        prev = "stem"
        for si, width in enumerate((16, 32, 64), start=1):
            for bi in range(9):
                stride = 2 if (si > 1 and bi == 0) else 1
                name = f"s{si}b{bi + 1}"
                nodes.append(Node(name, "basic_block",
                                  {"out_channels": width, "stride": stride}, (prev,)))
                prev = name
        input_shape = (3, 32, 32)
    elif depth in (34, 50):
        num_classes = 1000 if num_classes is None else num_classes
        nodes.append(Node("stem", "conv_unit",
                          {"out_channels": 64, "kernel": 7, "stride": 2,
                           "padding": 3, "act": True}, (INPUT,)))
        nodes.append(Node("stem_pool", "maxpool",
                          {"kernel": 3, "stride": 2, "padding": 1}, ("stem",)))
        prev = "stem_pool"
        if depth == 34:
            kind, widths = "basic_block", (64, 128, 256, 512)
        else:
            kind, widths = "bottleneck_block", (256, 512, 1024, 2048)
        for si, (width, blocks) in enumerate(zip(widths, (3, 4, 6, 3)), start=1):
            for bi in range(blocks):
                stride = 2 if (si > 1 and bi == 0) else 1
                name = f"s{si}b{bi + 1}"
                nodes.append(Node(name, kind,
                                  {"out_channels": width, "stride": stride}, (prev,)))
                prev = name
        input_shape = (3, 224, 224)
    else:
        raise ConfigError(f"unsupported resnet depth {depth}")
    nodes.append(Node("gap", "global_avg_pool", {}, (prev,)))
    nodes.append(Node("fc", "fc", {"out_features": num_classes, "bias": True},
                      ("gap",)))
    return ArchSpec(f"resnet{depth}", input_shape, tuple(nodes))


def c_ghostify(spec: ArchSpec, ratio: int = 2, cheap_kernel: int = 3) -> ArchSpec:
    """Replace every ordinary convolution with a ghost module.

    Grouped/depthwise convs, classifier FC layers and blocks that are
    already ghost bottlenecks are left alone.
    """
    if ratio < 1:
        raise ConfigError(f"ratio must be >= 1, got {ratio}")
    ghost = {"ratio": ratio, "cheap_kernel": cheap_kernel}

    def convert(node: Node) -> Node:
        cfg = dict(node.config)
        if node.kind == "conv" and cfg.get("groups", 1) == 1:
            new = {"out_channels": cfg["out_channels"], "ratio": ratio,
                   "kernel": cfg["kernel"], "cheap_kernel": cheap_kernel,
                   "stride": cfg.get("stride", 1), "relu": False,
                   "padding": cfg.get("padding", cfg["kernel"] // 2)}
            return Node(node.name, "ghost_module", new, node.inputs)
        if node.kind == "conv_unit" and cfg.get("groups", 1) == 1:
            new = {"out_channels": cfg["out_channels"], "ratio": ratio,
                   "kernel": cfg["kernel"], "cheap_kernel": cheap_kernel,
                   "stride": cfg.get("stride", 1), "relu": cfg.get("act", True),
                   "padding": cfg.get("padding", cfg["kernel"] // 2)}
            return Node(node.name, "ghost_module", new, node.inputs)
        if node.kind in ("basic_block", "bottleneck_block", "gghost_block"):
            return Node(node.name, node.kind, dict(cfg, ghost=ghost), node.inputs)
        if node.kind == "gghost_stage":
            blocks = [[bk, dict(bc, ghost=ghost) if bk != "ghost_bottleneck" else dict(bc)]
                      for bk, bc in cfg["blocks"]]
            return Node(node.name, node.kind, dict(cfg, blocks=blocks), node.inputs)
        return node

    return spec.replace_nodes(convert(n) for n in spec.nodes)


def detect_stages(spec: ArchSpec) -> List[List[Node]]:
    """Maximal chains of block nodes at one resolution (split at strides)."""
    runs: List[List[Node]] = []
    current: List[Node] = []
    for node in spec.nodes:
        is_block = node.kind in BLOCK_NODE_KINDS
        chained = bool(current) and node.inputs == (current[-1].name,)
        if is_block and chained and node.config.get("stride", 1) == 1:
            current.append(node)
        else:
            if current:
                runs.append(current)
            current = [node] if is_block else []
    if current:
        runs.append(current)
    if not runs:
        raise ArchError(f"no stages detected in {spec.name!r}")
    return runs


def g_ghostify(spec: ArchSpec, ghost_ratio: float, cheap: str = "conv1x1",
               mix: bool = True) -> ArchSpec:
    """Convert every stage of two or more blocks into a split stage."""
    if not 0.0 <= ghost_ratio < 1.0:
        raise ConfigError(f"ghost_ratio must be in [0, 1), got {ghost_ratio}")
    runs = detect_stages(spec)
    if ghost_ratio == 0.0:
        return spec
    absorbed = {}
    stage_of_first = {}
    for i, run in enumerate([r for r in runs if len(r) >= 2], start=1):
        name = f"gstage{i}"
        stage_of_first[run[0].name] = Node(
            name, "gghost_stage",
            {"ghost_ratio": ghost_ratio, "cheap": cheap, "mix": mix,
             "blocks": [[n.kind, dict(n.config)] for n in run]},
            run[0].inputs)
        for n in run:
            absorbed[n.name] = name
    nodes: List[Node] = []
    for node in spec.nodes:
        if node.name in stage_of_first:
            stage = stage_of_first[node.name]
            inputs = tuple(absorbed.get(ref, ref) for ref in stage.inputs)
            nodes.append(Node(stage.name, stage.kind, stage.config, inputs))
        elif node.name in absorbed:
            continue
        else:
            inputs = tuple(absorbed.get(ref, ref) for ref in node.inputs)
            nodes.append(Node(node.name, node.kind, dict(node.config), inputs))
    return spec.replace_nodes(nodes)


BUILDERS = ("c_ghostnet", "g_ghostnet", "vgg16_cifar", "resnet34", "resnet50",
            "resnet56")


def build(name: str, width: float = 1.0, num_classes: Optional[int] = None,
          small_input: bool = False) -> ArchSpec:
    """CLI-facing dispatcher over the reference builders."""
    if name == "c_ghostnet":
        return build_c_ghostnet(width, num_classes or 1000, small_input)
    if name == "g_ghostnet":
        return build_g_ghostnet(width, num_classes or 1000, small_input=small_input)
    if name == "vgg16_cifar":
        return build_vgg16_cifar(num_classes or 10)
    if name.startswith("resnet"):
        try:
            depth = int(name.removeprefix("resnet"))
        except ValueError:
            raise ConfigError(f"unknown architecture {name!r}") from None
        return build_resnet(depth, num_classes)
    raise ConfigError(f"unknown architecture {name!r}")
