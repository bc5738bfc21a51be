"""Graph executor: builds layers from an ArchSpec and runs them.

Node execution order is the declared order (validated topological). The
only multi-input kinds, concat and add, are handled by the executor;
everything else is a Layer. Parameters live in one flat dict keyed
"<node name>.<param path>".
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import config, ops
from .arch import ArchSpec, INPUT, Node
from .blocks import make_block
from .cghost import GhostModule, GhostModuleConfig, SE, SEConfig
from .errors import ArchError, ShapeError
from .gghost import GGhostStage, GGhostStageConfig
from .layers import (BatchNorm, Conv, ConvBNAct, FC, GlobalAvgPool, Layer,
                     MaxPool, Params, ReLU, accumulate, init_params)
from .rng import GaussianStream

SPECIAL = ("concat", "add")


def _features(shape) -> int:
    if len(shape) == 1:
        return shape[0]
    c, h, w = shape
    if h != 1 or w != 1:
        raise ArchError(f"fc input must be 1x1 spatial, got {shape}")
    return c


def build_layer(node: Node, in_shape) -> Layer:
    kind, cfg = node.kind, node.config
    c = in_shape[0]
    try:
        if kind == "conv":
            k = int(cfg["kernel"])
            return Conv(ops.ConvSpec(
                c, int(cfg["out_channels"]), k, int(cfg.get("stride", 1)),
                int(cfg.get("padding", k // 2)), int(cfg.get("groups", 1)),
                bool(cfg.get("bias", False))))
        if kind == "conv_unit":
            k = int(cfg["kernel"])
            return ConvBNAct(c, int(cfg["out_channels"]), k,
                             int(cfg.get("stride", 1)),
                             int(cfg.get("padding", k // 2)),
                             int(cfg.get("groups", 1)),
                             bool(cfg.get("act", True)))
        if kind == "batchnorm":
            return BatchNorm(c)
        if kind == "relu":
            return ReLU()
        if kind == "maxpool":
            return MaxPool(int(cfg["kernel"]), int(cfg.get("stride", cfg["kernel"])),
                           int(cfg.get("padding", 0)))
        if kind == "global_avg_pool":
            return GlobalAvgPool()
        if kind == "fc":
            return FC(_features(in_shape), int(cfg["out_features"]),
                      bool(cfg.get("bias", True)))
        if kind == "se":
            return SE(SEConfig(c, int(cfg.get("reduction", 4))))
        if kind == "ghost_module":
            return GhostModule(GhostModuleConfig(
                c, int(cfg["out_channels"]), int(cfg.get("ratio", 2)),
                int(cfg.get("kernel", 1)), int(cfg.get("cheap_kernel", 3)),
                int(cfg.get("stride", 1)), bool(cfg.get("relu", True)),
                cfg.get("padding")))
        if kind in ("basic_block", "bottleneck_block", "gghost_block",
                    "ghost_bottleneck"):
            return make_block(kind, cfg, c)
        if kind == "gghost_stage":
            blocks = tuple((bk, dict(bc)) for bk, bc in cfg["blocks"])
            return GGhostStage(GGhostStageConfig(
                c, blocks, float(cfg.get("ghost_ratio", 0.0)),
                cfg.get("cheap", "conv1x1"), bool(cfg.get("mix", False))))
    except KeyError as e:
        raise ArchError(f"node {node.name!r}: missing config field {e}") from e
    raise ArchError(f"node {node.name!r}: unknown kind {kind!r}")


@dataclass
class TracedNode:
    node: Node
    layer: Optional[Layer]          # None for concat/add
    in_shapes: List[tuple]
    out_shape: tuple


def trace(spec: ArchSpec, input_shape=None) -> List[TracedNode]:
    """Shape-check the graph and instantiate layers."""
    shapes = {INPUT: tuple(input_shape or spec.input_shape)}
    traced = []
    for node in spec.nodes:
        in_shapes = [shapes[ref] for ref in node.inputs]
        if node.kind == "concat":
            first = in_shapes[0]
            for s in in_shapes[1:]:
                if s[1:] != first[1:]:
                    raise ShapeError("spatial",
                                     f"concat at {node.name!r}: {s} vs {first}")
            out = (sum(s[0] for s in in_shapes),) + first[1:]
            traced.append(TracedNode(node, None, in_shapes, out))
        elif node.kind == "add":
            if len(in_shapes) != 2 or in_shapes[0] != in_shapes[1]:
                raise ShapeError("shape", f"add at {node.name!r}: {in_shapes}")
            traced.append(TracedNode(node, None, in_shapes, in_shapes[0]))
        else:
            if len(in_shapes) != 1:
                raise ArchError(f"node {node.name!r}: kind {node.kind} takes one input")
            layer = build_layer(node, in_shapes[0])
            out = layer.count(in_shapes[0]).out_shape
            traced.append(TracedNode(node, layer, in_shapes, out))
        shapes[node.name] = traced[-1].out_shape
    return traced


class Network:
    """Runnable form of an ArchSpec."""

    def __init__(self, spec: ArchSpec, input_shape=None):
        self.spec = spec
        self.traced = trace(spec, input_shape)
        if not spec.nodes:
            raise ArchError("cannot build a network from an empty arch")
        self.output_name = spec.output_node.name

    def param_specs(self):
        out = []
        for t in self.traced:
            if t.layer is not None:
                out.extend(ps.prefixed(t.node.name + ".")
                           for ps in t.layer.param_specs())
        return out

    def init_params(self, seed: int) -> Dict[str, np.ndarray]:
        """He-gaussian init from one seeded stream, in declared node order."""
        store: Dict[str, np.ndarray] = {}
        stream = GaussianStream(seed)
        for t in self.traced:
            if t.layer is not None:
                init_params(t.layer, store, t.node.name + ".", stream)
        return store

    def forward(self, store, x, training: bool = False, updates=None):
        """Returns (output, caches, values); values maps node name -> output."""
        x = np.ascontiguousarray(x, dtype=config.DTYPE)
        values = {INPUT: x}
        caches = {}
        for t in self.traced:
            ins = [values[ref] for ref in t.node.inputs]
            if t.node.kind == "concat":
                values[t.node.name] = ops.concat_channels(ins)
            elif t.node.kind == "add":
                values[t.node.name] = ins[0] + ins[1]
            else:
                p = Params(store, t.node.name + ".")
                y, cache = t.layer.forward(p, ins[0], training, updates)
                values[t.node.name] = y
                caches[t.node.name] = cache
        return values[self.output_name], caches, values

    def backward(self, store, caches, grad_out):
        """Returns (param grads dict, grad wrt the network input)."""
        out_grads: Dict[str, np.ndarray] = {self.output_name: grad_out}
        grads: Dict[str, np.ndarray] = {}
        for t in reversed(self.traced):
            g = out_grads.pop(t.node.name, None)
            if g is None:
                continue
            if t.node.kind == "concat":
                widths = [s[0] for s in t.in_shapes]
                at = 0
                for ref, w in zip(t.node.inputs, widths):
                    _acc_val(out_grads, ref, g[:, at:at + w])
                    at += w
            elif t.node.kind == "add":
                for ref in t.node.inputs:
                    _acc_val(out_grads, ref, g)
            else:
                p = Params(store, t.node.name + ".")
                gx = t.layer.backward(p, caches[t.node.name], g, grads)
                _acc_val(out_grads, t.node.inputs[0], gx)
        return grads, out_grads.get(INPUT)


def _acc_val(d, key, val):
    if key in d:
        d[key] = d[key] + val
    else:
        d[key] = val
