"""Cost model: exact parameter / FLOP / activation counting over a graph.

Conventions (also printed in CLI headers): 1 FLOP = 1 multiply-accumulate
of convolution or fully-connected work; batch norm, activations and
pooling count zero FLOPs; parameters are conv/FC weights and biases plus
2c per batch norm; activations are the output elements of convolution
layers only, per input sample.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .arch import ArchSpec
from .errors import ConfigError
from .network import trace

CONVENTION = "FLOPs = multiply-accumulates (conv/FC); BN/act/pool free; acts = conv output elements"


@dataclass(frozen=True)
class CostRow:
    name: str
    kind: str
    params: int
    flops: int
    acts: int
    out_shape: Tuple[int, ...]


@dataclass(frozen=True)
class CostReport:
    rows: Tuple[CostRow, ...]

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def acts(self) -> int:
        return sum(r.acts for r in self.rows)

    def render_text(self) -> str:
        head = f"# {CONVENTION}"
        cols = ("name", "kind", "params", "flops", "acts", "out_shape")
        table = [cols]
        for r in self.rows:
            table.append((r.name, r.kind, f"{r.params:,}", f"{r.flops:,}",
                          f"{r.acts:,}", "x".join(map(str, r.out_shape))))
        table.append(("TOTAL", "", f"{self.params:,}", f"{self.flops:,}",
                      f"{self.acts:,}", ""))
        widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
        lines = [head]
        for row in table:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        return "\n".join(lines)

    def render_csv(self) -> str:
        lines = ["name,kind,params,flops,activations,out_shape"]
        for r in self.rows:
            lines.append(f"{r.name},{r.kind},{r.params},{r.flops},{r.acts},"
                         f"{'x'.join(map(str, r.out_shape))}")
        lines.append(f"TOTAL,,{self.params},{self.flops},{self.acts},")
        return "\n".join(lines)


def count_costs(spec: ArchSpec, input_shape: Optional[tuple] = None) -> CostReport:
    rows: List[CostRow] = []
    for t in trace(spec, input_shape):
        if t.layer is None:
            rows.append(CostRow(t.node.name, t.node.kind, 0, 0, 0, t.out_shape))
        else:
            c = t.layer.count(t.in_shapes[0])
            rows.append(CostRow(t.node.name, t.node.kind, c.params, c.flops,
                                c.acts, c.out_shape))
    return CostReport(tuple(rows))


def speedup_ratio_rs(c: float, k: float, d: float, s: float) -> float:
    """Exact FLOPs ratio of an ordinary conv over its ghost replacement."""
    if min(c, k, d, s) < 1:
        raise ConfigError("all ratio inputs must be >= 1")
    return (c * k * k) / (c * k * k / s + (s - 1) / s * d * d)


def compression_ratio_rc(c: float, k: float, d: float, s: float, n: float) -> float:
    """Exact parameter ratio; n cancels, equal to the FLOPs ratio."""
    if min(c, k, d, s, n) < 1:
        raise ConfigError("all ratio inputs must be >= 1")
    return (n * c * k * k) / (n / s * c * k * k + (s - 1) * (n / s) * d * d)
