"""Architecture graph, builders and conversion-pass tests."""

import numpy as np
import pytest

from ghostforge import costs, zoo
from ghostforge.arch import ArchSpec, Node, from_json, load, save
from ghostforge.errors import ArchError, ConfigError
from ghostforge.gghost import split_width
from ghostforge.network import Network, trace
from helpers import rand


def _tiny_chain():
    return ArchSpec("tiny", (3, 8, 8), (
        Node("c1", "conv_unit", {"out_channels": 4, "kernel": 3, "stride": 1,
                                 "padding": 1}, ("input",)),
        Node("gap", "global_avg_pool", {}, ("c1",)),
        Node("fc", "fc", {"out_features": 2}, ("gap",)),
    ))


def test_json_roundtrip_identity():
    for spec in (_tiny_chain(), zoo.build_c_ghostnet(0.5),
                 zoo.build_g_ghostnet(1.0), zoo.build_resnet(56)):
        doc = spec.to_json()
        back = from_json(doc)
        assert back.name == spec.name
        assert back.input_shape == spec.input_shape
        assert len(back.nodes) == len(spec.nodes)
        for a, b in zip(back.nodes, spec.nodes):
            assert (a.name, a.kind, a.inputs) == (b.name, b.kind, b.inputs)
        assert back.to_json() == doc


def test_file_roundtrip(tmp_path):
    spec = zoo.build_vgg16_cifar()
    path = str(tmp_path / "vgg.json")
    save(spec, path)
    assert load(path).to_json() == spec.to_json()


def test_unknown_kind_names_node():
    with pytest.raises(ArchError, match="mystery"):
        ArchSpec("bad", (1, 2, 2), (Node("mystery", "warp_drive", {}, ("input",)),))


def test_validation_errors():
    with pytest.raises(ArchError, match="before definition"):
        ArchSpec("bad", (1, 2, 2), (Node("a", "relu", {}, ("b",)),
                                    Node("b", "relu", {}, ("a",))))
    with pytest.raises(ArchError, match="duplicate"):
        ArchSpec("bad", (1, 2, 2), (Node("a", "relu", {}, ("input",)),
                                    Node("a", "relu", {}, ("input",))))
    with pytest.raises(ArchError, match="exactly one output"):
        ArchSpec("bad", (1, 2, 2), (Node("a", "relu", {}, ("input",)),
                                    Node("b", "relu", {}, ("input",))))


def test_c_ghostnet_table_shapes():
    spec = zoo.build_c_ghostnet(1.0)
    shapes = {t.node.name: t.out_shape for t in trace(spec)}
    assert shapes["stem"] == (16, 112, 112)
    assert shapes["bneck01"] == (16, 112, 112)
    assert shapes["bneck02"] == (24, 56, 56)
    assert shapes["bneck05"] == (40, 28, 28)
    assert shapes["bneck11"] == (112, 14, 14)
    assert shapes["bneck16"] == (160, 7, 7)
    assert shapes["head_conv"] == (960, 7, 7)
    assert shapes["feat_conv"] == (1280, 1, 1)
    assert shapes["fc"] == (1000,)
    exps = [n.config["exp_channels"] for n in spec.nodes
            if n.kind == "ghost_bottleneck"]
    assert exps[-4:] == [960, 960, 960, 960]


def test_g_ghostnet_table_shapes():
    spec = zoo.build_g_ghostnet(1.0)
    shapes = {t.node.name: t.out_shape for t in trace(spec)}
    assert shapes["stage1"] == (24, 56, 56)
    assert shapes["stage2"] == (40, 28, 28)
    assert shapes["stage3"] == (80, 14, 14)
    assert shapes["stage4"] == (160, 7, 7)
    assert shapes["fc"] == (1000,)
    assert split_width(80, 0.4) == (48, 32)


def test_g_ghostnet_lambda_zero_matches_plain_backbone():
    a = zoo.build_g_ghostnet(1.0, ghost_ratio=0.0)
    b = zoo.build_g_ghostnet(1.0, ghost_ratio=0.4)
    ca, cb = costs.count_costs(a), costs.count_costs(b)
    assert ca.params > cb.params
    na, nb = Network(a), Network(b)
    assert [t.out_shape for t in na.traced] == [t.out_shape for t in nb.traced]


def test_resnet_shapes():
    r34 = zoo.build_resnet(34)
    shapes = {t.node.name: t.out_shape for t in trace(r34)}
    assert shapes["stem_pool"] == (64, 56, 56)
    assert shapes["s4b3"] == (512, 7, 7)
    r50 = zoo.build_resnet(50)
    shapes50 = {t.node.name: t.out_shape for t in trace(r50)}
    assert shapes50["s4b3"] == (2048, 7, 7)
    r56 = zoo.build_resnet(56)
    shapes56 = {t.node.name: t.out_shape for t in trace(r56)}
    assert shapes56["s3b9"] == (64, 8, 8)
    assert shapes56["fc"] == (10,)
    with pytest.raises(ConfigError):
        zoo.build_resnet(18)


def test_width_multiplier_rounding_and_monotonicity():
    w = zoo.WidthMultiplier(1.0)
    assert w.apply(16) == 16 and w.apply(960) == 960
    assert zoo.WidthMultiplier(0.25).apply(16) == 4
    assert zoo.WidthMultiplier(0.25).apply(24) == 8   # 6 rounds up to 8
    with pytest.raises(ConfigError):
        zoo.WidthMultiplier(0.0)
    prev = -1
    for alpha in (0.35, 0.5, 1.0, 1.3):
        p = costs.count_costs(zoo.build_c_ghostnet(alpha)).params
        assert p >= prev
        prev = p


def test_c_ghostify_ratio_one_costs_and_numerics_unchanged():
    spec = _tiny_chain()
    g = zoo.c_ghostify(spec, ratio=1)
    ra, rb = costs.count_costs(spec), costs.count_costs(g)
    assert (ra.params, ra.flops) == (rb.params, rb.flops)
    na, nb = Network(spec), Network(g)
    sa, sb = na.init_params(3), nb.init_params(3)
    x = rand((2, 3, 8, 8), seed=4)
    ya = na.forward(sa, x)[0]
    yb = nb.forward(sb, x)[0]
    assert np.array_equal(ya, yb)


def test_c_ghostify_preserves_contract():
    for name in ("vgg16_cifar", "resnet56", "resnet34"):
        spec = zoo.build(name)
        for s in (2, 3, 4):
            g = zoo.c_ghostify(spec, s)
            assert g.input_shape == spec.input_shape
            assert g.num_classes == spec.num_classes
            assert trace(g)[-1].out_shape == trace(spec)[-1].out_shape


def test_c_ghostify_reduces_cost_monotonically():
    vgg = zoo.build_vgg16_cifar()
    prev = costs.count_costs(vgg).flops
    for s in (2, 3, 4, 5):
        f = costs.count_costs(zoo.c_ghostify(vgg, s)).flops
        assert f < prev
        prev = f


def test_g_ghostify_preserves_contract():
    for name in ("resnet56", "resnet34", "resnet50", "c_ghostnet"):
        spec = zoo.build(name)
        for lam in (0.2, 0.5):
            g = zoo.g_ghostify(spec, lam)
            assert g.input_shape == spec.input_shape
            assert g.num_classes == spec.num_classes
            assert trace(g)[-1].out_shape == trace(spec)[-1].out_shape


def test_g_ghostify_lambda_zero_returns_arch_unchanged():
    spec = zoo.build_resnet(56)
    assert zoo.g_ghostify(spec, 0.0) is spec


def test_stage_detection():
    runs = zoo.detect_stages(zoo.build_resnet(34))
    assert [len(r) for r in runs] == [3, 4, 6, 3]
    runs56 = zoo.detect_stages(zoo.build_resnet(56))
    assert [len(r) for r in runs56] == [9, 9, 9]
    runs_c = zoo.detect_stages(zoo.build_c_ghostnet(1.0))
    assert [len(r) for r in runs_c] == [1, 2, 2, 6, 5]
    with pytest.raises(ArchError, match="no stages"):
        zoo.detect_stages(zoo.build_vgg16_cifar())


def test_g_ghostify_stage_structure():
    g = zoo.g_ghostify(zoo.build_resnet(34), 0.5)
    stages = [n for n in g.nodes if n.kind == "gghost_stage"]
    assert len(stages) == 4
    assert [len(n.config["blocks"]) for n in stages] == [3, 4, 6, 3]
    # graph still chains stem -> stages -> head
    Network(g)


def test_build_dispatcher():
    assert zoo.build("resnet50").name == "resnet50"
    assert zoo.build("c_ghostnet", width=0.5).name == "c_ghostnet_0.5x"
    with pytest.raises(ConfigError):
        zoo.build("alexnet")


def test_empty_arch_is_valid():
    spec = ArchSpec("empty", (3, 4, 4), ())
    assert costs.count_costs(spec).params == 0
