"""Cheap-map fitting, similarity reports and PGM export tests."""

import numpy as np
import pytest

from ghostforge import analysis, train, zoo
from ghostforge.arch import ArchSpec, Node
from ghostforge.errors import ConfigError
from ghostforge.network import Network
from helpers import rand


def _smooth_map(seed, hw=20, passes=3):
    m = rand((hw + 8, hw + 8), seed)
    for _ in range(passes):
        m = (m + np.roll(m, 1, 0) + np.roll(m, -1, 0)
             + np.roll(m, 1, 1) + np.roll(m, -1, 1)) / 5.0
    return m[4:4 + hw, 4:4 + hw]


def test_identity_pair_center_tap_zero_mse():
    src = rand((12, 12), seed=1)
    for d in (1, 3, 5):
        fit = analysis.fit_cheap_map(src, src, d)
        assert fit.mse < 1e-18
        want = np.zeros((d, d))
        want[d // 2, d // 2] = 1.0
        assert np.allclose(fit.filter, want, atol=1e-8)
        assert not fit.regularized


def test_shifted_pair_needs_3x3():
    src = np.zeros((14, 14))
    src[3:11, 3:11] = rand((8, 8), seed=2)
    dst = np.roll(src, 1, axis=1)    # zero border keeps the shift exact
    fit3 = analysis.fit_cheap_map(src, dst, 3)
    fit1 = analysis.fit_cheap_map(src, dst, 1)
    assert fit3.mse < 1e-16
    assert fit1.mse > 1e-4


def test_mse_non_increasing_in_kernel_size():
    for seed in range(12):
        src, dst = _smooth_map(seed * 2), _smooth_map(seed * 2 + 1)
        mses = [analysis.fit_cheap_map(src, dst, d).mse for d in (1, 3, 5, 7)]
        for small, big in zip(mses, mses[1:]):
            assert big <= small * (1 + 1e-12)


def test_normal_equation_orthogonality():
    src, dst = _smooth_map(50), _smooth_map(51)
    fit = analysis.fit_cheap_map(src, dst, 5)
    a = analysis._design_matrix(src, 5)
    resid = a @ fit.filter.reshape(-1) - dst.reshape(-1)
    assert np.max(np.abs(a.T @ resid)) < 1e-8


def test_singular_system_flagged_regularized():
    src = np.zeros((10, 10))
    dst = rand((10, 10), seed=3)
    fit = analysis.fit_cheap_map(src, dst, 3)
    assert fit.regularized
    assert abs(fit.mse - float((dst ** 2).mean())) < 1e-12


def test_fit_validation():
    with pytest.raises(ConfigError):
        analysis.fit_cheap_map(np.zeros((8, 8)), np.zeros((8, 8)), 2)
    with pytest.raises(ConfigError):
        analysis.fit_cheap_map(np.zeros((4, 4)), np.zeros((4, 4)), 5)


def test_apply_cheap_map_matches_design():
    src = rand((9, 9), seed=4)
    filt = rand((3, 3), seed=5)
    out = analysis.apply_cheap_map(src, filt)
    manual = np.zeros_like(src)
    for i in range(9):
        for j in range(9):
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    ii, jj = i + a - 1, j + b - 1
                    if 0 <= ii < 9 and 0 <= jj < 9:
                        acc += filt[a, b] * src[ii, jj]
            manual[i, j] = acc
    assert np.allclose(out, manual, atol=1e-12)


def test_pgm_round_trip(tmp_path):
    img = (rand((7, 9), seed=6) * 40 + 100).astype(np.uint8)
    path = str(tmp_path / "m.pgm")
    analysis.write_pgm(path, img)
    back = analysis.read_pgm(path)
    assert back.shape == (7, 9)
    assert np.array_equal((back * 255).round().astype(np.uint8), img)


def test_pgm_reader_handles_comments(tmp_path):
    path = str(tmp_path / "c.pgm")
    with open(path, "wb") as f:
        f.write(b"P5\n# a comment line\n3 2\n255\n" + bytes(range(6)))
    img = analysis.read_pgm(path)
    assert img.shape == (2, 3)


def test_quantize_constant_is_mid_gray():
    q = analysis.quantize_map(np.full((5, 5), 3.7))
    assert np.all(q == 128)


def test_quantization_round_trip_bound(tmp_path):
    m = rand((16, 16), seed=7)
    q = analysis.quantize_map(m)
    path = str(tmp_path / "q.pgm")
    analysis.write_pgm(path, q)
    back = analysis.read_pgm(path)
    normalized = (m - m.min()) / (m.max() - m.min())
    assert np.max(np.abs(back - normalized)) <= 1.0 / 255.0 + 1e-12


def _staged_arch():
    return ArchSpec("staged", (3, 8, 8), (
        Node("stem", "conv_unit", {"out_channels": 6, "kernel": 3, "stride": 1,
                                   "padding": 1}, ("input",)),
        Node("b1", "basic_block", {"out_channels": 6, "stride": 1}, ("stem",)),
        Node("b2", "basic_block", {"out_channels": 6, "stride": 1}, ("b1",)),
        Node("b3", "basic_block", {"out_channels": 6, "stride": 1}, ("b2",)),
        Node("gap", "global_avg_pool", {}, ("b3",)),
        Node("fc", "fc", {"out_features": 2}, ("gap",)),
    ))


def test_dump_feature_maps(tmp_path):
    spec = _staged_arch()
    net = Network(spec)
    store = net.init_params(1)
    x = rand((2, 3, 8, 8), seed=8)
    out = str(tmp_path / "maps")
    paths = analysis.dump_feature_maps(spec, store, x, "b1", out)
    assert len(paths) == 6
    img = analysis.read_pgm(paths[0])
    assert img.shape == (8, 8)


def test_similarity_report_sorted_and_deterministic():
    spec = _staged_arch()
    net = Network(spec)
    store = net.init_params(2)
    x = rand((3, 3, 8, 8), seed=9)
    rows = analysis.stage_similarity_report(spec, store, x, 0)
    rows2 = analysis.stage_similarity_report(spec, store, x, 0)
    assert rows == rows2
    mses = [r.mse for r in rows]
    assert mses == sorted(mses)
    assert rows[0].mse <= float(np.mean(mses))
    with pytest.raises(ConfigError, match="out of range"):
        analysis.stage_similarity_report(spec, store, x, 5)


def test_similarity_zero_residual_blocks_have_exact_pairs():
    """Blocks with zero conv weights pass features through untouched."""
    spec = _staged_arch()
    net = Network(spec)
    store = net.init_params(3)
    for key in list(store):
        if (key.startswith(("b2.", "b3.")) and key.endswith("conv.w")):
            store[key] = np.zeros_like(store[key])
        if key.startswith(("b2.", "b3.")) and key.endswith("bn.gamma"):
            prefix = key[:-len(".gamma")]
            store[prefix + ".gamma"] = np.ones_like(store[key])
            store[prefix + ".beta"][:] = 0.0
            store[prefix + ".running_mean"][:] = 0.0
            store[prefix + ".running_var"][:] = 1.0 - 1e-5
    x = np.abs(rand((2, 3, 8, 8), seed=10))
    rows = analysis.stage_similarity_report(spec, store, x, 0)
    exact = [r for r in rows if r.mse < 1e-16]
    assert exact
    assert all(r.channel_a == r.channel_b for r in exact)


def test_similarity_csv_format():
    rows = [analysis.SimilarityRow("a", "b", 0, 1, 0.5)]
    text = analysis.similarity_csv(rows)
    assert text.splitlines()[0] == "block_a,block_b,channel_a,channel_b,mse"
    assert text.splitlines()[1] == "a,b,0,1,0.5"
