import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snnslam.fusion import CodeFuser, LatentCode, OnlineScaler, average_window, scaler_step, similarity, similarity_matrix


def test_average_window_examples():
    assert average_window([np.zeros((20, 4))]).tolist() == [0.0] * 4
    assert average_window([np.ones((20, 2))]).tolist() == [200.0, 200.0]
    b = np.zeros((20, 1))
    b[:5] = 1
    assert average_window([b, np.ones((20, 1))]).tolist() == [50.0, 200.0]


def test_average_window_rejects_short_block():
    with pytest.raises(ValueError):
        average_window([np.ones((19, 3))])


@given(arrays(np.int8, (20, 6), elements=st.integers(0, 1)), arrays(np.int8, (20, 6), elements=st.integers(0, 1)))
def test_window_rates_are_additive_over_disjoint_spikes(a, b):
    b = b & ~a
    np.testing.assert_allclose(average_window([a | b]), average_window([a]) + average_window([b]))


def test_welford_known_values():
    s = OnlineScaler(1)
    outs = [s.step([v])[0] for v in (1.0, 2.0, 3.0)]
    assert outs[0] == 0.0
    assert s.mean[0] == pytest.approx(2.0)
    assert s.std[0] == pytest.approx(np.sqrt(2 / 3))
    assert outs[2] == pytest.approx(1.2247, abs=1e-4)


def test_constant_stream_scales_to_zero():
    s = OnlineScaler(3)
    for _ in range(50):
        out = s.step([4.0, 4.0, 4.0])
        assert np.all(np.isfinite(out)) and np.all(out == 0)


def test_scaler_step_keeps_timestamp():
    code, s = scaler_step(OnlineScaler(2), LatentCode(np.array([1.0, 2.0]), 0.3))
    assert code.t == 0.3 and s.count == 1


def test_similarity_examples():
    assert similarity([1, 0], [1, 0]) == 1.0
    assert similarity([1, 0], [0, 1]) == 0.0
    assert similarity([1, 0], [-1, 0]) == -1.0
    assert similarity([0, 0], [1, 0]) == 0.0
    with pytest.raises(ValueError):
        similarity([1, 0], [1, 0, 0])


@given(arrays(float, 8, elements=st.floats(-10, 10)), arrays(float, 8, elements=st.floats(-10, 10)),
       st.floats(0.01, 100))
def test_similarity_symmetric_bounded_scale_invariant(a, b, k):
    s = similarity(a, b)
    assert -1 <= s <= 1
    assert s == pytest.approx(similarity(b, a), abs=1e-12)
    if np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3:
        assert similarity(k * a, b) == pytest.approx(s, abs=1e-9)


def test_similarity_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    codes = rng.normal(size=(6, 5))
    codes[2] = 0
    m = similarity_matrix(codes)
    for i in range(6):
        for j in range(6):
            assert m[i, j] == pytest.approx(similarity(codes[i], codes[j]), abs=1e-12)


def test_fuser_rejects_bad_block_order():
    with pytest.raises(ValueError):
        CodeFuser(blocks=("radar", "dvs_pos"))
    with pytest.raises(ValueError):
        CodeFuser(blocks=("dvs_pos", "dvs_pos"))
    with pytest.raises(ValueError):
        CodeFuser(blocks=("lidar",))


def test_fuser_emits_every_window_and_masks_silent_block():
    rng = np.random.default_rng(1)
    f = CodeFuser(blocks=("dvs_pos", "radar"), m=4)
    out = []
    for k in range(60):
        r = f.push({"dvs_pos": np.zeros(4), "radar": rng.random(4) < 0.5}, (k + 1) * 0.005)
        if r is not None:
            out.append(r)
    assert [round(raw.t, 6) for raw, _ in out] == [0.1, 0.2, 0.3]
    for raw, scaled in out:
        assert raw.values.shape == (8,)
        assert np.all(scaled.values[:4] == 0)
    assert f.scalers["dvs_pos"].count == 0 and f.scalers["radar"].count == 3


def test_fuser_stride_overlaps_windows():
    f = CodeFuser(blocks=("radar",), m=2, stride=0.05)
    ts = [round((k + 1) * 0.005, 6) for k in range(60)
          if f.push({"radar": np.ones(2)}, (k + 1) * 0.005) is not None]
    assert ts == [0.1, 0.15, 0.2, 0.25, 0.3]
    with pytest.raises(ValueError):
        CodeFuser(stride=0.2)
