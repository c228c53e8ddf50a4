import numpy as np
import pytest

from qrprune import zoo
from qrprune.errors import SamplingExhaustedError, WrongVariantError
from qrprune.sampling import (
    SampleConfig,
    collect_contributions,
    collect_joint_contributions,
    load_contributions,
)


def assert_column_sums(cm):
    assert cm.column_sum_error() <= 1e-6


@pytest.fixture(scope="module")
def calib(request):
    return zoo.random_inputs(zoo.bottleneck_cnn(), 30, seed=7)


def test_zero_channel_row(dup_net):
    g = dup_net.copy()
    conv1 = g.layer("conv1")
    conv1.kernel[..., 1] = 0
    conv1.bias[1] = 0
    cm = collect_contributions(g, "conv2", zoo.random_inputs(g, 4), SampleConfig(0, 300))
    assert not cm.A[1].any()
    assert_column_sums(cm)


def test_duplicate_rows(dup_net):
    g = dup_net.copy()
    conv1 = g.layer("conv1")
    conv1.kernel[..., 2] = conv1.kernel[..., 0]
    conv1.bias[2] = conv1.bias[0]
    cm = collect_contributions(g, "conv2", zoo.random_inputs(g, 4), SampleConfig(0, 300))
    assert np.abs(cm.A[0] - cm.A[2]).max() <= 1e-6
    assert_column_sums(cm)


def test_provenance_and_shape(res_net, calib):
    cm = collect_contributions(res_net, "u2/conv2", calib[:5], SampleConfig(3, 500, max_per_image=120))
    assert cm.A.shape == (4, 500) and cm.B.shape == (1, 500)
    assert len(set(cm.provenance)) == 500
    per_image = np.bincount([p[0] for p in cm.provenance])
    assert per_image.max() <= 120
    assert all(p[1] == "u2/conv2" for p in cm.provenance)
    assert_column_sums(cm)


def test_columns_match_their_provenance(res_net, calib):
    from qrprune.inference import TapRequest, contribution_vector, forward_to_layer

    cm = collect_contributions(res_net, "u3/conv2", calib[:3], SampleConfig(1, 60))
    conv = res_net.layer("u3/conv2")
    for col in (0, 17, 59):
        img, _, j, h, w = cm.provenance[col]
        xin = forward_to_layer(res_net, calib[img], TapRequest("u3/conv2"))
        assert np.array_equal(cm.A[:, col], contribution_vector(xin, conv.kernel, conv.params, (h, w), j))


def test_deterministic(res_net, calib):
    cfg = SampleConfig(11, 400)
    a = collect_contributions(res_net, "head", calib[:4], cfg)
    b = collect_contributions(res_net, "head", calib[:4], cfg)
    assert a.A.tobytes() == b.A.tobytes() and a.B.tobytes() == b.B.tobytes()
    assert a.provenance == b.provenance
    c = collect_contributions(res_net, "head", calib[:4], SampleConfig(12, 400))
    assert c.provenance != a.provenance


def test_prefix_consistency(res_net, calib):
    big = collect_contributions(res_net, "u2/conv3", calib[:6], SampleConfig(5, 900, max_per_image=200))
    small = collect_contributions(res_net, "u2/conv3", calib[:6], SampleConfig(5, 350, max_per_image=200))
    assert np.array_equal(big.A[:, :350], small.A)
    assert big.provenance[:350] == small.provenance


def test_exhaustion(res_net, calib):
    # u2/conv2 output: 8*8*4 = 256 sites per image
    with pytest.raises(SamplingExhaustedError) as info:
        collect_contributions(res_net, "u2/conv2", calib[:2], SampleConfig(0, 513))
    assert info.value.available == 512
    cm = collect_contributions(res_net, "u2/conv2", calib[:2], SampleConfig(0, 512))
    assert len(set(cm.provenance)) == 512


def test_threads_do_not_change_result(res_net, calib):
    a = collect_contributions(res_net, "u3/conv1", calib[:6], SampleConfig(2, 300))
    b = collect_contributions(res_net, "u3/conv1", calib[:6], SampleConfig(2, 300, threads=3))
    assert a.A.tobytes() == b.A.tobytes()


def test_small_n_warns(res_net, calib):
    with pytest.warns(UserWarning):
        collect_contributions(res_net, "head", calib[:1], SampleConfig(0, 100))


def test_default_n(res_net, calib):
    assert SampleConfig(0).resolved_n(16) == 4000
    assert SampleConfig(0).resolved_n(512) == 10240
    cm = collect_contributions(res_net, "head", calib[:8], SampleConfig(0))
    assert cm.n_samples == 4000


def test_joint_degenerate_mixture(res_net, calib):
    cfg = SampleConfig(9, 700, source_weights=(1.0, 0.0))
    joint = collect_joint_contributions(res_net, "u1", calib[:5], cfg)
    single = collect_contributions(res_net, "u1/conv1", calib[:5], cfg)
    assert {p[1] for p in joint.provenance} == {"u1/conv1"}
    assert joint.A.tobytes() == single.A.tobytes()
    assert joint.provenance == single.provenance


def test_joint_zero_channel(res_net, calib):
    g = res_net.copy()
    g.layer("u1/conv1").kernel[:, :, 3, :] = 0
    g.layer("u1/projection").kernel[:, :, 3, :] = 0
    cm = collect_joint_contributions(g, "u1", calib[:4], SampleConfig(0, 800))
    assert not cm.A[3].any()
    assert cm.A.shape[0] == 8
    assert_column_sums(cm)


def test_joint_split_within_binomial_bound(res_net, calib):
    n, p = 10_000, 0.5
    cm = collect_joint_contributions(res_net, "u1", calib, SampleConfig(2024, n))
    k = sum(1 for rec in cm.provenance if rec[1] == "u1/conv1")
    assert abs(k - n * p) <= 3 * np.sqrt(n * p * (1 - p))
    assert len(set(cm.provenance)) == n
    assert_column_sums(cm)


def test_joint_requires_projection(res_net, calib):
    with pytest.raises(WrongVariantError):
        collect_joint_contributions(res_net, "u2", calib[:2], SampleConfig(0, 100))


def test_dump_round_trip(tmp_path, res_net, calib):
    cm = collect_joint_contributions(res_net, "u1", calib[:3], SampleConfig(4, 320))
    path = cm.save(tmp_path / "contrib")
    back = load_contributions(path)
    assert back.A.tobytes() == cm.A.tobytes() and back.B.tobytes() == cm.B.tobytes()
    assert back.provenance == cm.provenance and back.config == cm.config
