import numpy as np
import numpy.testing as npt
import pytest

from ftcnn import nn
from ftcnn.errors import ArchitectureError, InferenceError
from util import ALEXNET_TABLE, alexnet_spec, brute_force_conv, tiny_spec

TABLE_OUTPUTS = [
    ("data", (3, 227, 227)),
    ("conv1", (96, 55, 55)),
    ("pool1", (96, 27, 27)),
    ("conv2", (256, 27, 27)),
    ("pool2", (256, 13, 13)),
    ("conv3", (384, 13, 13)),
    ("conv4", (384, 13, 13)),
    ("conv5", (256, 13, 13)),
    ("pool5", (256, 6, 6)),
    ("fc6", (4096, 1)),
    ("fc7", (4096, 1)),
    ("fc8", (2, 1)),
]


def test_infer_shapes_reproduces_layer_table():
    spec = alexnet_spec(classes=2)
    outs = nn.infer_shapes(spec)
    assert [(r.name, o) for r, o in zip(spec.rows, outs)] == TABLE_OUTPUTS


def test_infer_shapes_conv_stride_and_pad():
    spec = alexnet_spec(classes=2)
    outs = dict(zip([r.name for r in spec.rows], nn.infer_shapes(spec)))
    assert outs["conv1"] == (96, 55, 55)   # (227 - 11)/4 + 1
    assert outs["pool1"] == (96, 27, 27)   # (55 - 3)/2 + 1
    assert outs["conv3"] == (384, 13, 13)  # (13 + 2 - 3)/1 + 1


def test_loader_rejects_wrong_output_column():
    bad = ALEXNET_TABLE.replace("96x55x55", "96x54x54")
    with pytest.raises(ArchitectureError):
        nn.load_architecture(bad, classes=2)


def test_loader_accepts_two_word_kinds():
    text = """
    layer  type             input   kernel  stride  pad  output
    data   input            1x6x6   N/A     N/A     N/A  1x6x6
    conv1  convolution      1x6x6   3x3     1       0    2x4x4
    pool1  max pooling      2x4x4   2x2     2       0    2x2x2
    fc2    fully connected  2x2x2   2x2     1       0    2x1
    """
    spec = nn.load_architecture(text)
    assert [r.kind for r in spec.rows] == [
        "input", "convolution", "max-pool", "fully-connected",
    ]


def test_nonpositive_extent_is_architecture_error():
    text = """
    layer | type        | input | kernel | stride | pad | output
    data  | input       | 1x4x4 | N/A    | N/A    | N/A | 1x4x4
    conv1 | convolution | 1x4x4 | 5x5    | 1      | 0   | 2x1x1
    """
    with pytest.raises(ArchitectureError):
        nn.load_architecture(text)


def test_build_network_full_table():
    spec = alexnet_spec(classes=2)
    net = nn.build_network(spec, "gaussian", seed=0)
    assert net.layer_names() == [
        "conv1", "conv2", "conv3", "conv4", "conv5", "fc6", "fc7", "fc8",
    ]
    assert net.layers["conv1"].w.shape == (96, 3, 11, 11)
    assert net.layers["fc6"].w.shape == (4096, 256 * 6 * 6)
    assert net.layers["fc8"].w.shape == (2, 4096)


def test_build_network_three_classes():
    spec = alexnet_spec(classes=3)
    net = nn.build_network(spec, "gaussian", seed=0)
    assert net.layers["fc8"].w.shape == (3, 4096)


def test_build_network_deterministic():
    spec = tiny_spec()
    a = nn.build_network(spec, "gaussian", seed=7)
    b = nn.build_network(spec, "gaussian", seed=7)
    for name in a.layer_names():
        assert a.layers[name].w.tobytes() == b.layers[name].w.tobytes()
        assert a.layers[name].b.tobytes() == b.layers[name].b.tobytes()


def test_relu_insertion_skips_final_layer():
    ops = nn.network_ops(alexnet_spec(classes=2))
    kinds = [(o.name, o.kind) for o in ops]
    relu_after = [kinds[i - 1][0] for i, (name, kind) in enumerate(kinds) if kind == "relu"]
    assert relu_after == ["conv1", "conv2", "conv3", "conv4", "conv5", "fc6", "fc7"]
    assert kinds[-1][1] == "softmax"
    assert kinds[-2] == ("fc8", "fully-connected")


def test_explicit_relu_rows_disable_insertion():
    text = """
    layer | type            | input | kernel | stride | pad | output
    data  | input           | 1x6x6 | N/A    | N/A    | N/A | 1x6x6
    conv1 | convolution     | 1x6x6 | 3x3    | 1      | 0   | 2x4x4
    act1  | relu            | 2x4x4 | N/A    | N/A    | N/A | 2x4x4
    fc2   | fully-connected | 2x4x4 | 4x4    | 1      | 0   | 3x1
    fc3   | fully-connected | 3x1   | 1x1    | 1      | 0   | 2x1
    """
    spec = nn.load_architecture(text)
    ops = nn.network_ops(spec)
    kinds = [o.kind for o in ops]
    # the table's own relu is kept and nothing extra is inserted, but the
    # softmax head still gets appended
    assert kinds == ["convolution", "relu", "fully-connected", "fully-connected", "softmax"]
    assert [o.name for o in ops if o.kind == "relu"] == ["act1"]


def test_forward_symmetric_fc():
    text = """
    layer | type            | input | kernel | stride | pad | output
    data  | input           | 1x1x1 | N/A    | N/A    | N/A | 1x1x1
    fc1   | fully-connected | 1x1x1 | 1x1    | 1      | 0   | 2x1
    """
    spec = nn.load_architecture(text)
    net = nn.build_network(spec, "gaussian", seed=0)
    net.layers["fc1"].w[:] = 0.0
    trace = nn.forward(net, spec, np.ones((1, 1, 1, 1)))
    npt.assert_allclose(trace.probs, [[0.5, 0.5]], atol=1e-15)


def test_forward_maxpool_selects_maximum():
    text = """
    layer | type            | input | kernel | stride | pad | output
    data  | input           | 1x2x2 | N/A    | N/A    | N/A | 1x2x2
    pool1 | max-pool        | 1x2x2 | 2x2    | 2      | 0   | 1x1x1
    fc2   | fully-connected | 1x1x1 | 1x1    | 1      | 0   | 2x1
    """
    spec = nn.load_architecture(text)
    net = nn.build_network(spec, "gaussian", seed=0)
    x = np.array([[[[1.0, 2.0], [4.0, 3.0]]]])
    trace = nn.forward(net, spec, x)
    npt.assert_array_equal(trace.activations[1], [[[[4.0]]]])


def test_forward_conv_matches_sliding_window_oracle():
    text = """
    layer | type            | input | kernel | stride | pad | output
    data  | input           | 1x5x5 | N/A    | N/A    | N/A | 1x5x5
    conv1 | convolution     | 1x5x5 | 3x3    | 1      | 0   | 1x3x3
    fc2   | fully-connected | 1x3x3 | 3x3    | 1      | 0   | 2x1
    """
    spec = nn.load_architecture(text)
    net = nn.build_network(spec, "gaussian", seed=0)
    net.layers["conv1"].w[:] = 1.0  # sliding-window sum kernel
    net.layers["conv1"].b[:] = 0.0
    ramp = np.arange(25, dtype=float).reshape(1, 1, 5, 5)
    trace = nn.forward(net, spec, ramp)
    oracle = brute_force_conv(ramp, net.layers["conv1"].w, net.layers["conv1"].b)
    npt.assert_allclose(trace.activations[1], oracle, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_forward_conv_random_vs_oracle(seed):
    rng = np.random.default_rng(seed)
    spec = tiny_spec()
    net = nn.build_network(spec, "xavier", seed=seed)
    x = rng.normal(size=(2, 1, 8, 8))
    trace = nn.forward(net, spec, x)
    oracle = brute_force_conv(
        x, net.layers["conv1"].w, net.layers["conv1"].b, stride=1, pad=1
    )
    npt.assert_allclose(trace.activations[1], oracle, rtol=1e-12, atol=1e-12)


def test_softmax_rows_sum_to_one_with_huge_logits():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=1e3, size=(64, 5))
    probs = nn.softmax(logits)
    npt.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.isfinite(probs).all()


def test_cross_entropy_uniform_two_classes():
    probs = np.full((4, 2), 0.5)
    labels = [0, 1, 0, 1]
    npt.assert_allclose(nn.cross_entropy_loss(probs, labels), np.log(2.0), atol=1e-12)


def test_cross_entropy_perfect_prediction():
    assert nn.cross_entropy_loss(np.array([[1.0, 0.0]]), [0]) == 0.0


def test_cross_entropy_two_sample_batch():
    probs = np.array([[0.9, 0.1], [0.2, 0.8]])
    expect = -(np.log(0.9) + np.log(0.8)) / 2.0
    npt.assert_allclose(nn.cross_entropy_loss(probs, [0, 1]), expect, atol=1e-12)
    assert abs(expect - 0.164252) < 1e-6


def test_cross_entropy_clamps_zero_probability():
    loss = nn.cross_entropy_loss(np.array([[0.0, 1.0]]), [0])
    assert np.isfinite(loss)
    npt.assert_allclose(loss, -np.log(1e-12))


def test_cross_entropy_rejects_unnormalized_rows():
    with pytest.raises(InferenceError):
        nn.cross_entropy_loss(np.array([[0.7, 0.7]]), [0])


def test_backward_zero_loss_has_zero_head_gradient():
    spec = tiny_spec()
    net = nn.build_network(spec, "xavier", seed=3)
    x = np.random.default_rng(3).normal(size=(4, 1, 8, 8))
    trace = nn.forward(net, spec, x)
    labels = trace.probs.argmax(axis=1)
    # force exact one-hot predictions through the softmax input
    forced = np.zeros_like(trace.probs)
    forced[np.arange(4), labels] = 1.0
    trace.activations[-1] = forced
    trace.probs = forced
    grads = nn.backward(net, spec, trace, labels)
    npt.assert_array_equal(grads["fc3"].w, 0.0)
    npt.assert_array_equal(grads["fc3"].b, 0.0)


def test_backward_batch_duplication_invariance():
    spec = tiny_spec()
    net = nn.build_network(spec, "xavier", seed=4)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 1, 8, 8))
    labels = np.array([0, 1, 2])
    g1 = nn.backward(net, spec, nn.forward(net, spec, x), labels)
    x2 = np.concatenate([x, x])
    labels2 = np.concatenate([labels, labels])
    g2 = nn.backward(net, spec, nn.forward(net, spec, x2), labels2)
    for name in g1:
        npt.assert_allclose(g1[name].w, g2[name].w, rtol=1e-12, atol=1e-14)
        npt.assert_allclose(g1[name].b, g2[name].b, rtol=1e-12, atol=1e-14)


def test_forward_deterministic_bitwise():
    spec = tiny_spec()
    net = nn.build_network(spec, "xavier", seed=5)
    x = np.random.default_rng(5).normal(size=(2, 1, 8, 8))
    a = nn.forward(net, spec, x)
    b = nn.forward(net, spec, x)
    assert a.probs.tobytes() == b.probs.tobytes()
    for xa, xb in zip(a.activations, b.activations):
        assert xa.tobytes() == xb.tobytes()


def test_forward_shape_mismatch_raises():
    spec = tiny_spec()
    net = nn.build_network(spec, "gaussian", seed=0)
    with pytest.raises(InferenceError):
        nn.forward(net, spec, np.zeros((1, 1, 9, 9)))


def test_spec_text_round_trip():
    spec = alexnet_spec(classes=3)
    again = nn.load_architecture(nn.spec_to_text(spec))
    assert again == spec
    assert nn.spec_fingerprint(again) == nn.spec_fingerprint(spec)
