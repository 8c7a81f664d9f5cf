import numpy as np
import pytest

from conftest import fd_check
from tadadip.autodiff import ShapeError, Tensor, backward, elementwise, precision, reduce
from tadadip.unet import UNetConfig, build_unet


def hand_count(depth, base, growth=2, cin=1, cout=1, skip=True):
    """Parameter count of the documented layer layout, tallied by hand."""
    ch = [base * growth ** level for level in range(depth + 1)]
    conv = lambda i, o, k: i * o * k ** 3 + o  # noqa: E731
    norm = lambda c: 2 * c  # noqa: E731
    block = lambda i, o: conv(i, o, 3) + norm(o) + conv(o, o, 3) + norm(o)  # noqa: E731
    total = block(cin, ch[0])
    for level in range(1, depth + 1):
        total += conv(ch[level - 1], ch[level], 3) + norm(ch[level]) + block(ch[level], ch[level])
    for level in range(depth, 0, -1):
        total += conv(ch[level], ch[level - 1], 1) + norm(ch[level - 1])
        total += block(2 * ch[level - 1] if skip else ch[level - 1], ch[level - 1])
    return total + conv(ch[0], cout, 1)


@pytest.mark.parametrize("depth,base,skip", [(1, 2, True), (2, 3, True), (3, 8, True), (2, 4, False)])
def test_parameter_count_matches_hand_tally(depth, base, skip):
    net = build_unet(UNetConfig(depth=depth, base_channels=base, skip=skip))
    assert net.num_parameters() == hand_count(depth, base, skip=skip)


def test_smallest_network_count_is_frozen():
    assert build_unet(UNetConfig(depth=1, base_channels=2)).num_parameters() == 1643


@pytest.mark.parametrize("kwargs", [dict(depth=0), dict(base_channels=0), dict(channel_growth=0),
                                    dict(in_channels=0)])
def test_invalid_config_names_the_field(kwargs):
    with pytest.raises(ValueError, match=next(iter(kwargs))):
        UNetConfig(**kwargs)


def test_output_shape_and_range(rng):
    net = build_unet(UNetConfig(depth=2, base_channels=4), seed=1)
    out = net(Tensor(rng.standard_normal((1, 1, 8, 12, 16))))
    assert out.shape == (1, 1, 8, 12, 16)
    assert out.data.min() > 0 and out.data.max() < 1


def test_rejects_indivisible_extent():
    net = build_unet(UNetConfig(depth=3, base_channels=2))
    with pytest.raises(ShapeError, match="divisible"):
        net(Tensor(np.zeros((1, 1, 8, 8, 12))))
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 2, 8, 8, 8))))
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((8, 8, 8))))


def test_same_seed_same_parameters_different_seed_differs():
    cfg = UNetConfig(depth=2, base_channels=3)
    a, b, c = build_unet(cfg, 7), build_unet(cfg, 7), build_unet(cfg, 8)
    assert np.array_equal(a.parameter_vector(), b.parameter_vector())
    assert not np.array_equal(a.parameter_vector(), c.parameter_vector())


def test_fan_in_scaled_init():
    net = build_unet(UNetConfig(depth=2, base_channels=4))
    for layer in net.layers():
        if hasattr(layer, "weight"):
            bound = 1 / np.sqrt(layer.cin * layer.kernel ** 3)
            assert np.abs(layer.weight.data).max() <= bound


def test_zero_final_layer_gives_half(rng):
    net = build_unet(UNetConfig(depth=1, base_channels=2))
    net.zero_final_layer()
    out = net(Tensor(rng.standard_normal((1, 1, 4, 4, 4))))
    np.testing.assert_allclose(out.data, 0.5)


def test_every_parameter_receives_gradient(rng):
    net = build_unet(UNetConfig(depth=2, base_channels=2))
    out = net(Tensor(rng.standard_normal((1, 1, 8, 8, 8))))
    tape = backward(reduce("sum", elementwise("square", out)))
    assert {id(p) for p in tape.leaves()} == {id(p) for p in net.parameters()}
    assert all(np.any(p.grad != 0) for p in net.parameters())


def test_end_to_end_gradient_float64(rng):
    with precision(np.float64):
        net = build_unet(UNetConfig(depth=1, base_channels=2), seed=3)
    first = next(net.layers())
    x = rng.standard_normal((1, 1, 4, 4, 4))
    target = rng.uniform(size=x.shape)

    def build(leaves):
        # the first conv weight is swapped for a checker-owned leaf
        first.weight = leaves[1]
        out = net(leaves[0])
        return reduce("sum", elementwise("square", elementwise("sub", out, Tensor(target, dtype=out.dtype))))

    # small step: with h = 1e-4 some pre-activations cross a leaky-ReLU kink
    assert fd_check(build, [x, first.weight.data.copy()], rng, h=1e-6) < 1e-5


def test_layer_table_lists_every_layer():
    net = build_unet(UNetConfig(depth=2, base_channels=4))
    table = net.layer_table((16, 16, 16)).splitlines()
    assert table[-1] == f"total parameters: {net.num_parameters()}"
    assert len(table) == 2 + len(list(net.layers()))
    assert any("(4,16,16,16)" in row for row in table)
    assert any("(16,4,4,4)" in row for row in table)


def test_default_network_preserves_32_cube_shape(rng):
    net = build_unet()
    out = net(Tensor(rng.standard_normal((1, 1, 32, 32, 32))))
    assert out.shape == (1, 1, 32, 32, 32)
    assert np.all(np.isfinite(out.data))


def test_depth_three_rejects_20_cube():
    with pytest.raises(ShapeError):
        build_unet(UNetConfig(depth=3, base_channels=1))(Tensor(np.zeros((1, 1, 20, 20, 20))))
