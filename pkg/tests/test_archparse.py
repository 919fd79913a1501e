import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import prunelab as pl
from prunelab.archparse import FC, Conv, MaxPool, NetworkSpec, Softmax, spec_geometry
from prunelab.errors import ArchitectureError

CIFAR_SMALL = "2x128C3-MP2-2x128C3-MP2-2x256C3-256FC-10Softmax"
MNIST_LENET = "1x6(C5)-6x16(C5)-16x120(C5)-84-10"


class TestParse:
    def test_cifar_small_string(self):
        spec = pl.parse_architecture(CIFAR_SMALL, (3, 32, 32))
        convs = spec.conv_layers()
        assert len(convs) == 6
        assert [c.maps for c in convs] == [128, 128, 128, 128, 256, 256]
        assert all(c.k == 3 for c in convs)
        pools = [l for l in spec.layers if isinstance(l, MaxPool)]
        assert len(pools) == 2 and all(p.window == 3 and p.stride == 2 for p in pools)
        assert [l for l in spec.layers if isinstance(l, FC)] == [FC(units=256)]
        assert spec.layers[-1] == Softmax(classes=10)

    def test_mnist_lenet_string(self):
        spec = pl.parse_architecture(MNIST_LENET, (1, 28, 28), pad_mode="valid")
        assert spec.layers == (
            Conv(maps=6, k=5), Conv(maps=16, k=5), Conv(maps=120, k=5),
            FC(units=84), Softmax(classes=10),
        )

    def test_mixed_paren_styles_and_unicode_x(self):
        spec = pl.parse_architecture("1×6(C5)-16(C5)-120(C5)-84-10", (1, 28, 28), pad_mode="valid")
        assert [c.maps for c in spec.conv_layers()] == [6, 16, 120]

    def test_incoming_map_prefix_cross_checked(self):
        with pytest.raises(ArchitectureError, match="prefix"):
            pl.parse_architecture("1x6(C5)-7x16(C5)-84-10", (1, 28, 28), pad_mode="valid")

    def test_softmax_alone_rejected(self):
        with pytest.raises(ArchitectureError, match="conv"):
            pl.parse_architecture("10Softmax", (1, 28, 28))

    def test_unknown_token_is_positioned(self):
        with pytest.raises(ArchitectureError) as excinfo:
            pl.parse_architecture("8C3-WAT-10Softmax", (1, 12, 12))
        assert excinfo.value.token_index == 1
        assert excinfo.value.token == "WAT"

    def test_spatial_underflow_rejected(self):
        # 8x8 -> MP(3,2) -> 3x3 -> MP(3,2) -> 1x1 -> MP underflows
        with pytest.raises(ArchitectureError, match="underflow"):
            pl.parse_architecture("4C3-MP2-MP2-MP2-10Softmax", (1, 8, 8))

    def test_valid_padding_underflow_rejected(self):
        with pytest.raises(ArchitectureError, match="underflow"):
            pl.parse_architecture("4C5-4C5-10Softmax", (1, 8, 8), pad_mode="valid")

    def test_bare_interior_is_fc_final_is_softmax(self):
        spec = pl.parse_architecture("4C3-84-10", (1, 12, 12))
        assert spec.layers[1] == FC(units=84)
        assert spec.layers[2] == Softmax(classes=10)

    def test_conv_after_fc_rejected(self):
        with pytest.raises(ArchitectureError, match="follow"):
            pl.parse_architecture("4C3-84-4C3-10Softmax", (1, 12, 12))

    def test_geometry_chain(self):
        spec = pl.parse_architecture(CIFAR_SMALL, (3, 32, 32))
        sizes = spec_geometry(spec, "same")
        assert sizes[1] == (128, 32, 32)   # conv2 out
        assert sizes[2] == (128, 15, 15)   # first pool
        assert sizes[5] == (128, 7, 7)     # second pool


class TestRender:
    def test_cifar_small_round_trips_exactly(self):
        spec = pl.parse_architecture(CIFAR_SMALL, (3, 32, 32))
        assert pl.render_architecture(spec) == CIFAR_SMALL

    def test_single_conv_softmax(self):
        spec = NetworkSpec(input_shape=(3, 8, 8), layers=(Conv(maps=64, k=3), Softmax(classes=10)))
        assert pl.render_architecture(spec) == "64C3-10Softmax"

    def test_render_parse_identity_on_specs(self):
        spec = pl.parse_architecture(MNIST_LENET, (1, 28, 28), pad_mode="valid")
        again = pl.parse_architecture(pl.render_architecture(spec), (1, 28, 28), pad_mode="valid")
        assert again == spec

    def test_canonicalization_fixpoint(self):
        # render(parse(s)) is idempotent on strings
        s1 = pl.render_architecture(pl.parse_architecture(MNIST_LENET, (1, 28, 28), pad_mode="valid"))
        s2 = pl.render_architecture(pl.parse_architecture(s1, (1, 28, 28), pad_mode="valid"))
        assert s1 == s2


def random_spec(rng):
    """Random valid spec on a 1x24x24 input under same-padding."""
    layers = []
    maps, h = 1, 24
    for _ in range(rng.integers(1, 4)):
        f = int(rng.choice([4, 8, 12, 16, 128]))
        layers.append(Conv(maps=f, k=int(rng.choice([1, 3, 5]))))
        maps = f
        if h >= 4 and rng.random() < 0.4:
            layers.append(MaxPool(stride=2))
            h = (h - 3) // 2 + 1
    for _ in range(rng.integers(0, 3)):
        layers.append(FC(units=int(rng.choice([10, 32, 84]))))
    layers.append(Softmax(classes=int(rng.choice([2, 10]))))
    return NetworkSpec(input_shape=(1, 24, 24), layers=tuple(layers))


def test_round_trip_property_1000_random_specs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        spec = random_spec(rng)
        text = pl.render_architecture(spec)
        assert pl.parse_architecture(text, spec.input_shape) == spec


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_round_trip_property_hypothesis(data):
    conv_count = data.draw(st.integers(1, 3))
    layers = []
    maps = 1
    for _ in range(conv_count):
        f = data.draw(st.integers(1, 64))
        k = data.draw(st.sampled_from([1, 3, 5]))
        layers.append(Conv(maps=f, k=k))
        maps = f
    for _ in range(data.draw(st.integers(0, 2))):
        layers.append(FC(units=data.draw(st.integers(1, 128))))
    layers.append(Softmax(classes=data.draw(st.integers(2, 10))))
    spec = NetworkSpec(input_shape=(1, 16, 16), layers=tuple(layers))
    assert pl.parse_architecture(pl.render_architecture(spec), (1, 16, 16)) == spec
