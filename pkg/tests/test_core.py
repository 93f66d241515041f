import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from cdgan import core
from cdgan.core import (
    ABLATION_PRESETS,
    METHOD_PRESETS,
    TERM_ORDER,
    ImageTensor,
    LossTerm,
    LossWeights,
    PairedSample,
    PresetName,
    ValueRange,
    denormalize,
    normalize,
    preset,
    term_matrix,
)


class TestImageTensor:
    def test_rejects_wrong_rank_and_channels(self):
        with pytest.raises(ValueError):
            ImageTensor(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            ImageTensor(np.zeros((2, 4, 4)))

    def test_rejects_out_of_range_and_nan(self):
        with pytest.raises(ValueError):
            ImageTensor(np.full((3, 2, 2), 1.5))
        with pytest.raises(ValueError):
            ImageTensor(np.full((3, 2, 2), np.nan))
        with pytest.raises(ValueError):
            ImageTensor(np.full((3, 2, 2), 256.0), ValueRange.BYTE)

    def test_integer_input_becomes_float_and_readonly(self):
        src = np.full((3, 2, 2), 7, dtype=np.uint8)
        img = ImageTensor(src, ValueRange.BYTE)
        assert img.data.dtype == np.float32
        assert not img.data.flags.writeable
        src[:] = 0
        assert img.data.max() == 7

    def test_gray_to_rgb(self):
        img = ImageTensor(np.zeros((1, 3, 5)))
        rgb = img.to_rgb()
        assert rgb.shape == (3, 3, 5) and (rgb.height, rgb.width) == (3, 5)

    def test_equality_includes_range(self):
        a = ImageTensor(np.zeros((3, 2, 2)), ValueRange.BYTE)
        b = ImageTensor(np.zeros((3, 2, 2)), ValueRange.SIGNED_UNIT)
        assert a != b
        assert a == ImageTensor(np.zeros((3, 2, 2)), ValueRange.BYTE)


def test_pair_requires_matching_size():
    with pytest.raises(ValueError, match="p1"):
        PairedSample(ImageTensor(np.zeros((3, 4, 4))), ImageTensor(np.zeros((3, 4, 5))), "p1")


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, (3, 4, 5)))
def test_normalize_roundtrip_on_bytes(data):
    byte = ImageTensor(data, ValueRange.BYTE)
    signed = normalize(byte)
    assert signed.value_range is ValueRange.SIGNED_UNIT
    back = denormalize(signed)
    np.testing.assert_allclose(back.data, data, atol=1e-4)


def test_normalize_endpoints():
    img = ImageTensor(np.array([0.0, 127.5, 255.0]).reshape(3, 1, 1), ValueRange.BYTE)
    np.testing.assert_allclose(normalize(img).data.ravel(), [-1, 0, 1])


def test_ranges_are_checked():
    with pytest.raises(ValueError):
        normalize(ImageTensor(np.zeros((3, 1, 1))))
    with pytest.raises(ValueError):
        denormalize(ImageTensor(np.zeros((3, 1, 1)), ValueRange.BYTE))


def test_denormalize_clamps_and_counts():
    core.reset_clamp_count()
    out = denormalize(np.array([-1.2, 0.0, 1.0 + 1e-6]).reshape(3, 1, 1))
    assert out.data.min() == 0 and out.data.max() == 255
    assert core.clamp_count() == 2


class TestWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.mu_a, w.lambda_a, w.omega_a) == (15, 10, 30)
        assert w.for_term(LossTerm.ADV_A) == 1.0 and w.for_term(LossTerm.CD_B) == 1.0
        assert w.for_term(LossTerm.CS_B) == 30

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(omega_a=-1)

    def test_scaled(self):
        assert LossWeights().scaled(2).mu_b == 30


class TestPresets:
    def test_lookup_forms(self):
        assert preset("csgan+") == preset(PresetName.CSGAN_PLUS) == preset("CSGAN_PLUS")
        with pytest.raises(KeyError):
            preset("cdgan++")

    def test_plus_adds_cd_only(self):
        cd = {LossTerm.CD_A, LossTerm.CD_B}
        for plus, base in core.PLUS_BASE.items():
            assert preset(plus).active_terms - preset(base).active_terms == cd
            assert not preset(base).active_terms & cd

    def test_cdgan_uses_all_terms(self):
        assert preset("cdgan").term_vector() == (True,) * 10

    def test_cli_names_are_lowercase(self):
        for name in PresetName:
            assert preset(name).cli_name == preset(name).cli_name.lower()

    def test_registries(self):
        assert len(METHOD_PRESETS) == 7 and len(ABLATION_PRESETS) == 9
        assert list(term_matrix(["gan"])) == ["gan"]
        assert len(TERM_ORDER) == 10

    def test_custom_weights_carry(self):
        assert preset("cdgan", LossWeights(omega_a=1)).weights.omega_a == 1
