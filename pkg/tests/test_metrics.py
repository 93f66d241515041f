import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio, structural_similarity

from cdgan.core import ImageTensor, ValueRange
from cdgan.data import make_toy_dataset
from cdgan.metrics import (
    LPIPS_FETCH_HELP,
    PUBLISHED_SCORES,
    AlexNetBackbone,
    ImageMetrics,
    MetricReport,
    RandomConvBackbone,
    comparison_table,
    evaluate,
    gaussian_window,
    lpips,
    mse,
    psnr,
    psnr_from_mse,
    published_psnr_consistency,
    ssim,
)
from cdgan.trainer import TrainConfig, init_state
from cdgan.verify import anticorrelated_pair, check_published_psnr


def byte_image(rng, shape=(3, 24, 24)):
    return ImageTensor(rng.uniform(0, 255, shape), ValueRange.BYTE)


def skimage_ssim(x, y):
    return structural_similarity(
        x.data, y.data, data_range=255, channel_axis=0,
        gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    )


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_ssim_matches_skimage(seed, mix):
    rng = np.random.default_rng(seed)
    x = byte_image(rng)
    y = ImageTensor(np.clip(mix * x.data + (1 - mix) * rng.uniform(0, 255, x.shape), 0, 255), ValueRange.BYTE)
    assert ssim(x, y) == pytest.approx(skimage_ssim(x, y), abs=1e-6)


def test_mse_psnr_match_skimage(rng):
    x, y = byte_image(rng), byte_image(rng)
    assert mse(x, y) == pytest.approx(mean_squared_error(x.data, y.data))
    assert psnr(x, y) == pytest.approx(peak_signal_noise_ratio(x.data, y.data, data_range=255))


def test_psnr_edge_cases():
    assert psnr_from_mse(0) == math.inf
    assert psnr_from_mse(255 ** 2) == pytest.approx(0.0)
    assert psnr_from_mse(82.9547) == pytest.approx(28.94, abs=0.01)


def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11, 11) and w.sum() == pytest.approx(1.0)
    assert np.unravel_index(w.argmax(), w.shape) == (5, 5)


def test_ssim_properties(rng):
    x, y = byte_image(rng), byte_image(rng)
    assert ssim(x, x) == pytest.approx(1.0)
    assert ssim(x, y) == pytest.approx(ssim(y, x))
    assert -1 <= ssim(x, y) <= 1
    assert ssim(*anticorrelated_pair()) < 0
    with pytest.raises(ValueError, match="window"):
        ssim(byte_image(rng, (3, 8, 8)), byte_image(rng, (3, 8, 8)))


def test_metrics_need_byte_range():
    signed = ImageTensor(np.zeros((3, 12, 12)))
    with pytest.raises(ValueError):
        mse(signed, signed)
    with pytest.raises(ValueError):
        mse(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def lpips_oracle(x, y, backbone):
    """Numpy re-statement of the perceptual distance from the backbone's raw features."""
    def feats(img):
        t = torch.from_numpy(img.data.astype(np.float64) / 127.5 - 1).unsqueeze(0)
        return [f[0].numpy() for f in backbone.features(t)]

    total = 0.0
    for fx, fy, w in zip(feats(x), feats(y), backbone.layer_weights):
        nx = fx / (np.sqrt((fx ** 2).sum(axis=0, keepdims=True)) + 1e-10)
        ny = fy / (np.sqrt((fy ** 2).sum(axis=0, keepdims=True)) + 1e-10)
        total += float((w.numpy()[:, None, None] * (nx - ny) ** 2).sum(axis=0).mean())
    return total


def test_lpips_random_backbone(rng):
    bb = RandomConvBackbone(seed=0)
    x, y = byte_image(rng, (3, 32, 32)), byte_image(rng, (3, 32, 32))
    assert lpips(x, x, bb) == 0
    assert lpips(x, y, bb) == pytest.approx(lpips_oracle(x, y, bb), rel=1e-10)
    assert lpips(x, y, bb) == pytest.approx(lpips(y, x, bb))
    near = ImageTensor(np.clip(x.data + 2, 0, 255), ValueRange.BYTE)
    assert lpips(x, near, bb) < lpips(x, y, bb)


@pytest.fixture
def fake_alexnet_files(tmp_path):
    from torchvision.models import alexnet

    torch.manual_seed(0)
    net_path, lin_path = tmp_path / "alexnet.pth", tmp_path / "lin.pth"
    torch.save(alexnet(weights=None).state_dict(), net_path)
    widths = (64, 192, 384, 256, 256)
    torch.save({f"lin{i}.model.1.weight": torch.rand(1, c, 1, 1) for i, c in enumerate(widths)}, lin_path)
    return net_path, lin_path


def test_alexnet_backbone_with_weight_files(fake_alexnet_files, rng):
    bb = AlexNetBackbone(*fake_alexnet_files)
    x, y = byte_image(rng, (3, 64, 64)), byte_image(rng, (3, 64, 64))
    assert [f.shape[1] for f in bb.features(torch.zeros(1, 3, 64, 64, dtype=torch.float64))] == [64, 192, 384, 256, 256]
    assert lpips(x, x, bb) == 0
    assert lpips(x, y, bb) == pytest.approx(lpips_oracle(x, y, bb), rel=1e-9)


def test_alexnet_backbone_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError) as exc:
        AlexNetBackbone(tmp_path / "a.pth", tmp_path / "b.pth")
    assert LPIPS_FETCH_HELP in str(exc.value)


def test_report_means_and_tsv():
    records = (
        ImageMetrics("a", 0.5, 0.0, math.inf, 0.1),
        ImageMetrics("b", 0.7, 4.0, 42.0, 0.3),
    )
    report = MetricReport(records)
    assert report.mean("psnr") == 42.0
    assert report.mean("ssim") == pytest.approx(0.6)
    lines = report.to_tsv().splitlines()
    assert lines[0] == "id\tssim\tmse\tpsnr\tlpips"
    assert lines[-1].startswith("MEAN\t") and len(lines) == 4
    table = comparison_table({"x": report, "y": report}).splitlines()
    assert table[0] == "metric\tx\ty" and len(table) == 5


def test_evaluate_on_toy_state():
    state = init_state(TrainConfig(network_profile="test"))
    pairs = make_toy_dataset(2, 32, seed=3)
    report = evaluate(state, pairs)
    assert [r.id for r in report.records] == ["toy_0000", "toy_0001"]
    assert all(np.isfinite(list(report.means.values())))
    assert evaluate(state, pairs, "B2A").means != report.means
    with pytest.raises(ValueError):
        evaluate(state, [])


def test_published_table_consistency():
    rows = published_psnr_consistency()
    assert len(rows) == 21
    assert max(r.gap for r in rows) < 0.05
    assert set(PUBLISHED_SCORES) == {"cuhk", "facades", "rgb-nir"}
    assert check_published_psnr()[0]


def test_tampered_psnr_formula_is_caught():
    assert not check_published_psnr(lambda m: 10 * math.log10(255 / m))[0]
    assert not check_published_psnr(lambda m: 20 * math.log10(255 / m) + 0.2)[0]


def test_mse_extremes_and_scalar_oracle(rng):
    zeros = ImageTensor(np.zeros((3, 4, 4)), ValueRange.BYTE)
    full = ImageTensor(np.full((3, 4, 4), 255.0), ValueRange.BYTE)
    assert mse(zeros, full) == 65025
    x, y = byte_image(rng, (3, 5, 6)), byte_image(rng, (3, 5, 6))
    s = 0.0
    for a, b in zip(x.data.ravel().tolist(), y.data.ravel().tolist()):
        s += (a - b) ** 2
    assert mse(x, y) == pytest.approx(s / x.data.size, abs=1e-9)


@pytest.mark.parametrize("c1,c2", [(10.0, 200.0), (128.0, 128.0), (0.0, 255.0)])
def test_ssim_of_constant_images(c1, c2):
    x = ImageTensor(np.full((3, 16, 16), c1), ValueRange.BYTE)
    y = ImageTensor(np.full((3, 16, 16), c2), ValueRange.BYTE)
    C1 = (0.01 * 255) ** 2
    assert ssim(x, y) == pytest.approx((2 * c1 * c2 + C1) / (c1 ** 2 + c2 ** 2 + C1), abs=1e-9)


def test_lpips_monotone_under_noise(rng):
    bb = RandomConvBackbone(seed=1)
    x = ImageTensor(rng.uniform(64, 192, (3, 32, 32)), ValueRange.BYTE)
    n = rng.normal(size=x.shape)
    scores = []
    for sigma in (0.0, 0.1, 0.2):
        noisy = np.clip(x.data + sigma * 127.5 * n, 0, 255)
        scores.append(lpips(x, ImageTensor(noisy, ValueRange.BYTE), bb))
    assert scores[0] == 0 and scores[0] <= scores[1] <= scores[2]


class _Identity(torch.nn.Module):
    def forward(self, x):
        return x


def test_identity_model_scores_perfectly():
    state = init_state(TrainConfig(network_profile="test"))
    state.g_ab = _Identity()
    from cdgan.core import PairedSample

    pairs = [PairedSample(p.image_a, p.image_a, p.id) for p in make_toy_dataset(2, 32, seed=4)]
    report = evaluate(state, pairs)
    for r in report.records:
        assert r.ssim == pytest.approx(1.0) and r.mse == 0 and r.lpips == 0 and r.psnr == math.inf


def test_evaluation_is_deterministic_and_means_are_row_means():
    state = init_state(TrainConfig(network_profile="test", seed=2))
    pairs = make_toy_dataset(3, 32, seed=5)
    a, b = evaluate(state, pairs), evaluate(state, pairs)
    assert a == b
    assert a.mean("mse") == pytest.approx(np.mean([r.mse for r in a.records]))
