"""Image quality metrics (SSIM, MSE, PSNR, LPIPS) on the [0, 255] scale."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.signal import convolve2d
from torch import nn

from .core import ImageTensor, ValueRange, denormalize

log = logging.getLogger(__name__)

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _byte_array(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        if img.value_range is not ValueRange.BYTE:
            raise ValueError("metrics expect BYTE images; denormalize first")
        return img.data.astype(np.float64)
    return np.asarray(img, dtype=np.float64)


def _pair(x, y):
    x, y = _byte_array(x), _byte_array(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def mse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean((x - y) ** 2))


def psnr_from_mse(err: float, peak: float = PEAK) -> float:
    """``10 log10(peak^2 / mse)``; ``inf`` when the error is zero."""
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr(x, y) -> float:
    return psnr_from_mse(mse(x, y))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, y, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over all valid window positions, averaged across channels.

    Inputs are (C, H, W) on [0, 255]; statistics are Gaussian-weighted
    (11x11, sigma 1.5) and only windows fully inside the image count.
    """
    x, y = _pair(x, y)
    if x.ndim == 2:
        x, y = x[None], y[None]
    if min(x.shape[-2:]) < window:
        raise ValueError(f"image {x.shape[-2:]} is smaller than the {window}x{window} SSIM window")
    w = gaussian_window(window, sigma)
    c1, c2 = (SSIM_K1 * PEAK) ** 2, (SSIM_K2 * PEAK) ** 2

    def filt(a):
        return convolve2d(a, w, mode="valid")

    scores = []
    for xc, yc in zip(x, y):
        mx, my = filt(xc), filt(yc)
        vx = filt(xc * xc) - mx * mx
        vy = filt(yc * yc) - my * my
        cov = filt(xc * yc) - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


# -- LPIPS -----------------------------------------------------------------


class RandomConvBackbone(nn.Module):
    """Fixed-seed random conv stack; only good for checking metric axioms, not absolute scores."""

    def __init__(self, seed: int = 0, channels=(16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, c_in = [], 3
        for c in channels:
            conv = nn.Conv2d(c_in, c, 3, stride=2, padding=1).double()
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64)
                                  * math.sqrt(2.0 / (9 * c_in)))
                conv.bias.zero_()
            layers.append(nn.Sequential(conv, nn.ReLU()))
            c_in = c
        self.stages = nn.ModuleList(layers)
        self.layer_weights = [torch.full((c,), 1.0 / c, dtype=torch.float64) for c in channels]
        self.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


LPIPS_FETCH_HELP = (
    "LPIPS needs two weight files: the torchvision AlexNet ImageNet weights "
    "(alexnet-owt-7be5be79.pth from download.pytorch.org/models/) and the LPIPS "
    "linear-layer weights (lpips/weights/v0.1/alex.pth from github.com/richzhang/"
    "PerceptualSimilarity). Download both and pass their paths."
)


class AlexNetBackbone(nn.Module):
    """AlexNet feature taps (relu1..relu5) with LPIPS input scaling and linear weights."""

    TAPS = (1, 4, 7, 9, 11)
    SHIFT = (-0.030, -0.088, -0.188)
    SCALE = (0.458, 0.448, 0.450)

    def __init__(self, net_weights, lin_weights):
        super().__init__()
        from torchvision.models import alexnet

        for p in (net_weights, lin_weights):
            if not Path(p).is_file():
                raise FileNotFoundError(f"missing LPIPS weights file {p}. {LPIPS_FETCH_HELP}")
        net = alexnet(weights=None)
        state = torch.load(net_weights, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        self.body = net.features[: self.TAPS[-1] + 1].double()
        lin = torch.load(lin_weights, map_location="cpu", weights_only=True)
        self.layer_weights = [lin[f"lin{i}.model.1.weight"].double().flatten() for i in range(len(self.TAPS))]
        self.register_buffer("shift", torch.tensor(self.SHIFT, dtype=torch.float64).view(1, 3, 1, 1))
        self.register_buffer("scale", torch.tensor(self.SCALE, dtype=torch.float64).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.shift) / self.scale
        feats = []
        for i, layer in enumerate(self.body):
            x = layer(x)
            if i in self.TAPS:
                feats.append(x)
        return feats


def _unit_channels(f: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    return f / (torch.sqrt((f * f).sum(dim=1, keepdim=True)) + eps)


@torch.no_grad()
def lpips(x, y, backbone) -> float:
    """Sum over layers of the spatial mean of channel-weighted squared differences
    between unit-normalized features. Inputs are BYTE images."""
    x, y = _pair(x, y)
    tx = torch.from_numpy(x / 127.5 - 1.0).unsqueeze(0)
    ty = torch.from_numpy(y / 127.5 - 1.0).unsqueeze(0)
    total = 0.0
    for fx, fy, w in zip(backbone.features(tx), backbone.features(ty), backbone.layer_weights):
        diff = (_unit_channels(fx) - _unit_channels(fy)) ** 2
        total += float((diff * w.view(1, -1, 1, 1)).sum(dim=1).mean())
    return total


# -- reports ---------------------------------------------------------------

METRIC_NAMES = ("ssim", "mse", "psnr", "lpips")


@dataclass(frozen=True)
class ImageMetrics:
    id: str
    ssim: float
    mse: float
    psnr: float
    lpips: float


@dataclass(frozen=True)
class MetricReport:
    records: tuple[ImageMetrics, ...] = field(default_factory=tuple)

    def mean(self, metric: str) -> float:
        values = [getattr(r, metric) for r in self.records]
        if metric == "psnr":
            finite = [v for v in values if math.isfinite(v)]
            if len(finite) < len(values):
                log.warning("excluding %d infinite PSNR values from the mean", len(values) - len(finite))
            values = finite
        return float(np.mean(values)) if values else math.nan

    @property
    def means(self) -> dict[str, float]:
        return {m: self.mean(m) for m in METRIC_NAMES}

    def to_tsv(self) -> str:
        """Header, one row per image, then a ``MEAN`` row."""
        lines = ["\t".join(("id", *METRIC_NAMES))]
        for r in self.records:
            lines.append("\t".join([r.id, *(repr(float(getattr(r, m))) for m in METRIC_NAMES)]))
        lines.append("\t".join(["MEAN", *(repr(v) for v in self.means.values())]))
        return "\n".join(lines) + "\n"


def image_metrics(pid: str, pred: ImageTensor, target: ImageTensor, backbone) -> ImageMetrics:
    return ImageMetrics(pid, ssim(pred, target), mse(pred, target), psnr(pred, target), lpips(pred, target, backbone))


def evaluate(state, test_set, direction: str = "A2B", backbone=None) -> MetricReport:
    """Translate every test pair and score it against its ground truth at full resolution."""
    from .trainer import infer

    test_set = list(test_set)
    if not test_set:
        raise ValueError("test set is empty")
    backbone = backbone if backbone is not None else RandomConvBackbone()
    a2b = direction.upper() == "A2B"
    records = []
    for pair in test_set:
        source, target = (pair.image_a, pair.image_b) if a2b else (pair.image_b, pair.image_a)
        pred = denormalize(infer(state, source, direction))
        records.append(image_metrics(pair.id, pred, denormalize(target), backbone))
    return MetricReport(tuple(records))


def comparison_table(reports: dict[str, MetricReport]) -> str:
    """Metrics as rows, one column per configuration (like the published tables)."""
    names = list(reports)
    lines = ["\t".join(("metric", *names))]
    for m in METRIC_NAMES:
        lines.append("\t".join([m, *(f"{reports[n].mean(m):.6g}" for n in names)]))
    return "\n".join(lines) + "\n"


# Published dataset-mean scores for the seven compared methods
# (dataset -> metric -> per-method values in METHOD_COLUMNS order).
METHOD_COLUMNS = ("gan", "pix2pix", "dualgan", "cyclegan", "ps2gan", "csgan", "cdgan")
PUBLISHED_SCORES = {
    "cuhk": {
        "ssim": (0.5398, 0.6056, 0.6359, 0.6537, 0.6409, 0.6616, 0.6852),
        "mse": (94.8815, 89.9954, 85.5418, 89.6019, 86.7004, 84.7971, 82.9547),
        "psnr": (28.3628, 28.5989, 28.8351, 28.6351, 28.7779, 28.8693, 28.9801),
        "lpips": (0.157, 0.154, 0.132, 0.099, 0.098, 0.094, 0.090),
    },
    "facades": {
        "ssim": (0.1378, 0.2106, 0.0324, 0.0678, 0.1764, 0.2183, 0.2512),
        "mse": (103.8049, 101.9864, 105.0175, 104.3104, 102.4183, 103.7751, 101.5533),
        "psnr": (27.9706, 28.0569, 27.9187, 27.9849, 28.032, 27.9715, 28.0761),
        "lpips": (0.252, 0.216, 0.259, 0.248, 0.221, 0.22, 0.215),
    },
    "rgb-nir": {
        "ssim": (0.4788, 0.575, -0.0126, 0.5958, 0.597, 0.5825, 0.6265),
        "mse": (101.6426, 100.0377, 105.4514, 98.2278, 97.5769, 98.704, 96.5412),
        "psnr": (28.072, 28.1464, 27.9019, 28.2574, 28.2692, 28.2159, 28.3083),
        "lpips": (0.243, 0.182, 0.295, 0.18, 0.166, 0.178, 0.147),
    },
}


@dataclass(frozen=True)
class ConsistencyRow:
    dataset: str
    method: str
    mse: float
    reported_psnr: float
    computed_psnr: float

    @property
    def gap(self) -> float:
        return abs(self.computed_psnr - self.reported_psnr)


def published_psnr_consistency(psnr_fn=psnr_from_mse) -> list[ConsistencyRow]:
    """Recompute PSNR from each published MSE and pair it with the published PSNR."""
    rows = []
    for dataset, table in PUBLISHED_SCORES.items():
        for method, m, p in zip(METHOD_COLUMNS, table["mse"], table["psnr"]):
            rows.append(ConsistencyRow(dataset, method, m, p, psnr_fn(m)))
    return rows
