"""Shared image types, pixel-range conversion and the loss-preset registry."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class ValueRange(enum.Enum):
    SIGNED_UNIT = "signed_unit"  # [-1, 1], network side
    BYTE = "byte"  # [0, 255], metric side

    @property
    def bounds(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self is ValueRange.SIGNED_UNIT else (0.0, 255.0)


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """A single (C, H, W) image tagged with the range its values live in."""

    data: np.ndarray
    value_range: ValueRange = ValueRange.SIGNED_UNIT

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected a (C, H, W) array, got shape {data.shape}")
        c, h, w = data.shape
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if h < 1 or w < 1:
            raise ValueError(f"empty spatial extent {h}x{w}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        lo, hi = self.value_range.bounds
        if data.size and (not np.isfinite(data).all() or data.min() < lo or data.max() > hi):
            raise ValueError(
                f"values [{data.min()}, {data.max()}] outside {self.value_range.name} range [{lo}, {hi}]"
            )
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def to_rgb(self) -> ImageTensor:
        if self.channels == 3:
            return self
        return ImageTensor(np.repeat(self.data, 3, axis=0), self.value_range)

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.value_range is other.value_range and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class PairedSample:
    image_a: ImageTensor
    image_b: ImageTensor
    id: str

    def __post_init__(self):
        if self.image_a.shape[1:] != self.image_b.shape[1:]:
            raise ValueError(
                f"pair {self.id!r}: spatial sizes differ {self.image_a.shape[1:]} vs {self.image_b.shape[1:]}"
            )


# Number of pixels clamped by denormalize since import (or the last reset).
_clamp_count = 0


def clamp_count() -> int:
    return _clamp_count


def reset_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


def normalize(img: ImageTensor) -> ImageTensor:
    """Map a BYTE image to SIGNED_UNIT via ``x / 127.5 - 1``."""
    if img.value_range is not ValueRange.BYTE:
        raise ValueError(f"normalize expects a BYTE image, got {img.value_range.name}")
    return ImageTensor(img.data / 127.5 - 1.0, ValueRange.SIGNED_UNIT)


def denormalize(img: ImageTensor | np.ndarray) -> ImageTensor:
    """Map SIGNED_UNIT values back to [0, 255].

    Accepts a raw array too, since generator outputs may overshoot by float
    rounding. Out-of-range pixels are clamped and counted in ``clamp_count()``.
    """
    global _clamp_count
    if isinstance(img, ImageTensor):
        if img.value_range is not ValueRange.SIGNED_UNIT:
            raise ValueError(f"denormalize expects a SIGNED_UNIT image, got {img.value_range.name}")
        data = img.data
    else:
        data = np.asarray(img, dtype=np.float64)
    out = (data + 1.0) * 127.5
    clipped = int(np.count_nonzero((out < 0.0) | (out > 255.0)))
    if clipped:
        _clamp_count += clipped
        log.warning("denormalize clamped %d out-of-range pixels", clipped)
        out = np.clip(out, 0.0, 255.0)
    return ImageTensor(out, ValueRange.BYTE)


class LossTerm(enum.Enum):
    ADV_A = "adv_a"
    ADV_B = "adv_b"
    SYN_A = "syn_a"
    SYN_B = "syn_b"
    CYC_A = "cyc_a"
    CYC_B = "cyc_b"
    CS_A = "cs_a"
    CS_B = "cs_b"
    CD_A = "cd_a"
    CD_B = "cd_b"


# Column order used for every serialized term vector.
TERM_ORDER: tuple[LossTerm, ...] = tuple(LossTerm)


@dataclass(frozen=True)
class LossWeights:
    mu_a: float = 15.0
    mu_b: float = 15.0
    lambda_a: float = 10.0
    lambda_b: float = 10.0
    omega_a: float = 30.0
    omega_b: float = 30.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value >= 0:
                raise ValueError(f"weight {name} must be >= 0, got {value}")

    def scaled(self, factor: float) -> LossWeights:
        return LossWeights(**{k: v * factor for k, v in self.__dict__.items()})

    def for_term(self, term: LossTerm) -> float:
        """Multiplier applied to ``term`` in the generator objective."""
        return {
            LossTerm.SYN_A: self.mu_a,
            LossTerm.SYN_B: self.mu_b,
            LossTerm.CYC_A: self.lambda_a,
            LossTerm.CYC_B: self.lambda_b,
            LossTerm.CS_A: self.omega_a,
            LossTerm.CS_B: self.omega_b,
        }.get(term, 1.0)


class PresetName(enum.Enum):
    GAN = "gan"
    PIX2PIX = "pix2pix"
    DUALGAN = "dualgan"
    CYCLEGAN = "cyclegan"
    PS2GAN = "ps2gan"
    CSGAN = "csgan"
    CDGAN = "cdgan"
    DUALGAN_PLUS = "dualgan+"
    CYCLEGAN_PLUS = "cyclegan+"
    PS2GAN_PLUS = "ps2gan+"
    CSGAN_PLUS = "csgan+"


@dataclass(frozen=True)
class LossPreset:
    name: PresetName
    active_terms: frozenset
    weights: LossWeights = field(default_factory=LossWeights)

    def is_active(self, term: LossTerm) -> bool:
        return term in self.active_terms

    def term_vector(self) -> tuple[bool, ...]:
        return tuple(t in self.active_terms for t in TERM_ORDER)

    @property
    def cli_name(self) -> str:
        return self.name.value


T = LossTerm
_ADV = {T.ADV_A, T.ADV_B}
_SYN = {T.SYN_A, T.SYN_B}
_CYC = {T.CYC_A, T.CYC_B}
_CS = {T.CS_A, T.CS_B}
_CD = {T.CD_A, T.CD_B}

_BASE_TERMS: dict[PresetName, frozenset] = {
    PresetName.GAN: frozenset(_ADV),
    PresetName.PIX2PIX: frozenset(_ADV | _SYN),
    PresetName.DUALGAN: frozenset(_ADV | _CYC),
    PresetName.CYCLEGAN: frozenset(_ADV | _CYC),
    PresetName.PS2GAN: frozenset(_ADV | _SYN | _CYC),
    PresetName.CSGAN: frozenset(_ADV | _CYC | _CS),
    PresetName.CDGAN: frozenset(_ADV | _SYN | _CYC | _CS | _CD),
}

# "+" variants add the cyclic-discriminative pair to their base method.
PLUS_BASE: dict[PresetName, PresetName] = {
    PresetName.DUALGAN_PLUS: PresetName.DUALGAN,
    PresetName.CYCLEGAN_PLUS: PresetName.CYCLEGAN,
    PresetName.PS2GAN_PLUS: PresetName.PS2GAN,
    PresetName.CSGAN_PLUS: PresetName.CSGAN,
}

METHOD_PRESETS: tuple[PresetName, ...] = tuple(_BASE_TERMS)

ABLATION_PRESETS: tuple[PresetName, ...] = (
    PresetName.DUALGAN,
    PresetName.DUALGAN_PLUS,
    PresetName.CYCLEGAN,
    PresetName.CYCLEGAN_PLUS,
    PresetName.PS2GAN,
    PresetName.PS2GAN_PLUS,
    PresetName.CSGAN,
    PresetName.CSGAN_PLUS,
    PresetName.CDGAN,
)


def _resolve_name(name) -> PresetName:
    if isinstance(name, PresetName):
        return name
    key = str(name).strip()
    for member in PresetName:
        if key.lower() == member.value or key.upper() == member.name:
            return member
    raise KeyError(f"unknown preset {name!r}; choose from {[m.value for m in PresetName]}")


def preset(name, weights: LossWeights | None = None) -> LossPreset:
    """Look up a preset by enum member, enum name (``CSGAN_PLUS``) or CLI string (``csgan+``)."""
    member = _resolve_name(name)
    if member in PLUS_BASE:
        terms = _BASE_TERMS[PLUS_BASE[member]] | _CD
    else:
        terms = _BASE_TERMS[member]
    return LossPreset(member, frozenset(terms), weights or LossWeights())


def term_matrix(names=tuple(PresetName)) -> dict[str, tuple[bool, ...]]:
    """Boolean presence rows keyed by CLI name, columns in ``TERM_ORDER``."""
    return {preset(n).cli_name: preset(n).term_vector() for n in names}
