"""The ten loss terms and their combination into generator/discriminator objectives.

All reductions are means over elements. Adversarial and cyclic-discriminative
terms use least-squares targets (real -> 1, generated -> 0 for the
discriminator; generated -> 1 for the generator).
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import torch

from .core import TERM_ORDER, LossPreset, LossTerm

T = LossTerm


def _check_same_shape(x, y, what: str):
    if tuple(x.shape) != tuple(y.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")


def lsgan_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    _check_same_shape(d_real, d_fake, "lsgan_d_loss")
    return ((d_real - 1) ** 2).mean() + (d_fake ** 2).mean()


def lsgan_g_loss(d_fake: torch.Tensor) -> torch.Tensor:
    return ((d_fake - 1) ** 2).mean()


def l1_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    _check_same_shape(x, y, "l1_loss")
    return (x - y).abs().mean()


def synthesized_losses(real_a, syn_a, real_b, syn_b):
    return l1_loss(real_a, syn_a), l1_loss(real_b, syn_b)


def cycle_losses(real_a, cyc_a, real_b, cyc_b):
    return l1_loss(real_a, cyc_a), l1_loss(real_b, cyc_b)


def cyclic_synthesized_losses(syn_a, cyc_a, syn_b, cyc_b):
    return l1_loss(syn_a, cyc_a), l1_loss(syn_b, cyc_b)


def cd_d_loss(d_real: torch.Tensor, d_cycled: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss with the cycled image as the fake sample."""
    _check_same_shape(d_real, d_cycled, "cd_d_loss")
    return ((d_real - 1) ** 2).mean() + (d_cycled ** 2).mean()


def cd_g_loss(d_cycled: torch.Tensor) -> torch.Tensor:
    return ((d_cycled - 1) ** 2).mean()


@dataclass
class ForwardBundle:
    """Images from one paired sample plus discriminator scores on them.

    ``d_a_*`` are scores from the domain-A discriminator, ``d_b_*`` from the
    domain-B one. Fields a preset does not need may be left as ``None``.
    """

    real_a: torch.Tensor | None = None
    real_b: torch.Tensor | None = None
    syn_a: torch.Tensor | None = None
    syn_b: torch.Tensor | None = None
    cyc_a: torch.Tensor | None = None
    cyc_b: torch.Tensor | None = None
    d_a_real: torch.Tensor | None = None
    d_a_syn: torch.Tensor | None = None
    d_a_cyc: torch.Tensor | None = None
    d_b_real: torch.Tensor | None = None
    d_b_syn: torch.Tensor | None = None
    d_b_cyc: torch.Tensor | None = None

    def need(self, term: LossTerm, *names: str):
        values = []
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"term {term.name} needs {name!r}, which was not provided")
            values.append(value)
        return values


# Generator-side definition of each term: (loss fn, bundle fields it reads).
_GENERATOR_TERMS = {
    T.ADV_A: (lsgan_g_loss, ("d_a_syn",)),
    T.ADV_B: (lsgan_g_loss, ("d_b_syn",)),
    T.SYN_A: (l1_loss, ("real_a", "syn_a")),
    T.SYN_B: (l1_loss, ("real_b", "syn_b")),
    T.CYC_A: (l1_loss, ("real_a", "cyc_a")),
    T.CYC_B: (l1_loss, ("real_b", "cyc_b")),
    T.CS_A: (l1_loss, ("syn_a", "cyc_a")),
    T.CS_B: (l1_loss, ("syn_b", "cyc_b")),
    T.CD_A: (cd_g_loss, ("d_a_cyc",)),
    T.CD_B: (cd_g_loss, ("d_b_cyc",)),
}


def generator_terms(preset: LossPreset, bundle: ForwardBundle) -> dict[LossTerm, torch.Tensor]:
    """Unweighted value of every active term; inactive terms are absent."""
    terms = {}
    for term in TERM_ORDER:
        if preset.is_active(term):
            fn, names = _GENERATOR_TERMS[term]
            terms[term] = fn(*bundle.need(term, *names))
    return terms


def weighted_total(preset: LossPreset, values: Mapping[LossTerm, float]):
    """Weighted sum of the active generator-side terms in ``values``.

    Works on floats or tensors; inactive terms are skipped even if present.
    """
    total = 0.0
    for term in TERM_ORDER:
        if preset.is_active(term):
            total = total + preset.weights.for_term(term) * values[term]
    return total


def generator_objective(preset: LossPreset, bundle: ForwardBundle):
    terms = generator_terms(preset, bundle)
    return weighted_total(preset, terms), terms


def discriminator_objective(preset: LossPreset, domain: str, d_real, d_syn=None, d_cyc=None):
    """LSGAN loss on synthesized images, plus the cycled-image loss when CD is active."""
    adv, cd = (T.ADV_A, T.CD_A) if domain == "a" else (T.ADV_B, T.CD_B)
    total = 0.0
    if preset.is_active(adv):
        if d_syn is None:
            raise ValueError(f"term {adv.name} needs the synthesized-image scores")
        total = total + lsgan_d_loss(d_real, d_syn)
    if preset.is_active(cd):
        if d_cyc is None:
            raise ValueError(f"term {cd.name} needs the cycled-image scores")
        total = total + cd_d_loss(d_real, d_cyc)
    return total


LOG_COLUMNS: tuple[str, ...] = (
    "step", "epoch", *(t.value for t in TERM_ORDER), "total_generator", "total_d_a", "total_d_b",
)


@dataclass(frozen=True)
class LossReport:
    """Scalar values of every term for one step; inactive terms are 0.

    Serializes to one tab-separated row with columns ``LOG_COLUMNS``:
    step, epoch, the ten term values in fixed order, then the three totals.
    Floats are written with ``repr`` so they read back exactly.
    """

    terms: dict = field(default_factory=dict)
    total_generator: float = 0.0
    total_discriminator_a: float = 0.0
    total_discriminator_b: float = 0.0

    def __getitem__(self, term: LossTerm) -> float:
        return self.terms.get(term, 0.0)

    def values(self) -> dict[str, float]:
        out = {t.value: float(self[t]) for t in TERM_ORDER}
        out["total_generator"] = self.total_generator
        out["total_d_a"] = self.total_discriminator_a
        out["total_d_b"] = self.total_discriminator_b
        return out

    def non_finite(self) -> list[str]:
        return [k for k, v in self.values().items() if not math.isfinite(v)]

    @staticmethod
    def header() -> str:
        return "\t".join(LOG_COLUMNS)

    def to_row(self, step: int, epoch: int) -> str:
        return "\t".join([str(step), str(epoch), *(repr(v) for v in self.values().values())])

    @classmethod
    def from_row(cls, row: str) -> tuple[int, int, LossReport]:
        fields = row.rstrip("\n").split("\t")
        if len(fields) != len(LOG_COLUMNS):
            raise ValueError(f"expected {len(LOG_COLUMNS)} columns, got {len(fields)}")
        step, epoch, *vals = fields
        vals = [float(v) for v in vals]
        terms = dict(zip(TERM_ORDER, vals[:10]))
        return int(step), int(epoch), cls(terms, *vals[10:])


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_objective(preset: LossPreset, bundle: ForwardBundle) -> LossReport:
    """Evaluate every active term of ``preset`` on ``bundle`` and report all totals."""
    total_g, terms = generator_objective(preset, bundle)
    d_a = discriminator_objective(preset, "a", *bundle.need(T.ADV_A, "d_a_real"), bundle.d_a_syn, bundle.d_a_cyc)
    d_b = discriminator_objective(preset, "b", *bundle.need(T.ADV_B, "d_b_real"), bundle.d_b_syn, bundle.d_b_cyc)
    return LossReport(
        terms={t: (_scalar(terms[t]) if t in terms else 0.0) for t in TERM_ORDER},
        total_generator=_scalar(total_g),
        total_discriminator_a=_scalar(d_a),
        total_discriminator_b=_scalar(d_b),
    )
