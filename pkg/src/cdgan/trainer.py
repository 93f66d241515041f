"""Training loop: forward cycle, alternating Adam updates, LR schedule, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import load_archive, load_into_store, save_archive
from .core import ImageTensor, LossPreset, LossTerm, LossWeights, PairedSample, ValueRange, preset
from .data import save_grid
from .losses import (
    ForwardBundle,
    LossReport,
    discriminator_objective,
    generator_objective,
)
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    NetworkSpecs,
    ParameterStore,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

NETWORKS = ("g_ab", "g_ba", "d_a", "d_b")
CHECKPOINT_KIND = "cdgan-train-state"


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    preset: LossPreset = field(default_factory=lambda: preset("cdgan"))
    epochs_total: int = 200
    epochs_constant_lr: int = 100
    base_lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    seed: int = 0
    checkpoint_every: int = 10  # epochs; 0 keeps only the final checkpoint
    network_profile: str = "test"
    pool_size: int = 0  # history buffer of generated images for D updates; 0 disables
    sample_every: int = 0  # epochs between sample grids; 0 disables

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("training uses batch size 1")
        if not 0 <= self.epochs_constant_lr <= self.epochs_total:
            raise ValueError("need 0 <= epochs_constant_lr <= epochs_total")
        if self.epochs_total < 1:
            raise ValueError("epochs_total must be >= 1")
        if self.network_profile not in ("full", "test"):
            raise ValueError(f"network_profile must be 'full' or 'test', got {self.network_profile!r}")
        if self.base_lr < 0 or self.pool_size < 0 or self.checkpoint_every < 0:
            raise ValueError("base_lr, pool_size and checkpoint_every must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["preset"] = self.preset.cli_name
        d["weights"] = asdict(self.preset.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        weights = LossWeights(**d.pop("weights", {}))
        d["preset"] = preset(d.get("preset", "cdgan"), weights)
        return cls(**d)


def lr_schedule(cfg: TrainConfig, epoch: float) -> float:
    """Constant ``base_lr`` until ``epochs_constant_lr``, then linear to 0 at ``epochs_total``."""
    if epoch < cfg.epochs_constant_lr:
        return cfg.base_lr
    span = cfg.epochs_total - cfg.epochs_constant_lr
    return cfg.base_lr * (cfg.epochs_total - epoch) / span


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Schedule value for a whole epoch index; ``epochs_total`` itself gives the final 0."""
    if not 0 <= epoch <= cfg.epochs_total:
        raise ValueError(f"epoch {epoch} outside schedule [0, {cfg.epochs_total}]")
    return lr_schedule(cfg, epoch)


class ImagePool:
    """History of generated images; with probability 1/2 a query swaps in an older one."""

    def __init__(self, size: int):
        self.size = size
        self.images: list[torch.Tensor] = []

    def query(self, image: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
        if self.size == 0:
            return image
        image = image.detach().clone()
        if len(self.images) < self.size:
            self.images.append(image)
            return image
        if rng.random() < 0.5:
            idx = int(rng.integers(0, self.size))
            old, self.images[idx] = self.images[idx], image
            return old
        return image


@dataclass
class TrainState:
    g_ab: nn.Module
    g_ba: nn.Module
    d_a: nn.Module
    d_b: nn.Module
    optimizers: dict
    rng: np.random.Generator
    epoch: int = 0  # completed epochs
    step: int = 0
    pools: dict = field(default_factory=dict)

    def network(self, name: str) -> nn.Module:
        return getattr(self, name)

    def store(self, name: str) -> ParameterStore:
        return ParameterStore.from_module(self.network(name))

    def checksums(self) -> dict[str, str]:
        return {n: self.store(n).checksum() for n in NETWORKS}


def _make_optimizer(net: nn.Module, cfg: TrainConfig):
    return torch.optim.Adam(
        net.parameters(), lr=cfg.base_lr, betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps, foreach=False,
    )


def init_state(cfg: TrainConfig, specs: NetworkSpecs | None = None) -> TrainState:
    """Fresh networks; the four networks use seeds ``seed .. seed+3``."""
    specs = specs or NetworkSpecs.for_profile(cfg.network_profile)
    g_ab, _ = build_generator(specs.generator, cfg.seed)
    g_ba, _ = build_generator(specs.generator, cfg.seed + 1)
    d_a, _ = build_discriminator(specs.discriminator, cfg.seed + 2)
    d_b, _ = build_discriminator(specs.discriminator, cfg.seed + 3)
    nets = {"g_ab": g_ab, "g_ba": g_ba, "d_a": d_a, "d_b": d_b}
    return TrainState(
        **nets,
        optimizers={n: _make_optimizer(m, cfg) for n, m in nets.items()},
        rng=np.random.default_rng(cfg.seed),
        pools={"a": ImagePool(cfg.pool_size), "b": ImagePool(cfg.pool_size)},
    )


def _param_dtype(net: nn.Module) -> torch.dtype:
    p = next(net.parameters(), None)
    return p.dtype if p is not None else torch.float32


def to_batch(img, like: nn.Module | None = None) -> torch.Tensor:
    """(C, H, W) ImageTensor / array -> (1, C, H, W) tensor in the network's dtype."""
    if isinstance(img, ImageTensor):
        img = img.data
    t = img if isinstance(img, torch.Tensor) else torch.from_numpy(np.array(img))
    if t.dim() == 3:
        t = t.unsqueeze(0)
    return t.to(_param_dtype(like) if like is not None else torch.float32)


def forward_cycle(state: TrainState, pair: PairedSample) -> ForwardBundle:
    """syn_b = G_AB(a), syn_a = G_BA(b), cyc_a = G_BA(syn_b), cyc_b = G_AB(syn_a)."""
    real_a = to_batch(pair.image_a, state.g_ab)
    real_b = to_batch(pair.image_b, state.g_ab)
    syn_b = state.g_ab(real_a)
    syn_a = state.g_ba(real_b)
    cyc_a = state.g_ba(syn_b)
    cyc_b = state.g_ab(syn_a)
    return ForwardBundle(real_a=real_a, real_b=real_b, syn_a=syn_a, syn_b=syn_b, cyc_a=cyc_a, cyc_b=cyc_b)


def _check_finite(values: dict[str, float]):
    for name, v in values.items():
        if not math.isfinite(v):
            raise NonFiniteLossError(f"non-finite loss in term {name!r}: {v}")


def _set_lr(state: TrainState, lr: float):
    for opt in state.optimizers.values():
        for group in opt.param_groups:
            group["lr"] = lr


def generator_update(state: TrainState, bundle: ForwardBundle, cfg: TrainConfig):
    """One Adam step on both generators; discriminators are frozen but not detached from the graph."""
    p = cfg.preset
    for d in (state.d_a, state.d_b):
        d.requires_grad_(False)
    try:
        bundle.d_a_syn = state.d_a(bundle.syn_a)
        bundle.d_b_syn = state.d_b(bundle.syn_b)
        if p.is_active(LossTerm.CD_A):
            bundle.d_a_cyc = state.d_a(bundle.cyc_a)
        if p.is_active(LossTerm.CD_B):
            bundle.d_b_cyc = state.d_b(bundle.cyc_b)
        total, terms = generator_objective(p, bundle)
    finally:
        for d in (state.d_a, state.d_b):
            d.requires_grad_(True)
    values = {t.value: float(v.detach()) for t, v in terms.items()}
    _check_finite({**values, "total_generator": float(total.detach())})
    for name in ("g_ab", "g_ba"):
        state.optimizers[name].zero_grad(set_to_none=True)
    total.backward()
    for name in ("g_ab", "g_ba"):
        state.optimizers[name].step()
        state.optimizers[name].zero_grad(set_to_none=True)
    return float(total.detach()), {t: float(v.detach()) for t, v in terms.items()}


def discriminator_update(state: TrainState, bundle: ForwardBundle, cfg: TrainConfig, domain: str) -> float:
    """One Adam step on D_A or D_B with generated inputs detached."""
    p = cfg.preset
    net = state.d_a if domain == "a" else state.d_b
    real = bundle.real_a if domain == "a" else bundle.real_b
    syn = (bundle.syn_a if domain == "a" else bundle.syn_b).detach()
    cyc = (bundle.cyc_a if domain == "a" else bundle.cyc_b).detach()
    pool = state.pools.get(domain)
    if pool is not None:
        syn = pool.query(syn, state.rng)
    cd_term = LossTerm.CD_A if domain == "a" else LossTerm.CD_B
    d_cyc = net(cyc) if p.is_active(cd_term) else None
    loss = discriminator_objective(p, domain, net(real), net(syn), d_cyc)
    value = float(loss.detach())
    _check_finite({f"total_d_{domain}": value})
    opt = state.optimizers[f"d_{domain}"]
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    return value


def train_step(state: TrainState, pair: PairedSample, cfg: TrainConfig) -> LossReport:
    """Generators first, then D_A, then D_B; returns the step's full report."""
    _set_lr(state, lr_at_epoch(cfg, state.epoch))
    bundle = forward_cycle(state, pair)
    total_g, terms = generator_update(state, bundle, cfg)
    d_a = discriminator_update(state, bundle, cfg, "a")
    d_b = discriminator_update(state, bundle, cfg, "b")
    state.step += 1
    return LossReport(
        terms={t: terms.get(t, 0.0) for t in LossTerm},
        total_generator=total_g,
        total_discriminator_a=d_a,
        total_discriminator_b=d_b,
    )


@torch.no_grad()
def infer(state: TrainState, img: ImageTensor, direction: str = "A2B") -> ImageTensor:
    """Translate one image with G_AB (``A2B``) or G_BA (``B2A``)."""
    direction = direction.upper()
    if direction not in ("A2B", "B2A"):
        raise ValueError(f"direction must be 'A2B' or 'B2A', got {direction!r}")
    net = state.g_ab if direction == "A2B" else state.g_ba
    out = net(to_batch(img, net))[0].cpu().numpy()
    return ImageTensor(np.clip(out, -1.0, 1.0), ValueRange.SIGNED_UNIT)


# -- checkpoints -----------------------------------------------------------


def save_state(state: TrainState, cfg: TrainConfig, path, specs: NetworkSpecs | None = None) -> Path:
    specs = specs or NetworkSpecs(state.g_ab.spec, state.d_a.spec)
    tensors, adam_steps = {}, {}
    for name in NETWORKS:
        net, opt = state.network(name), state.optimizers[name]
        adam_steps[name] = 0
        for pname, param in net.named_parameters():
            tensors[f"{name}/param/{pname}"] = param
            st = opt.state.get(param)
            if st:
                tensors[f"{name}/adam/exp_avg/{pname}"] = st["exp_avg"]
                tensors[f"{name}/adam/exp_avg_sq/{pname}"] = st["exp_avg_sq"]
                adam_steps[name] = int(st["step"])
    pool_sizes = {}
    for domain, pool in state.pools.items():
        pool_sizes[domain] = len(pool.images)
        for i, img in enumerate(pool.images):
            tensors[f"pool/{domain}/{i}"] = img
    meta = {
        "kind": CHECKPOINT_KIND,
        "config": cfg.to_dict(),
        "generator_spec": specs.generator.to_dict(),
        "discriminator_spec": specs.discriminator.to_dict(),
        "seed": cfg.seed,
        "epoch": state.epoch,
        "step": state.step,
        "adam_steps": adam_steps,
        "pool_sizes": pool_sizes,
        "rng_state": state.rng.bit_generator.state,
    }
    return save_archive(path, tensors, meta)


def load_state(path) -> tuple[TrainState, TrainConfig]:
    tensors, meta = load_archive(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a training checkpoint")
    cfg = TrainConfig.from_dict(meta["config"])
    specs = NetworkSpecs(
        GeneratorSpec.from_dict(meta["generator_spec"]),
        DiscriminatorSpec.from_dict(meta["discriminator_spec"]),
    )
    state = init_state(cfg, specs)
    for name in NETWORKS:
        net, opt = state.network(name), state.optimizers[name]
        load_into_store(ParameterStore.from_module(net), tensors, prefix=f"{name}/param/")
        n_steps = meta["adam_steps"][name]
        if n_steps:
            for pname, param in net.named_parameters():
                opt.state[param] = {
                    "step": torch.tensor(float(n_steps)),
                    "exp_avg": torch.from_numpy(tensors[f"{name}/adam/exp_avg/{pname}"]).clone(),
                    "exp_avg_sq": torch.from_numpy(tensors[f"{name}/adam/exp_avg_sq/{pname}"]).clone(),
                }
    for domain, n in meta.get("pool_sizes", {}).items():
        state.pools[domain].images = [torch.from_numpy(tensors[f"pool/{domain}/{i}"]) for i in range(n)]
    state.rng.bit_generator.state = meta["rng_state"]
    state.epoch, state.step = meta["epoch"], meta["step"]
    return state, cfg


def latest_checkpoint(run_dir) -> Path | None:
    ckpts = sorted(Path(run_dir, "checkpoints").glob("epoch_*.ckpt"))
    return ckpts[-1] if ckpts else None


# -- loop ------------------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    step: int
    epoch: int
    report: LossReport


def read_log(path) -> list[LogEntry]:
    lines = Path(path).read_text().splitlines()
    return [LogEntry(*LossReport.from_row(line)) for line in lines[1:] if line.strip()]


def write_log(path, entries) -> None:
    with open(path, "w") as f:
        f.write(LossReport.header() + "\n")
        for e in entries:
            f.write(e.report.to_row(e.step, e.epoch) + "\n")


def epoch_means(entries, key: str = "total_generator") -> dict[int, float]:
    by_epoch: dict[int, list[float]] = {}
    for e in entries:
        by_epoch.setdefault(e.epoch, []).append(e.report.values()[key])
    return {k: float(np.mean(v)) for k, v in sorted(by_epoch.items())}


def _sample_grid(state: TrainState, pair: PairedSample, path: Path):
    with torch.no_grad():
        b = forward_cycle(state, pair)
    rows = [
        [b.real_a, b.syn_b, b.cyc_a],
        [b.real_b, b.syn_a, b.cyc_b],
    ]
    save_grid([[t[0].clamp(-1, 1).numpy() for t in row] for row in rows], path)


@dataclass
class TrainResult:
    state: TrainState
    log: list[LogEntry]


def train(
    cfg: TrainConfig,
    dataset,
    run_dir=None,
    resume: bool = False,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Run ``epochs_total`` epochs over ``dataset`` in order, one step per pair.

    With ``run_dir`` the run writes ``config.json``, ``train_log.tsv``,
    ``checkpoints/epoch_NNNN.ckpt`` and ``samples/epoch_NNNN.png``.
    ``resume`` continues from the newest checkpoint there, discarding log
    rows written after it. ``stop_after_epoch`` ends the call early (as if
    interrupted) once that many epochs have completed.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    entries: list[LogEntry] = []
    state = None
    if run_dir is not None:
        for sub in ("checkpoints", "samples"):
            (run_dir / sub).mkdir(parents=True, exist_ok=True)
        ckpt = latest_checkpoint(run_dir) if resume else None
        if ckpt is not None:
            state, saved_cfg = load_state(ckpt)
            if saved_cfg.to_dict() != cfg.to_dict():
                raise ValueError(f"config differs from the one stored in {ckpt}")
            log_path = run_dir / "train_log.tsv"
            if log_path.exists():
                entries = [e for e in read_log(log_path) if e.step <= state.step]
            log.info("resumed from %s at epoch %d, step %d", ckpt, state.epoch, state.step)
        (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
        write_log(run_dir / "train_log.tsv", entries)
    if state is None:
        state = init_state(cfg)

    log_file = open(run_dir / "train_log.tsv", "a") if run_dir is not None else None
    try:
        last = cfg.epochs_total if stop_after_epoch is None else min(stop_after_epoch, cfg.epochs_total)
        while state.epoch < last:
            epoch = state.epoch
            for pair in dataset:
                report = train_step(state, pair, cfg)
                entry = LogEntry(state.step, epoch, report)
                entries.append(entry)
                if log_file is not None:
                    log_file.write(report.to_row(entry.step, epoch) + "\n")
            state.epoch = epoch + 1
            if log_file is not None:
                log_file.flush()
            if run_dir is not None:
                done = state.epoch == cfg.epochs_total
                if done or (cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0):
                    save_state(state, cfg, run_dir / "checkpoints" / f"epoch_{state.epoch:04d}.ckpt")
                if cfg.sample_every and (done or state.epoch % cfg.sample_every == 0):
                    _sample_grid(state, dataset[0], run_dir / "samples" / f"epoch_{state.epoch:04d}.png")
            log.info("epoch %d: mean generator objective %.4f", epoch,
                     np.mean([e.report.total_generator for e in entries if e.epoch == epoch]))
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(state, entries)


def with_preset(cfg: TrainConfig, name) -> TrainConfig:
    return replace(cfg, preset=preset(name, cfg.preset.weights))
