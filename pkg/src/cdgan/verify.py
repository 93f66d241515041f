"""Acceptance checks, runnable without any dataset (``cdgan verify``).

Each check returns a ``CheckResult``; ``run_checks`` runs a selection of
suites and never raises, so one failure does not hide the others.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import losses as L
from .ablation import config_difference, plus_pairs, run_ablation
from .core import ABLATION_PRESETS, METHOD_PRESETS, PLUS_BASE, TERM_ORDER, ImageTensor, LossTerm, ValueRange, preset, term_matrix
from .data import make_toy_dataset
from .gradcheck import check_gradients
from .metrics import RandomConvBackbone, lpips, mse, psnr, psnr_from_mse, published_psnr_consistency, ssim
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    InstanceNorm,
    LayerKind,
    LayerSpec,
    ResidualBlock,
    build_discriminator,
    build_generator,
    receptive_field,
)
from .trainer import TrainConfig, epoch_means, infer, init_state, lr_at_epoch, train, to_batch

T = LossTerm

ORACLE_TOL = 1e-9
GRAD_TOL = 1e-3
GRAD_SAMPLES = 50
PSNR_TOL_DB = 0.15
SCHEDULE_TOL = 1e-12
CONVERGENCE_RATIO = 0.7

# Tick marks of the loss-presence table, columns in TERM_ORDER
# (LSGAN_A, LSGAN_B, Syn_A, Syn_B, Cyc_A, Cyc_B, CS_A, CS_B, CD_A, CD_B).
PUBLISHED_TICKS = {
    "gan": "1100000000",
    "pix2pix": "1111000000",
    "dualgan": "1100110000",
    "cyclegan": "1100110000",
    "ps2gan": "1111110000",
    "csgan": "1100111100",
    "cdgan": "1111111111",
}


@dataclass(frozen=True)
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


# -- scalar-loop oracles -------------------------------------------------------


def _values(t) -> list[float]:
    return [float(v) for v in t.detach().reshape(-1).tolist()]


def _oracle_sq(scores, target: float) -> float:
    vals = _values(scores)
    s = 0.0
    for v in vals:
        s += (v - target) * (v - target)
    return s / len(vals)


def _oracle_l1(x, y) -> float:
    xs, ys = _values(x), _values(y)
    s = 0.0
    for a, b in zip(xs, ys):
        s += abs(a - b)
    return s / len(xs)


def _random_bundle(rng: np.random.Generator, img_shape=(3, 4, 4), map_shape=(1, 2, 2)) -> L.ForwardBundle:
    def img():
        return torch.from_numpy(rng.uniform(-1, 1, img_shape))

    def score():
        return torch.from_numpy(rng.normal(0.5, 0.7, map_shape))

    return L.ForwardBundle(
        real_a=img(), real_b=img(), syn_a=img(), syn_b=img(), cyc_a=img(), cyc_b=img(),
        d_a_real=score(), d_a_syn=score(), d_a_cyc=score(),
        d_b_real=score(), d_b_syn=score(), d_b_cyc=score(),
    )


def _oracle_terms(b: L.ForwardBundle) -> dict[LossTerm, float]:
    return {
        T.ADV_A: _oracle_sq(b.d_a_syn, 1.0),
        T.ADV_B: _oracle_sq(b.d_b_syn, 1.0),
        T.SYN_A: _oracle_l1(b.real_a, b.syn_a),
        T.SYN_B: _oracle_l1(b.real_b, b.syn_b),
        T.CYC_A: _oracle_l1(b.real_a, b.cyc_a),
        T.CYC_B: _oracle_l1(b.real_b, b.cyc_b),
        T.CS_A: _oracle_l1(b.syn_a, b.cyc_a),
        T.CS_B: _oracle_l1(b.syn_b, b.cyc_b),
        T.CD_A: _oracle_sq(b.d_a_cyc, 1.0),
        T.CD_B: _oracle_sq(b.d_b_cyc, 1.0),
    }


def check_loss_oracles(n_bundles: int = 200, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    cdgan = preset("cdgan")
    worst = 0.0
    for _ in range(n_bundles):
        b = _random_bundle(rng)
        expected = _oracle_terms(b)
        got = L.generator_terms(cdgan, b)
        for term in TERM_ORDER:
            worst = max(worst, abs(float(got[term]) - expected[term]))
        d_checks = [
            (L.lsgan_d_loss(b.d_a_real, b.d_a_syn), _oracle_sq(b.d_a_real, 1) + _oracle_sq(b.d_a_syn, 0)),
            (L.lsgan_d_loss(b.d_b_real, b.d_b_syn), _oracle_sq(b.d_b_real, 1) + _oracle_sq(b.d_b_syn, 0)),
            (L.cd_d_loss(b.d_a_real, b.d_a_cyc), _oracle_sq(b.d_a_real, 1) + _oracle_sq(b.d_a_cyc, 0)),
            (L.cd_d_loss(b.d_b_real, b.d_b_cyc), _oracle_sq(b.d_b_real, 1) + _oracle_sq(b.d_b_cyc, 0)),
        ]
        for value, oracle in d_checks:
            worst = max(worst, abs(float(value) - oracle))
    composite = L.weighted_total(cdgan, {t: 1.0 for t in TERM_ORDER})
    ok = worst <= ORACLE_TOL and composite == 114.0
    return ok, f"max |impl - oracle| = {worst:.2e} over {n_bundles} bundles; unit-term CDGAN total = {composite:g}"


# -- gradients -----------------------------------------------------------------


def _projection(shape, seed):
    return torch.from_numpy(np.random.default_rng(seed).normal(size=shape))


def gradient_cases(seed: int = 0):
    """(label, fn, tensors) triples covering losses, instance norm, one residual block and both networks."""
    rng = np.random.default_rng(seed)
    b = _random_bundle(rng, img_shape=(3, 8, 8), map_shape=(1, 8, 8))
    for name in L.ForwardBundle.__dataclass_fields__:
        getattr(b, name).requires_grad_(True)
    cases = []
    for term, (fn, names) in L._GENERATOR_TERMS.items():
        ts = {n: getattr(b, n) for n in names}
        cases.append((f"loss {term.value}", lambda fn=fn, ts=ts: fn(*ts.values()), ts))
    for label, fn, names in (
        ("loss lsgan_d", L.lsgan_d_loss, ("d_a_real", "d_a_syn")),
        ("loss cd_d", L.cd_d_loss, ("d_b_real", "d_b_cyc")),
    ):
        ts = {n: getattr(b, n) for n in names}
        cases.append((label, lambda fn=fn, ts=ts: fn(*ts.values()), ts))

    torch.manual_seed(seed)
    norm = InstanceNorm(4).double()
    with torch.no_grad():
        norm.weight.uniform_(0.5, 1.5)
        norm.bias.uniform_(-0.5, 0.5)
    x = torch.randn(1, 4, 6, 6, dtype=torch.float64, requires_grad=True)
    proj = _projection((1, 4, 6, 6), seed + 1)
    cases.append(("instance norm", lambda: (norm(x) * proj).sum(), {"input": x, **dict(norm.named_parameters())}))

    block = ResidualBlock(LayerSpec(LayerKind.RESBLOCK, 3, 1, 4), 4).double()
    _init_for_check(block, seed + 2)
    xb = torch.randn(1, 4, 8, 8, dtype=torch.float64, requires_grad=True)
    proj_b = _projection((1, 4, 8, 8), seed + 3)
    cases.append(("residual block", lambda: (block(xb) * proj_b).sum(), {"input": xb, **dict(block.named_parameters())}))

    g, _ = build_generator(GeneratorSpec.test_profile(), seed)
    g.double()
    xg = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
    proj_g = _projection((1, 3, 16, 16), seed + 4)
    cases.append(("TEST generator", lambda: (g(xg) * proj_g).sum(), dict(g.named_parameters())))

    d, _ = build_discriminator(DiscriminatorSpec.test_profile(), seed)
    d.double()
    xd = torch.rand(1, 3, 32, 32, dtype=torch.float64) * 2 - 1
    proj_d = _projection(tuple(d(xd).shape), seed + 5)
    cases.append(("TEST discriminator", lambda: (d(xd) * proj_d).sum(), dict(d.named_parameters())))
    return cases


@torch.no_grad()
def _init_for_check(module, seed):
    gen = torch.Generator().manual_seed(seed)
    for name, p in module.named_parameters():
        if name.endswith("conv.weight"):
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.3)
        else:
            p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 0.5 + (0.75 if "norm.weight" in name else -0.25))


def check_gradients_all(seed: int = 0, n: int = GRAD_SAMPLES) -> tuple[bool, str]:
    worst_label, worst, total = "", 0.0, 0
    for i, (label, fn, tensors) in enumerate(gradient_cases(seed)):
        samples = check_gradients(fn, tensors, n=n, seed=seed + i)
        if len(samples) < n:
            return False, f"{label}: only {len(samples)} entries available"
        total += len(samples)
        err = max(s.rel_error for s in samples)
        if err > worst:
            worst, worst_label = err, label
    return worst <= GRAD_TOL, f"{total} entries, worst relative error {worst:.2e} ({worst_label})"


# -- architecture / init ---------------------------------------------------------


def check_architecture(seed: int = 0) -> tuple[bool, str]:
    g, g_store = build_generator(GeneratorSpec.default(), seed)
    d, _ = build_discriminator(DiscriminatorSpec.default(), seed)
    x = torch.rand(1, 3, 256, 256, generator=torch.Generator().manual_seed(seed)) * 2 - 1
    with torch.no_grad():
        y = g(x)
        s = d(x)
    rf = receptive_field(DiscriminatorSpec.default())
    w = torch.cat([t.detach().reshape(-1).double() for t in g_store.conv_weights().values()])
    mean, std = float(w.mean()), float(w.std())
    ok = (
        tuple(y.shape[1:]) == (3, 256, 256)
        and float(y.min()) >= -1 and float(y.max()) <= 1
        and tuple(s.shape[1:]) == (1, 30, 30)
        and rf == 70
        and w.numel() >= 100_000 and abs(mean) < 1e-3 and 0.019 <= std <= 0.021
    )
    detail = (
        f"G {tuple(x.shape[1:])}->{tuple(y.shape[1:])} range [{float(y.min()):.3f}, {float(y.max()):.3f}]; "
        f"D ->{tuple(s.shape[1:])}; RF {rf}; init mean {mean:.1e} std {std:.5f} over {w.numel()} weights"
    )
    return ok, detail


def check_schedule() -> tuple[bool, str]:
    cfg = TrainConfig()
    errors = [abs(lr_at_epoch(cfg, e) - 2e-4) for e in range(100)]
    errors.append(abs(lr_at_epoch(cfg, 150) - 1e-4))
    errors.append(abs(lr_at_epoch(cfg, 200) - 0.0))
    # linear on the decay segment: equal decrements per epoch
    steps = np.diff([lr_at_epoch(cfg, e) for e in range(100, 201)])
    errors.append(float(np.max(np.abs(steps + 2e-6))))
    worst = max(errors)
    return worst <= SCHEDULE_TOL, f"max deviation {worst:.1e}"


def check_published_psnr(psnr_fn=psnr_from_mse) -> tuple[bool, str]:
    rows = published_psnr_consistency(psnr_fn)
    worst = max(rows, key=lambda r: r.gap)
    anchors = {(r.dataset, r.method): r for r in rows}
    a1, a2 = anchors[("cuhk", "gan")], anchors[("cuhk", "cdgan")]
    ok = len(rows) == 21 and worst.gap <= PSNR_TOL_DB
    detail = (
        f"{len(rows)} cells, worst gap {worst.gap:.3f} dB ({worst.dataset}/{worst.method}); "
        f"anchors {a1.mse}->{a1.computed_psnr:.2f} vs {a1.reported_psnr}, {a2.mse}->{a2.computed_psnr:.2f} vs {a2.reported_psnr}"
    )
    return ok, detail


def anticorrelated_pair(size: int = 32, seed: int = 0):
    """Two images with identical means whose zero-mean textures are negatives of each other."""
    tex = np.random.default_rng(seed).uniform(-60, 60, (3, size, size))
    return ImageTensor(128 + tex, ValueRange.BYTE), ImageTensor(128 - tex, ValueRange.BYTE)


def check_metric_axioms(seed: int = 0, n_pairs: int = 20) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    backbone = RandomConvBackbone(seed)
    failures = []
    for _ in range(5):
        x = ImageTensor(rng.uniform(0, 255, (3, 32, 32)), ValueRange.BYTE)
        y = ImageTensor(rng.uniform(0, 255, (3, 32, 32)), ValueRange.BYTE)
        if abs(ssim(x, x) - 1.0) > 1e-12:
            failures.append("ssim(x,x)")
        if mse(x, x) != 0 or lpips(x, x, backbone) != 0:
            failures.append("mse/lpips(x,x)")
        if abs(ssim(x, y) - ssim(y, x)) > 1e-9:
            failures.append("ssim symmetry")
    base = rng.uniform(0, 255, (3, 32, 32))
    pairs = []
    for _ in range(n_pairs):
        noisy = np.clip(base + rng.normal(0, rng.uniform(1, 40), base.shape), 0, 255)
        pairs.append((mse(base, noisy), psnr(base, noisy)))
    pairs.sort()
    if any(p1 <= p2 for (_, p1), (_, p2) in zip(pairs, pairs[1:])):
        failures.append("psnr not strictly decreasing in mse")
    neg = ssim(*anticorrelated_pair(seed=seed))
    if not neg < 0:
        failures.append("anti-correlated ssim not negative")
    return not failures, f"anti-correlated SSIM {neg:.3f}" + (f"; failed: {', '.join(failures)}" if failures else "")


def check_presets() -> tuple[bool, str]:
    matrix = term_matrix(METHOD_PRESETS)
    expected = {k: tuple(c == "1" for c in v) for k, v in PUBLISHED_TICKS.items()}
    bad = [k for k in expected if matrix.get(k) != expected[k]]
    cd = {T.CD_A, T.CD_B}
    for plus, base in PLUS_BASE.items():
        if preset(plus).active_terms != preset(base).active_terms | cd:
            bad.append(plus.value)
    rows = "; ".join(f"{k}={''.join('1' if b else '0' for b in v)}" for k, v in term_matrix().items())
    return not bad, rows + (f"; mismatched: {bad}" if bad else "")


# -- end-to-end ----------------------------------------------------------------


def held_out_l1(state, pairs) -> float:
    return float(np.mean([
        float(L.l1_loss(to_batch(infer(state, p.image_a)), to_batch(p.image_b))) for p in pairs
    ]))


def toy_config(epochs: int, seed: int = 0, **kw) -> TrainConfig:
    return TrainConfig(epochs_total=epochs, epochs_constant_lr=epochs, seed=seed, network_profile="test", **kw)


def check_convergence(seed: int = 0, epochs: int = 5) -> tuple[bool, str]:
    train_set = make_toy_dataset(64, 64, seed)
    held_out = make_toy_dataset(16, 64, seed + 1)
    cfg = toy_config(epochs, seed)
    before = held_out_l1(init_state(cfg), held_out)
    result = train(cfg, train_set)
    means = epoch_means(result.log)
    first, last = means[0], means[epochs - 1]
    after = held_out_l1(result.state, held_out)
    ok = len(result.log) == 64 * epochs and last <= CONVERGENCE_RATIO * first and after < before
    return ok, (
        f"{len(result.log)} steps; mean G objective epoch 1 {first:.3f} -> epoch {epochs} {last:.3f} "
        f"(ratio {last / first:.3f}, need <= {CONVERGENCE_RATIO}); held-out L1(Syn_B, Real_B) {before:.4f} -> {after:.4f}"
    )


def check_determinism_and_resume(seed: int = 0) -> tuple[bool, str]:
    data = make_toy_dataset(6, 32, seed)
    cfg = toy_config(3, seed, checkpoint_every=1)
    run1 = train(cfg, data).log
    run2 = train(cfg, data).log
    same = [e.report for e in run1] == [e.report for e in run2]
    with tempfile.TemporaryDirectory() as tmp:
        train(cfg, data, run_dir=tmp, stop_after_epoch=1)
        resumed = train(cfg, data, run_dir=tmp, resume=True).log
    resume_ok = [(e.step, e.report) for e in resumed] == [(e.step, e.report) for e in run1]
    return same and resume_ok, (
        f"{len(run1)} logged steps; repeat run identical: {same}; resume after epoch 1 identical: {resume_ok}"
    )


def check_ablation(seed: int = 0) -> tuple[bool, str]:
    train_set = make_toy_dataset(4, 32, seed)
    test_set = make_toy_dataset(2, 32, seed + 1)
    with tempfile.TemporaryDirectory() as tmp:
        result = run_ablation(toy_config(1, seed), train_set, test_set, out_dir=tmp)
        header = open(f"{tmp}/ablation.tsv").readline().rstrip("\n").split("\t")
    columns = header[1:]
    expected_cols = [preset(p).cli_name for p in ABLATION_PRESETS]
    diffs = {
        plus: set(config_difference(result.configs[base], result.configs[plus]))
        for base, plus in plus_pairs(result.configs)
    }
    only_cd = all(d == {"term:cd_a", "term:cd_b"} for d in diffs.values())
    ok = columns == expected_cols and len(diffs) == 4 and only_cd
    return ok, f"columns {columns}; '+' vs base differ only in CD terms: {only_cd}"


SUITES = {
    "losses": (1, "loss-oracle equivalence", check_loss_oracles),
    "gradients": (2, "gradient verification", check_gradients_all),
    "architecture": (3, "architecture and init", check_architecture),
    "schedule": (4, "learning-rate schedule", check_schedule),
    "table": (5, "published MSE/PSNR consistency", check_published_psnr),
    "metrics": (6, "metric axioms", check_metric_axioms),
    "presets": (7, "preset fidelity", check_presets),
    "convergence": (8, "toy end-to-end convergence", check_convergence),
    "determinism": (9, "determinism and resume", check_determinism_and_resume),
    "ablation": (10, "ablation harness", check_ablation),
}


def run_check(suite: str) -> CheckResult:
    number, name, fn = SUITES[suite]
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # reported as a failed criterion
        ok, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CheckResult(number, name, bool(ok), detail, time.perf_counter() - t0)


def run_checks(only=None, echo=None) -> list[CheckResult]:
    suites = list(SUITES) if not only else list(only)
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
    results = []
    for s in suites:
        r = run_check(s)
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results
