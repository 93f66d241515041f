"""Sweep over the ablation presets with shared data and seeds, one metric column each."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import ABLATION_PRESETS, PLUS_BASE, TERM_ORDER, preset
from .metrics import MetricReport, comparison_table, evaluate
from .trainer import TrainConfig, train, with_preset

log = logging.getLogger(__name__)


def run_dirname(name) -> str:
    return preset(name).cli_name.replace("+", "_plus")


def config_difference(a: TrainConfig, b: TrainConfig) -> dict[str, tuple]:
    """Fields that differ between two configs; preset terms are compared term by term."""
    da, db = a.to_dict(), b.to_dict()
    diff = {k: (da[k], db[k]) for k in da if k != "preset" and da[k] != db[k]}
    for term in TERM_ORDER:
        ina, inb = a.preset.is_active(term), b.preset.is_active(term)
        if ina != inb:
            diff[f"term:{term.value}"] = (ina, inb)
    return diff


@dataclass
class AblationResult:
    configs: dict[str, TrainConfig] = field(default_factory=dict)
    reports: dict[str, MetricReport] = field(default_factory=dict)

    def table(self) -> str:
        return comparison_table(self.reports)


def _run_one(cfg: TrainConfig, train_set, test_set, run_dir, direction, backbone):
    result = train(cfg, train_set, run_dir=run_dir)
    report = evaluate(result.state, test_set, direction, backbone)
    if run_dir is not None:
        Path(run_dir, "metrics.tsv").write_text(report.to_tsv())
    return report


def _write_table(out_dir, result: AblationResult):
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "ablation.tsv").write_text(result.table())
        Path(out_dir, "configs.json").write_text(
            json.dumps({k: c.to_dict() for k, c in result.configs.items()}, indent=2) + "\n"
        )


def run_ablation(
    base_cfg: TrainConfig,
    train_set,
    test_set,
    out_dir=None,
    presets=ABLATION_PRESETS,
    direction: str = "A2B",
    backbone=None,
    workers: int = 1,
) -> AblationResult:
    """Train and evaluate each preset; configs differ only in their active terms.

    A failing sub-run stops the sweep after the completed columns have been
    written to ``out_dir/ablation.tsv``.
    """
    train_set, test_set = list(train_set), list(test_set)
    out_dir = Path(out_dir) if out_dir is not None else None
    result = AblationResult()
    for name in presets:
        result.configs[preset(name).cli_name] = with_preset(base_cfg, name)

    def run_dir(name):
        return out_dir / run_dirname(name) if out_dir is not None else None

    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {
                    name: pool.submit(_run_one, cfg, train_set, test_set, run_dir(name), direction, backbone)
                    for name, cfg in result.configs.items()
                }
                for name, fut in futures.items():
                    result.reports[name] = fut.result()
        else:
            for name, cfg in result.configs.items():
                log.info("ablation: training %s", name)
                result.reports[name] = _run_one(cfg, train_set, test_set, run_dir(name), direction, backbone)
    finally:
        _write_table(out_dir, result)
    return result


def plus_pairs(names) -> list[tuple[str, str]]:
    """(base, plus) CLI-name pairs present in ``names``."""
    names = set(names)
    out = []
    for plus, base in PLUS_BASE.items():
        if plus.value in names and base.value in names:
            out.append((base.value, plus.value))
    return out
