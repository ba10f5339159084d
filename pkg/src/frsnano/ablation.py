"""Paired multi-seed comparison of the detector variants."""

from __future__ import annotations

import dataclasses
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .detector import Dataset, FrsNano, FrsNanoConfig, TrainConfig, Upsampler, evaluate_model, fit
from .metrics import EvalReport

# name -> (use_mcea, upsampler)
VARIANTS: Dict[str, Tuple[bool, Upsampler]] = {
    "baseline": (False, Upsampler.BILINEAR),
    "+MCEA": (True, Upsampler.BILINEAR),
    "+DySample": (False, Upsampler.DYSAMPLE),
    "+MCEA+DySample": (True, Upsampler.DYSAMPLE),
}
METRICS = ("map50", "map50_95", "precision", "recall")


def variant_config(base: FrsNanoConfig, name: str) -> FrsNanoConfig:
    use_mcea, upsampler = VARIANTS[name]
    return dataclasses.replace(base, use_mcea=use_mcea, upsampler=upsampler)


@dataclass
class AblationTable:
    seeds: List[int]
    reports: Dict[str, Dict[int, EvalReport]] = field(default_factory=dict)

    def values(self, variant: str, metric: str) -> List[float]:
        return [getattr(self.reports[variant][s], metric) for s in self.seeds]

    def median(self, variant: str, metric: str) -> float:
        return statistics.median(self.values(variant, metric))

    def delta(self, variant: str, metric: str = "map50", reference: str = "baseline") -> float:
        """Median of ``variant`` minus median of ``reference``."""
        return self.median(variant, metric) - self.median(reference, metric)

    def paired_deltas(self, variant: str, metric: str = "map50", reference: str = "baseline") -> List[float]:
        return [a - b for a, b in zip(self.values(variant, metric), self.values(reference, metric))]

    def to_text(self) -> str:
        head = ["variant"] + [f"med_{m}" for m in METRICS] + ["delta_map50"] + [f"map50@s{s}" for s in self.seeds]
        lines = ["\t".join(head)]
        for v in self.reports:
            row = [v] + [f"{self.median(v, m):.5f}" for m in METRICS]
            row.append(f"{self.delta(v):+.5f}" if "baseline" in self.reports else "nan")
            row += [f"{x:.5f}" for x in self.values(v, "map50")]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def run_ablation(
    model_config: FrsNanoConfig,
    train_config: TrainConfig,
    train: Dataset,
    val: Dataset,
    seeds: Sequence[int],
    variants: Sequence[str] = tuple(VARIANTS),
    on_run: Optional[Callable[[str, int, EvalReport], None]] = None,
    conf_threshold: float = 0.001,
    iou_threshold: float = 0.5,
) -> AblationTable:
    """Train every variant for every seed, sequentially, and evaluate on ``val``.

    The seed sets both the initial weights and the batch order, so variants
    sharing a seed start from identical shared-layer weights.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants {unknown}; choose from {list(VARIANTS)}")
    table = AblationTable(list(seeds))
    for v in variants:
        table.reports[v] = {}
    for seed in seeds:
        for v in variants:
            model = FrsNano(variant_config(model_config, v), seed)
            fit(model, train, dataclasses.replace(train_config, seed=seed))
            report = evaluate_model(model, val, conf_threshold, iou_threshold)
            table.reports[v][seed] = report
            if on_run is not None:
                on_run(v, seed, report)
    return table
