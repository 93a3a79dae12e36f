"""Ablation harness over the gate feature flags.

Flags: ``PG`` fixed positive gates, ``PGcl`` positive gates closed on
cannot-link edges (implies PG), ``NG`` negative gates from cannot-links,
``aG`` adaptive positive gates (implies PG).  No flags is the FACE baseline.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .core import PRESETS, GateMode, UggConfig, UggError
from .inference import run_inference
from .metrics import RankingReport, ranking_report

KNOWN_FLAGS = ("PG", "PGcl", "NG", "aG")

# base configuration for ablations over the synthetic desk profile
DESK_CONFIG = PRESETS["desk"]

DEFAULT_FLAG_SETS = (
    (),
    ("PG",),
    ("PGcl",),
    ("PGcl", "NG"),
    ("PG", "aG"),
    ("PGcl", "NG", "aG"),
)


class NGRequestedWithoutCannotLinks(UggError, ValueError):
    code = "NG_WITHOUT_CANNOT_LINKS"


class UnknownFlag(UggError, ValueError):
    code = "UNKNOWN_FLAG"


@dataclass(frozen=True)
class AblationConfig:
    flags: frozenset

    @classmethod
    def parse(cls, flags: Iterable[str]) -> AblationConfig:
        if isinstance(flags, str):
            flags = [f for f in flags.replace(",", "+").split("+") if f and f != "FACE"]
        fs = set(flags)
        bad = fs - set(KNOWN_FLAGS)
        if bad:
            raise UnknownFlag(f"unknown ablation flags: {sorted(bad)}")
        if fs & {"PGcl", "aG"}:
            fs.add("PG")
        return cls(frozenset(fs))

    @property
    def name(self) -> str:
        if not self.flags:
            return "FACE"
        shown = [f for f in ("PG", "PGcl", "NG", "aG") if f in self.flags]
        if "PGcl" in self.flags:
            shown.remove("PG")
        return "+".join(shown)

    def to_ugg_config(self, base: UggConfig) -> UggConfig:
        f = self.flags
        return base.replace(
            alpha_positive=base.alpha_positive if "PG" in f else 0.0,
            alpha_negative=base.alpha_negative if "NG" in f else 0.0,
            gate_mode=GateMode.ADAPTIVE if "aG" in f else GateMode.FIXED,
            cannot_link_masks_positive="PGcl" in f,
        )


def mean_report(reports: Sequence[RankingReport]) -> RankingReport:
    ks_r = sorted(reports[0].recall_at_k)
    ks_t = sorted(reports[0].topk_accuracy)
    return RankingReport(
        float(np.mean([r.mean_average_precision for r in reports])),
        {k: float(np.mean([r.recall_at_k[k] for r in reports])) for k in ks_r},
        {k: float(np.mean([r.topk_accuracy[k] for r in reports])) for k in ks_t},
    )


@dataclass
class AblationRow:
    name: str
    config: UggConfig
    mean: RankingReport
    per_seed: List[RankingReport]

    @property
    def rank1(self) -> float:
        return self.mean.topk_accuracy[1]


def run_ablation(scenarios, base_config: UggConfig, flags_list=DEFAULT_FLAG_SETS) -> List[AblationRow]:
    """One row per flag combination, in the order given."""
    if not scenarios:
        raise ValueError("no scenarios")
    c = scenarios[0].instance.num_galleries
    if any(s.instance.num_galleries != c for s in scenarios):
        raise ValueError("scenarios must share the number of galleries")
    has_links = any(np.any(s.instance.cannot_link) for s in scenarios)
    rows = []
    for flags in flags_list:
        ab = flags if isinstance(flags, AblationConfig) else AblationConfig.parse(flags)
        if "NG" in ab.flags and not has_links:
            raise NGRequestedWithoutCannotLinks(f"{ab.name} needs cannot-link data")
        cfg = ab.to_ugg_config(base_config)
        per_seed = []
        for s in scenarios:
            refined, _, _ = run_inference(s.instance, cfg)
            per_seed.append(ranking_report(refined, s.true_identity))
        rows.append(AblationRow(ab.name, cfg, mean_report(per_seed), per_seed))
    return rows
