"""Engine configuration: vocabulary, efficacy table, segmenter, explorer.

A single JSON file can override any of the built-in defaults:

    {
      "vocabulary": {"drugs": [...], "embolics": [...], "rules": [...]},
      "efficacy_table": {"weights": {...}, "thresholds": [...],
                         "diminishing": 0.5, "noise_scale": 0.05},
      "segmenter": {"hyperdense_threshold": 0.6, ...},
      "explore": {"beams": 1, "drug_horizon": 2, ...},
      "window": [-175.0, 600.0],
      "target_spacing": [1.0, 1.0, 1.0]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .actions import Vocabulary, default_vocabulary, vocabulary_from_config
from .dynamics import EfficacyTable
from .explorer import ExplorationConfig
from .segmenter import SegmenterConfig

# Raw CT window and the resampling grids. The acquisition pipeline uses
# 0.8 x 0.8 x 3.0 mm; the simulator path runs on the isotropic grid.
DEFAULT_WINDOW = (-175.0, 600.0)
ACQUISITION_SPACING = (0.8, 0.8, 3.0)
SIMULATOR_SPACING = (1.0, 1.0, 1.0)


def default_efficacy_table() -> EfficacyTable:
    weights = {
        "Cisplatin": 1.1,
        "Doxorubicin": 1.0,
        "Epirubicin": 1.0,
        "Idarubicin": 0.9,
        "Lobaplatin": 1.0,
        "Mitomycin": 0.8,
        "Oxaliplatin": 1.1,
        "Raltitrexed": 0.9,
        "THP": 0.9,
        "Gelatin Sponge": 0.8,
        "LC beads": 1.2,
        "Lipiodol": 1.0,
    }
    return EfficacyTable(weights=weights, noise_scale=0.05)


@dataclass
class EngineConfig:
    vocabulary: Vocabulary = field(default_factory=default_vocabulary)
    table: EfficacyTable = field(default_factory=default_efficacy_table)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    explore: ExplorationConfig = field(default_factory=ExplorationConfig)
    window: tuple[float, float] = DEFAULT_WINDOW
    target_spacing: tuple[float, float, float] = SIMULATOR_SPACING

    @classmethod
    def from_dict(cls, cfg: dict) -> "EngineConfig":
        out = cls()
        if "vocabulary" in cfg:
            out.vocabulary = vocabulary_from_config(cfg["vocabulary"])
        if "efficacy_table" in cfg:
            out.table = EfficacyTable.from_config(cfg["efficacy_table"])
        if "segmenter" in cfg:
            out.segmenter = SegmenterConfig.from_dict(cfg["segmenter"])
        if "explore" in cfg:
            out.explore = ExplorationConfig.from_dict(cfg["explore"])
        if "window" in cfg:
            out.window = tuple(cfg["window"])
        if "target_spacing" in cfg:
            out.target_spacing = tuple(cfg["target_spacing"])
        return out


def load_engine_config(path: Optional[str] = None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    return EngineConfig.from_dict(json.loads(Path(path).read_text()))
