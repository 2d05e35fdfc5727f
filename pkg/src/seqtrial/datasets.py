"""Bundled MUSEC case-study files: stagewise response counts and the OBF design."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .design import TrialDesign, load_design
from .trial_data import BinaryTwoArmData, load_data


def data_path(name: str) -> Path:
    return Path(str(resources.files("seqtrial") / "data" / name))


def musec_data() -> BinaryTwoArmData:
    return load_data(data_path("musec_data.json"))


def musec_design() -> TrialDesign:
    return load_design(data_path("musec_design.json"))
