"""Toy transformer models, their lowering to the ISA and the host-side reference."""
from .config import PRESETS, ConfigInvalid, MlpKind, ModelConfig, NormKind, preset
from .fixtures import FIXTURES, dot_product
from .golden import Checkpoints, GoldenTrace, GoldenTrapped, golden_run
from .lower import ProgramTooLarge, lower
from .reference import ReferenceResult, reference_forward
from .weights import ModelWeights, build_model

__all__ = [
    "PRESETS", "ConfigInvalid", "MlpKind", "ModelConfig", "NormKind", "preset", "FIXTURES",
    "dot_product", "Checkpoints", "GoldenTrace", "GoldenTrapped", "golden_run",
    "ProgramTooLarge", "lower", "ReferenceResult", "reference_forward", "ModelWeights",
    "build_model",
]
