"""Decoupled attribute axes in a generator latent space, on a synthetic toy world."""
from .axes import AttributeAxis, AxisBank, Extension, LatentDataset, build_bank, extend_axis, fit_axis
from .editing import EditPlan, apply_edit, apply_plan, traverse
from .errors import (
    DegenerateAttributeError, FormatError, InseparableAttributeError, LinearDependenceError,
    TrainingDiverged, ValidationError,
)
from .toyworld import ToyWorld, make_world, sample_dataset

__version__ = "0.1.0"
