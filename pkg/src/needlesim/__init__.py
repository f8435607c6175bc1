"""Axial needle-insertion haptic force simulator on voxel patient volumes."""

__version__ = "0.1.0"

from .volume import TissueLabel, VoxelVolume, load_volume, save_volume  # noqa: F401
from .tissue import HapticTable, ThresholdSet, fit_thresholds  # noqa: F401
from .engine import NeedleSession, SpringModel, make_spring  # noqa: F401
