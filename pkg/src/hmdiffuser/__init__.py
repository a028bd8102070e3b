"""Trajectory extension by stitching and recursive hierarchical diffusion planning."""

from .dataset import Trajectory, TrajectoryDataset
from .diffusion import DiffusionModel, DiffusionSchedule, make_schedule
from .hierarchy import HierarchySpec
from .maze import MazeSpec, load_layout
from .rng import RngStream

__all__ = ["Trajectory", "TrajectoryDataset", "DiffusionModel", "DiffusionSchedule",
           "make_schedule", "HierarchySpec", "MazeSpec", "load_layout", "RngStream"]
