from .holes import SolverError, fill_holes_colorization, solve_colorization
from .manifest import DatasetManifest, SampleRecord, adapt_external, load_manifest
from .pnm import PnmError, read_pgm16, read_ppm, write_pgm16, write_ppm
from .resample import bicubic_downsample_depth, box_downsample_depth, to_m, to_mm
from .synth import NoiseModel, SampleTriple, synth_scene

__all__ = [
    "DatasetManifest",
    "NoiseModel",
    "PnmError",
    "SampleRecord",
    "SampleTriple",
    "SolverError",
    "adapt_external",
    "bicubic_downsample_depth",
    "box_downsample_depth",
    "fill_holes_colorization",
    "load_manifest",
    "read_pgm16",
    "read_ppm",
    "solve_colorization",
    "synth_scene",
    "to_m",
    "to_mm",
    "write_pgm16",
    "write_ppm",
]
