"""RGB-D optical camouflage simulator: shadow-angle regression and kd-tree lookup."""

__version__ = "0.1.0"
