"""World-line divergence engine: branching emergency-scenario deduction with
dual fact/logic calibration, keyframe visualization, and a benchmark harness."""

__version__ = "0.1.0"
