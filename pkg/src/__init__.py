"""
Gripper Co-Design - jaw shape and grasp co-optimization
Finds grasps for a set of planar objects together with one pair of jaw surfaces that holds them all.
"""

__version__ = "1.0.0"
__description__ = "Parallel-jaw gripper surface and grasp co-optimization using augmented Lagrangian search"
