"""
Test suite for the gripper co-design package.
"""
