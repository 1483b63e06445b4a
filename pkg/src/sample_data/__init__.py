"""
Sample data module for Gripper Co-Design.
"""

# Reference grasp problems for testing and demonstration
