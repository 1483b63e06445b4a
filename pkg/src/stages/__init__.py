"""
Pipeline stages for the gripper co-design workflow.
"""
