"""
Numerical core: geometry, grasp stability, jaw shape, QP solving and the outer search.
"""
