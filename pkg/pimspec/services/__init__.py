"""
Numerical services: kernels, point clouds, assembly, eigensolvers, operators, studies
"""
