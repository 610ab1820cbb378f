"""
Utility modules for pimspec
"""
