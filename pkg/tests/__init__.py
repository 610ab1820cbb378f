"""
Test package for pimspec
"""
