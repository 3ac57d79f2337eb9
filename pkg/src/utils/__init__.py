"""
Utilities Module
Contains errors, configuration models and grid file I/O.
"""
