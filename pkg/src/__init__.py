"""
BEV Semantic Mapping - Source Package
Occlusion-reasoned bird's-eye-view semantic mapping: projection, simulation,
map alignment, refinement and evaluation.
"""

__version__ = "0.2.0"
__author__ = "Douglas Ogieltaziba"
