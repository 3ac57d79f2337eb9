"""
Algorithms Module
Contains masking, projection, simulation, OSM rasterization, warping,
alignment and the refinement heuristic.
"""
