"""
Data Structures Module
Contains raster, geometry and road-graph types shared by every stage.
"""
