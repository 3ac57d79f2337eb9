"""
Analysis Module
Contains evaluation metrics, synthetic scene fabrication and the pipeline.
"""
