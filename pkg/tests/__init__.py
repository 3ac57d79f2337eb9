"""
Test Suite for BEV Semantic Mapping
Unit tests per module plus slow end-to-end acceptance runs.
"""
