"""
Visualization Module
Contains plotting helpers for BEV maps, traces and road graphs.
"""
