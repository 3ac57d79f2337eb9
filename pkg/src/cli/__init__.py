"""
Command Line Module
Subcommand front-end for the mapping pipeline.
"""
