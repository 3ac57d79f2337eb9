"""
Unit Tests Package
Contains unit tests for individual modules and functions.
"""
