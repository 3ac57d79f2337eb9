"""
Learning Module
Contains losses, the Wasserstein critic, the toy refiner and gradient checks.
"""
