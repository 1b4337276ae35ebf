"""Spectrally multiplexed photon-bunching toolkit.

Simulation of multimode thermal light on spectrometer-fed SPAD arrays,
time-tag I/O, pair correlation, bunching-peak fitting, and the analysis
layer that turns fitted peaks into contrast matrices and sensitivity
figures.
"""

__version__ = "0.1.0"
