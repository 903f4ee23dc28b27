"""Trapped-ion spin heat engine with a harmonic-oscillator flywheel.

Simulation of the Otto cycle, Husimi-Q tomography, displaced squeezed
thermal state fitting and ergotropy analysis.
"""

__version__ = "0.1.0"
