"""Sensing-parameter estimation for perceptive mobile networks.

Subpackages: ``scene`` (multipath channel model), ``waveform`` (OFDMA
symbols and received signals), ``sparse`` (MMV solvers), ``direct`` and
``indirect`` (estimation schemes), ``clutter`` (background subtraction),
``baseline`` (2D-DFT maps) and ``harness`` (experiments and CLI).
"""

__version__ = "0.1.0"
