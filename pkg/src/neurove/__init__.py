"""Spiking neural network toolkit: ALIF neurons, the ASLSTM cell, event
encoding, surrogate-gradient training and a synthetic event-camera
velocity pipeline.

Importing the package stays cheap; submodules load numpy on demand.
"""

__version__ = "0.1.0"
