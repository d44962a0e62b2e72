"""Cascaded license-plate recognition toolkit.

Pipeline stages: vehicle detection, plate detection inside the vehicle
patch, character segmentation, per-character recognition, and temporal
fusion of per-frame readings.  Ships with a deterministic simulated
detector backend so the full pipeline and its evaluation protocol run
without any trained weights.
"""

from __future__ import annotations

__version__ = "0.1.0"
