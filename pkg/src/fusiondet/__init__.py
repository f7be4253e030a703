"""Desk-scale multi-modal 3D object detection.

Point-cloud + image detection pipeline built on hand-written analytic
gradients: graph-based proposal reasoning, gated cross-modal feature
fusion, and cascaded oriented-box refinement, plus a synthetic scene
generator and an AP evaluation harness.
"""

__version__ = "0.1.0"
