"""Vehicle speed measurement from monocular grayscale frame sequences.

The pipeline: detect the vehicle with an MB-LBP cascade classifier, track
the bounding box's top-left corner across detections, convert the pixel
displacement per unit time into metric speed through a calibrated
pixels-per-metre coefficient, and persist/upload the resulting capture
records.
"""

from speedcam.errors import SpeedcamError

__version__ = "0.1.0"

__all__ = ["SpeedcamError", "__version__"]
