"""Training side of the DeskCNN fixture pipeline.

Produces model containers (manifest + float32 blobs) and idx-format
calibration subsets consumed by the inference simulator. The container
format is the only contract shared with the simulator; this package
deliberately reimplements its reader/writer so both sides of the
boundary are exercised independently.
"""

from deskcnn_trainer.model import DeskCNN

__all__ = ["DeskCNN"]
