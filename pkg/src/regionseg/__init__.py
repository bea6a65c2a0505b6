"""Region-based multi-U-Net volumetric brain segmentation."""
__version__ = "0.1.0"
