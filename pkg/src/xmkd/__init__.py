"""Cross-modal (camera to LiDAR) knowledge distillation for point cloud segmentation."""

__version__ = "0.1.0"
