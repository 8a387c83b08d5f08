"""segharness: patch-based 2D U-Net tissue segmentation with multi-view
majority-voting inference and two-domain transfer-learning experiments on
simulated fetal-brain reconstructions."""

__version__ = "0.1.0"
