"""UL-trained CSI recovery for FDD massive MIMO, with MMD-based transfer checks."""

__version__ = "0.1.0"
