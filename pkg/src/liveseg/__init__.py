"""liveseg: CPU-first interactive image segmentation.

Heavy feature encoding runs once, offline; per-click decoding reuses the
cached features and stays fast enough for live annotation on CPUs.
"""

__version__ = "0.1.0"
