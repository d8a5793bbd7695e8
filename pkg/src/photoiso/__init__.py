"""Open-system photoisomerization dynamics of the two-state two-mode retinal model."""

__version__ = "0.1.0"
