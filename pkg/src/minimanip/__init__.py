"""Desk-scale skill learning from generated demonstration videos.

A 2D manipulation simulator with scripted experts, a text+pose conditioned
pixel-space video diffusion model, a window-based inverse dynamics labeler,
behavior-cloned policies, and a two-fold cross-validation harness tying them
together.
"""

__version__ = "0.1.0"
