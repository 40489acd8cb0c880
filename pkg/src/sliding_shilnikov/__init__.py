"""Sliding Shilnikov orbits in 3D Filippov systems."""
__version__ = "0.1.0"
