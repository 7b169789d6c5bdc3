"""Desk-scale physics-conditioned tactile grasping.

Pose ranking over contact patches, a quasi-static tactile plant with an
analytic force-optimal grasp, a conditioned latent diffusion model for the goal
imprint, and a latent-space LQR servo.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
