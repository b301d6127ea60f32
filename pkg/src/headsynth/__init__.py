"""Head-avatar synthesis toolkit: parametric rig, mesh-guided deformation,
tri-plane volume rendering, gated reenactment module, losses, and a synthetic
multi-view dataset generator with a CLI."""

__version__ = "0.1.0"
