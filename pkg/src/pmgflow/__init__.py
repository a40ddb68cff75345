"""2D flux-reconstruction flow solver with implicit p-multigrid solver stack."""

__version__ = "0.1.0"
