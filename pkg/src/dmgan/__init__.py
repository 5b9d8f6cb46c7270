"""Dynamic-memory text-to-image GAN on numpy, sized for a laptop CPU."""

__version__ = "0.1.0"
