"""Face demorphing laboratory: toy morphs, a latent conditional GAN, and metrics."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
