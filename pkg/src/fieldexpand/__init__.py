"""Self-supervised representation learning by visual-field expansion.

Trains a progressively grown adversarial autoencoder to outpaint image
tiles from a center crop to a 2x target, then evaluates the learned
encoder with Frechet-distance image quality scores and a linear probe.
"""

__version__ = "0.1.0"
