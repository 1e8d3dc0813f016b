"""Meta-path snapshot features and neural predictors for topic diffusion and cascades."""

__version__ = "0.1.0"
