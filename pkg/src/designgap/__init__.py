"""Consumer-choice model with a variational design space, and design-gap search."""

__version__ = "0.1.0"
