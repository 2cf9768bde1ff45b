"""Linear style transfer: closed-form and learned feature transforms with a small numpy autodiff."""

__version__ = "0.1.0"
