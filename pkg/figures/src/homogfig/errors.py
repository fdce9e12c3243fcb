class BundleFormatError(ValueError):
    """A bundle file is missing, malformed, or carries the wrong schema."""
