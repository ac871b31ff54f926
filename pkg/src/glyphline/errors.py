class GlyphlineError(Exception):
    """Base class for all glyphline errors"""
    pass


class InvalidInput(GlyphlineError):
    """Exception class for when processing fails due to invalid input

    The input itself is bad (unreadable image, empty region, unknown label),
    so repeating the call with the same input will fail again.

    Args:
        GlyphlineError (Exception): Base class
    """
    pass


class ShapeMismatch(InvalidInput):
    """A tensor reached a network layer with a shape the layer cannot take"""

    def __init__(self, index, kind, expected, got):
        self.index = index
        self.kind = kind
        super().__init__(
            f"layer {index} ({kind}): expected input shape {expected}, got {got}"
        )


class ModelError(GlyphlineError):
    """Missing or corrupt checkpoint, or a model used for the wrong role"""
    pass


class PluginError(GlyphlineError):
    """An external classifier broke the line-delimited JSON protocol"""
    pass
