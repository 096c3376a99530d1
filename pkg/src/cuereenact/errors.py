class CueReenactError(Exception):
    """Base class for all library errors."""


class ValidationError(CueReenactError, ValueError):
    """Input violates a documented invariant or precondition."""


class ParseError(ValidationError):
    """A file could not be parsed into the expected structure."""


class BehindCameraError(ValidationError):
    def __init__(self, frame: int, slot: str, depth: float):
        self.frame = frame
        self.slot = slot
        self.depth = depth
        super().__init__(f"cue joint '{slot}' has non-positive depth {depth:.6g} at frame {frame}")
