"""Exception types raised across the package."""


class JointTokError(ValueError):
    """Base class for all errors raised by jointtok."""


class VocabError(JointTokError):
    """Invalid vocabulary contents or vocabulary construction request."""


class LatticeError(JointTokError):
    """A sentence cannot be segmented, or an oracle would blow up."""


class ConfigError(JointTokError):
    """Missing or invalid configuration keys."""
