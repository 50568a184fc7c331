"""Exception types shared across subsystems."""

from __future__ import annotations


class LgmclError(Exception):
    """Base class; ``code`` is the short tag printed by the CLI."""

    code = "error"


class ConfigError(LgmclError, ValueError):
    code = "config"


class DataError(LgmclError, ValueError):
    code = "data"


class FingerprintError(DataError):
    code = "fingerprint"


class CheckpointError(LgmclError):
    code = "checkpoint"


class ShapeError(LgmclError, ValueError):
    code = "shape"


class TrainingError(LgmclError, RuntimeError):
    code = "training"
