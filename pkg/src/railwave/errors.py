"""Exception hierarchy shared by every railwave module."""

from __future__ import annotations


class RailwaveError(Exception):
    """Base class for all errors raised by railwave."""


# signal ingestion
class MissingFile(RailwaveError, FileNotFoundError):
    pass


class MalformedHeader(RailwaveError, ValueError):
    pass


class ChannelCountMismatch(RailwaveError, ValueError):
    pass


class NonFiniteSample(RailwaveError, ValueError):
    pass


class BadPartCount(RailwaveError, ValueError):
    pass


class BadChannel(RailwaveError, ValueError):
    pass


class EmptyClass(RailwaveError, ValueError):
    pass


class BadFraction(RailwaveError, ValueError):
    pass


# wavelet
class BadBand(RailwaveError, ValueError):
    pass


class NyquistExceeded(BadBand):
    pass


class SegmentTooShort(RailwaveError, ValueError):
    pass


class NonFiniteInput(RailwaveError, ValueError):
    pass


class EmptyScalogram(RailwaveError, ValueError):
    pass


# learning engine
class ShapeMismatch(RailwaveError, ValueError):
    pass


class NonPositiveOutputDim(ShapeMismatch):
    pass


class DegenerateBatch(RailwaveError, ValueError):
    pass


class BadLabel(RailwaveError, ValueError):
    pass


class MissingGradient(RailwaveError, RuntimeError):
    pass


# model / training
class BadSpec(RailwaveError, ValueError):
    pass


class EmptySplit(RailwaveError, ValueError):
    pass


class VersionMismatch(RailwaveError, ValueError):
    pass


class CorruptBlob(RailwaveError, ValueError):
    pass


class MissingParam(RailwaveError, KeyError):
    pass


class DivergedLoss(RailwaveError, RuntimeError):
    pass


# metrics
class LengthMismatch(RailwaveError, ValueError):
    pass


class BadIndex(RailwaveError, ValueError):
    pass


class EmptyMatrix(RailwaveError, ValueError):
    pass


# pipeline
class IoFailure(RailwaveError, OSError):
    pass


class ConfigError(RailwaveError, ValueError):
    pass


class MissingManifest(RailwaveError, FileNotFoundError):
    pass


class MissingFeatures(RailwaveError, FileNotFoundError):
    pass
