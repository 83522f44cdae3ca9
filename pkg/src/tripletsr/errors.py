"""Exception types shared across the package."""


class TripletSRError(Exception):
    """Base class for package errors."""


class DataError(TripletSRError):
    """Corpus, manifest, or score population problems (CLI exit code 3)."""


class ConfigError(TripletSRError):
    """Invalid experiment or model configuration (CLI exit code 4)."""


class ExtractorLoadError(DataError):
    """A pretrained weight container is missing or inconsistent."""


class DegenerateScoresError(DataError):
    """Score populations too degenerate for the requested metric."""
