class ExporterError(Exception):
    """Base class for exporter failures."""


class ScanParseError(ExporterError):
    """A scan file is missing, truncated, or not valid LPCD."""


class ModelLoadError(ExporterError):
    """The weights file is missing or structurally invalid."""
