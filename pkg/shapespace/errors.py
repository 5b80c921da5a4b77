"""
Exceptions raised by the Shape Space toolkit.

The command-line front end maps these onto exit codes: validation problems
(bad config, missing inputs) exit with 1, everything else with 2.
"""


class ShapeSpaceError(Exception):
    """Base class for all toolkit errors."""


class MeshFormatError(ShapeSpaceError, ValueError):
    """A mesh or landmark file could not be parsed."""

    def __init__(self, path, message, line=None, offset=None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(f"{self.path}{where}: {message}")


class UnsupportedElementError(MeshFormatError):
    """The file uses an element or property type the reader does not handle."""


class DegenerateConfigurationError(ShapeSpaceError, ValueError):
    """Point configuration is collinear or coincident; no unique similarity exists."""


class DimensionMismatchError(ShapeSpaceError, ValueError):
    """Array sizes do not match the model, hierarchy or each other."""


class EmptyPointCloudError(ShapeSpaceError, ValueError):
    """A point cloud has no points."""


class TopologyError(ShapeSpaceError, ValueError):
    """The mesh is not a single disc-topology patch."""


class ProjectionError(ShapeSpaceError):
    """A grid point could not be projected onto the mesh surface."""


class InsufficientLandmarksError(ShapeSpaceError, ValueError):
    """Fewer landmarks in common than an alignment or evaluation needs."""


class ModelFormatError(ShapeSpaceError):
    """A model file is malformed."""


class ChecksumError(ModelFormatError):
    """The stored checksum does not match the file contents (corrupt or truncated)."""


class VersionMismatchError(ModelFormatError):
    """The model file was written by an unsupported format version."""


class ModelKindError(ModelFormatError):
    """The model file holds a different model kind than the one requested."""


class ConfigValidationError(ShapeSpaceError, ValueError):
    """A run configuration value is invalid."""


class UnalignedTrainingSetError(ShapeSpaceError, ValueError):
    """Training was requested on shapes that have not been GPA-aligned."""


class InsufficientDataError(ShapeSpaceError, ValueError):
    """Too few shapes or subjects for the requested evaluation."""
