"""Exception hierarchy used across the package."""


class BrrpError(Exception):
    """Base class for all library errors."""


class EmptySegmentError(BrrpError):
    """Requested segmentation label has no pixels."""


class EmptyCloudError(BrrpError):
    """An operation produced or received a point cloud with no valid points."""


class TooFewPointsError(BrrpError):
    """Not enough points to run the requested geometric operation."""


class PlaneFitError(BrrpError):
    """Table-plane RANSAC could not find a supported plane."""


class MeshRejectedError(BrrpError):
    """Mesh is not watertight and could not be repaired."""


class DatabaseError(BrrpError):
    """Prior database could not be read or failed validation."""


class DatabaseIntegrityError(DatabaseError):
    """Stored hashes do not match the record bytes on disk."""


class InsufficientParticlesError(BrrpError):
    """Operation needs at least two weight particles."""


class NonFiniteGradientError(BrrpError):
    """Log-density gradient returned NaN or infinity during optimization."""


class SceneFormatError(BrrpError):
    """Scene directory is missing files or violates the on-disk schema."""
