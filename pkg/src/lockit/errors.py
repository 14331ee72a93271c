"""Exception hierarchy shared across the toolkit."""


class LockitError(Exception):
    """Base class for all toolkit errors."""


# --- point cloud / preprocessing ---

class DegenerateCloud(LockitError):
    """Cloud has too few points for the requested operation."""


class EmptyCloud(LockitError):
    """Operation requires a non-empty cloud."""


# --- feature backends ---

class BackendUnavailable(LockitError):
    """A backend cannot produce the requested descriptor (e.g. missing file)."""


class DimensionMismatch(LockitError):
    """Feature vectors of incompatible dimensions were combined."""


# --- map ---

class EmptyTrajectory(LockitError):
    """Map building needs at least one (pose, cloud) sample."""


class EmptyMap(LockitError):
    """Query against a map with no nodes."""


class BTooLarge(LockitError):
    """Retrieval depth B exceeds the number of map nodes."""


# --- particle filter ---

class EmptySet(LockitError):
    """Estimate requested from an empty particle set."""


class AllZeroWeights(LockitError):
    """Every particle weight is zero; observation or backend failure."""


# --- registration ---

class DegenerateGeometry(LockitError):
    """Normal system is rank deficient (e.g. a single plane)."""


class EmptyCorrespondences(LockitError):
    """No correspondences survived gating."""


class TooFewCorrespondences(LockitError):
    """RANSAC needs at least 3 correspondences."""


class NoConsensus(LockitError):
    """RANSAC found no model with a minimal inlier set."""


class DegenerateMotion(LockitError):
    """Consecutive poses coincide; heading undefined."""


# --- simulator ---

class ExtentTooSmall(LockitError):
    """World extent cannot hold the requested obstacles."""


class TooShort(LockitError):
    """Trajectory has fewer than two poses."""


# --- evaluation ---

class EmptyInput(LockitError):
    """Evaluation invoked with no records."""
