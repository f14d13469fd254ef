"""Exception types shared across the package."""


class GraspKitError(Exception):
    """Base class for all package errors."""


class InvalidInput(GraspKitError):
    """An argument violates a documented precondition."""


class ShapeError(GraspKitError):
    """Tensor operands have incompatible shapes."""


class OptimizerError(GraspKitError):
    """Optimizer received a non-finite gradient; message names the parameter."""


class EmptyView(GraspKitError):
    """A rendered view produced no surface hits."""


class DegenerateExtent(GraspKitError):
    """Positive-grasp translations have zero spatial extent."""


class DegenerateLabels(GraspKitError):
    """A training set contains only one label class."""
