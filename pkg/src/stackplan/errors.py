"""Exception hierarchy shared by every module."""


class StackPlanError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(StackPlanError):
    pass


class InvalidScene(StackPlanError):
    pass


class UnknownBox(StackPlanError, KeyError):
    def __init__(self, box_id):
        super().__init__(box_id)
        self.box_id = box_id

    def __str__(self):
        return f"unknown box id {self.box_id!r}"


class AlreadyRemoved(StackPlanError):
    pass


class SimulationExploded(StackPlanError):
    pass


class InsufficientHistory(StackPlanError):
    pass


class UnsatisfiableObservation(StackPlanError):
    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class PlanNotFound(StackPlanError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class UnclearableResidue(StackPlanError):
    def __init__(self, remaining, partial_plan=None):
        super().__init__(f"no progress possible; remaining boxes: {list(remaining)}")
        self.remaining = list(remaining)
        self.partial_plan = partial_plan


class SceneGenerationFailed(StackPlanError):
    pass


class InvalidInput(StackPlanError, ValueError):
    pass


class SampleError(StackPlanError):
    """An engine error raised while simulating one Monte Carlo sample."""

    def __init__(self, sample_index, error):
        super().__init__(f"sample {sample_index}: {error}")
        self.sample_index = sample_index
        self.error = error
