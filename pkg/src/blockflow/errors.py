"""Exception hierarchy shared across the toolkit."""


class BlockflowError(Exception):
    """Base class for every error raised by blockflow."""


# model parsing / construction
class ModelError(BlockflowError):
    pass


class MalformedXml(ModelError):
    pass


class UnknownKind(ModelError):
    pass


class DanglingEdge(ModelError):
    pass


class PortConflict(ModelError):
    pass


class InvalidModel(ModelError):
    """Raised by strict parsing when structural invariants are violated."""

    def __init__(self, report):
        self.report = report
        lines = "; ".join(str(v) for v in report.violations)
        super().__init__(f"model violates {len(report.violations)} invariant(s): {lines}")


class CycleDetected(ModelError):
    pass


class MissingInput(ModelError):
    pass


class InfeasibleSpec(ModelError):
    pass


# allocation
class TooManyWorkers(BlockflowError):
    pass


# planning
class DeadlockedPlan(BlockflowError):
    def __init__(self, stuck_at):
        self.stuck_at = stuck_at
        super().__init__(f"plan deadlocks at step indices {stuck_at}")


class PatternMismatch(BlockflowError):
    pass


# runtime
class BusClosed(BlockflowError):
    pass


class PlanDeadlocked(BlockflowError):
    pass


class BindingMissing(BlockflowError):
    pass


# bench
class OracleMismatch(BlockflowError):
    pass


class EmptyInput(BlockflowError, ValueError):
    pass
