class EdgebenchError(Exception):
    """Base class for every domain failure raised by the simulator."""


class MalformedConfig(EdgebenchError):
    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        self.message = message
        super().__init__(f"{field_path}: {message}" if field_path else message)


class InconsistentDimensions(MalformedConfig):
    def __init__(self, field_path: str, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(
            field_path, f"expected {expected} entries, got {actual}"
        )


class ActionInvalid(EdgebenchError):
    def __init__(self, message: str, slot: int | None = None):
        self.message = message
        self.slot = slot
        prefix = f"slot {slot}: " if slot is not None else ""
        super().__init__(prefix + message)


class LocalComputeDisabled(EdgebenchError):
    def __init__(self):
        super().__init__("policy needs local_compute to be configured")


class StateSpaceTooLarge(EdgebenchError):
    def __init__(self, count: int, cap: int, what: str = "states"):
        self.count = count
        self.cap = cap
        self.what = what
        super().__init__(
            f"{count} {what} exceeds the cap of {cap}; "
            "lower q_max/k_max or use a smaller scenario"
        )


class NonConvergence(EdgebenchError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"value iteration stopped after {iterations} iterations "
            f"with residual {residual:.3e}"
        )


class OracleTooLarge(EdgebenchError):
    def __init__(self, candidates: float, cap: int):
        self.candidates = candidates
        self.cap = cap
        super().__init__(f"{candidates:.3g} candidate policies exceeds {cap}")


class SpecMismatch(EdgebenchError):
    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"policy was solved for {expected[:12]}, scenario is {actual[:12]}"
        )


class IncompatibleRuns(EdgebenchError):
    pass


class ConservationError(EdgebenchError):
    def __init__(self, slot: int, arrivals: int, accounted: int):
        self.slot = slot
        super().__init__(
            f"slot {slot}: {arrivals} arrivals but {accounted} tasks accounted for"
        )
