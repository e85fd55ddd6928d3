"""Exception hierarchy.  Every error carries a module prefix for the CLI."""


class RemkitError(Exception):
    prefix = "remkit"

    def __str__(self):
        return f"{self.prefix}: {super().__str__()}"


class InputError(RemkitError):
    """Bad user input; the CLI maps these to exit code 1."""


class SchemaError(InputError):
    prefix = "event_core"


class ParseError(InputError):
    prefix = "event_core"


class EmptySequenceError(InputError):
    prefix = "event_core"


class DataConsistencyError(InputError):
    prefix = "event_core"


class OrderOnlyError(InputError):
    prefix = "stats_engine"


class StatisticError(InputError):
    prefix = "stats_engine"


class SamplingError(InputError):
    prefix = "sampling"


class FormulaError(InputError):
    prefix = "design"


class RankDeficiencyError(InputError):
    prefix = "design"


class FitError(RemkitError):
    prefix = "inference"


class ConvergenceError(FitError):
    pass


class RegimeMismatchError(InputError):
    prefix = "diagnostics"


class DegenerateTermError(InputError):
    prefix = "diagnostics"


class SimulationError(RemkitError):
    prefix = "simulate"
