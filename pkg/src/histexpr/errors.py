"""Exception hierarchy shared across the pipeline.

Two bases matter for the CLI exit-code contract: ``UsageError`` maps to
exit code 2 (unusable inputs, bad files, too-small datasets) and
``AnalysisError`` maps to exit code 1 (a statistical or numerical failure
on otherwise valid inputs).
"""


class HistexprError(Exception):
    """Base class for all package errors."""


class UsageError(HistexprError):
    """Input is unusable: missing, malformed, or below minimum size."""


class AnalysisError(HistexprError):
    """Computation failed on valid input (degenerate data, no convergence)."""


# --- image preparation ---

class InsufficientTissue(AnalysisError):
    """Too few pixels above the optical-density floor to estimate stains."""


class DegenerateCloud(AnalysisError):
    """OD pixel cloud is rank-deficient; two stain directions undefined."""


class ImageTooSmall(UsageError):
    """Image smaller than one patch in at least one dimension."""


# --- expression ---

class NegativeExpression(UsageError):
    def __init__(self, row: int, col: int):
        super().__init__(f"negative expression value at row {row}, col {col}")
        self.row = row
        self.col = col


class MissingGene(UsageError):
    pass


class DuplicatePatient(UsageError):
    pass


class ParseError(UsageError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- features / serialization ---

class EmptyFeatureSet(UsageError):
    pass


class BadMagic(UsageError):
    pass


class UnsupportedVersion(UsageError):
    pass


class ShapeMismatch(UsageError):
    pass


class NonFiniteValue(UsageError):
    pass


class EmptyIntersection(UsageError):
    """No patient identifiers in common between features and expression."""


class PanelMismatch(UsageError):
    """Stored panel hash disagrees with the supplied gene panel."""


# --- regressor ---

class FeatureTooShort(UsageError):
    """Input feature vector shorter than the first convolution kernel."""


class LengthMismatch(UsageError):
    pass


class DatasetTooSmall(UsageError):
    pass


# --- metrics ---

class ConstantInput(AnalysisError):
    """Zero variance makes the statistic undefined."""


class OutOfRange(UsageError):
    pass


class ConstantTruth(AnalysisError):
    pass


class GroupTooSmall(UsageError):
    pass


class AllEqual(AnalysisError):
    """Zero between-group and zero within-group variance."""


class SingleClass(UsageError):
    pass


# --- survival ---

class EmptyCohort(UsageError):
    pass


class NoEvents(AnalysisError):
    pass


class ConstantCovariate(UsageError):
    pass


class Separation(AnalysisError):
    """Monotone partial likelihood: a covariate separates events perfectly."""


class NotConverged(AnalysisError):
    pass


class NoComparablePairs(AnalysisError):
    pass


class MissingValue(UsageError):
    def __init__(self, patient_id: str, parameter: str):
        super().__init__(f"patient {patient_id!r} has no value for {parameter!r}")
        self.patient_id = patient_id
        self.parameter = parameter


# --- subtype ---

class MissingSubtype(UsageError):
    pass


class ClassTooSmall(UsageError):
    pass
