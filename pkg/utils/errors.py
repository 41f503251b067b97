# utils/errors.py


class SurvDTRError(Exception):
    """Base error. ``code`` is the machine-readable tag the CLI prints."""

    code = "ERROR"

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def one_line(self):
        """Render as a single ``error code=... message=...`` line."""
        text = " ".join(str(self.message).split())
        return f"error code={self.code} message={text}"


class CurveError(SurvDTRError):
    code = "INVALID_CURVE"


class ForestConstructionError(SurvDTRError):
    code = "FOREST_CONSTRUCTION"


class RegimeError(SurvDTRError):
    code = "REGIME"


class DatasetSchemaError(SurvDTRError):
    code = "SCHEMA_VIOLATION"


class UnknownScenarioError(SurvDTRError):
    code = "UNKNOWN_SCENARIO"


class UndefinedValueError(SurvDTRError):
    code = "UNDEFINED_VALUE"


class DimensionMismatchError(SurvDTRError):
    code = "DIMENSION_MISMATCH"


class ModelFileError(SurvDTRError):
    code = "MODEL_FILE"


class ConfigError(SurvDTRError):
    code = "INVALID_CONFIG"
