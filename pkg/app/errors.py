"""
Hierarquia de erros do pacote.

Cada erro carrega o código de saída usado pela CLI e o status HTTP usado
pela API (app/main.py).
"""
from typing import Any, Optional, Sequence, Tuple


class EstimationError(Exception):
    exit_code = 2
    http_status = 400

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        payload = {"error": type(self).__name__, "message": self.message}
        for key, value in self.details.items():
            if key != "report":
                payload[key] = value
        return payload


class InvalidArgumentError(EstimationError, ValueError):
    pass


class OutOfDomainError(EstimationError):
    def __init__(self, message: str, interval: Tuple[float, float], times: Optional[Sequence[float]] = None):
        super().__init__(message, interval=[float(interval[0]), float(interval[1])],
                         times=[float(t) for t in (times or [])])
        self.interval = interval
        self.times = list(times or [])


class UnsupportedError(EstimationError):
    pass


class DegenerateGeometryError(EstimationError):
    pass


class ConfigError(EstimationError):
    http_status = 422

    def __init__(self, message: str, field: str = ""):
        super().__init__(message, field=field)
        self.field = field


class FactorEvaluationError(EstimationError):
    exit_code = 3
    http_status = 500


class RankDeficiencyError(EstimationError):
    exit_code = 3
    http_status = 500

    def __init__(self, message: str, blocks: Sequence[Any] = ()):
        super().__init__(message, blocks=[str(b) for b in blocks])
        self.blocks = list(blocks)


class NoConvergenceError(EstimationError):
    exit_code = 3
    http_status = 500

    def __init__(self, message: str, report: Any = None):
        super().__init__(message, report=report)
        self.report = report
