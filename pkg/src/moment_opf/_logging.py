import logging
import traceback

from datetime import datetime
from typing import Any


logger = logging.getLogger("mopf")

# attributes every LogRecord has; anything else arrived through ``extra``
_RECORD_ATTRS = frozenset(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {"message", "asctime", "taskName"}


class RunLogHandler(logging.Handler):
    """Keeps log records of a run as structured dicts for the JSON report.

    The iterative driver brackets each iteration with :py:meth:`start_iteration`
    and :py:meth:`end_iteration`; records emitted in between carry that
    iteration number. Records accumulate until :py:meth:`clear`.
    """

    def __init__(self):
        super().__init__()
        self.iteration: int | None = None
        self.records: list[dict[str, Any]] = []

    def emit(self, record):
        try:
            self.records.append(self._format_log_record(record))
        except Exception:
            self.handleError(record)

    def start_iteration(self, iteration: int):
        self.iteration = iteration

    def end_iteration(self):
        self.iteration = None

    def clear(self):
        """Drop collected records and the iteration tag."""
        self.records = []
        self.iteration = None

    def _format_log_record(self, record: logging.LogRecord) -> dict[str, Any]:
        extras = {
            key: _jsonable(value)
            for key, value in record.__dict__.items()
            if key not in _RECORD_ATTRS and not key.startswith("_")
        }

        exc_type = exc_message = exc_traceback = None
        if record.exc_info:
            exc_type = record.exc_info[0].__name__
            exc_message = str(record.exc_info[1])
            exc_traceback = "".join(traceback.format_exception(*record.exc_info))

        return {
            "iteration": self.iteration,
            "message": record.getMessage(),
            "level": record.levelname,
            "logger_name": record.name,
            "module": record.module,
            "function_name": record.funcName,
            "line_number": record.lineno,
            "exception_type": exc_type,
            "exception_message": exc_message,
            "traceback": exc_traceback,
            "structured_data": extras or None,
            "event_timestamp": datetime.fromtimestamp(record.created).isoformat(),
        }


def _jsonable(value):
    """Plain JSON value for an ``extra`` field; numpy arrays and scalars become lists and floats."""
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


run_log_handler = RunLogHandler()
