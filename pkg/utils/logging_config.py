"""
Logging Configuration

Features:
- Console output on stderr, colored by level (stdout is reserved for CLI results)
- JSON records via python-json-logger, with the run's command and seed on every record
- Optional rotating file handler
- Timing context manager for solves and simulations

Usage:
    from utils.logging_config import bind_run_context, get_logger, setup_logging

    setup_logging(level='INFO', json_format=True)
    bind_run_context(command='green', seed=0)
    logger = get_logger(__name__)
    logger.info("Solver started")
"""

import logging
import logging.handlers
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, Optional

from pythonjsonlogger import jsonlogger

from core.exceptions import RecurnetException, error_code_for

TEXT_FORMAT = '%(asctime)s %(levelname)s [%(command)s] %(name)s: %(message)s'
JSON_FIELDS = '%(asctime)s %(levelname)s %(name)s %(message)s %(command)s %(seed)s %(funcName)s %(lineno)d'
DATE_FORMAT = '%H:%M:%S'

_run_context: Dict[str, Any] = {'command': '-', 'seed': None}


def bind_run_context(command: str, seed: Optional[int] = None) -> None:
    """Attach a command name and master seed to every later record"""
    _run_context['command'] = command
    _run_context['seed'] = seed


class RunContextFilter(logging.Filter):
    """Stamps ``command`` and ``seed`` onto records that do not carry them"""

    def filter(self, record: logging.LogRecord) -> bool:
        for key, value in _run_context.items():
            if not hasattr(record, key):
                setattr(record, key, value)
        return True


class LevelColorFormatter(logging.Formatter):
    """Text formatter that colors the level name on terminals"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
    }
    RESET = '\033[0m'

    def __init__(self, use_color: bool):
        super().__init__(TEXT_FORMAT, datefmt=DATE_FORMAT)
        self.use_color = use_color

    def format(self, record):
        level = record.levelname
        if self.use_color and level in self.COLORS:
            record.levelname = f"{self.COLORS[level]}{level}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = level


def _make_formatter(json_format: bool, use_color: bool = False) -> logging.Formatter:
    if json_format:
        return jsonlogger.JsonFormatter(
            JSON_FIELDS,
            rename_fields={'levelname': 'level', 'name': 'logger'},
        )
    return LevelColorFormatter(use_color)


class PerformanceLogger:
    """Times a block and logs ``Starting``/``Completed``/``Failed`` with the duration"""

    def __init__(self, logger: logging.Logger, operation: str, **context):
        self.logger = logger
        self.operation = operation
        self.context = context
        self._start = 0.0
        self.duration_ms = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        self.logger.debug(f"Starting: {self.operation}", extra=self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration_ms = (time.perf_counter() - self._start) * 1000
        extra = {**self.context, 'duration_ms': round(self.duration_ms, 3)}
        if exc_type is None:
            self.logger.info(f"Completed: {self.operation} ({self.duration_ms:.2f}ms)", extra=extra)
        else:
            self.logger.error(
                f"Failed: {self.operation} ({self.duration_ms:.2f}ms)",
                extra=extra,
                exc_info=(exc_type, exc_val, exc_tb),
            )
        return False


def setup_logging(
    level: Optional[str] = None,
    log_file: Optional[str] = None,
    max_bytes: int = 10 * 1024 * 1024,
    backup_count: int = 5,
    json_format: bool = False,
    console_output: bool = True,
) -> None:
    """
    Configure the root logger.

    Args:
        level: DEBUG, INFO, WARNING, ERROR or CRITICAL (default: RECURNET_LOG_LEVEL, else WARNING)
        log_file: Rotating log file; its directory is created on demand
        max_bytes: Size at which the log file rotates
        backup_count: Rotated files kept
        json_format: Emit JSON records on every handler
        console_output: Log to stderr
    """
    if level is None:
        level = os.getenv('RECURNET_LOG_LEVEL', 'WARNING')
    log_level = getattr(logging, level.upper(), None)
    if not isinstance(log_level, int):
        log_level = logging.WARNING

    root = logging.getLogger()
    root.setLevel(log_level)
    root.handlers.clear()
    context_filter = RunContextFilter()

    if console_output:
        console = logging.StreamHandler(sys.stderr)
        console.setLevel(log_level)
        console.setFormatter(_make_formatter(json_format, use_color=sys.stderr.isatty()))
        console.addFilter(context_filter)
        root.addHandler(console)

    if log_file:
        path = Path(log_file)
        path.parent.mkdir(parents=True, exist_ok=True)
        rotating = logging.handlers.RotatingFileHandler(
            path, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8'
        )
        rotating.setLevel(logging.DEBUG)
        rotating.setFormatter(_make_formatter(json_format))
        rotating.addFilter(context_filter)
        root.addHandler(rotating)

    root.debug(f"Logging configured: level={logging.getLevelName(log_level)} json={json_format} file={log_file}")


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def log_with_context(logger: logging.Logger, level: str, message: str, **context) -> None:
    """Log ``message`` with ``context`` as record attributes (JSON keys under json_format)"""
    getattr(logger, level.lower())(message, extra=context)


def log_exception(logger: logging.Logger, exc: BaseException, message: Optional[str] = None) -> None:
    """
    Log a failure at ERROR with its error code.

    Context fields of a ``RecurnetException`` (field, radius, shape, ...) become
    record attributes; keys that clash with LogRecord attributes are prefixed
    with ``ctx_``.
    """
    extra: Dict[str, Any] = {'code': error_code_for(exc).value, 'error': type(exc).__name__}
    if isinstance(exc, RecurnetException):
        reserved = set(logging.LogRecord('', 0, '', 0, '', None, None).__dict__) | {'message', 'asctime'}
        for key, value in exc.context.items():
            extra[f'ctx_{key}' if key in reserved or key in extra else key] = value
    logger.error(message or str(exc), extra=extra)


def log_performance(logger: logging.Logger, operation: str, **context) -> PerformanceLogger:
    """
    Time a block of work.

    Example:
        with log_performance(logger, "killed_green_table", vertices=841):
            table = killed_green_table(net, region, kill)
    """
    return PerformanceLogger(logger, operation, **context)
