"""
Unit tests for logging configuration
"""

import json
import logging

import pytest

from core.exceptions import NetworkSpecException, VertexNotFoundException
from utils.logging_config import (
    bind_run_context,
    get_logger,
    log_exception,
    log_performance,
    log_with_context,
    setup_logging,
)


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
    bind_run_context('-', None)


def _json_records(log_file):
    for handler in logging.getLogger().handlers:
        handler.flush()
    return [json.loads(line) for line in log_file.read_text().strip().splitlines()]


class TestSetupLogging:
    """Test setup_logging function"""

    def test_level(self):
        setup_logging(level='DEBUG')
        assert logging.getLogger().level == logging.DEBUG

    def test_unknown_level_falls_back(self):
        setup_logging(level='chatty')
        assert logging.getLogger().level == logging.WARNING

    def test_json_file(self, tmp_path):
        """JSON records carry the renamed level and logger fields plus extras"""
        log_file = tmp_path / 'logs' / 'run.log'
        setup_logging(level='INFO', log_file=str(log_file), json_format=True, console_output=False)
        log_with_context(get_logger('recurnet.test'), 'warning', "solver plateau", radius=40)

        record = _json_records(log_file)[-1]
        assert record['message'] == "solver plateau"
        assert record['level'] == 'WARNING'
        assert record['logger'] == 'recurnet.test'
        assert record['radius'] == 40

    def test_run_context(self, tmp_path):
        """Every record names the command and seed of the run"""
        log_file = tmp_path / 'run.log'
        setup_logging(level='INFO', log_file=str(log_file), json_format=True, console_output=False)
        bind_run_context('hsim', 7)
        get_logger('recurnet.test').info("paths done")

        record = _json_records(log_file)[-1]
        assert record['command'] == 'hsim'
        assert record['seed'] == 7

    def test_text_format(self, tmp_path):
        log_file = tmp_path / 'run.log'
        setup_logging(level='INFO', log_file=str(log_file), console_output=False)
        bind_run_context('green')
        get_logger('recurnet.test').info("table ready")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert '[green] recurnet.test: table ready' in log_file.read_text()


class TestLogException:
    """Test log_exception"""

    def test_code_and_context(self, tmp_path):
        log_file = tmp_path / 'run.log'
        setup_logging(level='INFO', log_file=str(log_file), json_format=True, console_output=False)
        log_exception(get_logger('recurnet.test'), NetworkSpecException("bad d", field='params.d'))

        record = _json_records(log_file)[-1]
        assert record['code'] == 'INVALID_SPEC'
        assert record['error'] == 'NetworkSpecException'
        assert record['field'] == 'params.d'
        assert record['message'] == 'bad d'

    def test_reserved_keys_are_prefixed(self, caplog):
        """A context key named like a LogRecord attribute does not break logging"""
        exc = VertexNotFoundException("no vertex", {'name': '(0,9)'})
        with caplog.at_level(logging.ERROR, logger='recurnet.test'):
            log_exception(get_logger('recurnet.test'), exc, "lookup failed")
        record = caplog.records[-1]
        assert record.ctx_name == '(0,9)'
        assert record.getMessage() == "lookup failed"

    def test_plain_exception(self, caplog):
        with caplog.at_level(logging.ERROR, logger='recurnet.test'):
            log_exception(get_logger('recurnet.test'), ValueError("boom"))
        assert caplog.records[-1].code == 'INTERNAL_ERROR'


class TestLogPerformance:
    """Test the timing context manager"""

    def test_records_duration(self, caplog):
        logger = logging.getLogger('recurnet.perf')
        with caplog.at_level(logging.INFO, logger='recurnet.perf'):
            with log_performance(logger, 'solve') as perf:
                pass
        assert perf.duration_ms >= 0.0
        assert any('Completed: solve' in r.getMessage() for r in caplog.records)

    def test_does_not_swallow(self, caplog):
        logger = logging.getLogger('recurnet.perf')
        with pytest.raises(RuntimeError):
            with log_performance(logger, 'solve'):
                raise RuntimeError("singular")
        assert any('Failed: solve' in r.getMessage() for r in caplog.records)


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
