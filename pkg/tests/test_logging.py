"""Tests for logging setup."""

import logging
import sys

from deformfeat.logging import LOGGER_NAME, get_logger, setup_logging, timed


class TestSetupLogging:
    """Tests for setup_logging."""

    def test_console_on_stderr(self):
        """Test the console handler writes to stderr, never stdout."""
        logger = setup_logging()
        assert len(logger.handlers) == 1
        assert logger.handlers[0].stream is sys.stderr
        assert logger.level == logging.INFO

    def test_repeated_setup_does_not_stack(self):
        """Test calling setup twice leaves one console handler."""
        setup_logging()
        logger = setup_logging(debug=True)
        assert len(logger.handlers) == 1
        assert logger.level == logging.DEBUG

    def test_file_handler(self, tmp_path):
        """Test debug records reach the log file."""
        log_file = tmp_path / "logs" / "deformfeat.log"
        logger = setup_logging(debug=True, log_file=log_file)
        logger.debug("hello file")
        for handler in logger.handlers:
            handler.flush()

        assert "hello file" in log_file.read_text()
        setup_logging()

    def test_get_logger(self):
        """Test get_logger returns the package logger."""
        assert get_logger().name == LOGGER_NAME


class TestTimed:
    """Tests for the timed context manager."""

    def test_logs_label_and_milliseconds(self, caplog):
        """Test the block label is logged with its duration."""
        setup_logging(debug=True)
        with caplog.at_level(logging.DEBUG, logger=LOGGER_NAME):
            with timed("Backbone forward on 8x8"):
                pass

        messages = [r.getMessage() for r in caplog.records]
        assert any(m.startswith("Backbone forward on 8x8 in ") and m.endswith("ms") for m in messages)
        setup_logging()
