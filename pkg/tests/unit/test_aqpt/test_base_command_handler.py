import argparse
from unittest.mock import patch

import pytest

from aqpt.base_command_handler import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_VALIDATION,
    BaseCommandHandler,
)
from aqpt.errors import DegenerateEnsembleError, ValidationError


# Create concrete subclasses for testing purposes
class DefaultCommandHandler(BaseCommandHandler):
    def _handle(self):
        return "Default handle executed"


class TestCommandHandler(BaseCommandHandler):
    def _handle(self):
        return "Test handle executed"

    def _before_handle(self):
        self.do_log("Overridden before_handle() executed")

    def _after_handle(self):
        self.do_log("Overridden after_handle() executed")


class RejectingCommandHandler(DefaultCommandHandler):
    def _validate(self) -> bool:
        return False


class FailingCommandHandler(BaseCommandHandler):
    def __init__(self, error):
        super().__init__()
        self.error = error

    def _handle(self):
        raise self.error


def namespace(**values):
    return argparse.Namespace(**values)


class TestBaseCommandHandler:
    def setup_method(self):
        self.handler = TestCommandHandler()

    def test_initialization(self):
        assert self.handler.args is None
        assert self.handler.job_return is None
        assert self.handler.exit_code == EXIT_OK

    def test_validate_default(self):
        assert DefaultCommandHandler()._validate() is True

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_before_handle_default(self, mock_do_log):
        DefaultCommandHandler()._before_handle()
        mock_do_log.assert_any_call("Running before_handle()...")

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_before_handle_overridden(self, mock_do_log):
        self.handler._before_handle()
        mock_do_log.assert_any_call("Overridden before_handle() executed")

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_after_handle_default(self, mock_do_log):
        DefaultCommandHandler()._after_handle()
        mock_do_log.assert_any_call("Running after_handle()...")

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_after_handle_overridden(self, mock_do_log):
        self.handler._after_handle()
        mock_do_log.assert_any_call("Overridden after_handle() executed")

    def test_handle_not_implemented(self):
        class IncompleteHandler(BaseCommandHandler):
            pass

        with pytest.raises(
            TypeError,
            match=r"^Can't instantiate abstract class IncompleteHandler*",
        ):
            IncompleteHandler()

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_call_method(self, mock_do_log):
        args = namespace(flag=True)
        exit_code = self.handler(args)

        assert exit_code == EXIT_OK
        assert self.handler.args is args
        assert self.handler.job_return == "Test handle executed"
        mock_do_log.assert_any_call({"flag": True}, title="*** Args")
        mock_do_log.assert_any_call("** Finishing TestCommandHandler (exit 0)")

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_failed_validation(self, mock_do_log):
        handler = RejectingCommandHandler()
        assert handler(namespace()) == EXIT_VALIDATION
        assert handler.job_return is None

    @patch("aqpt.base_command_handler.BaseCommandHandler.print_error")
    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_validation_error_exit_code(self, mock_do_log, mock_print_error):
        handler = FailingCommandHandler(ValidationError("bad input"))
        assert handler(namespace()) == EXIT_VALIDATION
        assert handler.job_return["error_type"] == "ValidationError"
        assert handler.job_return["error_message"] == "bad input"
        mock_print_error.assert_called_once_with("ValidationError: bad input")

    @patch("aqpt.base_command_handler.BaseCommandHandler.print_error")
    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_runtime_error_exit_code(self, mock_do_log, mock_print_error):
        handler = FailingCommandHandler(RuntimeError("boom"))
        assert handler(namespace()) == EXIT_FAILURE
        assert handler.job_return["class_name"] == "FailingCommandHandler"
        mock_do_log.assert_any_call(title="Exception Found", obj=handler.job_return)

    @patch("aqpt.base_command_handler.BaseCommandHandler.print_error")
    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_degenerate_ensemble_dump(self, mock_do_log, mock_print_error):
        error = DegenerateEnsembleError("no support", details={"S": 10, "seed": 3})
        handler = FailingCommandHandler(error)
        assert handler(namespace()) == EXIT_FAILURE
        assert handler.job_return["ensemble"] == {"S": 10, "seed": 3}

    def test_extract_error_details(self):
        try:
            raise ValueError("Test error")
        except ValueError as e:
            details = BaseCommandHandler.extract_error_details(e)

        assert details["error_message"] == "Test error"
        assert details["error_type"] == "ValueError"
        assert details["location"] == "test_extract_error_details"
        assert "stack_trace" in details
        assert "ensemble" not in details

    @patch("aqpt.base_command_handler.BaseCommandHandler.do_log")
    def test_execution_time_is_reported(self, mock_do_log):
        self.handler(namespace())
        timing = [
            c.args[0]
            for c in mock_do_log.call_args_list
            if c.args and isinstance(c.args[0], dict) and "elapsed_s" in c.args[0]
        ]
        assert timing and timing[0]["command"] == "TestCommandHandler"

    def test_write_output(self, tmp_path, capsys):
        BaseCommandHandler.write_output(None, "on stdout")
        assert capsys.readouterr().out == "on stdout\n"
        path = tmp_path / "out.json"
        text = BaseCommandHandler.json_dumps({"a": 1})
        BaseCommandHandler.write_output(str(path), text)
        assert path.read_text(encoding="utf-8") == '{\n    "a": 1\n}'
