"""
This module contains the base class for command-line command handlers.
"""

import sys
import time
import traceback
from abc import ABC, abstractmethod

from aqpt import app_utils
from aqpt.errors import DegenerateEnsembleError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_FAILURE = 2


class BaseCommandHandler(ABC):
    """
    BaseCommandHandler is a class that can be used as a base for the handlers
    of the ``aqpt`` subcommands. It provides exception handling, execution
    hooks and exit-code mapping. At the very least, subclasses must override
    the ``_handle()`` method.

    This class relies on some core attributes:

    - ``args``: the ``argparse.Namespace`` of the invocation;
    - ``job_return``: whatever ``_handle()`` returned, or the error details
        when the invocation failed;
    - ``exit_code``: 0 on success, 1 on validation errors, 2 on any other
        failure.
    """

    def __init__(self):
        self.args = None
        self.job_return = None
        self.exit_code = EXIT_OK
        self._started_at = None

    @staticmethod
    def extract_error_details(exception: Exception) -> dict:
        """
        Extracts error details from the exception.
        """
        # Extract the stack trace
        stack_trace = "".join(traceback.format_tb(exception.__traceback__))
        error_message = str(exception)
        error_type = exception.__class__.__name__

        # Traverse to the deepest frame in the traceback
        tb = exception.__traceback__
        deepest_frame = None
        while tb:
            deepest_frame = tb.tb_frame
            tb = tb.tb_next

        if deepest_frame:
            component = deepest_frame.f_globals.get("__name__", "unknown")
            location = deepest_frame.f_code.co_name
            line_number = deepest_frame.f_lineno
        else:
            component = "unknown"
            location = "unknown"
            line_number = "unknown"

        details = {
            "stack_trace": stack_trace,
            "error_message": error_message,
            "error_type": error_type,
            "component": component,
            "location": location,
            "line_number": line_number,
        }
        if isinstance(exception, DegenerateEnsembleError):
            details["ensemble"] = exception.details
        return details

    def _on_error(self, error_details: dict):
        """
        Handles errors that occur while running the command by logging the
        error details and a one-line message. It can be overridden for a
        custom behaviour.
        """
        self.do_log(title="Exception Found", obj=error_details)
        error_type = error_details["error_type"]
        self.print_error(f"{error_type}: {error_details['error_message']}")

    def _validate(self) -> bool:
        """
        Checks the command arguments before any work is done. Must return
        ``True`` when the invocation may proceed; ``False`` ends it with exit
        code 1. The default implementation simply returns ``True``.
        """
        return True  # default implementation

    def _before_handle(self):
        """
        Performs tasks that should be run before the main processing in
        ``_handle()``. The default implementation does nothing.
        """
        self.do_log("Running before_handle()...")

    def _after_handle(self):
        """
        Performs tasks that should be run after the main processing in
        ``_handle()``, such as writing output files. The default
        implementation does nothing.
        """
        self.do_log("Running after_handle()...")

    @abstractmethod
    def _handle(self):
        """
        The main method of the command, meant to be overridden by subclasses.
        """

    def __call__(self, args) -> int:
        """
        Services one invocation of the command and returns its exit code.
        """
        self.args = args
        self.do_log(vars(args) if hasattr(args, "__dict__") else args, title="*** Args")
        self._do_the_job()
        self.do_log(f"** Finishing {self.__class__.__name__} (exit {self.exit_code})")
        return self.exit_code

    def _do_the_job(self):
        """
        Invokes ``_validate()`` and stops with exit code 1 when it returns
        ``False``. Otherwise invokes, in order:

        - ``_before_handle()``
        - ``_handle()``
        - ``_after_handle()``

        An exception in any of them is turned into an error-details dict and
        passed to ``_on_error()``; ``ValidationError`` maps to exit code 1 and
        anything else to exit code 2. ``_report_execution_time()`` always runs.
        """
        self.job_return = None
        self.exit_code = EXIT_OK
        self._started_at = time.perf_counter()
        try:
            if not self._validate():
                self.exit_code = EXIT_VALIDATION
                return None
            self._before_handle()
            self.do_log("** before_handle() is done.")
            self.job_return = self._handle()
            self.do_log("** handle() is done.")
            self._after_handle()
            self.do_log("** after_handle() is done.")
        except Exception as e:
            self.exit_code = (
                EXIT_VALIDATION if isinstance(e, ValidationError) else EXIT_FAILURE
            )
            self.job_return = {"error": str(e), "class_name": self.__class__.__name__}
            self.job_return.update(self.extract_error_details(e))
            self._on_error(self.job_return)
        finally:
            self._report_execution_time()
        return self.job_return

    def _report_execution_time(self):
        elapsed = time.perf_counter() - (self._started_at or time.perf_counter())
        self.do_log(
            {"command": self.__class__.__name__, "elapsed_s": round(elapsed, 3)}
        )

    @staticmethod
    def print_error(message: str):
        """Writes a message for the user to stderr, regardless of logging."""
        print(message, file=sys.stderr)

    @staticmethod
    def do_log(obj, title=None, line_len_limit: int = 100, deep_limit: int = 3):
        """
        Wrapper function to call the do_log() function from the app_utils module.
        """
        app_utils._do_log(
            obj, title=title, line_len_limit=line_len_limit, deep_limit=deep_limit
        )

    @staticmethod
    def json_dumps(data, indent=4, cls=app_utils.NumpyEncoder) -> str:
        """
        Utility method to serialize data to JSON, including numpy and complex
        values.
        """
        return app_utils.json_dumps(data, indent=indent, cls=cls)

    @staticmethod
    def write_output(path, text: str):
        """Writes ``text`` atomically to ``path``, or to stdout without a path."""
        if path is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
        else:
            app_utils.write_atomic(path, text)
