"""
General-purpose utilities.
"""

import json
import os
import sys
import tempfile

import numpy as np

from aqpt import app_config


class NumpyEncoder(json.JSONEncoder):
    """
    Utility class to encode numpy scalars and arrays as plain JSON values.
    Complex numbers are encoded as ``[re, im]`` pairs.
    """

    def default(self, o):
        if isinstance(o, (complex, np.complexfloating)):
            return [float(o.real), float(o.imag)]
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def get_first_non_none(*args, **kwargs):
    """
    Returns the first argument that is not None, in case such an argument
    exists.
    """

    return next(
        (arg for arg in list(args) + list(kwargs.values()) if arg is not None), None
    )


def str_is_none_or_empty(s) -> bool:
    """
    Returns `True` in case the input argument is `None` or evaluates to an
    empty string, or `False` otherwise.
    """

    if s is None:
        return True
    if isinstance(s, str):
        return s.strip() == ""
    if str(s).strip() == "":
        return True
    return False


def is_numeric(x) -> bool:
    """
    Returns `True` in case the input argument is numeric. An argument is
    considered numeric if it is either an `int`, a `float`, or a string
    representing a finite number.
    """

    if x is None:
        return False

    try:
        return bool(np.isfinite(float(x)))
    except (TypeError, ValueError):
        return False


def json_dumps(data, indent=4, cls=NumpyEncoder) -> str:
    """
    Utility method to serialize data to JSON, including numpy and complex
    values.
    """
    return json.dumps(data, indent=indent, cls=cls)


def write_atomic(path: str, text: str):
    """
    Writes ``text`` to ``path`` so that readers never observe a partially
    written file: the content goes to a temporary file in the same directory
    which then replaces the target.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _do_log(
    obj,
    title=None,
    line_len_limit: int = 100,
    line_break_chars: str = " ",
    list_sample_size: int = 5,
    json_indent: int = 4,
    deep_limit: int = 3,
):
    """
    Logs an object to stderr in a single entry, truncating long values
    and handling nested structures. Provides a clear, flat representation of
    the object with truncated values for improved readability. Nothing is
    printed when logging is disabled through ``AQPT_LOG_ENABLED``.

    Args:
        obj: The object to log. Can be a dict, list, or any other data type.
        title (str, optional): A title to print before the log.
        line_len_limit (int): Maximum length for any single value in the log.
        line_break_chars (str): Characters to replace line breaks in the output.
        list_sample_size (int): Number of list elements to display before truncating.
        json_indent (int): Indentation level for JSON formatting.
        deep_limit (int): Maximum depth for processing nested structures.
    """
    if not app_config.AQPT_LOG_ENABLED:
        return

    def truncate(value, limit):
        """
        Truncates a string or value to the specified limit,
        adding ellipsis if truncated. Numbers are kept as they are.
        """
        if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(
            value, (bool, np.bool_)
        ):
            return value
        value = str(value)
        if len(value) > limit:
            return value[:limit] + "..."
        return value

    def process(obj, deep=1):
        """
        Recursively processes objects (dicts and lists) into a flat
        representation with truncation.
        """
        if isinstance(obj, np.ndarray):
            obj = obj.tolist()
        if deep >= deep_limit:
            return truncate(obj, line_len_limit)

        if isinstance(obj, dict):
            return {k: process(v, deep + 1) for k, v in obj.items()}
        elif isinstance(obj, (list, tuple)):
            truncated_list = [process(v, deep + 1) for v in obj[:list_sample_size]]
            if len(obj) > list_sample_size:
                truncated_list.append(f"<...and {len(obj) - list_sample_size} more>")
            return truncated_list
        return truncate(obj, line_len_limit)

    processed_obj = process(obj)

    log_message = ""
    if isinstance(processed_obj, str):
        log_message = processed_obj
    else:
        log_message = json_dumps(processed_obj, indent=json_indent)

    log_message = log_message.replace("\n", line_break_chars)

    if title:
        print(title, file=sys.stderr)

    print(log_message, file=sys.stderr)
