# Copyright (c) 2025, xqcfd contributors
# For license information, please see license.txt

import hashlib
import importlib
import logging
import os

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from xqcfd import hooks
from xqcfd.exceptions import UnknownIdentifierError, XqcfdError

LOGGER_NAME = "xqcfd"
INDICATOR_STYLES = {"blue": "bold blue", "green": "bold green", "orange": "bold yellow", "red": "bold red"}

console = Console(highlight=False)


def get_logger(module: str = None) -> logging.Logger:
	"""Return the `xqcfd` logger, or the child logger of a module."""
	if not module or module == LOGGER_NAME:
		return logging.getLogger(LOGGER_NAME)
	if not module.startswith(LOGGER_NAME + "."):
		module = f"{LOGGER_NAME}.{module}"
	return logging.getLogger(module)


def configure_logging(level: str = None) -> None:
	"""Attach a rich handler to the package logger. Safe to call repeatedly."""
	level = (level or os.environ.get("XQCFD_LOG_LEVEL") or "INFO").upper()
	logger = get_logger()
	logger.setLevel(level)
	if not any(isinstance(handler, RichHandler) for handler in logger.handlers):
		logger.addHandler(RichHandler(console=console, show_path=False, markup=False))
	logger.propagate = False


def log_error(title: str, logger: logging.Logger = None) -> None:
	"""Record the exception currently being handled, with its traceback, under `title`."""
	(logger or get_logger("errors")).exception(title)


def throw(msg: str, exc: type[Exception] = XqcfdError, title: str = None):
	"""Raise `exc` with `msg`. The title, when given, prefixes the message."""
	if title:
		msg = f"{title}: {msg}"
	raise exc(msg)


def msgprint(msg: str, title: str = None, indicator: str = "blue") -> None:
	"""Print a user-facing message on the console."""
	style = INDICATOR_STYLES.get(indicator, "bold")
	if title:
		console.print(f"[{style}]{title}[/{style}]")
	console.print(msg)


def get_attr(method_path: str):
	"""Resolve a dotted path such as `xqcfd.envs.envs.PointReach` to the object it names."""
	module_name, _, attr = method_path.rpartition(".")
	if not module_name:
		throw("Invalid dotted path {0}".format(method_path), UnknownIdentifierError)
	module = importlib.import_module(module_name)
	try:
		return getattr(module, attr)
	except AttributeError:
		throw("{0} has no attribute {1}".format(module_name, attr), UnknownIdentifierError)


def get_hooks(hook: str) -> dict:
	"""Return a registry declared in `xqcfd.hooks`."""
	registry = getattr(hooks, hook, None)
	if registry is None:
		throw("Unknown hook {0}".format(hook), UnknownIdentifierError)
	return registry


def resolve(hook: str, key: str):
	"""Look `key` up in the `hook` registry and import what it points to."""
	registry = get_hooks(hook)
	if key not in registry:
		throw(
			"Unknown {0} '{1}'. Known: {2}".format(hook, key, ", ".join(sorted(registry))),
			UnknownIdentifierError,
		)
	return get_attr(registry[key])


def checksum(*arrays) -> str:
	"""SHA-256 over the raw bytes of the given arrays, in order."""
	digest = hashlib.sha256()
	for array in arrays:
		array = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
		digest.update(str(array.shape).encode())
		digest.update(array.tobytes())
	return digest.hexdigest()


def env_flag(name: str) -> bool:
	return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


def env_int(name: str, default: int = None) -> int:
	value = os.environ.get(name)
	if value is None or not value.strip():
		return default
	try:
		return int(value)
	except ValueError:
		throw("{0} must be an integer, got {1!r}".format(name, value), XqcfdError)
