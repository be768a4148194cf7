import logging
import time
from typing import Any, Callable, Optional


LOG = logging.getLogger(__name__)


class SimpleTimer:
    """
    Context manager logging a message on entry and the elapsed wall time on
    exit.

    >>> with SimpleTimer("Fusing %d instances", None, 3) as t:
    ...     pass
    >>> t.elapsed >= 0.0
    True
    """

    def __init__(self, msg: str, log_func: Optional[Callable[..., None]] = None,
                 *args: Any):
        """
        :param msg: Message logged before and after the context block.
        :param log_func: Callable receiving the message and its arguments.
            Defaults to this module's logger at INFO level.
        :param args: ``%``-style formatting arguments for ``msg``.
        """
        self._log_func = log_func or LOG.info
        self._msg = msg
        self._msg_args = args
        self._start = 0.0
        self.elapsed = 0.0

    def __enter__(self) -> "SimpleTimer":
        self._log_func(self._msg, *self._msg_args)
        self._start = time.perf_counter()
        return self

    def __exit__(self, *_: Any) -> None:
        self.elapsed = time.perf_counter() - self._start
        self._log_func(self._msg + " -> %f s",
                       *(self._msg_args + (self.elapsed,)))
