from .simple_timer import SimpleTimer  # noqa: F401
