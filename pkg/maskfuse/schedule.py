"""
Three phase learning rate curve: warmup, constant plateau, then a
descending course down to a final rate.
"""
from dataclasses import dataclass
import logging
import math
from typing import Any, Dict, List, Tuple

from smqtk_core import Configurable

from maskfuse.exceptions import InvalidConfigError


LOG = logging.getLogger(__name__)

WARMUP_SHAPES = ("linear",)
DECAY_SHAPES = ("linear", "exponential")


@dataclass(frozen=True)
class ScheduleConfig (Configurable):
    """
    Parameters of the learning rate curve.

    The default magnitudes are common fine-tuning values; adjust them to
    the optimizer at hand.

    :param lr_start: Rate at step 0 when there is a warmup phase.
    :param lr_max: Plateau rate.
    :param lr_end: Rate reached at the end of the decay and held after.
    :param warmup_steps: Steps spent rising from ``lr_start`` to ``lr_max``.
    :param plateau_steps: Steps held at ``lr_max``.
    :param decay_steps: Steps spent falling from ``lr_max`` to ``lr_end``.
    :param warmup_shape: Only ``linear``.
    :param decay_shape: ``linear`` or ``exponential``.
    """
    lr_start: float = 1e-5
    lr_max: float = 1e-3
    lr_end: float = 1e-6
    warmup_steps: int = 10
    plateau_steps: int = 40
    decay_steps: int = 50
    warmup_shape: str = "linear"
    decay_shape: str = "linear"

    def __post_init__(self) -> None:
        for name in ("lr_start", "lr_max", "lr_end"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)
                    and v > 0):
                raise InvalidConfigError("%s must be a positive finite "
                                         "number, given %r" % (name, v))
        for name in ("warmup_steps", "plateau_steps", "decay_steps"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise InvalidConfigError("%s must be a non-negative "
                                         "integer, given %r" % (name, v))
        if self.lr_start > self.lr_max:
            raise InvalidConfigError("lr_start (%g) exceeds lr_max (%g)"
                                     % (self.lr_start, self.lr_max))
        if self.lr_end > self.lr_max:
            raise InvalidConfigError("lr_end (%g) exceeds lr_max (%g)"
                                     % (self.lr_end, self.lr_max))
        if self.total_steps == 0:
            raise InvalidConfigError("Schedule must span at least one step")
        if self.warmup_shape not in WARMUP_SHAPES:
            raise InvalidConfigError("Unknown warmup shape %r"
                                     % (self.warmup_shape,))
        if self.decay_shape not in DECAY_SHAPES:
            raise InvalidConfigError("Unknown decay shape %r, expected one "
                                     "of %s" % (self.decay_shape,
                                                DECAY_SHAPES))

    @classmethod
    def constant(cls, lr: float, steps: int) -> "ScheduleConfig":
        """ A flat rate for ``steps`` steps. """
        return cls(lr_start=lr, lr_max=lr, lr_end=lr, warmup_steps=0,
                   plateau_steps=steps, decay_steps=0)

    @classmethod
    def exponential(cls, lr_max: float, lr_end: float,
                    steps: int) -> "ScheduleConfig":
        """ Pure exponential decay from ``lr_max`` to ``lr_end``. """
        return cls(lr_start=lr_max, lr_max=lr_max, lr_end=lr_end,
                   warmup_steps=0, plateau_steps=0, decay_steps=steps,
                   decay_shape="exponential")

    @property
    def total_steps(self) -> int:
        return self.warmup_steps + self.plateau_steps + self.decay_steps

    def get_config(self) -> Dict[str, Any]:
        return {
            "lr_start": self.lr_start,
            "lr_max": self.lr_max,
            "lr_end": self.lr_end,
            "warmup_steps": self.warmup_steps,
            "plateau_steps": self.plateau_steps,
            "decay_steps": self.decay_steps,
            "warmup_shape": self.warmup_shape,
            "decay_shape": self.decay_shape,
        }


def lr_at(cfg: ScheduleConfig, step: int) -> float:
    """
    Learning rate at a step. Steps at or past the end of the decay give
    ``lr_end``.

    >>> cfg = ScheduleConfig(lr_start=0.1, lr_max=1.0, lr_end=0.5,
    ...                      warmup_steps=2, plateau_steps=1, decay_steps=2)
    >>> [lr_at(cfg, s) for s in range(6)]
    [0.1, 0.55, 1.0, 1.0, 0.75, 0.5]

    :raises ValueError: Negative step.
    """
    if step < 0:
        raise ValueError("Step must be non-negative, given %d" % step)
    w, p, d = cfg.warmup_steps, cfg.plateau_steps, cfg.decay_steps
    if step < w:
        return cfg.lr_start + (cfg.lr_max - cfg.lr_start) * step / w
    if step < w + p:
        return cfg.lr_max
    k = step - w - p
    if k >= d:
        return cfg.lr_end
    frac = k / d
    if cfg.decay_shape == "exponential":
        return cfg.lr_max * (cfg.lr_end / cfg.lr_max) ** frac
    return cfg.lr_max + (cfg.lr_end - cfg.lr_max) * frac


def emit_curve(cfg: ScheduleConfig,
               total_steps: int) -> List[Tuple[int, float]]:
    """
    :return: ``(step, rate)`` rows for steps ``0..total_steps-1``.
    :raises ValueError: ``total_steps`` below 1.
    """
    if total_steps < 1:
        raise ValueError("Curve needs at least one step, given %d"
                         % total_steps)
    LOG.debug("Emitting %d learning rate step(s)", total_steps)
    return [(s, lr_at(cfg, s)) for s in range(total_steps)]
