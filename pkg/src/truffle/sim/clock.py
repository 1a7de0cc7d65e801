from __future__ import annotations

import time


class SimClock:
    """Wall clock with a global time-scale factor.

    Delays are expressed in model milliseconds and slept for
    ``ms * scale`` real milliseconds; ``now_ms`` reports model milliseconds
    since the clock was created, so measurements come back in the same unit
    as the latency model regardless of the scale.
    """

    def __init__(self, scale: float = 1.0):
        if scale <= 0:
            raise ValueError("scale must be > 0")
        self.scale = scale
        self._t0 = time.perf_counter()

    def now_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0 / self.scale

    def sleep(self, model_ms: float) -> None:
        if model_ms > 0:
            time.sleep(model_ms * self.scale / 1000.0)

    def to_real_ms(self, model_ms: float) -> float:
        return model_ms * self.scale
