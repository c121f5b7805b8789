"""Polynomial and step learning-rate decay."""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class LrSchedule:
    kind: str
    base: float
    max_iter: int
    power: float = 0.9
    gamma: float = 0.1
    step: int = 20_000

    def __post_init__(self):
        if self.kind not in ("polynomial", "step"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base <= 0 or self.max_iter < 1:
            raise ValueError("base rate must be positive and max_iter >= 1")
        if self.kind == "step" and (self.step < 1 or not 0 < self.gamma <= 1):
            raise ValueError("step schedule needs step >= 1 and gamma in (0, 1]")

    def lr_at(self, k):
        if not 0 <= k <= self.max_iter:
            raise ValueError(f"iteration {k} outside [0, {self.max_iter}]")
        if self.kind == "polynomial":
            return self.base * (1.0 - k / self.max_iter) ** self.power
        return self.base * self.gamma ** (k // self.step)

    def with_base(self, base):
        return replace(self, base=base)


def lr_at(schedule, k):
    return schedule.lr_at(k)


# Published settings for the three networks (20k iterations each).
UNARY_SCHEDULE = LrSchedule("polynomial", base=1e-3, max_iter=20_000, power=0.9)
PAIRWISE_SCHEDULE = LrSchedule("polynomial", base=1e-5, max_iter=20_000, power=0.5)
REGION_SCHEDULE = LrSchedule("step", base=1e-3, max_iter=40_000, gamma=0.1, step=20_000)
