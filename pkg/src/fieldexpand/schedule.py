"""Progressive-growth schedule: stage resolutions, step budgets, fade-in."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class StageSchedule:
    """Ordered resolution doublings with per-stage step budgets.

    Stage ``s`` trains at resolution ``base_resolution * 2**s``; the last
    stage therefore runs at ``base_resolution * 2**(num_stages - 1)``.
    """

    base_resolution: int
    num_stages: int
    steps_per_stage: tuple[int, ...]
    fade_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be >= 1")
        if self.num_stages < 1:
            raise ValueError("num_stages must be >= 1")
        if len(self.steps_per_stage) != self.num_stages:
            raise ValueError(
                f"steps_per_stage has {len(self.steps_per_stage)} entries, "
                f"expected {self.num_stages}"
            )
        if any(s < 1 for s in self.steps_per_stage):
            raise ValueError("every stage needs at least one step")
        if not 0.0 < self.fade_fraction <= 1.0:
            raise ValueError("fade_fraction must lie in (0, 1]")

    @property
    def final_stage(self) -> int:
        return self.num_stages - 1

    @property
    def final_resolution(self) -> int:
        return self.resolution(self.final_stage)

    @property
    def total_steps(self) -> int:
        return sum(self.steps_per_stage)

    def resolution(self, stage: int) -> int:
        if not 0 <= stage < self.num_stages:
            raise ValueError(f"stage {stage} out of range [0, {self.num_stages})")
        return self.base_resolution * 2**stage

    def stage_at(self, global_step: int) -> tuple[int, int]:
        """Map a 0-based global step index to (stage, step_in_stage)."""
        if global_step < 0:
            raise ValueError("global_step must be >= 0")
        remaining = global_step
        for stage, steps in enumerate(self.steps_per_stage):
            if remaining < steps:
                return stage, remaining
            remaining -= steps
        raise ValueError(f"global_step {global_step} beyond schedule end")


def fade_alpha(
    stage: int, step_in_stage: int, steps_in_stage: int, fade_fraction: float
) -> float:
    """Linear fade-in weight for the new resolution within a stage.

    Ramps from 0 to 1 over the first ``fade_fraction`` of the stage and
    stays at 1 afterwards. Stage 0 has no previous resolution to blend
    with, so it is always fully faded in.
    """
    if not 0 <= step_in_stage < steps_in_stage:
        raise ValueError("step_in_stage must lie in [0, steps_in_stage)")
    if not 0.0 < fade_fraction <= 1.0:
        raise ValueError("fade_fraction must lie in (0, 1]")
    if stage == 0:
        return 1.0
    return min(1.0, step_in_stage / (fade_fraction * steps_in_stage))
