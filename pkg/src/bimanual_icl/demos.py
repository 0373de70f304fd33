"""Episode keyframing, demonstration records, and batch sampling."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .actions import BimanualAction, ContinuousPose, DEFAULT_BOUNDS, WorkspaceBounds, discretize_pose
from .errors import EmptyEpisode, InsufficientDemos
from .perception import Observation

DEFAULT_SPEED_EPS = 1e-3


@dataclass(frozen=True)
class EpisodeStep:
    """One raw timestep of a recorded episode, both arms."""

    right: ContinuousPose
    left: ContinuousPose
    right_joint_speed: float
    left_joint_speed: float
    is_terminal: bool = False

    def __post_init__(self):
        for speed in (self.right_joint_speed, self.left_joint_speed):
            if not speed >= 0.0:
                raise ValueError(f"joint speed {speed} must be finite and non-negative")


@dataclass
class Demonstration:
    """Initial observation plus the keyframed bimanual action sequence."""

    observation: Observation
    actions: tuple[BimanualAction, ...]

    def __post_init__(self):
        self.actions = tuple(self.actions)
        if not self.actions:
            raise ValueError("a demonstration needs at least one action")


def extract_keyframes(steps, speed_eps: float = DEFAULT_SPEED_EPS,
                      bounds: WorkspaceBounds = DEFAULT_BOUNDS) -> tuple[BimanualAction, ...]:
    """Select and discretize the salient steps of an episode.

    A step is a keyframe if any of:
      a. either arm's discretized gripper bit changed from the previous step,
      b. both arms' joint speeds dropped below ``speed_eps`` and the previous
         step was not already below it (rising edge only, so a long pause
         emits one keyframe),
      c. the step is terminal.

    Each step is emitted at most once even when several rules fire, and
    consecutive duplicate discretized actions are collapsed.
    """
    steps = list(steps)
    if not steps:
        raise EmptyEpisode("cannot extract keyframes from an empty episode")

    discretized = [
        BimanualAction(
            right=discretize_pose(s.right, bounds),
            left=discretize_pose(s.left, bounds),
        )
        for s in steps
    ]

    keyframes = []
    prev_below = False
    for i, (step, action) in enumerate(zip(steps, discretized)):
        below = step.right_joint_speed < speed_eps and step.left_joint_speed < speed_eps
        gripper_change = i > 0 and (
            action.right.gripper != discretized[i - 1].right.gripper
            or action.left.gripper != discretized[i - 1].left.gripper
        )
        if gripper_change or (below and not prev_below) or step.is_terminal:
            keyframes.append(action)
        prev_below = below

    return collapse_duplicates(keyframes)


def collapse_duplicates(actions) -> tuple[BimanualAction, ...]:
    """Drop actions identical to their immediate predecessor (idempotent)."""
    out = []
    for action in actions:
        if not out or action != out[-1]:
            out.append(action)
    return tuple(out)


def sample_batch(store, n: int, seed: int) -> list[Demonstration]:
    """Draw n distinct demonstrations uniformly without replacement, seeded."""
    store = list(store)
    if len(store) < n:
        raise InsufficientDemos(f"store holds {len(store)} demos, need {n}")
    return random.Random(seed).sample(store, n)


def demonstration_to_dict(demo: Demonstration) -> dict:
    return {
        "observation": {name: list(voxel) for name, voxel in demo.observation.entries.items()},
        "actions": [list(a.as_tuple()) for a in demo.actions],
    }


def demonstration_from_dict(payload: dict) -> Demonstration:
    obs = Observation(entries={
        name: tuple(int(v) for v in voxel) for name, voxel in payload["observation"].items()
    })
    actions = tuple(BimanualAction.from_tuple(a) for a in payload["actions"])
    return Demonstration(observation=obs, actions=actions)


def save_demonstration(path, demo: Demonstration):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(demonstration_to_dict(demo), fh)
        fh.write("\n")


def load_demonstration(path) -> Demonstration:
    with open(path, encoding="utf-8") as fh:
        return demonstration_from_dict(json.load(fh))


def load_demo_dir(directory) -> list[Demonstration]:
    """Load every *.json demonstration in a directory, sorted by filename."""
    paths = sorted(Path(directory).glob("*.json"))
    return [load_demonstration(p) for p in paths]


def save_demo_dir(directory, demos):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, demo in enumerate(demos):
        save_demonstration(directory / f"demo_{i:05d}.json", demo)
