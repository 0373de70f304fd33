"""Scoring candidate bimanual plans against reference demonstrations.

The deterministic rubric implements four checks; the final score starts at
3, adds each check's delta, and clamps into [1, 5]. The llm mode emits the
validator prompt instead and parses the JSON verdict, recomputing the
score from the reported checks whenever the clamp identity is violated.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .errors import JudgeParseError
from .perception import Observation, observation_l1
from .prompts import build_judge_prompt

COLLISION_DISTANCE = 10.0
FIRST_ACTION_TOLERANCE = 5
ZONE_LIMIT_RIGHT = 30  # right arm should keep x strictly above this
ZONE_LIMIT_LEFT = 70  # left arm should keep x strictly below this
ZONE_VIOLATION_STEPS = 3

_CHECK_VALUE = re.compile(r"^\s*([+-]?\d+)")


@dataclass(frozen=True)
class JudgeVerdict:
    """Per-check deltas and the clamped 1-5 consistency score."""

    check1: int  # collision risk: +1 or -1
    check2: int  # target/trajectory match: +1 or -1
    check3: int  # gripper logic: 0 or -1
    check4: int  # workspace zones: 0 or -1
    score: int
    reasons: dict[str, str] = field(default_factory=dict)


def clamp_score(check1: int, check2: int, check3: int, check4: int) -> int:
    return min(5, max(1, 3 + check1 + check2 + check3 + check4))


def nearest_demo_index(demos, obs: Observation) -> int:
    """Demo with minimal summed L1 observation distance; lowest index wins ties."""
    if not demos:
        raise ValueError("at least one demonstration is required")
    distances = [observation_l1(obs, d.observation) for d in demos]
    return min(range(len(demos)), key=lambda i: distances[i])


def _moved(plan, step: int, arm: str) -> bool:
    # Step 0 counts as moving: the arm just traveled there from its home pose.
    if step == 0:
        return True
    return plan[step].arm(arm).voxel != plan[step - 1].arm(arm).voxel


def check_collision(plan):
    """-1 iff the arms come within 10 voxels while both are moving."""
    for step in range(len(plan)):
        r = plan[step].right.voxel
        l = plan[step].left.voxel
        dist = math.dist(r, l)
        if dist < COLLISION_DISTANCE and _moved(plan, step, "right") and _moved(plan, step, "left"):
            return -1, f"distance {dist:.2f} < {COLLISION_DISTANCE:g} at step {step} with both arms moving"
    return 1, "all steps keep safe separation while both arms move"


def _z_shape(actions, arm: str):
    """Sign sequence of z deltas, zeros dropped."""
    zs = [a.arm(arm).voxel[2] for a in actions]
    signs = []
    for prev, cur in zip(zs, zs[1:]):
        if cur != prev:
            signs.append(1 if cur > prev else -1)
    return tuple(signs)


def check_demo_match(plan, demos, obs: Observation):
    """+1 iff first actions land near the nearest demo's and z shapes agree."""
    idx = nearest_demo_index(demos, obs)
    demo = demos[idx]
    for arm in ("right", "left"):
        first_plan = plan[0].arm(arm).voxel
        first_demo = demo.actions[0].arm(arm).voxel
        gap = max(abs(a - b) for a, b in zip(first_plan, first_demo))
        if gap > FIRST_ACTION_TOLERANCE:
            return -1, f"{arm} first action is {gap} voxels (Linf) from demo {idx}"
        if _z_shape(plan, arm) != _z_shape(demo.actions, arm):
            return -1, f"{arm} z-trajectory shape differs from demo {idx}"
    return 1, f"first actions and z shapes match demo {idx}"


def _gripper_transitions(actions, arm: str):
    bits = [a.arm(arm).gripper for a in actions]
    return tuple((prev, cur) for prev, cur in zip(bits, bits[1:]) if prev != cur)


def check_gripper(plan, demos, obs: Observation):
    """-1 iff either arm's gripper transition sequence differs from the nearest demo's."""
    idx = nearest_demo_index(demos, obs)
    demo = demos[idx]
    for arm in ("right", "left"):
        if _gripper_transitions(plan, arm) != _gripper_transitions(demo.actions, arm):
            return -1, f"{arm} gripper transitions differ from demo {idx}"
    return 0, f"gripper transitions match demo {idx}"


def check_workspace(plan):
    """-1 iff an arm spends more than 3 steps in the opposite arm's zone."""
    right_bad = sum(1 for a in plan if a.right.voxel[0] <= ZONE_LIMIT_RIGHT)
    left_bad = sum(1 for a in plan if a.left.voxel[0] >= ZONE_LIMIT_LEFT)
    if right_bad > ZONE_VIOLATION_STEPS:
        return -1, f"right arm at x <= {ZONE_LIMIT_RIGHT} for {right_bad} steps"
    if left_bad > ZONE_VIOLATION_STEPS:
        return -1, f"left arm at x >= {ZONE_LIMIT_LEFT} for {left_bad} steps"
    return 0, "both arms stay in their reachable zones"


def score_plan(plan, demos, obs: Observation, mode: str = "rubric", gateway=None,
               temperature: float = 0.0, max_retries: int = 2) -> JudgeVerdict:
    """Score a candidate plan; rubric mode is pure, llm mode calls the gateway."""
    plan = tuple(plan)
    if not plan:
        raise ValueError("cannot score an empty plan")
    if mode == "rubric":
        c1, r1 = check_collision(plan)
        c2, r2 = check_demo_match(plan, demos, obs)
        c3, r3 = check_gripper(plan, demos, obs)
        c4, r4 = check_workspace(plan)
        return JudgeVerdict(
            check1=c1,
            check2=c2,
            check3=c3,
            check4=c4,
            score=clamp_score(c1, c2, c3, c4),
            reasons={"check1": r1, "check2": r2, "check3": r3, "check4": r4},
        )
    if mode != "llm":
        raise ValueError(f"unknown judge mode {mode!r}")
    if gateway is None:
        raise ValueError("llm mode requires a gateway")

    from .gateway import ChatRequest  # local import; gateway lazily imports us back

    bundle = build_judge_prompt(demos, obs, plan)
    req = ChatRequest(
        system=bundle.system_text, user=bundle.user_text, temperature=temperature, tag="judge"
    )
    last_error = None
    for attempt in range(1, max_retries + 2):
        text, record = gateway.complete_with_record(req, attempt=attempt)
        try:
            return parse_verdict(text)
        except JudgeParseError as exc:
            record.outcome = "parse_fail"
            last_error = exc
    raise JudgeParseError(f"no parseable verdict after {max_retries + 1} attempts: {last_error}")


def parse_verdict(text: str) -> JudgeVerdict:
    """Parse the judge's JSON verdict, tolerating surrounding prose.

    A reported score violating score = clamp(3 + sum(checks), 1, 5) is
    corrected from the reported check values, not trusted.
    """
    payload = _extract_json_object(text)
    checks = []
    reasons = {}
    for key, allowed in (
        ("check1", (1, -1)),
        ("check2", (1, -1)),
        ("check3", (0, -1)),
        ("check4", (0, -1)),
    ):
        raw = payload.get(key)
        if raw is None:
            raise JudgeParseError(f"verdict missing {key}")
        if isinstance(raw, (int, float)):
            value, reason = int(raw), ""
        else:
            match = _CHECK_VALUE.match(str(raw))
            if not match:
                raise JudgeParseError(f"cannot read {key} from {raw!r}")
            value = int(match.group(1))
            reason = str(raw).split(":", 1)[1].strip() if ":" in str(raw) else ""
        if value not in allowed:
            raise JudgeParseError(f"{key} value {value} not in {allowed}")
        checks.append(value)
        reasons[key] = reason
    expected = clamp_score(*checks)
    reported = payload.get("score")
    score = expected if reported != expected else int(reported)
    return JudgeVerdict(
        check1=checks[0], check2=checks[1], check3=checks[2], check4=checks[3],
        score=score, reasons=reasons,
    )


def verdict_to_json(verdict: JudgeVerdict) -> str:
    """Render a verdict in the exact JSON schema the llm judge must emit."""

    def check_str(value: int, key: str) -> str:
        reason = verdict.reasons.get(key, "")
        prefix = str(value) if value == 0 else f"{value:+d}"
        return f"{prefix}: {reason}" if reason else prefix

    return json.dumps(
        {
            "check1": check_str(verdict.check1, "check1"),
            "check2": check_str(verdict.check2, "check2"),
            "check3": check_str(verdict.check3, "check3"),
            "check4": check_str(verdict.check4, "check4"),
            "score": verdict.score,
        }
    )


def _extract_json_object(text: str) -> dict:
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        value = json.loads(text[start : i + 1])
                    except ValueError:
                        break
                    if isinstance(value, dict):
                        return value
                    break
        start = text.find("{", start + 1)
    raise JudgeParseError(f"no JSON object found in verdict: {text[:120]!r}")


class PlanJudge:
    """Configured judge: rubric (pure) or llm (through a gateway)."""

    def __init__(self, mode: str = "rubric", gateway=None, temperature: float = 0.0,
                 max_retries: int = 2):
        if mode not in ("rubric", "llm"):
            raise ValueError(f"unknown judge mode {mode!r}")
        self.mode = mode
        self.gateway = gateway
        self.temperature = temperature
        self.max_retries = max_retries

    def score(self, plan, demos, obs: Observation) -> JudgeVerdict:
        return score_plan(
            plan, demos, obs,
            mode=self.mode, gateway=self.gateway,
            temperature=self.temperature, max_retries=self.max_retries,
        )
