"""The prediction strategies: single/dual agent, leader-follower, debate, best-of-n.

Every strategy predicts the full keyframe trajectory once from the initial
observation (open loop). Call budgets with a first-try-valid backend:
single_agent=1, dual_agent=2, leader_follower=2, arms_debate=4,
best_of_n=3n, debate_plus_bon=5n.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .actions import BimanualAction
from .demos import sample_batch
from .errors import AllCandidatesFailed, ConfigError, EmptyTrajectory, ExhaustedRetries
from .gateway import ChatRequest, ChatGateway
from .judge import PlanJudge
from .perception import Observation
from .prompts import build_conditioned_prompt, build_follower_prompt, build_single_prompt

STRATEGY_KINDS = (
    "single_agent",
    "dual_agent",
    "leader_follower",
    "arms_debate",
    "best_of_n",
    "debate_plus_bon",
)


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "leader_follower"
    leader_arm: str = "right"
    n_candidates: int = 5
    max_retries: int = 2
    temperature: float = 1.0  # candidate sampling; the judge runs at its own temperature
    judge_temperature: float = 0.0
    resample_demos: bool = False  # best-of-n: fresh batch per candidate instead of one shared

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.leader_arm not in ("right", "left"):
            raise ConfigError(f"leader_arm must be 'right' or 'left', got {self.leader_arm!r}")
        if self.n_candidates < 1:
            raise ConfigError("n_candidates must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")


@dataclass(frozen=True)
class BimanualPlan:
    """A predicted keyframe trajectory plus how it was produced."""

    actions: tuple[BimanualAction, ...]
    kind: str
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.actions:
            raise EmptyTrajectory("a plan needs at least one action")


def compose(leader_traj, follower_traj, leader_is_right: bool = True,
            kind: str = "leader_follower", tags=()) -> BimanualPlan:
    """Zip two single-arm trajectories to the longer length.

    The shorter trajectory is padded by repeating its final action; the
    leader lands in the right-arm slot iff ``leader_is_right``.
    """
    leader_traj = tuple(leader_traj)
    follower_traj = tuple(follower_traj)
    if not leader_traj or not follower_traj:
        raise EmptyTrajectory("both trajectories must be non-empty")
    length = max(len(leader_traj), len(follower_traj))
    actions = []
    for k in range(length):
        lead = leader_traj[min(k, len(leader_traj) - 1)]
        follow = follower_traj[min(k, len(follower_traj) - 1)]
        if leader_is_right:
            actions.append(BimanualAction(right=lead, left=follow))
        else:
            actions.append(BimanualAction(right=follow, left=lead))
    return BimanualPlan(actions=tuple(actions), kind=kind, tags=tuple(tags))


def _call(gateway: ChatGateway, bundle, cfg: StrategyConfig, tag: str, arity: int,
          phase: str):
    req = ChatRequest(
        system=bundle.system_text,
        user=bundle.user_text,
        temperature=cfg.temperature,
        tag=tag,
    )
    try:
        return gateway.complete_parsed(req, arity=arity, max_retries=cfg.max_retries)
    except ExhaustedRetries as exc:
        exc.phase = phase
        raise


def run_single_agent(gateway: ChatGateway, demos, obs: Observation,
                     cfg: StrategyConfig | None = None) -> BimanualPlan:
    """One arity-14 call predicting both arms jointly."""
    cfg = cfg or StrategyConfig(kind="single_agent")
    bundle = build_single_prompt(demos, obs, arm_filter="both", role="single")
    parsed = _call(gateway, bundle, cfg, tag="single", arity=14, phase="single")
    return BimanualPlan(actions=parsed.to_bimanual(), kind="single_agent", tags=("single",))


def run_dual_agent(gateway: ChatGateway, demos, obs: Observation,
                   cfg: StrategyConfig | None = None) -> BimanualPlan:
    """Two concurrent independent arity-7 calls, one per arm, no sharing."""
    cfg = cfg or StrategyConfig(kind="dual_agent")

    def predict(arm: str):
        bundle = build_single_prompt(demos, obs, arm_filter=arm, role="single")
        return _call(gateway, bundle, cfg, tag=f"dual:{arm}", arity=7, phase=arm)

    with ThreadPoolExecutor(max_workers=2) as pool:
        right_future = pool.submit(predict, "right")
        left_future = pool.submit(predict, "left")
        right = right_future.result().to_discrete()
        left = left_future.result().to_discrete()
    return compose(right, left, leader_is_right=True, kind="dual_agent",
                   tags=("dual:right", "dual:left"))


def run_leader_follower(gateway: ChatGateway, demos, obs: Observation,
                        cfg: StrategyConfig | None = None,
                        tag_prefix: str = "lf") -> BimanualPlan:
    """Leader predicts first; the follower conditions on the leader's plan."""
    cfg = cfg or StrategyConfig(kind="leader_follower")
    leader_is_right = cfg.leader_arm == "right"

    leader_bundle = build_single_prompt(demos, obs, arm_filter=cfg.leader_arm, role="leader")
    leader = _call(gateway, leader_bundle, cfg, tag=f"{tag_prefix}:leader", arity=7,
                   phase="leader").to_discrete()

    follower_bundle = build_follower_prompt(demos, obs, leader, leader_is_right=leader_is_right)
    follower = _call(gateway, follower_bundle, cfg, tag=f"{tag_prefix}:follower", arity=7,
                     phase="follower").to_discrete()

    return compose(leader, follower, leader_is_right=leader_is_right,
                   kind="leader_follower", tags=(f"{tag_prefix}:leader", f"{tag_prefix}:follower"))


def run_arms_debate(gateway: ChatGateway, demos, obs: Observation,
                    cfg: StrategyConfig | None = None,
                    tag_prefix: str = "debate") -> BimanualPlan:
    """Two leader-follower rounds with reversed conditioning in round two.

    Four strictly sequential single-arm calls, each with a fresh prompt and
    no conversation state; the final plan uses only the round-2 predictions.
    """
    cfg = cfg or StrategyConfig(kind="arms_debate")
    leader_arm = cfg.leader_arm
    follower_arm = "left" if leader_arm == "right" else "right"
    leader_is_right = leader_arm == "right"

    bundle = build_single_prompt(demos, obs, arm_filter=leader_arm, role="leader")
    leader_r1 = _call(gateway, bundle, cfg, tag=f"{tag_prefix}:leader1", arity=7,
                      phase="leader_round1").to_discrete()

    bundle = build_conditioned_prompt(
        demos, obs, target_arm=follower_arm, partner_arm=leader_arm,
        partner_key="leader_arm", partner_pred=leader_r1, role="follower",
    )
    follower_r1 = _call(gateway, bundle, cfg, tag=f"{tag_prefix}:follower1", arity=7,
                        phase="follower_round1").to_discrete()

    bundle = build_conditioned_prompt(
        demos, obs, target_arm=leader_arm, partner_arm=follower_arm,
        partner_key="follower_arm", partner_pred=follower_r1, role="leader",
    )
    leader_r2 = _call(gateway, bundle, cfg, tag=f"{tag_prefix}:leader2", arity=7,
                      phase="leader_round2").to_discrete()

    bundle = build_conditioned_prompt(
        demos, obs, target_arm=follower_arm, partner_arm=leader_arm,
        partner_key="leader_arm", partner_pred=leader_r2, role="follower",
    )
    follower_r2 = _call(gateway, bundle, cfg, tag=f"{tag_prefix}:follower2", arity=7,
                        phase="follower_round2").to_discrete()

    return compose(leader_r2, follower_r2, leader_is_right=leader_is_right,
                   kind="arms_debate",
                   tags=tuple(f"{tag_prefix}:{p}" for p in
                              ("leader1", "follower1", "leader2", "follower2")))


def _run_reranked(gateway: ChatGateway, demos, obs: Observation, cfg: StrategyConfig,
                  judge: PlanJudge, generate, kind: str, store=None, seed: int = 0) -> BimanualPlan:
    """Shared best-of-n machinery: concurrent candidates, concurrent scoring."""
    n = cfg.n_candidates
    batches = [list(demos)] * n
    if cfg.resample_demos:
        if store is None:
            raise ConfigError("resample_demos requires a demonstration store")
        batches = [sample_batch(store, len(demos), seed=seed + 1 + j) for j in range(n)]

    failures = []
    candidates: list[BimanualPlan | None] = [None] * n

    def make(j: int):
        return generate(batches[j], j)

    with ThreadPoolExecutor(max_workers=max(1, n)) as pool:
        futures = {pool.submit(make, j): j for j in range(n)}
        for future, j in futures.items():
            try:
                candidates[j] = future.result()
            except (ExhaustedRetries, EmptyTrajectory) as exc:
                failures.append((j, exc))

    scores: list[int | None] = [None] * n

    def rate(j: int):
        return judge.score(candidates[j].actions, batches[j], obs)

    with ThreadPoolExecutor(max_workers=max(1, n)) as pool:
        futures = {
            pool.submit(rate, j): j for j in range(n) if candidates[j] is not None
        }
        for future, j in futures.items():
            try:
                scores[j] = future.result().score
            except Exception as exc:  # scoring failure skips the candidate
                failures.append((j, exc))
                scores[j] = None

    viable = [j for j in range(n) if candidates[j] is not None and scores[j] is not None]
    if not viable:
        raise AllCandidatesFailed(
            f"all {n} candidates failed for {kind}", failures=failures
        )
    best = max(viable, key=lambda j: (scores[j], -j))  # ties: lowest index
    chosen = candidates[best]
    return BimanualPlan(
        actions=chosen.actions,
        kind=kind,
        tags=chosen.tags + (f"selected:{best}", f"score:{scores[best]}"),
    )


def run_best_of_n(gateway: ChatGateway, demos, obs: Observation,
                  cfg: StrategyConfig | None = None, judge: PlanJudge | None = None,
                  store=None, seed: int = 0) -> BimanualPlan:
    """n independent leader-follower candidates, judged, argmax selected."""
    cfg = cfg or StrategyConfig(kind="best_of_n")
    judge = judge or PlanJudge(mode="llm", gateway=gateway, temperature=cfg.judge_temperature,
                               max_retries=cfg.max_retries)

    def generate(batch, j: int):
        return run_leader_follower(gateway, batch, obs, cfg, tag_prefix=f"bon{j}")

    return _run_reranked(gateway, demos, obs, cfg, judge, generate, kind="best_of_n",
                         store=store, seed=seed)


def run_debate_plus_bon(gateway: ChatGateway, demos, obs: Observation,
                        cfg: StrategyConfig | None = None, judge: PlanJudge | None = None,
                        store=None, seed: int = 0) -> BimanualPlan:
    """Best-of-n with arms-debate candidates: 4n generation + n judge calls."""
    cfg = cfg or StrategyConfig(kind="debate_plus_bon")
    judge = judge or PlanJudge(mode="llm", gateway=gateway, temperature=cfg.judge_temperature,
                               max_retries=cfg.max_retries)

    def generate(batch, j: int):
        return run_arms_debate(gateway, batch, obs, cfg, tag_prefix=f"dbon{j}")

    return _run_reranked(gateway, demos, obs, cfg, judge, generate, kind="debate_plus_bon",
                         store=store, seed=seed)


def run_strategy(kind: str, gateway: ChatGateway, demos, obs: Observation,
                 cfg: StrategyConfig | None = None, judge: PlanJudge | None = None,
                 store=None, seed: int = 0) -> BimanualPlan:
    """Dispatch by strategy kind; the experiment runner's single entry point."""
    cfg = replace(cfg, kind=kind) if cfg is not None else StrategyConfig(kind=kind)
    if kind == "single_agent":
        return run_single_agent(gateway, demos, obs, cfg)
    if kind == "dual_agent":
        return run_dual_agent(gateway, demos, obs, cfg)
    if kind == "leader_follower":
        return run_leader_follower(gateway, demos, obs, cfg)
    if kind == "arms_debate":
        return run_arms_debate(gateway, demos, obs, cfg)
    if kind == "best_of_n":
        return run_best_of_n(gateway, demos, obs, cfg, judge, store=store, seed=seed)
    if kind == "debate_plus_bon":
        return run_debate_plus_bon(gateway, demos, obs, cfg, judge, store=store, seed=seed)
    raise ConfigError(f"unknown strategy kind {kind!r}")
