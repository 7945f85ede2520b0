"""Ground-truth probe injection into annotation tasks, and gamified scoring.

A task mixes unlabeled real items with synthetic probes whose class is
known. The annotator-facing manifest exposes only opaque item ids; the
probe flags and true classes stay in a server-side answer key. Scoring is
per probe: base points plus a capped streak bonus, with reliability tracked
as the Wilson 95% lower bound on probe accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ScoringConfig:
    base_points: int = 100
    streak_bonus: int = 10
    streak_bonus_cap: int = 50
    confidence: float = 0.95


@dataclass(frozen=True)
class PlanItem:
    item_id: str  # opaque; safe to show annotators
    record_id: str
    is_probe: bool
    true_class: str | None  # probes only


@dataclass
class InjectionPlan:
    task_id: str
    items: list[PlanItem]
    probe_fraction: float
    seed: int

    def probe_items(self) -> list[PlanItem]:
        return [it for it in self.items if it.is_probe]

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "probe_fraction": self.probe_fraction,
            "seed": self.seed,
            "items": [vars(it) for it in self.items],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InjectionPlan":
        return cls(
            task_id=doc["task_id"],
            probe_fraction=doc["probe_fraction"],
            seed=doc["seed"],
            items=[PlanItem(**it) for it in doc["items"]],
        )


def max_gap(probe_fraction: float) -> int:
    """Longest allowed run of consecutive non-probes."""
    return math.ceil(2.0 / probe_fraction)


def _allocate_by_prior(
    n_probes: int, prior: dict[str, float], available: dict[str, int], tv_budget: float
) -> dict[str, int]:
    """Largest-remainder allocation of probes over classes, capped by the
    pool.

    The budget guards pool-induced mismatch, not integer granularity: the
    realized allocation is compared against the ideal (uncapped) allocation,
    and the error names the classes whose pools ran dry. A small plan over
    many classes is legitimate even though rounding alone moves it off the
    continuous prior.
    """
    names = sorted(prior)
    ideal = {c: n_probes * prior[c] for c in names}

    def fill(caps) -> dict[str, int]:
        alloc = {c: min(math.floor(ideal[c]), caps.get(c, 0)) for c in names}
        while sum(alloc.values()) < n_probes:
            candidates = [c for c in names if alloc[c] < caps.get(c, 0)]
            if not candidates:
                raise ValidationError("probe pool too small for the requested count")
            candidates.sort(key=lambda c: (-(ideal[c] - alloc[c]), c))
            alloc[candidates[0]] += 1
        return alloc

    target = fill({c: n_probes for c in names})  # granularity-only allocation
    alloc = fill(available)
    tv = 0.5 * sum(abs(alloc[c] - target[c]) for c in names) / n_probes
    if tv > tv_budget:
        short = [c for c in names if alloc[c] < target[c] and alloc[c] == available.get(c, 0)]
        raise ValidationError(
            f"probe class distribution misses the prior (TV {tv:.3f} > {tv_budget}); "
            f"deficient classes: {short}"
        )
    return alloc


def plan_injection(
    real_items: list[str],
    probe_pool,
    probe_fraction: float = 0.5,
    seed: int = 0,
    task_id: str | None = None,
    prior: dict[str, float] | None = None,
    tv_budget: float = 0.1,
) -> InjectionPlan:
    """Interleave probes into real items, dispersed and prior-matched.

    ``real_items`` are record ids (unlabeled is fine); ``probe_pool`` holds
    labeled candidates (ImageRecords or dicts with id/class). The number of
    probes is floor(f/(1-f) * len(real_items)), at least 1, which keeps the
    probe count within one item of probe_fraction times the total. Probe
    positions are seeded and satisfy the dispersal constraint: no run of
    more than ceil(2/f) consecutive non-probes.
    """
    if not (0.0 < probe_fraction < 1.0):
        raise ValidationError("probe_fraction must lie in (0, 1)")
    if not real_items:
        raise ValidationError("no real items to build a task from")

    pool: dict[str, list[str]] = {}
    for rec in probe_pool:
        rid = rec["id"] if isinstance(rec, dict) else rec.id
        cls = rec.get("class") if isinstance(rec, dict) else rec.class_label
        if cls is None:
            raise ValidationError(f"probe candidate {rid} has no class label")
        pool.setdefault(cls, []).append(rid)
    pool_sizes = {c: len(v) for c, v in pool.items()}
    pool_total = sum(pool_sizes.values())

    n_real = len(real_items)
    n_probes = max(1, math.floor(probe_fraction / (1.0 - probe_fraction) * n_real))
    if n_probes > pool_total:
        raise ValidationError(
            f"probe pool too small: need {n_probes}, have {pool_total}"
        )

    if prior is None:
        prior = {c: pool_sizes[c] / pool_total for c in pool_sizes}
    alloc = _allocate_by_prior(n_probes, prior, pool_sizes, tv_budget)

    rng = np.random.default_rng(seed)
    probes: list[tuple[str, str]] = []  # (record_id, class)
    for cls in sorted(alloc):
        take = alloc[cls]
        if take:
            picks = rng.choice(len(pool[cls]), take, replace=False)
            probes.extend((pool[cls][i], cls) for i in picks)
    probe_order = rng.permutation(len(probes))
    probes = [probes[i] for i in probe_order]
    reals = [real_items[i] for i in rng.permutation(n_real)]

    n_total = n_real + n_probes
    positions = _disperse_positions(n_total, n_probes, probe_fraction, rng)

    items: list[PlanItem] = []
    probe_iter = iter(probes)
    real_iter = iter(reals)
    probe_set = set(positions)
    for pos in range(n_total):
        if pos in probe_set:
            rid, cls = next(probe_iter)
            items.append(PlanItem(f"item-{pos:04d}", rid, True, cls))
        else:
            items.append(PlanItem(f"item-{pos:04d}", next(real_iter), False, None))
    return InjectionPlan(
        task_id=task_id or f"task-{seed:08d}",
        items=items,
        probe_fraction=probe_fraction,
        seed=seed,
    )


def _longest_gap(positions: list[int], n_total: int) -> int:
    worst = 0
    prev = -1
    for p in positions + [n_total]:
        worst = max(worst, p - prev - 1)
        prev = p
    return worst


def _disperse_positions(n_total: int, n_probes: int, fraction: float, rng) -> list[int]:
    """Seeded probe positions with no non-probe run longer than ceil(2/f).

    One probe lands uniformly inside each of n_probes contiguous strata
    (sizes within one of each other), which bounds any non-probe run by
    roughly twice the stratum size. The rare off-by-one violations from
    uneven strata are repaired by pulling the two boundary probes toward
    the oversized run.
    """
    cap = max_gap(fraction)
    sizes = []
    base = n_total // n_probes
    extra = n_total % n_probes
    starts = []
    pos = 0
    for k in range(n_probes):
        size = base + (1 if k < extra else 0)
        starts.append(pos)
        sizes.append(size)
        pos += size
    positions = [
        starts[k] + int(rng.integers(0, sizes[k])) for k in range(n_probes)
    ]

    for _ in range(n_total):
        prev = -1
        worst_len, worst_idx = 0, -1
        for i, p in enumerate(positions + [n_total]):
            run = p - prev - 1
            if run > worst_len:
                worst_len, worst_idx = run, i
            prev = p
        if worst_len <= cap:
            return positions
        # shift the probes bounding the worst run one step into it
        if worst_idx < len(positions):
            positions[worst_idx] -= 1
        if worst_idx > 0:
            positions[worst_idx - 1] += 1
        positions.sort()
    if _longest_gap(positions, n_total) > cap:
        raise ValidationError("could not satisfy the probe dispersal constraint")
    return positions


def task_manifest(plan: InjectionPlan) -> dict:
    """Annotator-facing export: opaque item ids only, no probe information."""
    return {
        "task_id": plan.task_id,
        "items": [{"id": it.item_id} for it in plan.items],
    }


def answer_key(plan: InjectionPlan) -> dict:
    """Server-side ground truth kept out of annotator hands."""
    return {
        "task_id": plan.task_id,
        "probes": {
            it.item_id: it.true_class for it in plan.items if it.is_probe
        },
        "records": {it.item_id: it.record_id for it in plan.items},
    }


# ---------------------------------------------------------------------------
# scoring


def wilson_lower_bound(successes: int, trials: int, confidence: float = 0.95) -> float:
    """Lower bound of the Wilson score interval for a binomial proportion."""
    if trials < 0 or successes < 0 or successes > trials:
        raise ValidationError("need 0 <= successes <= trials")
    if trials == 0:
        return 0.0
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = p + z * z / (2.0 * trials)
    spread = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials))
    return max(0.0, (center - spread) / denom)


@dataclass
class AnnotatorScore:
    annotator_id: str
    probes_seen: int = 0
    probes_correct: int = 0
    reliability: float = 0.0
    high_score: int = 0
    streak: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "AnnotatorScore":
        return cls(**doc)


@dataclass
class ScoreDelta:
    points: int
    probes_seen: int
    probes_correct: int
    streak_after: int


def score_annotation(
    plan: InjectionPlan,
    annotations: dict[str, str],
    score: AnnotatorScore,
    config: ScoringConfig = ScoringConfig(),
) -> tuple[ScoreDelta, AnnotatorScore]:
    """Score one annotation batch against the plan's probes.

    Only probe items are scored, in plan order. A correct class earns the
    base points plus a streak bonus (streak-so-far times the per-step bonus,
    capped); a miss resets the streak. Non-probe annotations are accepted
    and ignored; annotations for unknown items are rejected.
    """
    known = {it.item_id for it in plan.items}
    unknown = set(annotations) - known
    if unknown:
        raise ValidationError(f"annotations reference unknown items: {sorted(unknown)[:3]}")

    points = 0
    seen = 0
    correct = 0
    streak = score.streak
    for item in plan.items:
        if not item.is_probe or item.item_id not in annotations:
            continue
        seen += 1
        if annotations[item.item_id] == item.true_class:
            correct += 1
            bonus = min(streak * config.streak_bonus, config.streak_bonus_cap)
            points += config.base_points + bonus
            streak += 1
        else:
            streak = 0

    new_seen = score.probes_seen + seen
    new_correct = score.probes_correct + correct
    updated = AnnotatorScore(
        annotator_id=score.annotator_id,
        probes_seen=new_seen,
        probes_correct=new_correct,
        reliability=wilson_lower_bound(new_correct, new_seen, config.confidence),
        high_score=score.high_score + points,
        streak=streak,
    )
    delta = ScoreDelta(points=points, probes_seen=seen, probes_correct=correct, streak_after=streak)
    return delta, updated


def leaderboard(scores: list[AnnotatorScore]) -> list[AnnotatorScore]:
    """Descending by points, ties by reliability then annotator id; stable."""
    return sorted(scores, key=lambda s: (-s.high_score, -s.reliability, s.annotator_id))
