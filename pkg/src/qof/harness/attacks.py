"""Sandwich-attack runs and the randomized adversarial campaign."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from qof.core import Config
from qof.harness.metrics import MetricsReport
from qof.harness.oracle import (
    Violation,
    bcch_consistency,
    correct_orders,
    delivered_logs,
    oracle_abc,
    oracle_fairness,
    precedence,
)
from qof.harness.scenario import FaultSpec, Scenario
from qof.harness.sim import SimResult, simulate


@dataclass(frozen=True)
class AttackOutcome:
    victim: str
    front: str
    back: str
    b_victim_front: int
    b_front_victim: int
    premise: bool  # the fairness premise orders victim before front
    front_first: bool  # front strictly preceded victim at some correct party

    @property
    def flagged(self) -> bool:
        return self.premise and self.front_first


@dataclass
class AttackReport:
    metrics: MetricsReport
    outcomes: list[AttackOutcome]
    violations: list[Violation]
    result: SimResult = field(repr=False)

    @property
    def excluded(self) -> bool:
        """Every attack met the premise and none of them landed."""
        return bool(self.outcomes) and all(o.premise and not o.front_first for o in self.outcomes)

    @property
    def succeeded(self) -> int:
        return sum(o.front_first for o in self.outcomes)


def sandwich_scenario(
    seed: int,
    n: int = 4,
    f: int = 1,
    kappa: int = 0,
    victims: int = 3,
    lag: float | None = None,
    attacker: int | None = None,
) -> Scenario:
    """Two clients, client 0 being the victim; the last party front-runs."""
    attacker = n - 1 if attacker is None else attacker
    params = {"victim_client": 0, "attacker_client": 77_777}
    if lag is not None:
        params["lag"] = lag
    return Scenario(
        config=Config(n, f, kappa),
        seed=seed,
        n_clients=2,
        tx_count=2 * victims,
        payload_size=64,
        delay_range=(0.5, 1.5),
        client_delay=(0.0, 2.0),
        client_rate=100.0,
        faults=(FaultSpec(attacker, "frontrun", params),),
        name=f"sandwich-{seed}",
    )


def attack_frontrun(scenario: Scenario) -> AttackReport:
    res = simulate(scenario)
    cfg = scenario.config
    orders = correct_orders(res.traces, res.correct)
    logs = delivered_logs(res.traces, res.correct)
    outcomes = []
    for victim, front, back in res.attacks:
        B = precedence(orders, [victim, front])
        bvf, bfv = int(B[0, 1]), int(B[1, 0])
        premise = bvf > bfv + 2 * cfg.f + cfg.kappa
        front_first = False
        for log in logs.values():
            iv = next((k for k, b in enumerate(log) if victim in b), None)
            i_f = next((k for k, b in enumerate(log) if front in b), None)
            if i_f is not None and (iv is None or i_f < iv):
                front_first = True
        outcomes.append(AttackOutcome(victim, front, back, bvf, bfv, premise, front_first))
    violations = oracle_fairness(res.traces, orders, cfg, res.correct) + oracle_abc(res.traces, res.correct)
    return AttackReport(res.metrics, outcomes, violations, res)


# -- randomized campaign

CAMPAIGN_CONFIGS = [(n, f, k) for n in (4, 7) for f in (0, 1, 2) for k in (0, 1, 2) if n > 3 * f]
BEHAVIORS = ("equivocate_bcch", "lie_status", "crash", "frontrun", "mute")


def random_scenario(seed: int) -> Scenario:
    rng = random.Random(f"campaign:{seed}")
    n, f, kappa = CAMPAIGN_CONFIGS[seed % len(CAMPAIGN_CONFIGS)]
    n_faulty = rng.randint(min(1, f), f)
    faulty = rng.sample(range(n), n_faulty)
    faults = []
    for p in faulty:
        behavior = rng.choice(BEHAVIORS)
        params: dict = {}
        if behavior == "crash":
            params["at"] = round(rng.uniform(0.0, 30.0), 3)
        elif behavior == "lie_status":
            params["mode"] = rng.choice(("inflate", "deflate", "split"))
            params["amount"] = rng.randint(1, 4)
        elif behavior == "frontrun":
            params["victim_client"] = 0
            params["lag"] = round(rng.uniform(0.0, 4.0), 3)
        faults.append(FaultSpec(p, behavior, params))
    d_min = rng.choice((0.0, 0.5, 1.0))
    return Scenario(
        config=Config(n, f, kappa, round_trigger=rng.choice((1, 2, 4))),
        seed=seed,
        n_clients=rng.randint(1, 3),
        tx_count=rng.randint(4, 16),
        payload_size=rng.choice((8, 32, 128)),
        delay_range=(d_min, d_min + rng.choice((0.0, 1.0, 3.0))),
        client_delay=(0.0, rng.choice((0.5, 2.0, 6.0))),
        client_rate=rng.choice((200.0, 1000.0, 5000.0)),
        faults=tuple(faults),
        name=f"campaign-{seed}",
    )


@dataclass
class CampaignResult:
    seed: int
    scenario: Scenario
    violations: list[Violation]
    delivered: int
    quiescent: bool
    error: str | None = None


def run_campaign_seed(seed: int) -> CampaignResult:
    sc = random_scenario(seed)
    try:
        res = simulate(sc)
    except AssertionError as exc:
        return CampaignResult(seed, sc, [Violation("invariant", str(exc))], 0, False, str(exc))
    violations = oracle_fairness(res.traces) + oracle_abc(res.traces) + bcch_consistency(res.traces)
    return CampaignResult(seed, sc, violations, res.metrics.delivered, res.quiescent)
