"""A faulty party tries to sandwich client 0's transactions.

With kappa = 0 the victim reaches every correct party first, the fairness
premise holds and the front transaction never gets ahead. Raising kappa to
2 drops the premise, and the attacker is then free to win some races.
"""

from qof.harness.attacks import attack_frontrun, sandwich_scenario


def campaign(kappa, seeds=range(20)):
    premise = landed = total = 0
    for seed in seeds:
        rep = attack_frontrun(sandwich_scenario(seed, kappa=kappa))
        for o in rep.outcomes:
            total += 1
            premise += o.premise
            landed += o.front_first
    return total, premise, landed


if __name__ == "__main__":
    for kappa in (0, 2):
        total, premise, landed = campaign(kappa)
        print(f"kappa={kappa}: {total} sandwiches, premise held {premise}, attacker first {landed}")

    rep = attack_frontrun(sandwich_scenario(0))
    o = rep.outcomes[0]
    print()
    print(f"seed 0, first victim: b(victim, front) = {o.b_victim_front}, b(front, victim) = {o.b_front_victim}")
    print(f"delivered log at party 0: {[sorted(b) for b in rep.result.delivered_log(0)][:4]}")
