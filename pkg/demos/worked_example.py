"""Three parties, four transactions, two rounds.

Round 1 sees a Condorcet cycle mixed with an unstable transaction, so
nothing is delivered. Round 2 sees every log in full and splits the graph
into {tx4} followed by the cycle {tx1, tx2, tx3}.
"""

from pathlib import Path

from qof.fairgraph import to_text
from qof.harness import Simulation, load_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "tests" / "golden" / "scenario.json"


if __name__ == "__main__":
    sim = Simulation(load_scenario(SCENARIO))
    res = sim.run()

    for rec in res.traces:
        if rec["party"] != 0:
            continue
        if rec["ev"] == "cut":
            print(f"round {rec['round']}: cut {rec['cut']}")
        elif rec["ev"] == "graph":
            print(f"  {len(rec['vertices'])} vertices, {rec['edges']} edges, components {rec['components']}")
        elif rec["ev"] == "batch":
            print(f"  deliver {rec['txs']}")

    print()
    print("last condensation at party 0:")
    print(to_text(sim.parties[0].last_graph.collapsed, sim.labels))
