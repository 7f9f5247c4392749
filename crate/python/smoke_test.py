"""Smoke test for the gradflow Python extension.

Build and install first:  pip install --no-build-isolation -e crates/py
Then run:                 python python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import gradflow


def main():
    g = gradflow.Grid([64], 4.0 / 65, "dirichlet-zero")
    f = gradflow.bump_data(g, seed=3)
    assert len(f) == g.node_count and min(f) >= 0.0

    tg = gradflow.TimeGrid.geometric(1e-4, 1.25, 10.0)
    k = gradflow.Kernel.p_power(4.0)
    trace = gradflow.solve_flow(g, f, k, tg)
    energies = [e for _, e, _ in trace.ledger()]
    assert all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))

    res = gradflow.vertical_max("p-flow", g, f, k, tg)
    assert all(m >= v for m, v in zip(res.maximal, f))
    assert k.energy(g, res.maximal) <= k.energy(g, f) * (1 + 1e-6)

    rep = gradflow.verify_pflow_contraction(g, f, 4.0, tg)
    assert rep["pass"], rep

    # four-node cosine: m = (1.5, 1, 1 - 0.5 e^{-2 t_max}, 1)
    c = gradflow.Grid([4], 1.0, "periodic")
    q = gradflow.Kernel.quadratic(c, "identity")
    heat = gradflow.vertical_max("heat", c, [1.5, 1.0, 0.5, 1.0], q, tg, refine=False)
    assert abs(heat.maximal[2] - (1 - 0.5 * math.exp(-20))) < 1e-12
    assert heat.detachment(1e-6) == [False, False, True, False]

    try:
        gradflow.Grid([0], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("empty grid accepted")

    with tempfile.TemporaryDirectory() as d:
        code = gradflow.run("verify", preset="theorem1-smoke", overrides=[("output-directory", d)])
        summary = json.loads((Path(d) / "summary.json").read_text())
        assert code == 0 and summary["fail"] == 0, summary

    print("gradflow smoke test passed:", gradflow.__version__)


if __name__ == "__main__":
    main()
