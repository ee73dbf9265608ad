"""Acceptance suite: one PASS/FAIL line per criterion.

Every criterion runs shipped experiment configs from configs/ at their stated
tolerances; criterion 13 replays every shipped report under reports/.
Run with `pytest -v tests/test_acceptance.py -s` or `python tests/test_acceptance.py`.
"""
import functools
import os
import sys

import pytest

from qftlab import config as cfgmod
from qftlab.cli import replay
from qftlab.estimates import EstimateReport
from qftlab.experiments import run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")
REPORTS = os.path.join(ROOT, "reports")


def _prefix(*names):
    return lambda c: c["name"].split(":")[0] in names


# criterion -> (title, [(config, check filter)])
CRITERIA = {
    1: ("Gaussian sampler law", [("sample-check", None)]),
    2: ("covariance Markov decomposition", [("covariance-check", None)]),
    3: ("Radon-Nikodym density", [("rn-density", None)]),
    4: ("Wick calculus", [("wick-moments", None)]),
    5: ("renormalisation rates", [("divergence-fit", None)]),
    6: ("Besov and paracalculus", [("besov-suite", None)]),
    7: ("cubic cancellation and bulk bookkeeping",
        [("bd-boundary", _prefix("cancellation")), ("bd-bulk", _prefix("bookkeeping"))]),
    8: ("variational inequality and Gaussian optimum",
        [("bd-boundary", _prefix("variational", "gaussian-optimum")),
         ("bd-bulk", _prefix("variational", "gaussian-optimum"))]),
    9: ("gluing", [("glue-check", None), ("glue-check-gaussian", None)]),
    10: ("finite-T Markov residual", [("markov-residual", None), ("markov-residual-gaussian", None)]),
    11: ("stochastic-estimate uniformity", [("enhancement-moments", None)]),
    12: ("transfer operator", [("transfer-spectrum", None), ("orlicz-trend", None)]),
}


@functools.lru_cache(maxsize=None)
def _checks(name):
    cfg = cfgmod.load(os.path.join(CONFIGS, f"{name}.json"))
    res = run_experiment(cfg)
    return tuple(c.to_dict() if isinstance(c, EstimateReport) else c for c in res.checks)


def evaluate(n):
    """(passed, detail) for criteria 1-12; 13 replays the shipped reports."""
    if n == 13:
        runs = sorted(d for d in os.listdir(REPORTS) if os.path.isfile(os.path.join(REPORTS, d, "report.json")))
        bad = []
        for d in runs:
            ok, diffs = replay(os.path.join(REPORTS, d))
            if not ok:
                bad.append(f"{d}: {', '.join(diffs)}")
        return not bad and bool(runs), (f"{len(runs)} reports replayed identically" if not bad else "; ".join(bad))
    failed, count = [], 0
    for name, keep in CRITERIA[n][1]:
        for c in _checks(name):
            if keep is not None and not keep(c):
                continue
            count += 1
            if not c.get("passed"):
                failed.append(f"{name}/{c['name']} observed={c.get('observed')} tolerance={c.get('tolerance')}")
    if count == 0:
        return False, "no checks selected"
    return not failed, (f"{count} checks" if not failed else "; ".join(failed))


def _line(n, passed, detail):
    title = CRITERIA[n][0] if n in CRITERIA else "reproducibility"
    return f"{'PASS' if passed else 'FAIL'}  criterion {n:2d}  {title}: {detail}"


@pytest.mark.parametrize("n", list(range(1, 14)))
def test_criterion(n, capsys):
    passed, detail = evaluate(n)
    with capsys.disabled():
        print("\n" + _line(n, passed, detail))
    assert passed, detail


if __name__ == "__main__":
    results = [evaluate(n) for n in range(1, 14)]
    for n, (p, d) in enumerate(results, 1):
        print(_line(n, p, d))
    sys.exit(0 if all(p for p, _ in results) else 1)
