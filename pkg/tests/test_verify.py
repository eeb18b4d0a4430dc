import numpy as np

import probdg.stats as stats_mod
from probdg.verify import run_suites, suite_stats, suite_wavelet


def _broken_merge_cov(prev, local):
    # pooled covariance without the between-means term
    n, m = prev.count, local.count
    return (n * np.asarray(prev.cov) + m * np.asarray(local.cov)) / (n + m)


def test_stats_suite_passes():
    assert all(c["pass"] for c in suite_stats(cases=20))


def test_missing_cross_term_is_caught(monkeypatch):
    monkeypatch.setattr(stats_mod, "merge_cov", _broken_merge_cov)
    checks = suite_stats(cases=20)
    assert not all(c["pass"] for c in checks)


def test_report_lists_tolerances():
    report, ok = run_suites(["wavelet"])
    assert ok
    thresholds = {c["test"]: c["threshold"] for c in report[0]["checks"]}
    assert 1e-12 in thresholds.values() and 1e-10 in thresholds.values()
    assert all("max_rel_err" in c for c in suite_wavelet())
