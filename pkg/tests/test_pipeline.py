import numpy as np
import pytest
from sklearn.base import clone

from probdg.bench import DEFAULT_DOMAINS, generate_domain
from probdg.exceptions import ConfigError
from probdg.net import SgdConfig
from probdg.pipeline import ABLATIONS, PipelineConfig, ProbSegmenter, ablation_config, train
from probdg.tensor_io import make_rng
from probdg.verify import pipeline_grad_errors


def _domains(n=4, size=16):
    return [generate_domain(DEFAULT_DOMAINS[d], n, make_rng(d), size) for d in range(2)]


def test_ablation_rows():
    assert list(ABLATIONS) == ["baseline", "prl-mean", "prl-cov", "full"]
    base = ablation_config("baseline")
    assert base.prl == "none" and not base.wesp
    mean = ablation_config("prl-mean").contrastive()
    assert not mean.use_covariance
    assert ablation_config("full").wesp
    with pytest.raises(ConfigError):
        ablation_config("other")
    with pytest.raises(ConfigError):
        PipelineConfig(prl="half")


def test_one_epoch_smoke():
    net, gates, bank, log = train(_domains(), ablation_config("full"), SgdConfig(epochs=1, batch_size=2))
    assert len(log) == 1 and np.isfinite(log[0]["total"])
    assert bank.counts.sum() > 0


def test_baseline_has_no_contrast_term():
    _, _, _, log = train(_domains(), ablation_config("baseline"), SgdConfig(epochs=1, batch_size=2))
    assert log[0]["contrast"] == 0.0


def test_training_deterministic():
    a = train(_domains(), ablation_config("prl-cov"), SgdConfig(epochs=2, batch_size=2, seed=3))
    b = train(_domains(), ablation_config("prl-cov"), SgdConfig(epochs=2, batch_size=2, seed=3))
    assert a[3] == b[3]
    for k in a[0].params:
        assert np.array_equal(a[0].params[k], b[0].params[k])


@pytest.mark.parametrize("wesp,prl", [(False, "none"), (True, "mean"), (True, "full")])
def test_full_step_gradient(wesp, prl):
    errs = pipeline_grad_errors(seed=1, wesp=wesp, prl=prl, max_entries=15)
    assert max(errs.values()) < 1e-4


def test_estimator_api():
    est = ProbSegmenter(prl="mean", epochs=1, batch_size=2)
    params = est.get_params()
    assert params["prl"] == "mean" and params["epochs"] == 1
    assert clone(est).get_params() == params
    (x0, y0), (x1, y1) = _domains()
    X, y = np.concatenate([x0, x1]), np.concatenate([y0, y1])
    est.fit(X, y, domains=np.repeat([0, 1], len(x0)))
    pred = est.predict(X)
    assert pred.shape == y.shape and pred.max() < 3
    assert 0.0 <= est.score(X, y) <= 1.0
