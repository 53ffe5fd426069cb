import json
import os

import pytest

from utility_ir.ablation import (
    REPORT_NAME,
    AblationReport,
    RankerStats,
    RegimeResult,
    ladder_scores,
    ranking_order,
    run_ablation,
)
from utility_ir.config import build_config
from utility_ir.errors import ConfigError
from utility_ir.inference_toolkit import Restorer
from utility_ir.metrics import evaluate

from .conftest import TINY


@pytest.fixture
def short_config():
    return build_config({**TINY, "stage1_epochs": 1})


def test_report_is_reproducible(corpus, short_config, tmp_path):
    first = run_ablation(short_config, corpus, str(tmp_path / "a"), regimes=("mrl", "mqrl"))
    second = run_ablation(short_config, corpus, str(tmp_path / "b"), regimes=("mrl", "mqrl"))
    assert first.digest() == second.digest()
    with open(os.path.join(str(tmp_path / "a"), REPORT_NAME), encoding="utf-8") as f:
        on_disk = json.load(f)
    assert list(on_disk["results"]) == ["mrl", "mqrl"]
    assert on_disk["manifest_digest"] == corpus.digest()
    assert on_disk["results"]["mqrl"]["checkpoint"] == os.path.join("mqrl", "stage1.uir")


def test_contrastive_switch(corpus, short_config, tmp_path):
    report = run_ablation(short_config, corpus, str(tmp_path), regimes=("none",), use_contrastive=False)
    assert report.use_contrastive is False
    assert report.results["none"].ranker.pairs > 0


def test_unknown_regime(corpus, short_config, tmp_path):
    with pytest.raises(ConfigError):
        run_ablation(short_config, corpus, str(tmp_path), regimes=("bogus",))
    with pytest.raises(ConfigError):
        run_ablation(short_config, corpus, str(tmp_path), regimes=())


def test_ranking_order(corpus):
    evaluation = evaluate(corpus)

    def result(regime, accuracy, error):
        return RegimeResult(
            regime=regime,
            checkpoint=f"{regime}/stage1.uir",
            evaluation=evaluation,
            ranker=RankerStats(ordering_accuracy=accuracy, interval_error=error, pairs=8),
        )

    report = AblationReport(
        seed=0,
        use_contrastive=True,
        manifest_digest=corpus.digest(),
        results={"direct": result("direct", 0.6, 0.3), "mrl": result("mrl", 0.9, 0.2), "mqrl": result("mqrl", 0.8, 0.1)},
    )
    assert ranking_order(report) == ["mrl", "mqrl", "direct"]
    assert ranking_order(report, "interval_error") == ["mqrl", "mrl", "direct"]


def test_ladder_scores_use_given_cap(corpus, tiny_model):
    restorer = Restorer(tiny_model)
    _, default, groups = ladder_scores(restorer, corpus, severities=(0.1, 0.5))
    _, capped, _ = ladder_scores(restorer, corpus, severities=(0.1, 0.5), cap=20.0)
    assert groups == ["rain_streak", "rain_streak", "haze", "haze"]
    for loose, tight in zip(default, capped):
        assert tight == pytest.approx(min(loose * 50.0, 20.0) / 20.0, abs=1e-5)
