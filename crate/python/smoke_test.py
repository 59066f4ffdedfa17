"""Smoke test for the hyperdet extension: generate, ingest, sample, train."""

import json
import math
import tempfile
from pathlib import Path

import pytest

import hyperdet

SMALL = {
    "n_normal": 60,
    "n_ponzi": 20,
    "n_background": 150,
    "n_services": 5,
    "investors_per_scheme": 6,
    "seed": 3,
}


@pytest.fixture(scope="module")
def corpus():
    with tempfile.TemporaryDirectory() as d:
        hyperdet.synth(d, json.dumps(SMALL))
        yield Path(d)


def test_auc():
    assert hyperdet.auc([0.9, 0.1, 0.5, 0.5], [1, 0, 1, 0]) == pytest.approx(0.875)
    with pytest.raises(hyperdet.HyperdetError):
        hyperdet.auc([0.1, 0.2], [1, 1])


def test_dataset(corpus):
    ds = hyperdet.Dataset(str(corpus / "transactions.jsonl"), str(corpus / "labels.csv"))
    assert ds.n_accounts > 0 and ds.n_hyperedges > 0
    assert "accounts=" in repr(ds)
    labels = ds.labels()
    assert sum(c for _, c in labels) == SMALL["n_ponzi"]
    feats = ds.features()
    assert len(feats) == ds.n_accounts
    assert all(len(row) == 17 for row in feats)
    assert len(ds.feature_names()) == 17
    assert all(math.isfinite(v) for row in feats for v in row)


def test_table1(corpus):
    ds = hyperdet.Dataset(str(corpus / "transactions.jsonl"), str(corpus / "labels.csv"))
    t = ds.table1(alpha=100, beta=5, seed=1)
    assert t["hyper_ori"][0] >= t["hyper_s1"][0] >= t["hyper_s2"][0]
    assert t["hyper_ori"][1] >= t["hyper_s1"][1] >= t["hyper_s2"][1]
    assert t == ds.table1(alpha=100, beta=5, seed=1)


def test_run_experiment(corpus):
    ds = hyperdet.Dataset(str(corpus / "transactions.jsonl"), str(corpus / "labels.csv"))
    cfg = {"channels": ["hyper"], "repeats": 2, "model": {"hidden_dim": 8, "epochs": 10}}
    report = json.loads(ds.run_experiment(json.dumps(cfg)))
    (ch,) = report["channels"]
    assert ch["channel"] == "hyper"
    assert len(ch["repeat"]["runs"]) == 2


def test_errors(corpus):
    with pytest.raises(hyperdet.HyperdetError):
        hyperdet.Dataset(str(corpus / "missing.jsonl"))
    ds = hyperdet.Dataset(str(corpus / "transactions.jsonl"))
    with pytest.raises(ValueError):
        ds.table1()
    with pytest.raises(ValueError):
        hyperdet.synth(str(corpus / "x"), json.dumps({"bogus": 1}))
