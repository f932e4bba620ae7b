import math

import pytest

import ragcfg


def test_synthetic_corpus_is_deterministic():
    a = ragcfg.synthetic_corpus(12, seed=3)
    b = ragcfg.synthetic_corpus(12, seed=3)
    assert len(a) == 24
    assert a.content_hash == b.content_hash
    assert set(a.class_counts()) == {"TRAIN", "VAL", "TEST"}


def test_parse_error_raises():
    with pytest.raises(ragcfg.RagcfgError):
        ragcfg.parse_corpus('{"id": "a"}\n')


def test_metrics():
    r = ragcfg.evaluate([1, 1, 0, 0], [1, 0, 1, 0])
    assert r["accuracy"] == 0.5
    assert r["macro_f1"] == 0.5
    assert ragcfg.kendall_tau(["A", "B", "C"], ["A", "C", "B"]) == pytest.approx(1 / 3)
    assert ragcfg.ndcg_at_k([0, 1], 1, 2) == pytest.approx(1 / math.log2(3))
    assert ragcfg.label_entropy([1, 1, 0, 0, 0, 0]) == pytest.approx(0.9183, abs=1e-4)


def test_select_threshold_and_fallback():
    items = [
        ("A", [0.9, math.sqrt(1 - 0.81), 0, 0], 1),
        ("B", [0.8, 0, math.sqrt(1 - 0.64), 0], 0),
        ("C", [0.7, 0, 0, math.sqrt(1 - 0.49)], 1),
    ]
    hits, mode = ragcfg.select([1, 0, 0, 0], items, k=5, tau=0.75, mode="dynamic")
    assert [h[0] for h in hits] == ["A", "B"]
    assert mode == "threshold"
    hits, mode = ragcfg.select([1, 0, 0, 0], items, k=2, tau=0.95, mode="dynamic")
    assert [h[0] for h in hits] == ["A", "B"]
    assert mode == "fallback_topk"


def test_default_config_is_locked_shape():
    c = ragcfg.default_config()
    assert c["selection"]["k"] == 5
    assert c["selection"]["tau"] == 0.75
    assert c["mmr"]["enabled"] is False
    assert len(ragcfg.config_hash(c)) > 0


def test_optimize_end_to_end(tmp_path):
    cfg = {"corpus": {"synthetic": {"n_per_class": 15, "seed": 2, "separation": 0.8}}}
    report = ragcfg.optimize(cfg, str(tmp_path / "out"), test_clock=True)
    assert len(report["rows"]) == 8
    assert report["completed"] is True
    assert ragcfg.replay_ledger(str(tmp_path / "out" / "ledger.jsonl")) == []
    frozen = ragcfg.load_frozen(str(tmp_path / "out" / "frozen_config.json"))
    assert ragcfg.config_hash(frozen) == report["frozen_hash"]


def test_cli_exit_codes(tmp_path):
    code, _, err = ragcfg.run_cli(["run", "--config", str(tmp_path / "missing.json")])
    assert code == 1
    assert "config" in err
    code, out, _ = ragcfg.run_cli(["--help"])
    assert code == 0 and "sweep-threshold" in out
