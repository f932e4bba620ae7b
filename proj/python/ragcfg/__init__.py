"""Policy-governed configuration optimizer for retrieval-augmented transcript classification."""

import json
import os

from ._core import (
    Corpus,
    RagcfgError,
    config_hash,
    default_config,
    evaluate,
    kendall_tau,
    label_entropy,
    load_corpus,
    load_frozen,
    ndcg_at_k,
    parse_corpus,
    redecide,
    replay_ledger,
    run_cli,
    select,
    synthetic_corpus,
)

__all__ = [
    "Corpus",
    "RagcfgError",
    "config_hash",
    "default_config",
    "evaluate",
    "kendall_tau",
    "label_entropy",
    "load_corpus",
    "load_frozen",
    "ndcg_at_k",
    "optimize",
    "parse_corpus",
    "redecide",
    "replay_ledger",
    "run_cli",
    "select",
    "synthetic_corpus",
]


def _check(result, command):
    code, out, err = result
    if code != 0:
        raise RagcfgError(f"{command} exited {code}: {err.strip()}")
    return out


def optimize(config, out, test_clock=False):
    """Ingest, embed and run the optimizer for a config dict; returns the report."""
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "run_config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)
    common = ["--config", path, "--out", out]
    _check(run_cli(["ingest", *common]), "ingest")
    _check(run_cli(["embed", *common]), "embed")
    _check(run_cli(["run", *common] + (["--test-clock"] if test_clock else [])), "run")
    with open(os.path.join(out, "report.json"), encoding="utf-8") as f:
        return json.load(f)
