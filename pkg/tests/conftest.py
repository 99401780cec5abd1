from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).resolve().parent))

RAW_AID = ROOT / "data" / "raw" / "adult.data"
RAW_GCD = ROOT / "data" / "raw" / "german.data"
HIPD_SAMPLE = ROOT / "tests" / "data" / "insurance_sample.csv"


@pytest.fixture(scope="session")
def synthetic():
    from riskrecourse.datasets import builtin_domain

    cfg, s0 = builtin_domain("synthetic_health")
    return cfg, cfg.build(), s0


@pytest.fixture(scope="session")
def gcd():
    from riskrecourse import load_config
    from riskrecourse.datasets import load_descriptor, predicted, preprocess, select_instances

    cfg = load_config("gcd")
    _, inst = preprocess(load_descriptor("gcd"), RAW_GCD)
    neg = select_instances(inst, predicted(cfg.model, False))
    return cfg, cfg.build(), inst, neg


@pytest.fixture(scope="session")
def aid():
    from riskrecourse import load_config
    from riskrecourse.datasets import load_descriptor, predicted, preprocess, select_instances

    cfg = load_config("aid")
    _, inst = preprocess(load_descriptor("aid"), RAW_AID)
    neg = select_instances(inst, predicted(cfg.model, False))
    return cfg, cfg.build(), inst, neg
