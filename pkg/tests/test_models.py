from __future__ import annotations

import numpy as np
import pytest

from riskrecourse.models import (
    OP_EQ,
    OP_LE,
    Condition,
    DegenerateDataError,
    EnsembleConfig,
    ModelFileError,
    Outcome,
    RuleModel,
    Tree,
    TreeEnsembleModel,
    load_model,
    save_model,
    train_tree_ensemble,
)
from riskrecourse.schema import FeatureSchema, FeatureSpec, SchemaError, all_states


@pytest.fixture
def schema():
    return FeatureSchema((
        FeatureSpec("Savings", "ordinal", ("None", "Little", "Moderate", "Rich"), "actionable"),
        FeatureSpec("Housing", "nominal", ("Free", "Rent", "Own"), "actionable"),
        FeatureSpec("Gender", "nominal", ("Female", "Male"), "immutable"),
    ), "good")


def leaf_tree(cls):
    z = np.array([0])
    return Tree(z, z, z, np.array([-1]), np.array([-1]), np.array([cls]))


def test_empty_rules_are_all_unfavorable(schema):
    m = RuleModel(schema, [])
    assert not m.predict(all_states(schema)).any()
    assert m.classify((0, 0, 0)) is Outcome.UNFAVORABLE


def test_rule_match(schema):
    m = RuleModel(schema, [[Condition("Savings", ">=", "Rich")]])
    assert m.classify((3, 0, 1)) is Outcome.FAVORABLE
    assert m.classify((2, 0, 1)) is Outcome.UNFAVORABLE


def test_rule_validation(schema):
    with pytest.raises(SchemaError):
        RuleModel(schema, [[Condition("Income", "==", "high")]])
    with pytest.raises(SchemaError):
        RuleModel(schema, [[Condition("Savings", "~", "Rich")]])


def test_majority_vote_and_tie(schema):
    m = TreeEnsembleModel(schema, [leaf_tree(1), leaf_tree(0), leaf_tree(0)], 0.5)
    assert m.classify((0, 0, 0)) is Outcome.UNFAVORABLE
    m = TreeEnsembleModel(schema, [leaf_tree(1), leaf_tree(1), leaf_tree(0)], 0.5)
    assert m.classify((0, 0, 0)) is Outcome.FAVORABLE
    tie = TreeEnsembleModel(schema, [leaf_tree(1), leaf_tree(0)], 0.5)
    assert tie.classify((0, 0, 0)) is Outcome.UNFAVORABLE


def test_tree_split_semantics(schema):
    # root: Savings <= Little ? leaf 0 : (Housing == Own ? leaf 1 : leaf 0)
    t = Tree(feature=np.array([0, 0, 1, 0, 0]), op=np.array([OP_LE, 0, OP_EQ, 0, 0]),
             level=np.array([1, 0, 2, 0, 0]), left=np.array([1, -1, 3, -1, -1]),
             right=np.array([2, -1, 4, -1, -1]), leaf_class=np.array([-1, 0, -1, 1, 0]))
    m = TreeEnsembleModel(schema, [t])
    states = all_states(schema)
    expect = (states[:, 0] > 1) & (states[:, 1] == 2)
    assert np.array_equal(m.predict(states), expect)


def test_invalid_split_rejected(schema):
    t = Tree(np.array([0, 0, 0]), np.array([OP_LE, 0, 0]), np.array([9, 0, 0]),
             np.array([1, -1, -1]), np.array([2, -1, -1]), np.array([-1, 0, 1]))
    with pytest.raises(SchemaError):
        TreeEnsembleModel(schema, [t])


def test_classify_is_pure(schema):
    rng = np.random.default_rng(0)
    x = rng.integers(0, [4, 3, 2], size=(500, 3))
    y = (x[:, 0] >= 2).astype(int)
    m = train_tree_ensemble(schema, x, y, EnsembleConfig(n_trees=5, seed=1))
    states = rng.integers(0, [4, 3, 2], size=(10_000, 3))
    first = m.predict(states)
    assert all(np.array_equal(first, m.predict(states)) for _ in range(3))


def test_separable_data_is_learned_exactly(schema):
    rng = np.random.default_rng(0)
    x = rng.integers(0, [4, 3, 2], size=(400, 3))
    y = (x[:, 1] == 2).astype(int)
    m = train_tree_ensemble(schema, x, y, EnsembleConfig(n_trees=10, max_depth=4, seed=3))
    assert m.holdout_accuracy == 1.0


def test_training_is_reproducible(schema):
    rng = np.random.default_rng(1)
    x = rng.integers(0, [4, 3, 2], size=(300, 3))
    y = ((x[:, 0] + x[:, 1] + rng.integers(0, 2, 300)) > 3).astype(int)
    cfg = EnsembleConfig(n_trees=7, seed=11)
    a = train_tree_ensemble(schema, x, y, cfg)
    b = train_tree_ensemble(schema, x, y, cfg)
    assert a.to_dict() == b.to_dict()


def test_single_class_is_degenerate(schema):
    x = np.zeros((20, 3), dtype=int)
    with pytest.raises(DegenerateDataError):
        train_tree_ensemble(schema, x, np.ones(20, dtype=int))


def test_rule_model_roundtrip(schema, tmp_path):
    m = RuleModel(schema, [[Condition("Savings", ">=", "Moderate"), Condition("Housing", "==", "Own")],
                           [Condition("Gender", "!=", "Male")]])
    save_model(m, tmp_path / "m.json")
    back = load_model(schema, tmp_path / "m.json")
    states = all_states(schema)
    assert np.array_equal(back.predict(states), m.predict(states))


def test_ensemble_roundtrip_on_sampled_states(schema, tmp_path):
    rng = np.random.default_rng(2)
    x = rng.integers(0, [4, 3, 2], size=(300, 3))
    y = ((x[:, 0] >= 2) ^ (x[:, 2] == 1)).astype(int)
    m = train_tree_ensemble(schema, x, y, EnsembleConfig(n_trees=9, seed=5))
    save_model(m, tmp_path / "e.json")
    back = load_model(schema, tmp_path / "e.json")
    sample = rng.integers(0, [4, 3, 2], size=(1000, 3))
    assert np.array_equal(back.predict(sample), m.predict(sample))


def test_truncated_and_mismatched_files(schema, tmp_path):
    m = RuleModel(schema, [[Condition("Savings", ">=", "Rich")]])
    p = tmp_path / "m.json"
    save_model(m, p)
    text = p.read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFileError):
        load_model(schema, tmp_path / "cut.json")
    (tmp_path / "v2.json").write_text(text.replace('"version":1', '"version":2'))
    with pytest.raises(ModelFileError):
        load_model(schema, tmp_path / "v2.json")
    other = FeatureSchema(schema.features[:2], "good")
    with pytest.raises(ModelFileError):
        load_model(other, p)


def test_matched_models_give_identical_policies(schema):
    """Solvers only see classify: a rule model and a tree ensemble with the same
    decision boundary produce the same policy."""
    from riskrecourse.mdp import ActionSpec, Effect, RecourseMdp
    from riskrecourse.solvers import SolverConfig, g_rsvi

    rules = RuleModel(schema, [[Condition("Savings", ">=", "Moderate"), Condition("Housing", "==", "Own")]])
    # equivalent tree: Savings <= Little -> 0, else Housing == Own -> 1 else 0
    t = Tree(feature=np.array([0, 0, 1, 0, 0]), op=np.array([OP_LE, 0, OP_EQ, 0, 0]),
             level=np.array([1, 0, 2, 0, 0]), left=np.array([1, -1, 3, -1, -1]),
             right=np.array([2, -1, 4, -1, -1]), leaf_class=np.array([-1, 0, -1, 1, 0]))
    trees = TreeEnsembleModel(schema, [t])
    actions = [ActionSpec("save", 1.0, Effect("Savings", "increment"), 0.7),
               ActionSpec("own", 2.0, Effect("Housing", "set", "Own"), 0.5)]
    pa = g_rsvi(RecourseMdp(schema, actions, rules, 5), SolverConfig(beta=0.5))
    pb = g_rsvi(RecourseMdp(schema, actions, trees, 5), SolverConfig(beta=0.5))
    assert np.array_equal(pa.pi, pb.pi)
    assert np.array_equal(pa.values, pb.values)
