from types import SimpleNamespace

import pytest

from higen.config import EvalConfig
from higen.data.corpus import Example
from higen.evaluation.predict import predict
from higen.hierarchy.taxonomy import ROOT, build_taxonomy
from higen.hierarchy.tokenizer import build_vocab


class ScriptedModel:
    """Replays fixed generations in place of a trained model."""

    def __init__(self, rows):
        self.rows = rows
        self.training = True

    def eval(self):
        self.training = False
        return self

    def train(self, mode=True):
        self.training = mode
        return self

    def generate(self, src, max_steps, constraint=None):
        rows, self.rows = self.rows[: src.size(0)], self.rows[src.size(0) :]
        return SimpleNamespace(ids=rows, step_log_probs=[[] for _ in rows])


@pytest.fixture
def setup():
    t = build_taxonomy([("x", "alpha"), ("z", "beta")], [(ROOT, "x"), (ROOT, "z")])
    v = build_vocab(["x marks the spot"], t)
    examples = [Example(id=f"e{i}", doc=("x", "marks"), labels=frozenset({"x"})) for i in range(3)]
    return t, v, examples


def test_word_named_like_node_counts_as_stray(setup):
    t, v, examples = setup
    rows = [
        [v.root_id, v.node_id("x"), v.eos_id],
        [v.root_id, v.word_id("x"), v.eos_id],
        [v.root_id, v.node_id("x"), v.node_id("z"), v.eos_id],
    ]
    model = ScriptedModel(rows)
    records = predict(model, examples, t, v, EvalConfig(batch_size=2))
    assert [set(r.predicted) for r in records] == [{"x"}, set(), {"x", "z"}]
    assert records[0].diagnostics.clean
    assert records[1].diagnostics.stray == 1
    assert records[1].raw == (ROOT, "x", "</s>")
    assert model.training


def test_strict_repair_scores_violations_as_empty(setup):
    t, v, examples = setup
    rows = [[v.root_id, v.word_id("x"), v.node_id("x"), v.eos_id]]
    records = predict(ScriptedModel(rows), examples[:1], t, v, EvalConfig(repair="strict"))
    assert records[0].predicted == frozenset()
    assert records[0].diagnostics.stray == 1
