import hashlib
import json
import random
from pathlib import Path

import pytest

from sqlsynth.generate import FOR_FILL, FOR_VALIDATE, REFORMER, CandidateQuestion, Explanation
from sqlsynth.llm import LLMClient, ProviderError, StubProvider
from sqlsynth.validate import accepted, cosine_similarity, cycle_validate, write_audit

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "validator.json").read_text())


def _candidates(questions, query="SELECT 1"):
    return [CandidateQuestion(q, query, "pets", REFORMER) for q in questions]


def _expl2(text=FIXTURE["explanation"], query=FIXTURE["query"]):
    return Explanation(text, FOR_VALIDATE, query)


class RandomEmbedder:
    """Embeds each text as a hash-seeded Gaussian vector."""

    name, chat_model, embed_model, dimension = "random", "none", "rand-32", 32

    def complete(self, request):
        raise ProviderError("no chat")

    def embed(self, text):
        rng = random.Random(hashlib.sha256(text.encode()).digest())
        return [rng.gauss(0, 1) for _ in range(self.dimension)]


def test_fixture_similarities_and_acceptance():
    client = LLMClient(StubProvider())
    cands = _candidates([c["question"] for c in FIXTURE["candidates"]], FIXTURE["query"])
    verdicts = cycle_validate(FIXTURE["query"], cands, _expl2(), client, 0.85, 5)
    for verdict, expected in zip(verdicts, FIXTURE["candidates"]):
        assert verdict.similarity == pytest.approx(expected["similarity"], abs=1e-9)
    above = sorted(
        (i for i, c in enumerate(FIXTURE["candidates"]) if c["similarity"] >= 0.85),
        key=lambda i: -FIXTURE["candidates"][i]["similarity"],
    )
    assert len(above) == 6  # one more than the cap
    assert [i for i, v in enumerate(verdicts) if v.accepted] == sorted(above[:5])
    assert [v.rank for v in verdicts] == [1, 3, None, 5, 2, None, 4]
    assert [c.question for c in accepted(verdicts)] == [FIXTURE["candidates"][i]["question"] for i in above[:5]]
    assert all(v.candidate.validation_explanation == _expl2() for v in verdicts)


def test_threshold_is_inclusive_and_ties_prefer_earlier():
    client = LLMClient(StubProvider())
    text = FIXTURE["candidates"][0]["question"]
    sim = FIXTURE["candidates"][0]["similarity"]
    verdicts = cycle_validate("q", _candidates([text, text, text]), _expl2(), client, sim, 2)
    assert [v.accepted for v in verdicts] == [True, True, False]
    assert [v.rank for v in verdicts] == [1, 2, None]


@pytest.mark.parametrize("provider", [StubProvider(), RandomEmbedder()])
def test_identity_scores_one(provider):
    client = LLMClient(provider)
    verdicts = cycle_validate("q", _candidates([FIXTURE["explanation"]]), _expl2(), client)
    assert verdicts[0].similarity == pytest.approx(1.0, abs=1e-9)
    assert verdicts[0].accepted


def test_argument_checks():
    client = LLMClient(StubProvider())
    with pytest.raises(ValueError, match="lambda"):
        cycle_validate("q", [], _expl2(), client, 1.5)
    with pytest.raises(ValueError):
        cycle_validate("q", [], _expl2(), client, 0.85, 0)
    with pytest.raises(ValueError):
        cycle_validate("q", [], Explanation("x", FOR_FILL, "q"), client)
    assert cycle_validate("q", [], _expl2(), client) == []


def test_cosine_edge_cases():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([2, 2], [1, 1]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 0])


def test_embedding_failure_becomes_errored_verdict():
    class Flaky(StubProvider):
        def embed(self, text):
            if "boom" in text:
                raise ProviderError("bad embedding")
            return super().embed(text)

    verdicts = cycle_validate("q", _candidates(["boom here", FIXTURE["explanation"]]), _expl2(), LLMClient(Flaky()))
    assert verdicts[0].error and not verdicts[0].accepted and verdicts[0].similarity is None
    assert verdicts[1].accepted


def test_audit_file(tmp_path):
    client = LLMClient(StubProvider())
    verdicts = cycle_validate("q", _candidates(["a question", FIXTURE["explanation"]]), _expl2(), client)
    path = tmp_path / "audit.jsonl"
    write_audit(verdicts, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["accepted"] for r in rows] == [False, True]


def test_hand_arithmetic_cosine_and_symmetry():
    assert cosine_similarity([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-12)
    assert cosine_similarity([2, 1, 2], [1, 2, 2]) == cosine_similarity([1, 2, 2], [2, 1, 2])


def test_raising_lambda_never_accepts_more():
    client = LLMClient(StubProvider())
    cands = _candidates([c["question"] for c in FIXTURE["candidates"]])
    previous = None
    for lam in (0.5, 0.8, 0.85, 0.9, 0.95, 1.0):
        now = {i for i, v in enumerate(cycle_validate("q", cands, _expl2(), client, lam, 10)) if v.accepted}
        if previous is not None:
            assert now <= previous
        previous = now
