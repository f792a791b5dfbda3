"""Shared fixtures: the 20-report corpus, scripted replies, adjudications."""
from pathlib import Path

import pytest

from radflag.corpus import load_corpus
from radflag.gateway import ScriptedMockProvider
from radflag.outcomes import Framework
from radflag.pipeline import default_models, run_batch
from radflag.stats import load_adjudications

FIXTURES = Path(__file__).parent / "fixtures"

CORPUS20 = FIXTURES / "corpus20.csv"
REPLIES20 = FIXTURES / "corpus20_replies.jsonl"
ADJUDICATIONS20 = FIXTURES / "corpus20_adjudications.csv"

# Flag sets encoded in the scripted replies; tests assert against these.
F1_FLAGS = {"r03", "r05", "r07", "r09", "r12", "r14", "r19"}
F2_FLAGS = {"r03", "r05", "r07", "r11", "r16", "r17"}
P2_FLAGS = {"r02", "r03", "r05", "r07", "r09", "r11", "r12", "r17", "r19"}
F3_FLAGS = {"r03", "r05", "r07", "r17"}  # pass-3 survivors
TRUE_ERRORS = {"r03", "r07", "r12", "r17"}


@pytest.fixture(scope="session")
def corpus20():
    return load_corpus(CORPUS20)


@pytest.fixture()
def scripted_provider():
    # fresh instance per test: the call log is part of what tests assert
    return ScriptedMockProvider.from_jsonl(REPLIES20)


@pytest.fixture(scope="session")
def adjudications20():
    return load_adjudications(ADJUDICATIONS20)


def run_corpus20(corpus, provider, frameworks=("f1", "f2", "f3"), parallelism=4):
    """Run the given frameworks over the fixture corpus, keyed by framework."""
    models = default_models()
    return {
        Framework(fw): run_batch(
            fw, corpus.reports, provider, models, parallelism=parallelism
        )
        for fw in frameworks
    }


@pytest.fixture()
def corpus20_outcomes(corpus20, scripted_provider):
    return run_corpus20(corpus20, scripted_provider)
