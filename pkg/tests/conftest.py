"""Shared fixtures: small hierarchies, corpora and trained models."""

import numpy as np
import pytest

from shapespace.models import train_global, train_local
from shapespace.subdivision import SubdivisionHierarchy
from shapespace.synth import SynthSpec, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_hierarchy():
    # 5x7 base, two levels -> 17x25 grid
    return SubdivisionHierarchy((5, 7), 2)


@pytest.fixture(scope="session")
def corpus():
    spec = SynthSpec(base_dims=(5, 7), levels=2, T=12, noise_stddev=0.05, pose_jitter=0.05, seed=3)
    return generate_corpus(spec, run_id="test")


@pytest.fixture(scope="session")
def aligned(corpus):
    return corpus.training.gpa_aligned(run_id="test")


@pytest.fixture(scope="session")
def global_model(corpus, aligned):
    return train_global(aligned, 5, corpus.landmark_ids, run_id="test")


@pytest.fixture(scope="session")
def local_model(corpus, aligned):
    return train_local(aligned, corpus.hierarchy, corpus.landmark_ids, run_id="test")
