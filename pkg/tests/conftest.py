import numpy as np
import pytest

from errseq import Corpus, Session


def build_session(pid="p00", num_frames=240, dims=None, onsets=(60, 120, 180), seed=7):
    """A valid session with deterministic pseudo-random features."""
    dims = dims or {"facial": 3, "audio": 2}
    rng = np.random.default_rng(seed)
    features = {m: rng.normal(size=(num_frames, d)) for m, d in dims.items()}
    return Session(
        participant_id=pid,
        frame_rate=30.0,
        num_frames=num_frames,
        features=features,
        error_onsets=tuple(onsets),
    )


@pytest.fixture
def session():
    return build_session()


@pytest.fixture
def corpus():
    return Corpus(
        sessions=[
            build_session(pid="p00", seed=7),
            build_session(pid="p01", seed=8),
            build_session(pid="p02", seed=9, onsets=(55, 130, 185)),
        ]
    )
