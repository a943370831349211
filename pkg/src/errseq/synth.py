"""Seeded synthetic corpora with controllable class separability.

Human reactions to repeated robot failures intensify over time, so the
generative model gives every participant/modality a latent unit
direction u and baseline b, and shifts the feature mean along u by one
drift step per error stage: a frame in stage s is

    x = b + s * drift * u + noise,   noise ~ N(0, noise_sd^2) i.i.d.

Each session has four stages (three onsets at stage boundaries, jittered
by a bounded amount).  With drift 0 (the ``null`` profile) all stages
are identically distributed, so labels carry no information and trained
models must score at chance.  Everything is drawn from per-participant,
per-modality splitmix64 streams, so a config + seed pins the corpus
down to the byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import MODALITIES, Corpus, Session
from .rng import SplitMix64, derive_seed

DEFAULT_DIMS = {"facial": 20, "pose": 16, "audio": 24, "text": 32}

#: stages = errors observed so far, 0..3
NUM_STAGES = 4


@dataclass
class SynthConfig:
    """Generator knobs.

    The ``null`` profile forces drift to 0; ``separable`` requires a
    positive drift.  Jitter must stay below half a stage so onsets can
    never cross their neighbors.
    """

    participants: int
    frames_per_stage: int = 200
    dims: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_DIMS))
    drift: float = 1.0
    noise_sd: float = 1.0
    onsets_jitter: int = 20
    seed: int = 42
    profile: str = "separable"

    def __post_init__(self):
        if self.profile == "null":
            self.drift = 0.0

    def validate(self) -> None:
        if self.profile not in ("separable", "null"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.participants < 1:
            raise ValueError("participants must be >= 1")
        if self.frames_per_stage < 1:
            raise ValueError("frames_per_stage must be >= 1")
        if not self.dims:
            raise ValueError("dims must be nonempty")
        for name, d in self.dims.items():
            if name not in MODALITIES:
                raise ValueError(f"unknown modality {name!r}")
            if d < 1:
                raise ValueError(f"dimension for {name} must be >= 1")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be > 0")
        if self.drift < 0:
            raise ValueError("drift must be >= 0")
        if self.profile == "separable" and self.drift <= 0:
            raise ValueError("separable profile requires drift > 0")
        if not 0 <= self.onsets_jitter < self.frames_per_stage / 2:
            raise ValueError("onsets_jitter must be in [0, frames_per_stage / 2)")


def _draw_latents(stream: SplitMix64, d: int) -> tuple[np.ndarray, np.ndarray]:
    # Draw order is part of the determinism contract: baseline, then direction.
    baseline = stream.normals(d)
    direction = stream.normals(d)
    norm = float(np.linalg.norm(direction))
    if norm < 1e-12:
        direction = np.zeros(d)
        direction[0] = 1.0
    else:
        direction = direction / norm
    return baseline, direction


def _feature_stream(cfg: SynthConfig, participant_id: str, modality: str) -> SplitMix64:
    return SplitMix64(derive_seed(cfg.seed, "features", participant_id, modality))


def participant_latents(cfg: SynthConfig, participant_id: str) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Baseline and unit drift direction per modality for one participant.

    Exposed so tests can recover the latents behind a generated session.
    """
    return {
        name: _draw_latents(_feature_stream(cfg, participant_id, name), cfg.dims[name])
        for name in sorted(cfg.dims)
    }


def _session_onsets(cfg: SynthConfig, participant_id: str) -> tuple[int, ...]:
    stream = SplitMix64(derive_seed(cfg.seed, "onsets", participant_id))
    onsets = []
    for s in range(1, NUM_STAGES):
        jitter = stream.randbelow(2 * cfg.onsets_jitter + 1) - cfg.onsets_jitter
        onsets.append(s * cfg.frames_per_stage + jitter)
    return tuple(onsets)


def generate_corpus(cfg: SynthConfig) -> Corpus:
    """Generate a corpus deterministically from the config.

    The per-(participant, modality) noise stream is independent of every
    other stream, so sessions could be generated in any order (or in
    parallel) without changing a single byte.
    """
    cfg.validate()
    sessions = []
    for p in range(cfg.participants):
        pid = f"p{p:02d}"
        onsets = _session_onsets(cfg, pid)
        num_frames = NUM_STAGES * cfg.frames_per_stage
        stage = np.searchsorted(np.asarray(onsets), np.arange(num_frames), side="right")
        features = {}
        for name in sorted(cfg.dims):
            d = cfg.dims[name]
            stream = _feature_stream(cfg, pid, name)
            baseline, direction = _draw_latents(stream, d)
            noise = stream.normals(num_frames * d).reshape(num_frames, d)
            features[name] = (
                baseline[None, :]
                + stage[:, None] * cfg.drift * direction[None, :]
                + cfg.noise_sd * noise
            )
        sessions.append(
            Session(
                participant_id=pid,
                frame_rate=30.0,
                num_frames=num_frames,
                features=features,
                error_onsets=onsets,
            )
        )
    return Corpus(sessions=sessions)
