"""Corpus data model, ingestion, validation and frame labeling.

A corpus is a set of sessions, one per participant.  Each session holds
time-aligned feature matrices for up to four modalities (facial, pose,
audio, text; one row per video frame) plus the frame indices at which
the robot's successive errors became apparent.  Frames are labeled by
how many errors have occurred so far: 0 before the first onset, then
1, 2, 3.

On disk a corpus is a ``manifest.json`` plus one feature CSV per
(participant, modality); see :func:`load_corpus` / :func:`save_corpus`.
Feature rows must already be resampled to the video frame clock by the
corpus producer: one row per frame, no alignment happens here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: The only valid modality names, in canonical order.
MODALITIES = ("facial", "pose", "audio", "text")

#: Maximum number of successive robot errors per session.
MAX_ONSETS = 3


class CorpusError(ValueError):
    """Raised when a corpus file or manifest cannot be ingested."""


@dataclass
class Session:
    """One participant's time-aligned multimodal recording.

    Attributes:
        participant_id: unique identifier within the corpus.
        frame_rate: video frames per second (> 0).
        num_frames: number of frames T; every feature matrix has T rows.
        features: modality name -> (T, d_m) float array.
        error_onsets: ascending frame indices (0..3 of them) marking the
            first frame of each error-reaction period.
    """

    participant_id: str
    frame_rate: float
    num_frames: int
    features: dict[str, np.ndarray]
    error_onsets: tuple[int, ...]


@dataclass
class Corpus:
    """A list of sessions with unique participant ids."""

    sessions: list[Session] = field(default_factory=list)

    def participant_ids(self) -> list[str]:
        return [s.participant_id for s in self.sessions]

    def session(self, participant_id: str) -> Session:
        for s in self.sessions:
            if s.participant_id == participant_id:
                return s
        raise KeyError(f"no session for participant {participant_id!r}")


def validate_session(session: Session) -> list[str]:
    """Check every Session invariant; return human-readable violations.

    An empty list means the session is valid.  Violations name the
    invariant and its location; they are returned, never raised.
    """
    violations: list[str] = []
    sid = session.participant_id
    if not sid:
        violations.append("participant_id is empty")
    if not (isinstance(session.frame_rate, (int, float)) and session.frame_rate > 0):
        violations.append(f"session {sid}: frame_rate must be > 0")
    T = session.num_frames
    if not (isinstance(T, int) and T >= 1):
        violations.append(f"session {sid}: num_frames must be >= 1")
        return violations

    if not session.features:
        violations.append(f"session {sid}: no feature modalities")
    for name, mat in session.features.items():
        if name not in MODALITIES:
            violations.append(f"session {sid}: unknown modality {name!r}")
            continue
        if mat.ndim != 2:
            violations.append(f"session {sid}: {name} features must be 2-D")
            continue
        if mat.shape[0] != T:
            violations.append(
                f"session {sid}: {name} has {mat.shape[0]} rows, expected {T}"
            )
        finite = np.isfinite(mat)
        if not finite.all():
            row, col = np.argwhere(~finite)[0]
            violations.append(
                f"session {sid}: non-finite value at ({name}, row {row}, col {col})"
            )

    onsets = session.error_onsets
    if len(onsets) > MAX_ONSETS:
        violations.append(f"session {sid}: too many onsets ({len(onsets)} > {MAX_ONSETS})")
    for o in onsets:
        if not (isinstance(o, (int, np.integer)) and 0 <= o < T):
            violations.append(f"session {sid}: onset {o!r} outside [0, {T})")
    if any(b <= a for a, b in zip(onsets, onsets[1:])):
        violations.append(f"session {sid}: onsets not strictly increasing: {list(onsets)}")
    return violations


def validate_corpus(corpus: Corpus) -> list[str]:
    """Corpus-level invariants plus every session's."""
    violations: list[str] = []
    if not corpus.sessions:
        violations.append("corpus has no sessions")
    seen: set[str] = set()
    for s in corpus.sessions:
        if s.participant_id in seen:
            violations.append(f"duplicate participant_id {s.participant_id!r}")
        seen.add(s.participant_id)
        violations.extend(validate_session(s))
    return violations


def label_frames(session: Session) -> np.ndarray:
    """Label every frame with the number of errors observed so far.

    labels[f] = number of onsets o with o <= f, i.e. 0 before the first
    onset, 1 from the first onset frame on, and so forth.  The onset
    frame itself belongs to the reaction period.

    Raises ValueError if the session violates its invariants.
    """
    violations = validate_session(session)
    if violations:
        raise ValueError("invalid session: " + "; ".join(violations))
    onsets = np.asarray(session.error_onsets, dtype=np.int64)
    frames = np.arange(session.num_frames, dtype=np.int64)
    return np.searchsorted(onsets, frames, side="right").astype(np.int64)


def _read_feature_csv(path: Path, num_frames: int, modality: str) -> np.ndarray:
    """Parse one feature CSV: header ``frame,f0,f1,...``, one row per frame."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"missing feature file {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "frame" or len(header) < 2:
        raise CorpusError(f"{path}: header must be 'frame,f0,f1,...'")
    dim = len(header) - 1
    rows = lines[1:]
    if len(rows) != num_frames:
        raise CorpusError(
            f"{path}: {modality} has {len(rows)} rows but manifest declares "
            f"{num_frames} frames"
        )
    out = np.empty((num_frames, dim), dtype=np.float64)
    for r, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise CorpusError(f"{path}: row {r} has {len(parts) - 1} values, expected {dim}")
        try:
            idx = int(parts[0])
            vals = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise CorpusError(f"{path}: row {r}: {exc}") from exc
        if idx != r:
            raise CorpusError(f"{path}: row {r} has frame index {idx}, expected {r}")
        out[r] = vals
    finite = np.isfinite(out)
    if not finite.all():
        row, col = np.argwhere(~finite)[0]
        raise CorpusError(f"{path}: non-finite value at row {row}, column {col}")
    return out


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load a corpus from a manifest file (or a directory containing one).

    The manifest is a JSON object with key ``participants``: a list of
    ``{id, frame_rate, num_frames, error_onsets, modalities}`` where
    ``modalities`` maps modality names to CSV paths relative to the
    manifest.  Row order in each CSV is frame order.

    Raises CorpusError on any structural or invariant violation.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.is_file():
        raise CorpusError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{manifest_path}: invalid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "participants" not in manifest:
        raise CorpusError(f"{manifest_path}: expected an object with 'participants'")

    base = manifest_path.parent
    sessions: list[Session] = []
    for entry in manifest["participants"]:
        pid = entry.get("id")
        if not isinstance(pid, str) or not pid:
            raise CorpusError(f"{manifest_path}: participant entry without a valid 'id'")
        try:
            frame_rate = float(entry["frame_rate"])
            num_frames = int(entry["num_frames"])
            onsets = tuple(int(o) for o in entry["error_onsets"])
            modalities = dict(entry["modalities"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{manifest_path}: participant {pid}: {exc}") from exc
        features = {}
        for name, rel in sorted(modalities.items()):
            if name not in MODALITIES:
                raise CorpusError(f"{manifest_path}: participant {pid}: unknown modality {name!r}")
            features[name] = _read_feature_csv(base / rel, num_frames, name)
        session = Session(
            participant_id=pid,
            frame_rate=frame_rate,
            num_frames=num_frames,
            features=features,
            error_onsets=onsets,
        )
        violations = validate_session(session)
        if violations:
            raise CorpusError("; ".join(violations))
        sessions.append(session)

    corpus = Corpus(sessions=sessions)
    violations = validate_corpus(corpus)
    if violations:
        raise CorpusError("; ".join(violations))
    return corpus


def save_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Write a corpus in the canonical on-disk format; returns the manifest path.

    Floats are written with ``repr`` (shortest round-trip form), so
    ``load_corpus(save_corpus(c))`` reproduces feature values exactly
    and repeated saves of the same corpus are byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in corpus.sessions:
        paths = {}
        for name in sorted(s.features):
            rel = f"{s.participant_id}_{name}.csv"
            mat = s.features[name]
            lines = ["frame," + ",".join(f"f{j}" for j in range(mat.shape[1]))]
            for r in range(mat.shape[0]):
                lines.append(f"{r}," + ",".join(repr(float(v)) for v in mat[r]))
            (out_dir / rel).write_text("\n".join(lines) + "\n", encoding="utf-8")
            paths[name] = rel
        entries.append(
            {
                "id": s.participant_id,
                "frame_rate": s.frame_rate,
                "num_frames": s.num_frames,
                "error_onsets": list(s.error_onsets),
                "modalities": paths,
            }
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps({"participants": entries}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifest_path
