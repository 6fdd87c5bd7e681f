"""Video clip curation: scene split, keyframe gate, length filter, category balance, QA filter.

Model-backed steps (frame/clip/category embeddings, QA generation) go through
small provider interfaces; ``MockProvider`` and ``MockQAProvider`` stand in at
desk scale and are fully deterministic.
"""
from __future__ import annotations

import bisect
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

MIN_LEN = 5.0
MAX_LEN = 120.0
FULL_QUOTA = 1500
FULL_EXTRA = 10000
INVALID_ANSWER_PHRASES = ("not provide", "not describe")
HISTOGRAM_EDGES = (0.0, 5.0, 10.0, 20.0, 30.0, 60.0, 120.0)

CATEGORIES = (
    "A video about cooking activity.",
    "A video about writing activity.",
    "A video about travel.",
    "A video about sight-seeing activity.",
    "A life record video about exercise.",
    "A life record video about daily life.",
    "A life record video about handcraft.",
    "A life record video about food.",
    "A TV news report video.",
    "A video about computer games.",
    "A video about sports.",
    "A video about football.",
    "A video about basketball.",
    "A video about pets and animals.",
    "A video about action movie scene.",
    "A video about comedy movie scene.",
    "A video about sci-fi movie scene.",
    "A video about crime movie scene.",
    "A video about horror movie scene.",
    "A video about magic show.",
    "A video about acrobatics.",
    "A documentary or TV show about humanity and history.",
    "A documentary or TV show about biography.",
    "A documentary or TV show about geography.",
    "A documentary or TV show about finance and commerce.",
    "A documentary or TV show about literature and art.",
    "A documentary or TV show about biology and medicine knowledge.",
    "A documentary or TV show about finance and commerce knowledge.",
    "A documentary or TV show about technology knowledge.",
)


# ---------------------------------------------------------------------------
# records


@dataclass
class QAPair:
    instruction: str
    answer: str
    status: str = "kept"
    reason: Optional[str] = None


@dataclass
class ClipRecord:
    clip_id: str
    source_id: str
    start: float
    end: float
    start_frame: int = 0
    end_frame: int = 0
    keyframes: list[int] = field(default_factory=list)
    category_scores: list[float] = field(default_factory=list)
    qa: list[QAPair] = field(default_factory=list)
    status: str = "kept"
    reason: Optional[str] = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"clip {self.clip_id}: end {self.end} must exceed start {self.start}")
        self.qa = [q if isinstance(q, QAPair) else QAPair(**q) for q in self.qa]

    @property
    def duration(self) -> float:
        # rounded so frame-derived timestamps land exactly on the length bounds
        return round(self.end - self.start, 6)

    @property
    def kept(self) -> bool:
        return self.status == "kept"

    def drop(self, reason: str) -> None:
        self.status, self.reason = "dropped", reason

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration"] = self.duration
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ClipRecord:
        d = {k: v for k, v in d.items() if k != "duration"}
        return cls(**d)


# ---------------------------------------------------------------------------
# providers


class EmbeddingProvider(Protocol):
    name: str
    dim: int
    deterministic: bool

    def embed(self, key: str) -> np.ndarray: ...


class QAProvider(Protocol):
    def generate(self, clip: ClipRecord) -> list[QAPair]: ...


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalise a zero vector")
    return v / n


class MockProvider:
    """Unit vectors drawn from a PRNG seeded by a hash of (seed, key)."""

    deterministic = True

    def __init__(self, dim: int = 32, seed: int = 0):
        self.name = "mock"
        self.dim = dim
        self.seed = seed

    def embed(self, key: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{key}".encode()).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
        return _unit(rng.normal(size=self.dim))


class FileProvider:
    """Embeddings looked up in a JSON object ``{key: [floats]}``; vectors are normalised on load."""

    deterministic = True

    def __init__(self, path):
        raw = json.loads(Path(path).read_text())
        self.name = "file"
        self.table = {k: _unit(np.asarray(v, dtype=np.float64)) for k, v in raw.items()}
        dims = {v.size for v in self.table.values()}
        if len(dims) > 1:
            raise ValueError(f"inconsistent embedding dims in {path}: {sorted(dims)}")
        self.dim = dims.pop() if dims else 0

    def embed(self, key: str) -> np.ndarray:
        try:
            return self.table[key]
        except KeyError:
            raise KeyError(f"no embedding for {key!r}") from None


class MockQAProvider:
    """Three deterministic pairs per clip; a hash picks some answers that admit missing detail."""

    def __init__(self, seed: int = 0, invalid_rate: float = 0.25):
        self.seed = seed
        self.invalid_rate = invalid_rate

    def generate(self, clip: ClipRecord) -> list[QAPair]:
        pairs = []
        for k in range(3):
            h = hashlib.sha256(f"{self.seed}:{clip.clip_id}:{k}".encode()).digest()
            if h[0] / 256.0 < self.invalid_rate:
                answer = "The video does not provide this detail."
            else:
                answer = f"The person in clip {clip.clip_id} handles object {h[1] % 7} near the center of the frame."
            pairs.append(QAPair(f"What is the person in the video doing with object {h[1] % 7}?", answer))
        return pairs


def frame_key(source_id: str, i: int) -> str:
    return f"{source_id}/frame/{i}"


def category_key(text: str) -> str:
    return f"category:{text}"


# ---------------------------------------------------------------------------
# stages


def split_scenes(signal: Sequence[float], threshold: float) -> list[tuple[int, int]]:
    """Half-open frame spans; a cut starts a new clip at every i with signal[i] > threshold."""
    n = len(signal)
    if n < 1:
        raise ValueError("frame-difference signal must have at least one entry")
    cuts = [i for i in range(1, n) if signal[i] > threshold]
    edges = [0, *cuts, n]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:])]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def select_keyframes(embeddings: Sequence[np.ndarray], threshold: float) -> list[int]:
    """Greedy scan: frame 0, then every frame whose similarity to the last keyframe is below threshold."""
    if len(embeddings) < 1:
        raise ValueError("need at least one frame")
    keys = [0]
    for i in range(1, len(embeddings)):
        if cosine(embeddings[i], embeddings[keys[-1]]) < threshold:
            keys.append(i)
    return keys


def filter_by_length(clips: Iterable[ClipRecord], min_len: float = MIN_LEN, max_len: float = MAX_LEN) -> list[ClipRecord]:
    """Drop kept clips outside [min_len, max_len]; both bounds keep."""
    out = []
    for c in clips:
        if c.kept:
            if c.duration < min_len:
                c.drop("too_short")
            elif c.duration > max_len:
                c.drop("too_long")
        out.append(c)
    return out


def balance_categories(
    clip_ids: Sequence[str],
    clip_embeddings: np.ndarray,
    category_embeddings: np.ndarray,
    quota: int,
    extra: int,
    seed: int,
) -> tuple[list[str], np.ndarray]:
    """Per category, the top-``quota`` unselected clips by cosine; then ``extra`` at random.

    Ties rank the earlier clip first. Returns the selected ids in selection
    order and the full (clips x categories) similarity matrix.
    """
    if quota < 1:
        raise ValueError("quota must be >= 1")
    n = len(clip_ids)
    if n == 0:
        return [], np.zeros((0, len(category_embeddings)))
    # elementwise product + sum rather than a BLAS matmul: each score then depends
    # only on its own clip, so re-running on a subset reproduces it bit for bit
    sims = (np.asarray(clip_embeddings)[:, None, :] * np.asarray(category_embeddings)[None, :, :]).sum(axis=-1)
    taken = np.zeros(n, dtype=bool)
    order: list[int] = []
    for c in range(sims.shape[1]):
        ranked = sorted(range(n), key=lambda i: (-sims[i, c], i))
        picked = 0
        for i in ranked:
            if picked == quota:
                break
            if not taken[i]:
                taken[i] = True
                order.append(i)
                picked += 1
    rest = [i for i in range(n) if not taken[i]]
    if extra and rest:
        rng = np.random.Generator(np.random.PCG64(seed))
        chosen = rng.choice(len(rest), size=min(extra, len(rest)), replace=False)
        order.extend(rest[j] for j in sorted(chosen))
    return [clip_ids[i] for i in order], sims


def is_invalid_answer(answer: str) -> bool:
    low = answer.lower()
    return any(p in low for p in INVALID_ANSWER_PHRASES)


def lint_pair(pair: QAPair) -> list[str]:
    warnings = []
    if not pair.instruction.strip():
        warnings.append("empty_instruction")
    if not any(ch in pair.answer for ch in ".!?") or not pair.answer.strip():
        warnings.append("answer_not_a_sentence")
    return warnings


def filter_qa(pairs: Iterable[QAPair]) -> list[QAPair]:
    out = []
    for p in pairs:
        if p.status == "kept" and is_invalid_answer(p.answer):
            p.status, p.reason = "dropped", "invalid_answer"
        for w in lint_pair(p):
            log.warning("qa lint: %s (%r)", w, p.instruction[:40])
        out.append(p)
    return out


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class CurationConfig:
    scene_threshold: float = 0.5
    keyframe_threshold: float = 0.5
    min_len: float = MIN_LEN
    max_len: float = MAX_LEN
    quota: int = FULL_QUOTA
    extra: int = FULL_EXTRA
    seed: int = 0
    categories: tuple[str, ...] = CATEGORIES


def _split_source(src: dict, cfg: CurationConfig, provider: EmbeddingProvider) -> list[ClipRecord]:
    sid = str(src["source_id"])
    fps = float(src.get("fps", 1.0))
    signal = src["frame_diffs"]
    spans = split_scenes(signal, cfg.scene_threshold)
    if "frame_embeddings" in src:
        frames = [np.asarray(e, dtype=np.float64) for e in src["frame_embeddings"]]
    else:
        frames = [provider.embed(frame_key(sid, i)) for i in range(len(signal))]
    keys = select_keyframes(frames, cfg.keyframe_threshold)
    qa_given = src.get("qa", {})
    clips = []
    for k, (a, b) in enumerate(spans):
        clip = ClipRecord(
            clip_id=f"{sid}#{k}",
            source_id=sid,
            start=a / fps,
            end=b / fps,
            start_frame=a,
            end_frame=b,
            keyframes=[i for i in keys if a <= i < b],
        )
        if clip.clip_id in qa_given:
            clip.qa = [QAPair(*p) if isinstance(p, (list, tuple)) else QAPair(**p) for p in qa_given[clip.clip_id]]
        if not clip.keyframes:
            clip.drop("no_keyframe")
        clips.append(clip)
    return clips


def load_records(lines: Iterable[str], cfg: CurationConfig, provider: EmbeddingProvider) -> list[ClipRecord]:
    """Parse input lines: raw source videos (``frame_diffs``) are split; clip records pass through."""
    records: list[ClipRecord] = []
    for line in lines:
        if not line.strip():
            continue
        obj = json.loads(line)
        if "clip_id" in obj:
            records.append(ClipRecord.from_dict(obj))
        else:
            records.extend(_split_source(obj, cfg, provider))
    return records


def curate(
    records: list[ClipRecord],
    cfg: CurationConfig,
    provider: EmbeddingProvider,
    qa_provider: QAProvider | None = None,
) -> list[ClipRecord]:
    """Run length filter, category balance and QA filter over split, keyframe-gated records.

    Records are mutated in place and returned in input order.
    """
    filter_by_length(records, cfg.min_len, cfg.max_len)

    live = [r for r in records if r.kept]
    cat_emb = np.stack([provider.embed(category_key(c)) for c in cfg.categories])
    clip_emb = np.stack([provider.embed(r.clip_id) for r in live]) if live else np.zeros((0, cat_emb.shape[1]))
    selected, sims = balance_categories([r.clip_id for r in live], clip_emb, cat_emb, cfg.quota, cfg.extra, cfg.seed)
    chosen = set(selected)
    for r, row in zip(live, sims):
        r.category_scores = [float(x) for x in row]
        if r.clip_id not in chosen:
            r.drop("not_selected")

    for r in records:
        if not r.kept:
            continue
        if not r.qa and qa_provider is not None:
            r.qa = qa_provider.generate(r)
        filter_qa(r.qa)
        if not any(q.status == "kept" for q in r.qa):
            r.drop("no_valid_qa")
    return records


def duration_histogram(durations: Sequence[float]) -> dict[str, int]:
    """Bins are [lo, hi); the bin ending at MAX_LEN also takes MAX_LEN itself."""
    edges = list(HISTOGRAM_EDGES) + [float("inf")]
    labels = [f"{lo:g}-{hi:g}" if np.isfinite(hi) else f">{lo:g}" for lo, hi in zip(edges[:-1], edges[1:])]
    hist = dict.fromkeys(labels, 0)
    for d in durations:
        i = bisect.bisect_right(edges, d) - 1
        if d == MAX_LEN and edges[i] == MAX_LEN:
            i -= 1
        hist[labels[max(i, 0)]] += 1
    return hist


def manifest_stats(records: Sequence[ClipRecord]) -> dict:
    kept = [r for r in records if r.kept]
    durations = [r.duration for r in kept]
    dropped: dict[str, int] = {}
    for r in records:
        if not r.kept:
            dropped[r.reason] = dropped.get(r.reason, 0) + 1
    per_source: dict[str, int] = {}
    for r in kept:
        per_source[r.source_id] = per_source.get(r.source_id, 0) + 1
    return {
        "records": len(records),
        "clip_count": len(kept),
        "dropped": dict(sorted(dropped.items())),
        "qa_count": sum(1 for r in kept for q in r.qa if q.status == "kept"),
        "mean_duration": float(np.mean(durations)) if durations else 0.0,
        "per_source": dict(sorted(per_source.items())),
        "duration_histogram": duration_histogram(durations),
    }


def build_manifest(records: Sequence[ClipRecord], path) -> dict:
    """Write one JSON record per line plus ``<stem>.stats.json``; return the stats."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    stats = manifest_stats(records)
    stats_path(path).write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return stats


def stats_path(manifest: Path) -> Path:
    manifest = Path(manifest)
    return manifest.with_name(manifest.stem + ".stats.json")
