"""Small synthetic inputs for the CLI, the curation pipeline and the test suite."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .injection import ConditionEmbedding
from .pipeline import CompressorConfig
from .tensor import make_rng, save_tensor

# (source, fps, [(duration_s, redundant)]); a redundant clip repeats the previous scene
CORPUS_LAYOUT = [
    ("vid_a", 10.0, [(3.0, False), (4.9, False), (5.0, False), (12.0, False)]),
    ("vid_b", 1.0, [(25.0, False), (30.0, False), (30.0, True), (60.0, False)]),
    ("vid_c", 1.0, [(120.0, False), (121.0, False), (8.0, False), (15.0, False)]),
    ("vid_d", 1.0, [(150.0, False), (22.0, False), (45.0, False), (9.0, True)]),
    ("vid_e", 1.0, [(90.0, False), (7.0, False), (11.0, False), (2.0, False)]),
]

ALL_INVALID_QA = ("vid_a#3", "vid_c#2", "vid_e#1")
GOOD = "The woman in the red apron slices onions on a wooden board. She then moves them into a pan."
BAD = ("The video does not provide this detail.", "The clip does NOT DESCRIBE the object.")


def _scene_vector(k: int) -> list[float]:
    # alternate two orthogonal directions so consecutive scenes have similarity 0
    return [1.0, 0.0, 0.0, 0.0] if k % 2 == 0 else [0.0, 1.0, 0.0, 0.0]


def synthetic_sources() -> list[dict]:
    """Five source videos that split into exactly 20 clips at scene threshold 0.5."""
    sources = []
    for sid, fps, clips in CORPUS_LAYOUT:
        diffs, embs, qa = [], [], {}
        scene = 0
        for k, (dur, redundant) in enumerate(clips):
            n = int(round(dur * fps))
            if k > 0 and not redundant:
                scene += 1
            diffs += [0.9 if k > 0 else 0.0] + [0.1] * (n - 1)
            embs += [_scene_vector(scene)] * n
            clip_id = f"{sid}#{k}"
            if clip_id in ALL_INVALID_QA:
                qa[clip_id] = [["What does the woman slice?", BAD[0]], ["Where is the pan?", BAD[1]]]
            else:
                qa[clip_id] = [["What does the woman slice?", GOOD], ["What is on the board?", BAD[k % 2]]]
        sources.append({"source_id": sid, "fps": fps, "frame_diffs": diffs, "frame_embeddings": embs, "qa": qa})
    return sources


def write_corpus(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for src in synthetic_sources():
            fh.write(json.dumps(src) + "\n")
    return path


def write_compress_inputs(directory, shape=(4, 6, 6), dim: int = 16, seed: int = 0) -> dict[str, Path]:
    """Feature tensor, pooled and fine conditions, and a small config, as files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    cond = ConditionEmbedding.random(rng, dim, 5)
    paths = {
        "input": d / "video.hict",
        "cond_pooled": d / "cond_pooled.hict",
        "cond_fine": d / "cond_fine.hict",
        "config": d / "config.json",
    }
    save_tensor(paths["input"], rng.normal(size=(*shape, dim)))
    save_tensor(paths["cond_pooled"], cond.pooled)
    save_tensor(paths["cond_fine"], cond.fine)
    CompressorConfig(ratio=(2, 3, 3), num_global_tokens=4, dim=dim, llm_dim=dim, heads=2, seed=seed).save(paths["config"])
    return paths
