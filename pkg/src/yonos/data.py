"""Dataset generation and loading for the procedural texture corpus.

`generate_corpus` writes n_train + n_eval seeded textures plus a
manifest recording every per-image seed, so any image can be
regenerated exactly with gen_texture.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .degradation import gen_texture, read_image, write_image

MANIFEST_NAME = "manifest.json"


def image_seed(data_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(data_seed), 0x1D, int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def generate_corpus(out_dir, cfg: dict, fmt: str = "pgm") -> dict:
    """Write the corpus described by cfg['data'] into out_dir."""
    d = cfg["data"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_total = d["n_train"] + d["n_eval"]
    entries = []
    for i in range(n_total):
        seed = image_seed(d["seed"], i)
        img = gen_texture(seed, d["hr_size"], d["hr_size"])
        split = "train" if i < d["n_train"] else "eval"
        name = f"{split}_{i:05d}.{fmt}"
        write_image(out / name, img)
        entries.append({"file": name, "seed": seed, "split": split})
    manifest = {
        "hr_size": d["hr_size"],
        "seed": d["seed"],
        "n_train": d["n_train"],
        "n_eval": d["n_eval"],
        "images": entries,
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def load_corpus(data_dir):
    """Return (train_images, eval_images) float32 arrays from a corpus dir.

    Images are regenerated from the manifest seeds rather than decoded
    from the 8-bit files, so training sees full float precision; the
    files exist for inspection and for the I/O contracts.
    """
    data_dir = Path(data_dir)
    mpath = data_dir / MANIFEST_NAME
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest at {mpath}; run gen-data first")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    hr = manifest["hr_size"]
    train, evals = [], []
    for entry in manifest["images"]:
        img = gen_texture(entry["seed"], hr, hr)
        (train if entry["split"] == "train" else evals).append(img)
    return np.stack(train), np.stack(evals)


def verify_corpus_files(data_dir, n_check: int = 4) -> bool:
    """Spot-check that stored files match their manifest seeds."""
    data_dir = Path(data_dir)
    with open(data_dir / MANIFEST_NAME, encoding="utf-8") as fh:
        manifest = json.load(fh)
    hr = manifest["hr_size"]
    step = max(1, len(manifest["images"]) // n_check)
    for entry in manifest["images"][::step]:
        stored = read_image(data_dir / entry["file"])
        regen = gen_texture(entry["seed"], hr, hr)
        if np.abs(stored - regen).max() > 0.5 / 255.0 + 1e-6:
            return False
    return True
