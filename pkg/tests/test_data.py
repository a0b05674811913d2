"""Corpus generation and manifest contracts."""

import json

import numpy as np

from yonos import config as cfgmod
from yonos.data import generate_corpus, image_seed, load_corpus, verify_corpus_files
from yonos.degradation import gen_texture, read_image


def tiny_cfg():
    return cfgmod.parse_config({
        "data": {"n_train": 6, "n_eval": 4, "hr_size": 16},
        "scales": [2],
        "ae": {"mode": "identity"},
    })


class TestGenerateCorpus:
    def test_counts_and_splits(self, tmp_path):
        manifest = generate_corpus(tmp_path, tiny_cfg())
        assert len(manifest["images"]) == 10
        splits = [e["split"] for e in manifest["images"]]
        assert splits.count("train") == 6 and splits.count("eval") == 4

    def test_manifest_seeds_reproduce_images(self, tmp_path):
        manifest = generate_corpus(tmp_path, tiny_cfg())
        for entry in manifest["images"][:3]:
            regen = gen_texture(entry["seed"], 16, 16)
            stored = read_image(tmp_path / entry["file"])
            assert np.abs(stored - regen).max() <= 0.5 / 255.0 + 1e-6
        assert verify_corpus_files(tmp_path)

    def test_load_round_trip(self, tmp_path):
        generate_corpus(tmp_path, tiny_cfg())
        train, evals = load_corpus(tmp_path)
        assert train.shape == (6, 16, 16)
        assert evals.shape == (4, 16, 16)
        assert np.array_equal(train[0], gen_texture(image_seed(0, 0), 16, 16))

    def test_image_seeds_stable(self):
        assert image_seed(0, 5) == image_seed(0, 5)
        assert image_seed(0, 5) != image_seed(0, 6)
        assert image_seed(1, 5) != image_seed(0, 5)

    def test_manifest_json_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir(), b.mkdir()
        generate_corpus(a, tiny_cfg())
        generate_corpus(b, tiny_cfg())
        assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
        with open(a / "manifest.json") as fh:
            m = json.load(fh)
        assert m["hr_size"] == 16
