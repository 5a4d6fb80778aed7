import filecmp
import json

import numpy as np
import pytest

from kgalign.dataset import load_dataset
from kgalign.encoder import EncoderParams, GraphInputs
from kgalign.evaluator import evaluate, evaluate_vectors
from kgalign.kg import neighbor_similarity
from kgalign.synth import SyntheticBenchmarkSpec, synthesize, write_benchmark


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_same_seed_byte_identical(tmp_path):
    spec = SyntheticBenchmarkSpec(n_entities=300, dim=8, seed=11)
    write_benchmark(synthesize(spec), tmp_path / "a")
    write_benchmark(synthesize(spec), tmp_path / "b")
    assert same_tree(tmp_path / "a", tmp_path / "b")
    write_benchmark(synthesize(SyntheticBenchmarkSpec(n_entities=300, dim=8, seed=12)), tmp_path / "c")
    assert not same_tree(tmp_path / "a", tmp_path / "c")


def test_structure_and_split(tmp_path):
    bench = synthesize(SyntheticBenchmarkSpec(n_entities=500, dim=8, seed=1))
    ds = bench.dataset
    assert ds.gx.n_entities == ds.gy.n_entities == 500
    assert len(bench.train_pairs) == 150
    assert len(ds.links.subset("test")) == 350
    assert len(ds.links.subset("dev")) == 8  # 5% of 150 is 7.5, rounded half up
    pairs = ds.links.pairs
    assert sorted(pairs[:, 0].tolist()) == list(range(500))
    assert sorted(pairs[:, 1].tolist()) == list(range(500))
    # G_y is an isomorphic relabeling of G_x
    assert neighbor_similarity(ds.gx, ds.gy, pairs) == pytest.approx(
        np.mean([1.0 if ds.gx.degree(x) else 0.0 for x in pairs[:, 0]])
    )
    assert np.abs(np.linalg.norm(ds.store_y.vectors, axis=1) - 1).max() <= 1e-12


def test_written_dataset_reloads(tmp_path):
    bench = synthesize(SyntheticBenchmarkSpec(n_entities=200, dim=8, seed=2))
    write_benchmark(bench, tmp_path)
    ds = load_dataset(tmp_path)
    for split in ("train", "dev", "test"):
        assert np.array_equal(ds.links.subset(split), bench.dataset.links.subset(split))
    # reloading renormalizes already-unit rows, which may move the last bit
    assert np.abs(ds.store_x.vectors - bench.dataset.store_x.vectors).max() <= 1e-15
    assert ds.gx.entity_names == bench.dataset.gx.entity_names
    assert json.loads((tmp_path / "synth.json").read_text())["seed"] == 2


def untrained_hit1(spec):
    ds = synthesize(spec).dataset
    p = EncoderParams.init(spec.dim, np.random.default_rng(0))
    ix, iy = GraphInputs(ds.gx, ds.store_x), GraphInputs(ds.gy, ds.store_y)
    test = ds.links.subset("test")
    return evaluate(p, ix, iy, test).hit1, evaluate_vectors(ds.store_x.vectors, ds.store_y.vectors, test).hit1, len(test)


def test_sigma_zero_is_perfect():
    enc, raw, _ = untrained_hit1(SyntheticBenchmarkSpec(n_entities=600, sigma=0.0, seed=3))
    assert enc == 1.0 and raw == 1.0


@pytest.mark.parametrize("sigma", [2.0, 4.0])
def test_large_sigma_near_chance(sigma):
    enc, raw, n = untrained_hit1(SyntheticBenchmarkSpec(n_entities=1000, sigma=sigma, seed=4))
    assert enc <= 10 / n and raw <= 10 / n


def test_default_benchmark_untrained_window():
    enc, _, _ = untrained_hit1(SyntheticBenchmarkSpec())
    assert 0.3 <= enc <= 0.6


def test_invalid_spec():
    with pytest.raises(ValueError):
        synthesize(SyntheticBenchmarkSpec(name_noise=1.5))
