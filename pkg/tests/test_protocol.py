import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from demorphlab.codec import CodecConfig, train_codec
from demorphlab.demorpher import DemorphConfig, train
from demorphlab.errors import ConfigError, SamplingError, SplitError, ValidationError
from demorphlab.imaging import load_png
from demorphlab.protocol import (
    Manifest,
    MorphRecord,
    Registry,
    ScenarioSplit,
    build_morph_dataset,
    gen_toy_faces,
    load_triplets,
    make_scenario_split,
    pair_coverage,
    read_pairs,
    sample_pairs,
    write_pairs,
)

IDS = [f"id{k:03d}" for k in range(30)]


def test_registry_files(toy_registry):
    root = toy_registry.root
    assert (root / "registry.jsonl").exists() and (root / "landmarks.txt").exists()
    back = Registry.load(root)
    assert back.ids() == toy_registry.ids()
    rid = back.ids()[0]
    assert back.image(rid).shape == (64, 64, 3)
    assert len(back.landmarks(rid, (64, 64))) == 16


def test_registry_rejects_duplicates_and_unknown(toy_registry):
    rec = toy_registry.identities[0]
    with pytest.raises(ValidationError):
        Registry(toy_registry.root, [rec, rec])
    with pytest.raises(ValidationError):
        toy_registry["nobody"]


def test_gen_toyfaces_resolution_rule(tmp_path):
    with pytest.raises(ValidationError):
        gen_toy_faces(2, 40, 0, tmp_path)


def test_gen_toyfaces_byte_identical(tmp_path):
    gen_toy_faces(3, 32, 5, tmp_path / "a")
    gen_toy_faces(3, 32, 5, tmp_path / "b")
    for rel in ("registry.jsonl", "landmarks.txt", "faces/s5-00002.png"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_split_pairs_are_legal(scenario):
    sp = make_scenario_split(IDS, scenario, 3)
    for side in ("train", "test"):
        pairs = sample_pairs(sp, min(40, sp.count_legal(side)), 1, side)
        assert len(set(pairs)) == len(pairs)
        assert all(sp.is_legal(p, side) and p[0] != p[1] for p in pairs)
        assert len(sp.legal_pairs(side)) == sp.count_legal(side)


def test_scenario_rules():
    s1 = make_scenario_split(IDS, 1, 0)
    train, test = set(s1.legal_pairs("train")), set(s1.legal_pairs("test"))
    assert not train & test and len(train | test) == 30 * 29 // 2
    s2 = make_scenario_split(IDS, 2, 0)
    y1 = set(s2.y1)
    assert all((a in y1) != (b in y1) for a, b in s2.legal_pairs("test"))
    s3 = make_scenario_split(IDS, 3, 0)
    assert not set(s3.y1) & set(s3.y2)
    assert "disjoint" in s3.constraint


def test_split_errors():
    with pytest.raises(SplitError):
        make_scenario_split(IDS[:3], 3, 0)
    with pytest.raises(SplitError):
        make_scenario_split(IDS, 4, 0)
    sp = make_scenario_split(IDS, 3, 0)
    with pytest.raises(SamplingError, match="at most"):
        sample_pairs(sp, 10**6, 0, "test")


def test_split_dict_round_trip():
    sp = make_scenario_split(IDS, 1, 9)
    assert ScenarioSplit.from_dict(json.loads(json.dumps(sp.to_dict()))) == sp


@given(st.permutations(IDS), st.integers(0, 1000), st.sampled_from([1, 2, 3]))
def test_pair_set_independent_of_input_order(perm, seed, scenario):
    a = make_scenario_split(IDS, scenario, seed)
    b = make_scenario_split(perm, scenario, seed)
    assert set(sample_pairs(a, 20, seed)) == set(sample_pairs(b, 20, seed))


@given(st.integers(0, 10_000))
def test_scenario3_disjoint(seed):
    sp = make_scenario_split(IDS, 3, seed)
    assert set(sp.train_ids).isdisjoint(sp.test_ids)


def test_rejection_sampler_for_large_pools():
    ids = [f"p{k:05d}" for k in range(1600)]
    sp = make_scenario_split(ids, 3, 0)
    pairs = sample_pairs(sp, 50, 0)
    assert len(set(pairs)) == 50 and all(sp.is_legal(p, "train") for p in pairs)


def test_pairs_file_round_trip(tmp_path):
    pairs = [("a", "b"), ("c", "d")]
    assert read_pairs(write_pairs(tmp_path / "p.txt", pairs)) == pairs
    (tmp_path / "bad.txt").write_text("a b c\n")
    with pytest.raises(ValidationError):
        read_pairs(tmp_path / "bad.txt")


def test_pair_coverage():
    assert pair_coverage([("a", "b"), ("b", "c")], ["a", "b", "c"]) == pytest.approx(2 / 3)


def test_self_pair_rejected():
    with pytest.raises(ValidationError):
        MorphRecord("m.png", "a", "a", "x.png", "x.png", [], 0.5, 0)


@pytest.fixture(scope="module")
def morph_set(toy_registry, tmp_path_factory):
    ids = toy_registry.ids()
    pairs = [(ids[0], ids[1]), (ids[2], ids[3]), (ids[4], ids[5])]
    out = tmp_path_factory.mktemp("morphs")
    return pairs, build_morph_dataset(pairs, toy_registry, 0.5, out, 4, scenario=3)


def test_morph_dataset(morph_set, toy_registry):
    pairs, m = morph_set
    assert len(m) == 3 and m.scenario == 3
    m.validate()
    x = load_png(m.resolve(m.records[0].morph_path))
    assert x.shape == (64, 64, 3)
    assert [(r.id_a, r.id_b) for r in m.records] == pairs
    xs, a, b = load_triplets(m)
    assert xs.shape == a.shape == b.shape == (3, 64, 64, 3)


def test_manifest_round_trip_byte_stable(morph_set):
    _, m = morph_set
    text = m.dumps()
    assert Manifest.loads(text).dumps() == text
    path = m.root / "manifest.jsonl"
    assert Manifest.load(path).dumps() == path.read_text(encoding="utf-8")


def test_manifest_field_names(morph_set):
    _, m = morph_set
    lines = m.dumps().splitlines()
    assert json.loads(lines[0]) == {"scenario": 3, "generator_version": m.generator_version}
    assert set(json.loads(lines[1])) == {
        "morph_path", "id_a", "id_b", "image_a", "image_b", "landmarks", "alpha", "seed"
    }


def test_manifest_errors(tmp_path, morph_set):
    with pytest.raises(ValidationError):
        Manifest.loads("")
    with pytest.raises(ValidationError):
        Manifest.loads('{"scenario": 3}\n')
    with pytest.raises(FileNotFoundError):
        Manifest.load(tmp_path / "nope.jsonl")
    _, m = morph_set
    broken = Manifest(m.records, 3, root=tmp_path)
    with pytest.raises(FileNotFoundError):
        broken.validate()


def test_dataset_regeneration_byte_identical(toy_registry, tmp_path):
    ids = toy_registry.ids()
    pairs = [(ids[6], ids[7]), (ids[8], ids[9])]
    a = build_morph_dataset(pairs, toy_registry, 0.5, tmp_path / "a", 1, 3)
    b = build_morph_dataset(pairs, toy_registry, 0.5, tmp_path / "b", 1, 3, workers=2)
    assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == (tmp_path / "b" / "manifest.jsonl").read_bytes()
    for r in a.records:
        assert a.resolve(r.morph_path).read_bytes() == b.resolve(r.morph_path).read_bytes()


def test_train_checks_variant_and_shapes(morph_set):
    _, m = morph_set
    xs, _, _ = load_triplets(m)
    codec = train_codec(xs, CodecConfig(base_width=8, epochs=1))
    with pytest.raises(ConfigError):
        train(m, codec, DemorphConfig(loss_variant="l1_image", epochs=1))
    small = train_codec(np.zeros((2, 32, 32, 3)), CodecConfig(base_width=8, epochs=1))
    with pytest.raises(ConfigError):
        train(m, small, DemorphConfig(epochs=1))
    ck = train(m, codec, DemorphConfig(epochs=1, base_width=8, disc_width=8, batch_size=2))
    assert ck.codec_fingerprint == codec.fingerprint()
