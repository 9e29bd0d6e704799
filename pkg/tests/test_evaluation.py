import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from demorphlab.biometric import (
    Embedding,
    EmbeddingFileProvider,
    MatchThreshold,
    ToyProvider,
    calibrate_threshold,
    write_embedding_file,
)
from demorphlab.errors import ProviderError, ValidationError
from demorphlab.evaluation import (
    DemorphResult,
    EvalReport,
    assignment,
    bw_iqa,
    check_restoration,
    check_separation,
    evaluate_dataset,
    evaluate_results,
    make_result,
    replication_rate,
    restoration_accuracy,
    tmr_at_fmr,
    write_grid,
)
from demorphlab.imaging import load_png, psnr, ssim
from demorphlab.protocol import Manifest, build_morph_dataset


def random_result(rng, k=0, dim=6, side=16, pid="p"):
    vecs = {name: rng.standard_normal(dim) for name in ("x", "o1", "o2", "i1", "i2")}
    imgs = [rng.random((side, side, 1)) for _ in range(5)]
    emb = {name: Embedding(v, pid) for name, v in vecs.items()}
    return DemorphResult(f"m{k}", imgs[0], (imgs[1], imgs[2]), (imgs[3], imgs[4]), emb)


def results(seed, n=20):
    rng = np.random.default_rng(seed)
    return [random_result(rng, k) for k in range(n)]


def tau(t, pid="p"):
    return MatchThreshold(t, 0.1, 100, pid)


def test_result_requires_all_embeddings_same_provider(rng):
    r = random_result(rng)
    emb = dict(r.embeddings)
    emb["o1"] = Embedding(emb["o1"].vector, "other")
    with pytest.raises(ProviderError):
        DemorphResult("m", r.morph, r.outputs, r.ground_truths, emb)
    with pytest.raises(ValidationError):
        DemorphResult("m", r.morph, r.outputs, r.ground_truths, {"x": emb["x"]})


def test_separation_and_restoration_checks(rng):
    r = random_result(rng)
    s = r.score_table()
    assert check_separation(r, r.score("o1", "o2") + 1e-9)
    assert not check_separation(r, r.score("o1", "o2"))
    mm = oracles.restoration_min_max(s.tolist())
    assert check_restoration(r, mm - 1e-9) and not check_restoration(r, mm)


@given(st.integers(0, 10**6))
def test_pairing_invariance_bit_identical(seed):
    rs = results(seed, 6)
    sw = [r.swapped_truths() for r in rs]
    for t in (-0.5, 0.0, 0.3):
        assert restoration_accuracy(rs, tau(t)) == restoration_accuracy(sw, tau(t))
        assert tmr_at_fmr(rs, tau(t)) == tmr_at_fmr(sw, tau(t))
    for a, b in zip(rs, sw):
        assert bw_iqa(a, "ssim") == bw_iqa(b, "ssim")
        assert bw_iqa(a, "psnr") == bw_iqa(b, "psnr")


def test_pairing_tie_break_is_order_free(rng):
    r = random_result(rng)
    e = dict(r.embeddings)
    # o1 == o2 makes both pairing sums equal
    e["o2"] = e["o1"]
    tied = DemorphResult("t", r.morph, r.outputs, r.ground_truths, e)
    a = sorted(assignment(tied)[1])
    b = sorted(assignment(tied.swapped_truths())[1])
    assert a == b


@given(st.integers(0, 10**6))
def test_ra_monotone_in_fmr(seed):
    rs = results(seed, 10)
    imp = np.random.default_rng(seed).uniform(-1, 1, 300)
    ras = [restoration_accuracy(rs, calibrate_threshold(imp, f, "p")) for f in (0.1, 0.01, 0.001)]
    assert ras[0] >= ras[1] >= ras[2]


def test_bw_against_enumeration_1000_tuples():
    rng = np.random.default_rng(7)
    for k in range(1000):
        r = random_result(rng, k, side=12)
        s = r.score_table().tolist()
        (o1, o2), (i1, i2) = r.outputs, r.ground_truths
        for name, fn in (("ssim", ssim), ("psnr", psnr)):
            iqa = [[fn(o1, i1), fn(o1, i2)], [fn(o2, i1), fn(o2, i2)]]
            assert bw_iqa(r, name) == pytest.approx(oracles.bw_enumerated(s, iqa), abs=1e-12)


def test_bw_perfect_outputs_is_two():
    toy = ToyProvider()
    rng = np.random.default_rng(0)
    i1, i2, x = (rng.random((16, 16, 3)) for _ in range(3))
    r = make_result("m", x, i1, i2, i1, i2, toy)
    assert bw_iqa(r, "ssim") == pytest.approx(2.0)


def test_ra_and_tmr_counting(rng):
    rs = results(3, 10)
    t = tau(0.2)
    per = []
    for r in rs:
        _, (a, b) = assignment(r)
        per.append((a > 0.2, b > 0.2))
    assert restoration_accuracy(rs, t) == np.mean([a and b for a, b in per])
    assert tmr_at_fmr(rs, t) == np.mean([x for ab in per for x in ab])


def test_threshold_provider_must_match(rng):
    with pytest.raises(ProviderError):
        restoration_accuracy(results(0, 2), tau(0.1, "other"))
    with pytest.raises(ValidationError):
        restoration_accuracy([], tau(0.1))


def test_replication_rate_counts():
    rng = np.random.default_rng(0)
    toy = ToyProvider()
    rs = []
    for k in range(4):
        x, i1, i2 = (rng.random((16, 16, 3)) for _ in range(3))
        outs = (x, x) if k % 2 else (i1, i2)
        rs.append(make_result(f"m{k}", x, *outs, i1, i2, toy))
    assert replication_rate(rs) == 0.5
    with pytest.raises(ValidationError):
        replication_rate([])


def test_report_self_consistent_and_round_trips(tmp_path):
    rs = results(5, 8)
    imp = np.random.default_rng(5).uniform(-1, 1, 200)
    rep = evaluate_results(rs, imp, dataset="synthetic")
    assert rep.aggregates == rep.recompute()
    assert rep.aggregates["ra@0.1"] == restoration_accuracy(rs, calibrate_threshold(imp, 0.1, "p"))
    back = EvalReport.read(rep.write(tmp_path / "r.json"))
    assert back.aggregates == rep.aggregates and back.rows == rep.rows
    doc = json.loads((tmp_path / "r.json").read_text())
    assert {"dataset", "provider", "thresholds", "aggregates", "rows"} <= set(doc)
    assert {"morph_id", "psnr", "ssim", "scores", "restored"} <= set(doc["rows"][0])


@pytest.fixture(scope="module")
def eval_manifest(toy_registry, tmp_path_factory):
    ids = toy_registry.ids()
    pairs = [(ids[k], ids[k + 1]) for k in range(0, 12, 2)]
    return build_morph_dataset(pairs, toy_registry, 0.5, tmp_path_factory.mktemp("eval"), 0, 3)


def test_stub_oracles(eval_manifest):
    def truth(x, rec):
        return load_png(eval_manifest.resolve(rec.image_a)), load_png(eval_manifest.resolve(rec.image_b))

    rep, _ = evaluate_dataset(eval_manifest, provider=ToyProvider(), demorpher=truth)
    assert all(rep.aggregates[f"ra@{f!r}"] == 1.0 for f in (0.1, 0.01, 0.001))
    assert rep.aggregates["replication_rate"] == 0.0
    rep, res = evaluate_dataset(eval_manifest, provider=ToyProvider(), demorpher=lambda x, r: (x, x))
    assert rep.aggregates["replication_rate"] == 1.0
    assert rep.aggregates["separation_rate"] == 0.0


def test_file_provider_keys(eval_manifest, tmp_path):
    toy = ToyProvider()
    recs = []
    for r in eval_manifest.records:
        for rel in (r.morph_path, r.image_a, r.image_b):
            recs.append((rel, toy.embed(load_png(eval_manifest.resolve(rel))).vector))
        x = load_png(eval_manifest.resolve(r.morph_path))
        recs += [(f"{r.morph_id}_out1.png", toy.embed(x).vector), (f"{r.morph_id}_out2.png", toy.embed(x).vector)]
    prov = EmbeddingFileProvider.load(write_embedding_file(tmp_path / "e.bin", "ext", dict(recs).items()))
    rep, _ = evaluate_dataset(eval_manifest, provider=prov, demorpher=lambda x, r: (x, x))
    assert rep.provider == "ext"
    assert rep.aggregates["replication_rate"] == 1.0


def test_evaluate_dataset_errors(eval_manifest, tmp_path):
    empty = Manifest([], 3, root=tmp_path)
    with pytest.raises(ValidationError):
        evaluate_dataset(empty, provider=ToyProvider(), demorpher=lambda x, r: (x, x))
    with pytest.raises(ValidationError):
        evaluate_dataset(eval_manifest, provider=ToyProvider())
    moved = Manifest(eval_manifest.records, 3, root=tmp_path)
    with pytest.raises(FileNotFoundError, match="m00000"):
        evaluate_dataset(moved, provider=ToyProvider(), demorpher=lambda x, r: (x, x))


def test_grid(tmp_path, eval_manifest):
    _, res = evaluate_dataset(eval_manifest, provider=ToyProvider(), demorpher=lambda x, r: (x, x))
    g = load_png(write_grid(tmp_path / "g.png", res, limit=3))
    assert g.shape == (3 * 66, 5 * 66, 3)
