"""Demorphing metrics: constraint checks, restoration accuracy, TMR, BW-IQA, replication."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biometric import Embedding, MatchThreshold, calibrate_threshold, impostor_scores, match_score
from .errors import ProviderError, ValidationError
from .imaging import load_png, psnr, save_png, ssim

DEFAULT_FMRS = (0.1, 0.01, 0.001)
REPLICATION_DELTA = 0.98
IQA = {"ssim": ssim, "psnr": psnr}


@dataclass
class DemorphResult:
    """One morph, its two outputs, its two ground truths and all five embeddings."""

    morph_id: str
    morph: np.ndarray
    outputs: tuple
    ground_truths: tuple
    embeddings: dict

    def __post_init__(self):
        need = {"x", "o1", "o2", "i1", "i2"}
        if set(self.embeddings) != need:
            raise ValidationError(f"embeddings must be keyed {sorted(need)}")
        ids = {e.provider_id for e in self.embeddings.values()}
        if len(ids) != 1:
            raise ProviderError(f"embeddings come from several providers: {sorted(ids)}")

    @property
    def provider_id(self) -> str:
        return self.embeddings["x"].provider_id

    def score(self, a: str, b: str) -> float:
        return match_score(self.embeddings[a], self.embeddings[b])

    def score_table(self) -> np.ndarray:
        """``S[j, k] = B(o_j, i_k)``."""
        e = self.embeddings
        return np.array(
            [[match_score(e["o1"], e["i1"]), match_score(e["o1"], e["i2"])],
             [match_score(e["o2"], e["i1"]), match_score(e["o2"], e["i2"])]]
        )

    def swapped_truths(self) -> "DemorphResult":
        e = dict(self.embeddings)
        e["i1"], e["i2"] = e["i2"], e["i1"]
        return DemorphResult(self.morph_id, self.morph, self.outputs, self.ground_truths[::-1], e)


def make_result(morph_id, x, o1, o2, i1, i2, provider, keys=None) -> DemorphResult:
    keys = keys or {}
    imgs = {"x": x, "o1": o1, "o2": o2, "i1": i1, "i2": i2}
    emb = {k: provider.embed(v, key=keys.get(k)) for k, v in imgs.items()}
    return DemorphResult(morph_id, x, (o1, o2), (i1, i2), emb)


def check_separation(r: DemorphResult, theta: float) -> bool:
    """Outputs look like different people: ``B(o1, o2) < theta``."""
    return r.score("o1", "o2") < theta


def check_restoration(r: DemorphResult, epsilon: float) -> bool:
    """``min_j max_k B(o_j, i_k) > epsilon``: every output matches some truth."""
    s = r.score_table()
    return float(np.min(np.max(s, axis=1))) > epsilon


def assignment(r: DemorphResult):
    """Output-to-truth assignment maximizing the summed score.

    Returns ``(pairing, (score_for_o1, score_for_o2))`` where pairing is
    ``"identity"`` (o1-i1, o2-i2) or ``"crossed"`` (o1-i2, o2-i1). A tie in
    the sum goes to the pairing with the larger weaker score, so the chosen
    score multiset never depends on the stored truth order.
    """
    s = r.score_table()
    ident = (s[0, 0], s[1, 1])
    cross = (s[0, 1], s[1, 0])
    si, sc = ident[0] + ident[1], cross[0] + cross[1]
    if si > sc or (si == sc and min(ident) >= min(cross)):
        return "identity", ident
    return "crossed", cross


def _check_tau(results, tau: MatchThreshold):
    if not results:
        raise ValidationError("no demorph results")
    ids = {r.provider_id for r in results}
    if len(ids) != 1:
        raise ProviderError(f"results mix providers {sorted(ids)}")
    if tau.provider_id and tau.provider_id not in ids:
        raise ProviderError(f"threshold calibrated for {tau.provider_id}, results use {ids.pop()}")


def is_restored(r: DemorphResult, tau: float) -> bool:
    _, (a, b) = assignment(r)
    return a > tau and b > tau


def restoration_accuracy(results, tau: MatchThreshold) -> float:
    """Fraction of morphs whose assigned outputs both exceed the threshold."""
    _check_tau(results, tau)
    return sum(is_restored(r, tau.tau) for r in results) / len(results)


def tmr_at_fmr(results, tau: MatchThreshold) -> float:
    """Fraction of the 2N assigned genuine comparisons above the threshold."""
    _check_tau(results, tau)
    hits = 0
    for r in results:
        _, (a, b) = assignment(r)
        hits += int(a > tau.tau) + int(b > tau.tau)
    return hits / (2 * len(results))


def bw_iqa(r: DemorphResult, iqa: str = "ssim") -> float:
    """Biometrically weighted IQA of one morph.

    The larger of the two pairing sums ``sum_j clamp(B(o_j, i_k(j)), 0, 1) *
    iqa(o_j, i_k(j))``, identity and crossed. Not averaged over the outputs.
    """
    fn = IQA[iqa.lower()]
    (o1, o2), (i1, i2) = r.outputs, r.ground_truths
    s = np.clip(r.score_table(), 0.0, 1.0)
    ident = s[0, 0] * fn(o1, i1) + s[1, 1] * fn(o2, i2)
    cross = s[0, 1] * fn(o1, i2) + s[1, 0] * fn(o2, i1)
    return float(max(ident, cross))


def is_replicated(r: DemorphResult, delta: float = REPLICATION_DELTA) -> bool:
    o1, o2 = r.outputs
    return ssim(o1, o2) > delta and ssim(o1, r.morph) > delta


def replication_rate(results, delta: float = REPLICATION_DELTA) -> float:
    if not results:
        raise ValidationError("no demorph results")
    return sum(is_replicated(r, delta) for r in results) / len(results)


# --------------------------------------------------------------------------- reports


def fmr_key(fmr: float) -> str:
    return repr(float(fmr))


@dataclass
class EvalReport:
    dataset: str
    provider: str
    thresholds: list
    theta: float
    epsilon: float
    rows: list
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = self.recompute()

    def recompute(self) -> dict:
        if not self.rows:
            return {}
        mean = lambda key: float(np.mean([row[key] for row in self.rows]))  # noqa: E731
        agg = {k: mean(k) for k in ("psnr", "ssim", "bw_ssim", "bw_psnr")}
        agg["replication_rate"] = mean("replicated")
        agg["separation_rate"] = mean("separated")
        agg["restoration_constraint_rate"] = mean("restoration_ok")
        for t in self.thresholds:
            k = fmr_key(t["fmr"])
            agg[f"ra@{k}"] = float(np.mean([row["restored"][k] for row in self.rows]))
            agg[f"tmr@{k}"] = float(np.mean([row["genuine_matches"][k] / 2 for row in self.rows]))
        return agg

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "provider": self.provider,
            "thresholds": self.thresholds,
            "theta": self.theta,
            "epsilon": self.epsilon,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["dataset"], d["provider"], d["thresholds"], d["theta"], d["epsilon"],
                   d["rows"], d["aggregates"])


def result_row(r: DemorphResult, thresholds, theta: float, epsilon: float) -> dict:
    pairing, (a, b) = assignment(r)
    (o1, o2), (i1, i2) = r.outputs, r.ground_truths
    truths = (i1, i2) if pairing == "identity" else (i2, i1)
    s = r.score_table()
    restored, genuine = {}, {}
    for t in thresholds:
        k = fmr_key(t["fmr"])
        restored[k] = bool(a > t["tau"] and b > t["tau"])
        genuine[k] = int(a > t["tau"]) + int(b > t["tau"])
    return {
        "morph_id": r.morph_id,
        "psnr": 0.5 * (psnr(o1, truths[0]) + psnr(o2, truths[1])),
        "ssim": 0.5 * (ssim(o1, truths[0]) + ssim(o2, truths[1])),
        "bw_ssim": bw_iqa(r, "ssim"),
        "bw_psnr": bw_iqa(r, "psnr"),
        "pairing": pairing,
        "scores": {
            "o1_i1": s[0, 0], "o1_i2": s[0, 1], "o2_i1": s[1, 0], "o2_i2": s[1, 1],
            "o1_o2": r.score("o1", "o2"), "x_i1": r.score("x", "i1"), "x_i2": r.score("x", "i2"),
        },
        "ssim_o1_o2": ssim(o1, o2),
        "ssim_o1_x": ssim(o1, r.morph),
        "replicated": is_replicated(r),
        "separated": check_separation(r, theta),
        "restoration_ok": check_restoration(r, epsilon),
        "restored": restored,
        "genuine_matches": genuine,
    }


def default_theta(impostors) -> float:
    """Separation threshold: 95th percentile of impostor scores."""
    return float(np.percentile(np.asarray(impostors, dtype=np.float64), 95))


def evaluate_results(results, impostors, fmr_targets=DEFAULT_FMRS, dataset="", theta=None,
                     epsilon=None) -> EvalReport:
    """Calibrate thresholds on ``impostors`` and score every result."""
    if not results:
        raise ValidationError("no demorph results to evaluate")
    pid = results[0].provider_id
    taus = [calibrate_threshold(impostors, f, pid) for f in fmr_targets]
    thresholds = [{"fmr": t.fmr_target, "tau": t.tau, "impostor_count": t.impostor_count} for t in taus]
    if theta is None:
        theta = default_theta(impostors)
    if epsilon is None:
        epsilon = calibrate_threshold(impostors, 0.01, pid).tau
    rows = [result_row(r, thresholds, theta, epsilon) for r in results]
    return EvalReport(dataset, pid, thresholds, float(theta), float(epsilon), rows)


def gallery_impostors(manifest, provider):
    """Impostor scores over the distinct ground-truth images of a manifest."""
    seen = {}
    for rec in manifest.records:
        for ident, rel in ((rec.id_a, rec.image_a), (rec.id_b, rec.image_b)):
            seen.setdefault(rel, ident)
    embs, ids = [], []
    for rel, ident in seen.items():
        embs.append(provider.embed(load_png(_existing(manifest.resolve(rel))), key=rel))
        ids.append(ident)
    return impostor_scores(embs, ids)


def _existing(p: Path) -> Path:
    if not Path(p).exists():
        raise FileNotFoundError(f"missing file: {p}")
    return Path(p)


def evaluate_dataset(manifest, codec=None, ckpt=None, provider=None, fmr_targets=DEFAULT_FMRS,
                     demorpher=None, theta=None, epsilon=None, dataset=None, keep_images=True):
    """Demorph every record of ``manifest`` and build an :class:`EvalReport`.

    ``demorpher`` overrides the trained model: any callable ``(x, record) ->
    (o1, o2)``. Output embedding keys for file providers are
    ``<morph_id>_out1.png`` and ``<morph_id>_out2.png``.

    Returns ``(report, results)``.
    """
    from .demorpher import demorph_batch

    if len(manifest) == 0:
        raise ValidationError("manifest has no morphs to evaluate")
    if provider is None:
        raise ValidationError("an embedding provider is required")
    manifest.validate()
    recs = manifest.records
    xs = [load_png(manifest.resolve(r.morph_path)) for r in recs]
    if demorpher is None:
        if codec is None or ckpt is None:
            raise ValidationError("codec and checkpoint required without a demorpher override")
        o1s, o2s = demorph_batch(np.stack(xs), codec, ckpt)
        outs = list(zip(o1s, o2s))
    else:
        outs = [demorpher(x, r) for x, r in zip(xs, recs)]

    results = []
    for rec, x, (o1, o2) in zip(recs, xs, outs):
        i1 = load_png(manifest.resolve(rec.image_a))
        i2 = load_png(manifest.resolve(rec.image_b))
        keys = {
            "x": rec.morph_path, "i1": rec.image_a, "i2": rec.image_b,
            "o1": f"{rec.morph_id}_out1.png", "o2": f"{rec.morph_id}_out2.png",
        }
        results.append(make_result(rec.morph_id, x, o1, o2, i1, i2, provider, keys))
    impostors = gallery_impostors(manifest, provider)
    label = dataset if dataset is not None else str(manifest.root)
    report = evaluate_results(results, impostors, fmr_targets, label, theta, epsilon)
    return report, results


def write_grid(path, results, limit: int = 8) -> Path:
    """Rows of (morph, truth 1, truth 2, output 1, output 2) with 2px gutters."""
    rows = []
    for r in results[:limit]:
        tiles = [r.morph, *r.ground_truths, *r.outputs]
        h = tiles[0].shape[0]
        gap = np.ones((h, 2, 3))
        rows.append(np.concatenate([np.concatenate([_rgb(t), gap], axis=1) for t in tiles], axis=1))
    if not rows:
        raise ValidationError("nothing to draw")
    gap = np.ones((2, rows[0].shape[1], 3))
    grid = np.concatenate([np.concatenate([row, gap], axis=0) for row in rows], axis=0)
    return save_png(path, grid)


def _rgb(img):
    img = np.asarray(img, dtype=np.float64)
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


__all__ = [
    "DemorphResult", "EvalReport", "Embedding", "assignment", "bw_iqa", "check_restoration",
    "check_separation", "evaluate_dataset", "evaluate_results", "make_result", "replication_rate",
    "restoration_accuracy", "tmr_at_fmr", "write_grid",
]
