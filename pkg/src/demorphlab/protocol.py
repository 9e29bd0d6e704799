"""Identity registries, train/test scenario splits, pair sampling and manifests."""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SamplingError, SplitError, ValidationError
from .imaging import load_png, save_png
from .morphing import Landmarks, morph, read_landmark_file, write_landmark_file
from .toyfaces import toy_face

GENERATOR_VERSION = f"demorphlab-{__version__}"
RECORD_FIELDS = ("morph_path", "id_a", "id_b", "image_a", "image_b", "landmarks", "alpha", "seed")
MAX_ENUMERATED_PAIRS = 1_000_000


# --------------------------------------------------------------------------- registry


@dataclass
class IdentityRecord:
    identity_id: str
    image_paths: list
    landmark_path: str
    split: str = ""
    seed: int | None = None


@dataclass
class Registry:
    root: Path
    identities: list = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [r.identity_id for r in self.identities]
        if len(ids) != len(set(ids)):
            raise ValidationError("identity ids must be unique within a registry")
        self._by_id = {r.identity_id: r for r in self.identities}
        self._landmarks = {}

    def __len__(self):
        return len(self.identities)

    def ids(self):
        return [r.identity_id for r in self.identities]

    def __getitem__(self, identity_id) -> IdentityRecord:
        try:
            return self._by_id[identity_id]
        except KeyError:
            raise ValidationError(f"unknown identity {identity_id!r}") from None

    def image(self, identity_id) -> np.ndarray:
        return load_png(self.root / self[identity_id].image_paths[0])

    def landmarks(self, identity_id, frame) -> Landmarks:
        rec = self[identity_id]
        if rec.landmark_path not in self._landmarks:
            self._landmarks[rec.landmark_path] = read_landmark_file(self.root / rec.landmark_path)
        table = self._landmarks[rec.landmark_path]
        key = rec.image_paths[0]
        if key not in table:
            raise ValidationError(f"no landmarks for {key} in {rec.landmark_path}")
        return Landmarks(table[key], frame)

    def save(self, path=None) -> Path:
        path = Path(path) if path else self.root / "registry.jsonl"
        lines = [json.dumps(asdict(r)) for r in self.identities]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Registry":
        path = Path(path)
        if path.is_dir():
            path = path / "registry.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"registry not found: {path}")
        recs = [IdentityRecord(**json.loads(l)) for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
        return cls(path.parent, recs)


def identity_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def gen_toy_faces(count: int, resolution: int, seed: int, out_dir) -> Registry:
    """Render ``count`` toy identities with their landmark file and registry."""
    out = Path(out_dir)
    if resolution % 16 or resolution < 16:
        raise ValidationError(f"resolution must be a positive multiple of 16, got {resolution}")
    recs, marks = [], {}
    for k in range(count):
        s = identity_seed(seed, k)
        img, lm, _ = toy_face(s, resolution)
        ident = f"s{seed}-{k:05d}"
        rel = f"faces/{ident}.png"
        save_png(out / rel, img)
        marks[rel] = lm
        recs.append(IdentityRecord(ident, [rel], "landmarks.txt", seed=s))
    out.mkdir(parents=True, exist_ok=True)
    write_landmark_file(out / "landmarks.txt", marks)
    reg = Registry(out, recs)
    reg.save()
    return reg


# --------------------------------------------------------------------------- splits


def _pair(a, b):
    return (a, b) if a <= b else (b, a)


@dataclass
class ScenarioSplit:
    """Identity pools and the pair rule for one of the three scenarios.

    1: one shared pool; train and test use disjoint *pairs*.
    2: disjoint halves ``y1``/``y2``; train pairs inside ``y1``, test pairs
       take one identity from each half.
    3: train pairs inside ``y1``, test pairs inside ``y2``.
    """

    scenario: int
    y1: tuple
    y2: tuple = ()
    test_pairs_pool: frozenset = frozenset()
    seed: int = 0

    @property
    def train_ids(self):
        return self.y1

    @property
    def test_ids(self):
        if self.scenario == 1:
            return self.y1
        if self.scenario == 2:
            return tuple(sorted(self.y1 + self.y2))
        return self.y2

    @property
    def constraint(self) -> str:
        return {
            1: "shared identities; no pair used in both train and test",
            2: "train pairs within Y1; test pairs one from Y1 and one from Y2",
            3: "train pairs within Y1; test pairs within Y2; Y1 and Y2 disjoint",
        }[self.scenario]

    def is_legal(self, pair, side: str) -> bool:
        a, b = pair
        if a == b:
            return False
        p = _pair(a, b)
        y1, y2 = set(self.y1), set(self.y2)
        if self.scenario == 1:
            if a not in y1 or b not in y1:
                return False
            return (p in self.test_pairs_pool) == (side == "test")
        if side == "train":
            return a in y1 and b in y1
        if self.scenario == 2:
            return (a in y1) != (b in y1) and {a, b} <= y1 | y2
        return a in y2 and b in y2

    def count_legal(self, side: str) -> int:
        n1, n2 = len(self.y1), len(self.y2)
        c = lambda n: n * (n - 1) // 2  # noqa: E731
        if self.scenario == 1:
            t = len(self.test_pairs_pool)
            return t if side == "test" else c(n1) - t
        if side == "train":
            return c(n1)
        return n1 * n2 if self.scenario == 2 else c(n2)

    def legal_pairs(self, side: str):
        """All legal unordered pairs as sorted tuples, in a canonical order."""
        if side not in ("train", "test"):
            raise SplitError(f"side must be 'train' or 'test', got {side!r}")
        if self.scenario == 1:
            all_pairs = itertools.combinations(self.y1, 2)
            want = side == "test"
            return [p for p in all_pairs if (p in self.test_pairs_pool) == want]
        if side == "train":
            return list(itertools.combinations(self.y1, 2))
        if self.scenario == 2:
            return sorted(_pair(a, b) for a in self.y1 for b in self.y2)
        return list(itertools.combinations(self.y2, 2))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "y1": list(self.y1),
            "y2": list(self.y2),
            "test_pairs_pool": sorted(list(p) for p in self.test_pairs_pool),
            "constraint": self.constraint,
        }

    @classmethod
    def from_dict(cls, d) -> "ScenarioSplit":
        return cls(
            scenario=int(d["scenario"]),
            y1=tuple(d["y1"]),
            y2=tuple(d.get("y2", ())),
            test_pairs_pool=frozenset(tuple(p) for p in d.get("test_pairs_pool", ())),
            seed=int(d.get("seed", 0)),
        )


def make_scenario_split(identities, scenario: int, seed: int, test_fraction: float = 0.2) -> ScenarioSplit:
    """Partition identities (or, for scenario 1, identity pairs) into train/test."""
    ids = sorted(set(identities))
    if scenario not in (1, 2, 3):
        raise SplitError(f"scenario must be 1, 2 or 3, got {scenario}")
    if len(ids) < 4:
        raise SplitError(f"need at least 4 identities, got {len(ids)}")
    if not 0.0 < test_fraction < 1.0:
        raise SplitError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    if scenario == 1:
        pairs = list(itertools.combinations(ids, 2))
        n_test = min(len(pairs) - 1, max(1, round(test_fraction * len(pairs))))
        pick = rng.permutation(len(pairs))[:n_test]
        return ScenarioSplit(1, tuple(ids), (), frozenset(pairs[i] for i in pick), seed)
    n2 = min(len(ids) - 2, max(2, round(test_fraction * len(ids))))
    perm = rng.permutation(len(ids))
    y2 = tuple(sorted(ids[i] for i in perm[:n2]))
    y1 = tuple(sorted(ids[i] for i in perm[n2:]))
    return ScenarioSplit(scenario, y1, y2, frozenset(), seed)


def sample_pairs(split: ScenarioSplit, count: int, seed: int, side: str = "train"):
    """Uniformly sample ``count`` distinct legal pairs without replacement."""
    total = split.count_legal(side)
    if count < 0 or count > total:
        raise SamplingError(f"cannot sample {count} {side} pairs; at most {total} are legal")
    rng = np.random.default_rng(seed)
    if total <= MAX_ENUMERATED_PAIRS:
        legal = split.legal_pairs(side)
        return [legal[i] for i in rng.choice(total, size=count, replace=False)]
    # large pools: rejection sampling over canonical pairs
    pool = split.test_ids if side == "test" else split.train_ids
    chosen, seen = [], set()
    while len(chosen) < count:
        a, b = rng.choice(len(pool), size=2, replace=False)
        p = _pair(pool[a], pool[b])
        if p not in seen and split.is_legal(p, side):
            seen.add(p)
            chosen.append(p)
    return chosen


def write_pairs(path, pairs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{a} {b}\n" for a, b in pairs), encoding="utf-8")
    return path


def read_pairs(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pair list not found: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        f = line.split()
        if not f:
            continue
        if len(f) != 2:
            raise ValidationError(f"{path}:{lineno}: expected two identity ids")
        pairs.append((f[0], f[1]))
    return pairs


# --------------------------------------------------------------------------- manifests


@dataclass
class MorphRecord:
    morph_path: str
    id_a: str
    id_b: str
    image_a: str
    image_b: str
    landmarks: list
    alpha: float
    seed: int

    def __post_init__(self):
        if self.id_a == self.id_b:
            raise ValidationError(f"self-pair {self.id_a!r} in manifest record")

    @property
    def morph_id(self) -> str:
        return Path(self.morph_path).stem

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in RECORD_FIELDS})


@dataclass
class Manifest:
    """Morph records plus scenario tag and generator version.

    On disk: UTF-8 JSON lines. The first line holds ``scenario`` and
    ``generator_version``; every following line is one record. Record paths
    are relative to the manifest's directory.
    """

    records: list
    scenario: int | None = None
    generator_version: str = GENERATOR_VERSION
    root: Path = Path(".")

    def __len__(self):
        return len(self.records)

    def dumps(self) -> str:
        head = json.dumps({"scenario": self.scenario, "generator_version": self.generator_version})
        return "\n".join([head] + [r.to_json() for r in self.records]) + "\n"

    @classmethod
    def loads(cls, text: str, root=".") -> "Manifest":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines:
            raise ValidationError("empty manifest")
        try:
            head = json.loads(lines[0])
            rows = [json.loads(l) for l in lines[1:]]
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed manifest line: {exc}") from exc
        if set(head) != {"scenario", "generator_version"}:
            raise ValidationError("manifest header must hold scenario and generator_version")
        records = []
        for row in rows:
            if set(row) != set(RECORD_FIELDS):
                raise ValidationError(f"manifest record fields {sorted(row)} != {sorted(RECORD_FIELDS)}")
            records.append(MorphRecord(**row))
        return cls(records, head["scenario"], head["generator_version"], Path(root))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"), path.parent)

    def resolve(self, rel) -> Path:
        return self.root / rel

    def validate(self):
        for r in self.records:
            if r.id_a == r.id_b:
                raise ValidationError(f"self-pair in {r.morph_path}")
            for p in (r.morph_path, r.image_a, r.image_b):
                if not self.resolve(p).exists():
                    raise FileNotFoundError(f"manifest references missing file: {self.resolve(p)}")
        return self


def build_morph_dataset(pairs, registry: Registry, alpha: float, out_dir, seed: int,
                        scenario=None, workers: int = 1) -> Manifest:
    """Morph every pair, write PNGs under ``out_dir/morphs`` and ``out_dir/manifest.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [tuple(p) for p in pairs]

    def one(k):
        a, b = pairs[k]
        if a == b:
            raise ValidationError(f"self-pair {a!r}")
        ia, ib = registry.image(a), registry.image(b)
        if ia.shape != ib.shape:
            raise ValidationError(f"identities {a} and {b} differ in resolution")
        la = registry.landmarks(a, ia.shape[:2])
        lb = registry.landmarks(b, ib.shape[:2])
        x, target = morph(ia, la, ib, lb, alpha)
        rel = f"morphs/m{k:05d}.png"
        save_png(out / rel, x)
        return MorphRecord(
            morph_path=rel,
            id_a=a,
            id_b=b,
            image_a=_relpath(registry.root / registry[a].image_paths[0], out),
            image_b=_relpath(registry.root / registry[b].image_paths[0], out),
            landmarks=[[float(u), float(v)] for u, v in target.points],
            alpha=float(alpha),
            seed=identity_seed(seed, k),
        )

    # warm the landmark cache before threads share it
    for rec in registry.identities[:1]:
        registry.landmarks(rec.identity_id, registry.image(rec.identity_id).shape[:2])
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, range(len(pairs))))
    else:
        records = [one(k) for k in range(len(pairs))]
    manifest = Manifest(records, scenario, GENERATOR_VERSION, out)
    manifest.save(out / "manifest.jsonl")
    return manifest


def _relpath(target: Path, base: Path) -> str:
    return Path(os.path.relpath(Path(target).resolve(), Path(base).resolve())).as_posix()


def load_triplets(manifest: Manifest):
    """``(morphs, firsts, seconds)`` image stacks in manifest order."""
    if len(manifest) == 0:
        return np.zeros((0, 1, 1, 3)), np.zeros((0, 1, 1, 3)), np.zeros((0, 1, 1, 3))
    cache = {}

    def img(rel):
        if rel not in cache:
            p = manifest.resolve(rel)
            if not p.exists():
                raise FileNotFoundError(f"manifest references missing file: {p}")
            cache[rel] = load_png(p)
        return cache[rel]

    xs = np.stack([load_png(_existing(manifest.resolve(r.morph_path))) for r in manifest.records])
    a = np.stack([img(r.image_a) for r in manifest.records])
    b = np.stack([img(r.image_b) for r in manifest.records])
    return xs, a, b


def _existing(p: Path) -> Path:
    if not p.exists():
        raise FileNotFoundError(f"manifest references missing file: {p}")
    return p


def pair_coverage(pairs, ids) -> float:
    """Fraction of all unordered identity pairs present in ``pairs``."""
    want = set(itertools.combinations(sorted(ids), 2))
    have = {_pair(a, b) for a, b in pairs}
    return len(want & have) / max(1, len(want))

