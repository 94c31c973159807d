"""Image records, on-disk formats and the synthetic city generator.

A dataset is a directory holding ``references`` and ``queries`` files in one
of two formats:

``jsonl``
    One JSON object per line::

        {"schema": "dsloc.record/1", "image_id": "...", "gps": [lat, lon],
         "descriptor_dim": 128, "num_descriptors": 20,
         "local_descriptors": "<base64 float32 little-endian, row-major>",
         "global_features": {"layout": {"dim": 32, "data": "<base64 ...>"}}}

``npz``
    Columnar numpy archive: ``image_ids``, ``lat``, ``lon``,
    ``desc_offsets`` (n+1 row offsets into ``descriptors``), ``descriptors``
    (float32, total x dim) and one ``global__<name>`` float32 matrix per
    global feature.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geo import LocalProjection

RECORD_SCHEMA = "dsloc.record/1"
FORMATS = ("jsonl", "npz")


class SchemaError(ValueError):
    pass


@dataclass
class ImageRecord:
    image_id: str
    gps: tuple[float, float]
    local_descriptors: np.ndarray
    global_features: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.gps = (float(self.gps[0]), float(self.gps[1]))
        self.local_descriptors = np.asarray(self.local_descriptors, dtype="<f4")
        if self.local_descriptors.ndim != 2:
            raise SchemaError(f"{self.image_id}: local_descriptors must be 2-d")
        self.global_features = {
            k: np.asarray(v, dtype="<f4").reshape(-1) for k, v in self.global_features.items()
        }


# Queries carry the same fields; their gps is ground truth for scoring only.
ReferenceRecord = ImageRecord
QueryRecord = ImageRecord


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _unb64(text: str, count: int, where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{where}: bad base64 payload") from exc
    if len(raw) != 4 * count:
        raise SchemaError(f"{where}: expected {count} float32 values, got {len(raw) // 4}")
    return np.frombuffer(raw, dtype="<f4").copy()


def record_to_json(rec: ImageRecord) -> dict:
    n, d = rec.local_descriptors.shape
    return {
        "schema": RECORD_SCHEMA,
        "image_id": rec.image_id,
        "gps": [rec.gps[0], rec.gps[1]],
        "descriptor_dim": d,
        "num_descriptors": n,
        "local_descriptors": _b64(rec.local_descriptors),
        "global_features": {
            name: {"dim": int(v.size), "data": _b64(v)}
            for name, v in sorted(rec.global_features.items())
        },
    }


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing field '{key}'")
    return obj[key]


def record_from_json(obj: dict, where: str = "record") -> ImageRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a JSON object")
    schema = _require(obj, "schema", where)
    if schema != RECORD_SCHEMA:
        raise SchemaError(f"{where}: unsupported schema {schema!r}")
    image_id = _require(obj, "image_id", where)
    if not isinstance(image_id, str) or not image_id:
        raise SchemaError(f"{where}: field 'image_id' must be a non-empty string")
    gps = _require(obj, "gps", where)
    if not isinstance(gps, list) or len(gps) != 2:
        raise SchemaError(f"{where}: field 'gps' must be [lat, lon]")
    d = int(_require(obj, "descriptor_dim", where))
    n = int(_require(obj, "num_descriptors", where))
    desc = _unb64(_require(obj, "local_descriptors", where), n * d, f"{where}.local_descriptors")
    globals_ = {}
    for name, spec in _require(obj, "global_features", where).items():
        dim = int(_require(spec, "dim", f"{where}.global_features.{name}"))
        globals_[name] = _unb64(spec["data"], dim, f"{where}.global_features.{name}")
    rec = ImageRecord(image_id, (gps[0], gps[1]), desc.reshape(n, d), globals_)
    validate_record(rec, where)
    return rec


def validate_record(rec: ImageRecord, where: str = "record") -> None:
    lat, lon = rec.gps
    if not np.isfinite(lat) or not -90.0 <= lat <= 90.0:
        raise SchemaError(f"{where}: field 'gps' latitude {lat} outside [-90, 90]")
    if not np.isfinite(lon) or not -180.0 <= lon <= 180.0:
        raise SchemaError(f"{where}: field 'gps' longitude {lon} outside [-180, 180]")
    if not np.all(np.isfinite(rec.local_descriptors)):
        raise SchemaError(f"{where}: field 'local_descriptors' has non-finite values")
    for name, v in rec.global_features.items():
        if not np.all(np.isfinite(v)):
            raise SchemaError(f"{where}: global feature '{name}' has non-finite values")


def validate_records(records: list[ImageRecord], kind: str) -> None:
    if not records:
        raise SchemaError(f"empty {kind} set")
    seen = set()
    dims = set()
    for i, rec in enumerate(records):
        if rec.image_id in seen:
            raise SchemaError(f"{kind} record {i}: duplicate image_id {rec.image_id!r}")
        seen.add(rec.image_id)
        if len(rec.local_descriptors):
            dims.add(rec.local_descriptors.shape[1])
    if len(dims) > 1:
        raise SchemaError(f"{kind} set mixes descriptor dimensions {sorted(dims)}")


def write_jsonl(path, records: list[ImageRecord]) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")


def read_jsonl(path) -> list[ImageRecord]:
    records = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{Path(path).name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: invalid JSON ({exc.msg})") from exc
            records.append(record_from_json(obj, where))
    return records


def write_npz(path, records: list[ImageRecord]) -> None:
    dims = {r.local_descriptors.shape[1] for r in records} or {0}
    offsets = np.zeros(len(records) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(r.local_descriptors) for r in records])
    arrays = {
        "image_ids": np.array([r.image_id for r in records], dtype=str),
        "lat": np.array([r.gps[0] for r in records], dtype=np.float64),
        "lon": np.array([r.gps[1] for r in records], dtype=np.float64),
        "desc_offsets": offsets,
        "descriptors": (
            np.concatenate([r.local_descriptors for r in records])
            if records
            else np.zeros((0, dims.pop()), dtype="<f4")
        ),
    }
    names = sorted({k for r in records for k in r.global_features})
    for name in names:
        try:
            arrays[f"global__{name}"] = np.stack([r.global_features[name] for r in records])
        except KeyError as exc:
            raise SchemaError(f"global feature {name!r} missing on some records") from exc
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def read_npz(path) -> list[ImageRecord]:
    with np.load(Path(path), allow_pickle=False) as data:
        for key in ("image_ids", "lat", "lon", "desc_offsets", "descriptors"):
            if key not in data.files:
                raise SchemaError(f"{Path(path).name}: missing column '{key}'")
        ids = data["image_ids"]
        lat, lon = data["lat"], data["lon"]
        off = data["desc_offsets"]
        desc = data["descriptors"].astype("<f4", copy=False)
        globals_ = {k[len("global__"):]: data[k] for k in data.files if k.startswith("global__")}
        records = []
        for i, image_id in enumerate(ids):
            rec = ImageRecord(
                str(image_id),
                (float(lat[i]), float(lon[i])),
                desc[off[i] : off[i + 1]],
                {name: m[i] for name, m in globals_.items()},
            )
            validate_record(rec, f"{Path(path).name}[{i}]")
            records.append(rec)
    return records


def save_dataset(path, references, queries, fmt: str = "jsonl") -> None:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    writer = write_jsonl if fmt == "jsonl" else write_npz
    writer(root / f"references.{fmt}", references)
    writer(root / f"queries.{fmt}", queries)


def load_dataset(path, fmt: str | None = None):
    """Read ``(references, queries)`` from a dataset directory."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    if fmt is None:
        fmt = next((f for f in FORMATS if (root / f"references.{f}").exists()), None)
        if fmt is None:
            raise SchemaError(f"{root}: no references.jsonl or references.npz found")
    reader = read_jsonl if fmt == "jsonl" else read_npz
    references = reader(root / f"references.{fmt}")
    validate_records(references, "reference")
    qpath = root / f"queries.{fmt}"
    queries = reader(qpath) if qpath.exists() else []
    if queries:
        validate_records(queries, "query")
        dr = references[0].local_descriptors.shape[1]
        dq = queries[0].local_descriptors.shape[1]
        if dr != dq:
            raise SchemaError(f"query descriptors are {dq}-d but references are {dr}-d")
    return references, queries


@dataclass(frozen=True)
class CityConfig:
    """Synthetic street-level city on a regular GPS grid.

    Adjacent panoramas share a fraction ``overlap`` of their local content.
    Queries copy one reference's descriptors with Gaussian noise of
    ``noise * descriptor_scale`` per coordinate and mix in random
    distractors so that ``distractor_rate`` of their features are clutter.
    With ``twin_offset_m`` set, a second grid that far east duplicates every
    reference's local content exactly while having its own global look,
    which forces ties for per-image voting.
    """

    grid: int = 10
    spacing_m: float = 12.0
    descriptors_per_image: int = 20
    n_queries: int = 50
    noise: float = 0.1
    distractor_rate: float = 0.3
    descriptor_dim: int = 128
    descriptor_scale: float = 64.0
    overlap: float = 0.3
    overlap_noise: float = 0.05
    layout_dim: int = 32
    layout_m_scale: float = 1.8
    layout_noise: float = 2.0
    color_dim: int = 16
    color_scale: float = 60.0
    twin_offset_m: float | None = None
    origin: tuple[float, float] = (45.4375, 12.3358)
    seed: int = 0

    def __post_init__(self):
        if self.grid < 1 or self.descriptors_per_image < 1 or self.descriptor_dim < 1:
            raise ValueError("grid, descriptors_per_image and descriptor_dim must be positive")
        if self.spacing_m <= 0 or self.descriptor_scale <= 0:
            raise ValueError("spacing_m and descriptor_scale must be positive")
        if not 0 <= self.distractor_rate < 1:
            raise ValueError("distractor_rate must be in [0, 1)")
        if not 0 <= self.overlap <= 1 or self.noise < 0:
            raise ValueError("overlap must be in [0, 1] and noise non-negative")
        if self.n_queries < 0:
            raise ValueError("n_queries must be non-negative")


def generate_synthetic_city(config: CityConfig = CityConfig()):
    """Return ``(references, queries)`` for ``config``; deterministic in ``config.seed``."""
    c = config
    rng = np.random.default_rng(c.seed)
    proj = LocalProjection(*c.origin)
    g = c.grid
    n_img = g * g
    rows, cols = np.divmod(np.arange(n_img), g)
    xy = np.stack([cols * c.spacing_m, rows * c.spacing_m], axis=1).astype(float)

    own = rng.normal(0.0, c.descriptor_scale, size=(n_img, c.descriptors_per_image, c.descriptor_dim))
    desc = own.copy()
    for i in range(n_img):
        r, q = rows[i], cols[i]
        nbrs = [
            (r + dr) * g + (q + dq)
            for dr, dq in ((-1, 0), (1, 0), (0, -1), (0, 1))
            if 0 <= r + dr < g and 0 <= q + dq < g
        ]
        if not nbrs:
            continue
        shared = rng.random(c.descriptors_per_image) < c.overlap
        for j in np.flatnonzero(shared):
            src = nbrs[rng.integers(len(nbrs))]
            desc[i, j] = own[src, rng.integers(c.descriptors_per_image)] + rng.normal(
                0.0, c.overlap_noise * c.descriptor_scale, size=c.descriptor_dim
            )

    layout_map = rng.normal(0.0, c.layout_m_scale, size=(c.layout_dim, 2))

    def looks(points):
        layout = points @ layout_map.T + rng.normal(0.0, c.layout_noise, size=(len(points), c.layout_dim))
        color = rng.normal(0.0, c.color_scale, size=(len(points), c.color_dim))
        return layout, color

    layout, color = looks(xy)
    grids = [(xy, desc, layout, color)]
    if c.twin_offset_m is not None:
        twin_xy = xy + np.array([c.twin_offset_m, 0.0])
        twin_layout, twin_color = looks(twin_xy)
        grids.append((twin_xy, desc.copy(), twin_layout, twin_color))

    total = n_img * len(grids)
    # random ids so that lexicographic order carries no location information
    codes = rng.choice(16**6, size=total, replace=False)
    ids = [f"ref-{code:06x}" for code in codes]
    references = []
    k = 0
    for pts, dsc, lay, col in grids:
        gps = proj.to_gps(pts)
        for i in range(n_img):
            references.append(
                ImageRecord(
                    ids[k],
                    (gps[i, 0], gps[i, 1]),
                    dsc[i],
                    {"layout": lay[i], "color": col[i]},
                )
            )
            k += 1

    queries = []
    truth = rng.choice(n_img, size=c.n_queries, replace=c.n_queries > n_img)
    n_true = c.descriptors_per_image
    n_clutter = int(round(n_true * c.distractor_rate / (1.0 - c.distractor_rate)))
    for qi, t in enumerate(truth):
        ref = references[t]
        clean = ref.local_descriptors.astype(np.float64)
        noisy = clean + rng.normal(0.0, c.noise * c.descriptor_scale, size=clean.shape)
        clutter = rng.normal(0.0, c.descriptor_scale, size=(n_clutter, c.descriptor_dim))
        feats = np.concatenate([noisy, clutter])
        feats = feats[rng.permutation(len(feats))]
        queries.append(
            ImageRecord(
                f"query-{qi:04d}",
                ref.gps,
                feats,
                {
                    "layout": ref.global_features["layout"]
                    + rng.normal(0.0, c.layout_noise, size=c.layout_dim),
                    "color": rng.normal(0.0, c.color_scale, size=c.color_dim),
                },
            )
        )
    return references, queries
