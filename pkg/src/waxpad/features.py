"""Per-face feature vectors behind a uniform provider contract.

Deep extractors stay outside the trust boundary: they are consumed either as
precomputed feature files, as an external command following the request/response
convention below, or as builtin test providers (zero vectors and seeded random
projections of pixels) that let the whole pipeline run without any ML stack.

Feature file format: first line is a JSON header {"extractor_id", "dim",
"count"}; it is followed by `count` binary records, each a 4-byte little-endian
id length, the UTF-8 id bytes, and dim little-endian IEEE-754 float32 values.
"""

from __future__ import annotations

import json
import struct
import subprocess
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import imaging


class FeatureError(Exception):
    pass


class ProviderSource(str, Enum):
    PRECOMPUTED_FILE = "precomputed_file"
    EXTERNAL_COMMAND = "external_command"
    BUILTIN = "builtin"


BUILTIN_ZERO = "zero"
BUILTIN_RANDOM_PROJECTION = "random-projection"
BUILTIN_MB_LPQ = "mb-lpq"


@dataclass(frozen=True)
class EmbeddingSpec:
    """Identity and shape of one feature source.

    input_size is the square side the provider feeds its extractor (e.g. 227
    or 224 for the deep roles, 64 for the texture role).
    """

    extractor_id: str
    dim: int
    input_size: int
    source: ProviderSource
    path: str | None = None  # precomputed_file
    command: tuple[str, ...] | None = None  # external_command argv prefix
    builtin: str | None = None  # builtin provider name
    seed: int = 0
    params: tuple[tuple[str, object], ...] = ()  # provider-specific knobs

    def __post_init__(self):
        if self.dim <= 0:
            raise FeatureError("feature dim must be positive")
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))

    @property
    def params_dict(self) -> dict:
        return dict(self.params)

    def to_json_dict(self) -> dict:
        d = {
            "extractor_id": self.extractor_id,
            "dim": self.dim,
            "input_size": self.input_size,
            "source": self.source.value,
        }
        if self.path is not None:
            d["path"] = self.path
        if self.command is not None:
            d["command"] = list(self.command)
        if self.builtin is not None:
            d["builtin"] = self.builtin
        if self.seed:
            d["seed"] = self.seed
        if self.params:
            d["params"] = self.params_dict
        return d

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EmbeddingSpec":
        return cls(
            extractor_id=obj["extractor_id"],
            dim=int(obj["dim"]),
            input_size=int(obj["input_size"]),
            source=ProviderSource(obj["source"]),
            path=obj.get("path"),
            command=tuple(obj["command"]) if obj.get("command") else None,
            builtin=obj.get("builtin"),
            seed=int(obj.get("seed", 0)),
            params=tuple(sorted((obj.get("params") or {}).items())),
        )


@dataclass(frozen=True)
class FeatureVector:
    face_id: str
    extractor_id: str
    values: np.ndarray  # float32, finite

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1:
            raise FeatureError(f"feature for {self.face_id!r} must be a flat vector")
        if not np.all(np.isfinite(arr)):
            raise FeatureError(f"feature for {self.face_id!r} contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureStore:
    """All vectors of one extractor, keyed by face id.

    Values are held as float32 so that writing and re-loading a store
    reproduces them bit-exactly.
    """

    spec: EmbeddingSpec
    _vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self._vectors)

    def face_ids(self) -> list[str]:
        return sorted(self._vectors)

    def add(self, face_id: str, values: np.ndarray) -> None:
        if face_id in self._vectors:
            raise FeatureError(f"duplicate face_id {face_id!r} in feature store")
        arr = np.asarray(values, dtype=np.float32)
        if arr.shape != (self.spec.dim,):
            raise FeatureError(
                f"feature for {face_id!r} has {arr.size} values, expected {self.spec.dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise FeatureError(f"feature for {face_id!r} contains non-finite values")
        self._vectors[face_id] = arr

    def get(self, face_id: str) -> FeatureVector | None:
        """The vector for face_id, or None when the feature is missing."""
        arr = self._vectors.get(face_id)
        if arr is None:
            return None
        return FeatureVector(face_id=face_id, extractor_id=self.spec.extractor_id, values=arr)

    def require(self, face_id: str) -> FeatureVector:
        vec = self.get(face_id)
        if vec is None:
            raise FeatureError(
                f"missing feature for face {face_id!r} in store {self.spec.extractor_id!r}"
            )
        return vec

    def matrix(self, face_ids: list[str]) -> np.ndarray:
        """Row-stacked float64 matrix in the given face order."""
        return np.stack([self.require(fid).values.astype(np.float64) for fid in face_ids])


def save_store(store: FeatureStore, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "extractor_id": store.spec.extractor_id,
        "dim": store.spec.dim,
        "count": len(store),
    }
    with path.open("wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for face_id in store.face_ids():
            idb = face_id.encode("utf-8")
            fh.write(struct.pack("<I", len(idb)))
            fh.write(idb)
            fh.write(store._vectors[face_id].astype("<f4").tobytes())


def load_store(path: str | Path, spec: EmbeddingSpec | None = None) -> FeatureStore:
    """Read a feature file; `spec` (when given) overrides provenance fields but
    must agree with the header on extractor_id and dim."""
    path = Path(path)
    if not path.exists():
        raise FeatureError(f"feature file not found: {path}")
    with path.open("rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FeatureError(f"{path}: malformed feature header: {exc}") from exc
        for key in ("extractor_id", "dim", "count"):
            if key not in header:
                raise FeatureError(f"{path}: feature header missing {key!r}")
        dim = int(header["dim"])
        if spec is None:
            spec = EmbeddingSpec(
                extractor_id=header["extractor_id"],
                dim=dim,
                input_size=0,
                source=ProviderSource.PRECOMPUTED_FILE,
                path=str(path),
            )
        else:
            if spec.extractor_id != header["extractor_id"]:
                raise FeatureError(
                    f"{path}: header extractor {header['extractor_id']!r} does not match "
                    f"spec {spec.extractor_id!r}"
                )
            if spec.dim != dim:
                raise FeatureError(
                    f"{path}: header dim {dim} does not match spec dim {spec.dim}"
                )
        store = FeatureStore(spec=spec)
        record_bytes = dim * 4
        for _ in range(int(header["count"])):
            raw_len = fh.read(4)
            if len(raw_len) != 4:
                raise FeatureError(f"{path}: truncated record header")
            (id_len,) = struct.unpack("<I", raw_len)
            idb = fh.read(id_len)
            if len(idb) != id_len:
                raise FeatureError(f"{path}: truncated face id")
            face_id = idb.decode("utf-8")
            raw = fh.read(record_bytes)
            if len(raw) != record_bytes:
                raise FeatureError(
                    f"{path}: record for {face_id!r} has {len(raw) // 4} values, expected {dim}"
                )
            store.add(face_id, np.frombuffer(raw, dtype="<f4"))
        trailing = fh.read(1)
        if trailing:
            raise FeatureError(f"{path}: trailing bytes after {header['count']} records")
    return store


def _load_pixels(image_path: Path, input_size: int) -> np.ndarray:
    image = imaging.decode(image_path)
    resized = imaging.resize_bilinear(image, input_size, input_size)
    return resized.data.ravel() / 255.0 - 0.5


class _RandomProjectionProvider:
    """Seeded Gaussian projection of resized pixels; a stand-in deep extractor.

    Pure function of (image bytes, seed): the projection matrix is drawn once
    from the seed, so identical inputs always produce identical vectors.
    """

    def __init__(self, spec: EmbeddingSpec):
        self.spec = spec
        n_inputs = spec.input_size * spec.input_size * 3
        rng = np.random.default_rng(spec.seed)
        self._matrix = rng.standard_normal((spec.dim, n_inputs)) / np.sqrt(n_inputs)

    def __call__(self, image_path: Path) -> np.ndarray:
        return self._matrix @ _load_pixels(image_path, self.spec.input_size)


def mb_lpq_spec(
    extractor_id: str = "mb-lpq",
    input_size: int = 64,
    grid: tuple[int, int] = (3, 3),
    window_size: int = 5,
    decorrelation: bool = False,
) -> EmbeddingSpec:
    """The texture-feature role: block-histogram phase codes over YCbCr planes."""
    return EmbeddingSpec(
        extractor_id=extractor_id,
        dim=3 * grid[0] * grid[1] * 256,
        input_size=input_size,
        source=ProviderSource.BUILTIN,
        builtin=BUILTIN_MB_LPQ,
        params={
            "grid": list(grid),
            "window_size": window_size,
            "decorrelation": decorrelation,
        },
    )


def _mb_lpq_extract(spec: EmbeddingSpec, image_path: Path) -> np.ndarray:
    from .lpq import LpqConfig, mb_lpq

    params = spec.params_dict
    grid = tuple(params.get("grid", (3, 3)))
    config = LpqConfig(
        window_size=int(params.get("window_size", 5)),
        decorrelation=bool(params.get("decorrelation", False)),
    )
    image = imaging.decode(image_path)
    resized = imaging.resize_bilinear(image, spec.input_size, spec.input_size)
    feature = mb_lpq(imaging.rgb_to_ycbcr(resized), grid=grid, config=config)
    return feature.values


def _run_builtin(spec: EmbeddingSpec, faces: list[tuple[str, Path]]) -> FeatureStore:
    store = FeatureStore(spec=spec)
    if spec.builtin == BUILTIN_ZERO:
        for face_id, _ in faces:
            store.add(face_id, np.zeros(spec.dim, dtype=np.float32))
    elif spec.builtin == BUILTIN_RANDOM_PROJECTION:
        project = _RandomProjectionProvider(spec)
        for face_id, image_path in faces:
            store.add(face_id, project(Path(image_path)))
    elif spec.builtin == BUILTIN_MB_LPQ:
        for face_id, image_path in faces:
            store.add(face_id, _mb_lpq_extract(spec, Path(image_path)))
    else:
        raise FeatureError(f"unknown builtin provider {spec.builtin!r}")
    return store


def _run_external(spec: EmbeddingSpec, faces: list[tuple[str, Path]]) -> FeatureStore:
    if not spec.command:
        raise FeatureError(f"extractor {spec.extractor_id!r} has no command configured")
    with tempfile.TemporaryDirectory(prefix="waxpad-extract-") as tmp:
        request = Path(tmp) / "request.jsonl"
        response = Path(tmp) / "response.feat"
        with request.open("w", encoding="utf-8") as fh:
            for face_id, image_path in faces:
                fh.write(json.dumps({"face_id": face_id, "path": str(image_path)}) + "\n")
        argv = list(spec.command) + [str(request), str(response)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise FeatureError(
                f"extractor command {argv[0]!r} exited with {proc.returncode}: "
                f"{proc.stderr.strip() or proc.stdout.strip()}"
            )
        return load_store(response, spec=spec)


def run_provider(spec: EmbeddingSpec, faces: list[tuple[str, str | Path]]) -> FeatureStore:
    """Produce a feature store covering every requested face.

    Dispatches on spec.source; the result is validated for dimension and
    coverage regardless of where the vectors came from.
    """
    normalized = [(face_id, Path(p)) for face_id, p in faces]
    if spec.source is ProviderSource.BUILTIN:
        store = _run_builtin(spec, normalized)
    elif spec.source is ProviderSource.EXTERNAL_COMMAND:
        store = _run_external(spec, normalized)
    elif spec.source is ProviderSource.PRECOMPUTED_FILE:
        if not spec.path:
            raise FeatureError(f"extractor {spec.extractor_id!r} has no file path configured")
        store = load_store(spec.path, spec=spec)
    else:  # pragma: no cover - enum is exhaustive
        raise FeatureError(f"unsupported source {spec.source}")
    missing = [face_id for face_id, _ in normalized if store.get(face_id) is None]
    if missing:
        raise FeatureError(
            f"store {spec.extractor_id!r} is missing {len(missing)} face(s), "
            f"first: {missing[0]!r}"
        )
    return store
