"""File formats, dataset validation, synthetic data, and checkpoints.

Formats:

* Embedding tables: UTF-8 text, one item per line, tab-separated
  ``item_id`` followed by its vector entries; ``#`` lines are comments.
  Floats are printed with shortest round-trip precision, so a written
  table reloads bit-exactly.
* Interactions: one JSON object per line with exactly the keys
  ``user_id``, ``history``, ``target``, ``label``. Loading is
  fail-fast: any malformed line aborts with its line number — bad rows
  are rejected, never repaired.
* Checkpoints: a ``manifest.json`` (format version, hyperparameters,
  parameter name/shape list, seed, fusion tag, fused width) plus a
  ``params.bin`` sidecar of little-endian float64 values concatenated in
  manifest order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fusion import ItemEmbeddingTable, RawModalityTable
from .model import Hyperparams

CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "params.bin"


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    history: tuple[str, ...]  # chronological, oldest first
    target: str
    label: int | None


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------

def _parse_embedding_lines(path: Path):
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: dict[str, int] = {}
    meta: dict[str, str] = {}
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValidationError(f"{path}: line {lineno}: expected item id and vector")
            item_id = parts[0]
            if item_id in seen:
                raise ValidationError(
                    f"{path}: line {lineno}: duplicate item id {item_id!r} "
                    f"(first seen at line {seen[item_id]})")
            seen[item_id] = lineno
            try:
                vec = [float(tok) for tok in parts[1:]]
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: non-numeric field") from None
            if any(not math.isfinite(v) for v in vec):
                raise ValidationError(f"{path}: line {lineno}: non-finite value")
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise ValidationError(
                    f"{path}: line {lineno}: ragged row, got {len(vec)} values, expected {width}")
            ids.append(item_id)
            rows.append(vec)
    if not ids:
        raise ValidationError(f"{path}: no item rows")
    return ids, np.array(rows, dtype=np.float64), meta


def load_modality_table(path, modality: str) -> RawModalityTable:
    ids, vectors, _ = _parse_embedding_lines(Path(path))
    return RawModalityTable(item_ids=ids, vectors=vectors, modality=modality)


def load_fused_table(path) -> ItemEmbeddingTable:
    ids, vectors, meta = _parse_embedding_lines(Path(path))
    return ItemEmbeddingTable(item_ids=ids, vectors=vectors,
                              strategy=meta.get("strategy", "unknown"))


def write_embedding_table(path, item_ids, vectors, meta: dict | None = None) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(item_ids) != vectors.shape[0]:
        raise ValidationError("write_embedding_table: one row per item id required")
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}: {value}\n")
        for iid, row in zip(item_ids, vectors):
            fh.write(iid + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# interaction logs
# ---------------------------------------------------------------------------

_RECORD_KEYS = {"user_id", "history", "target", "label"}


def _record_from_obj(obj, where: str) -> InteractionRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    keys = set(obj)
    if keys != _RECORD_KEYS:
        missing = _RECORD_KEYS - keys
        extra = keys - _RECORD_KEYS
        detail = []
        if missing:
            detail.append(f"missing {sorted(missing)}")
        if extra:
            detail.append(f"unknown {sorted(extra)}")
        raise ValidationError(f"{where}: bad keys ({'; '.join(detail)})")
    user_id = obj["user_id"]
    history = obj["history"]
    target = obj["target"]
    label = obj["label"]
    if not isinstance(user_id, str):
        raise ValidationError(f"{where}: user_id must be a string")
    if not isinstance(history, list) or not all(isinstance(h, str) for h in history):
        raise ValidationError(f"{where}: history must be a list of item-id strings")
    if not isinstance(target, str) or not target:
        raise ValidationError(f"{where}: target must be a nonempty item-id string")
    if isinstance(label, bool) or not isinstance(label, int) or label not in (0, 1):
        raise ValidationError(f"{where}: label must be integer 0 or 1")
    return InteractionRecord(user_id=user_id, history=tuple(history),
                             target=target, label=label)


def load_interactions(path) -> list[InteractionRecord]:
    path = Path(path)
    records: list[InteractionRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}: malformed JSON ({exc.msg})") from None
            records.append(_record_from_obj(obj, where))
    return records


def write_interactions(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "user_id": rec.user_id,
                "history": list(rec.history),
                "target": rec.target,
                "label": rec.label,
            }) + "\n")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

_MODALITY_ALIASES = {
    "text": "text", "text-only": "text",
    "image": "image", "image-only": "image",
    "both": "both",
}


@dataclass(frozen=True)
class SignalSpec:
    """Where the label-relevant item trait lives and how strongly.

    Each item carries independent latent traits for text and image; the
    trait named by ``modality`` (or their average for ``both``) drives
    the click logit. Traits are planted along random unit directions on
    top of isotropic noise, so per-modality recoverability is set by
    gain/noise ratios.
    """

    modality: str = "text"
    text_gain: float = 2.0
    image_gain: float = 2.0
    text_noise: float = 0.5
    image_noise: float = 0.5
    target_coef: float = 2.5
    history_coef: float = 1.0
    bias: float = 0.0
    min_history: int = 1
    max_history: int = 20

    def __post_init__(self):
        mod = _MODALITY_ALIASES.get(self.modality)
        if mod is None:
            raise ValidationError(f"signal spec: unknown modality {self.modality!r}")
        object.__setattr__(self, "modality", mod)
        if self.min_history < 0 or self.max_history < self.min_history:
            raise ValidationError("signal spec: need 0 <= min_history <= max_history")
        if min(self.text_gain, self.image_gain, self.text_noise, self.image_noise) < 0:
            raise ValidationError("signal spec: gains and noise scales must be >= 0")


@dataclass
class SyntheticDataset:
    text: RawModalityTable
    image: RawModalityTable
    train: list[InteractionRecord]
    val: list[InteractionRecord]
    test: list[InteractionRecord]
    item_trait: np.ndarray  # the label-driving latent per item


def generate_synthetic(n_items: int, n_records: int, d_text: int, d_image: int,
                       signal: SignalSpec | str, seed: int) -> SyntheticDataset:
    """Seeded synthetic corpus with planted signal directions.

    Item vectors are Gaussian noise plus a latent trait along one random
    unit direction per modality. Click labels are Bernoulli in a logit
    combining the target item's trait with the mean trait of the user's
    history, so both the target embedding and the history carry signal.
    Identical arguments give a bit-identical dataset. Splits are
    disjoint 80/10/10 by record.
    """
    if n_items < 1 or d_text < 1 or d_image < 1 or n_records < 0:
        raise ValidationError("generate_synthetic: sizes must be positive")
    if isinstance(signal, str):
        signal = SignalSpec(modality=signal)
    rng = np.random.default_rng(int(seed))

    item_ids = [f"i{i:05d}" for i in range(n_items)]
    trait_text = rng.standard_normal(n_items)
    trait_image = rng.standard_normal(n_items)
    u_text = rng.standard_normal(d_text)
    u_text /= np.linalg.norm(u_text)
    u_image = rng.standard_normal(d_image)
    u_image /= np.linalg.norm(u_image)

    text_vecs = signal.text_noise * rng.standard_normal((n_items, d_text))
    text_vecs += signal.text_gain * trait_text[:, None] * u_text[None, :]
    image_vecs = signal.image_noise * rng.standard_normal((n_items, d_image))
    image_vecs += signal.image_gain * trait_image[:, None] * u_image[None, :]

    if signal.modality == "text":
        trait = trait_text
    elif signal.modality == "image":
        trait = trait_image
    else:
        trait = (trait_text + trait_image) / math.sqrt(2.0)

    n_users = max(1, n_records // 4)
    user_pref = rng.standard_normal(n_users)

    records: list[InteractionRecord] = []
    for _ in range(n_records):
        user = int(rng.integers(n_users))
        length = int(rng.integers(signal.min_history, signal.max_history + 1))
        if length > 0:
            pool = rng.integers(0, n_items, size=4 * length)
            keep = np.argsort(np.abs(trait[pool] - user_pref[user]), kind="stable")[:length]
            hist = pool[keep]
            hist_mean = float(trait[hist].mean())
        else:
            hist = np.zeros(0, dtype=np.int64)
            hist_mean = 0.0
        target = int(rng.integers(n_items))
        logit = (signal.bias + signal.target_coef * trait[target]
                 + signal.history_coef * hist_mean * trait[target])
        label = int(rng.random() < 1.0 / (1.0 + math.exp(-logit)))
        records.append(InteractionRecord(
            user_id=f"u{user:05d}",
            history=tuple(item_ids[i] for i in hist),
            target=item_ids[target],
            label=label,
        ))

    n_train = int(n_records * 0.8)
    n_val = int(n_records * 0.1)
    return SyntheticDataset(
        text=RawModalityTable(item_ids=list(item_ids), vectors=text_vecs, modality="text"),
        image=RawModalityTable(item_ids=list(item_ids), vectors=image_vecs, modality="image"),
        train=records[:n_train],
        val=records[n_train:n_train + n_val],
        test=records[n_train + n_val:],
        item_trait=trait,
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def items_digest(item_ids) -> str:
    return hashlib.sha256("\n".join(item_ids).encode("utf-8")).hexdigest()


def save_checkpoint(params: dict[str, np.ndarray], hyper: Hyperparams,
                    meta: dict, out_dir) -> None:
    """Write manifest + flat binary payload; bit-exact by construction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparams": asdict(hyper),
        "parameters": [{"name": name, "shape": list(p.shape)} for name, p in params.items()],
        **meta,
    }
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params.values())
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(out_dir / PAYLOAD_NAME, "wb") as fh:
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint directory; returns (manifest, hyper, params)."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise ValidationError(f"{path}: not a checkpoint directory (missing {MANIFEST_NAME})")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{manifest_path}: malformed manifest ({exc.msg})") from None
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{manifest_path}: format version {version!r} unsupported (expected {CHECKPOINT_VERSION})")
    hyper_dict = dict(manifest["hyperparams"])
    hyper_dict["mlp_sizes"] = tuple(hyper_dict["mlp_sizes"])
    hyper = Hyperparams(**hyper_dict)

    raw = (path / PAYLOAD_NAME).read_bytes()
    expected = sum(int(np.prod(entry["shape"])) for entry in manifest["parameters"])
    if len(raw) != expected * 8:
        raise ValidationError(
            f"{path / PAYLOAD_NAME}: payload holds {len(raw)} bytes, expected {expected * 8}")
    flat = np.frombuffer(raw, dtype="<f8")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["parameters"]:
        size = int(np.prod(entry["shape"]))
        params[entry["name"]] = flat[offset:offset + size].reshape(entry["shape"]).copy()
        offset += size
    return manifest, hyper, params
