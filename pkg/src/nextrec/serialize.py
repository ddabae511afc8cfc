"""On-disk formats: embedding tables, vocabulary export, model archive.

Embedding table files are plain text: a ``<count> <dim>`` header line, then
one ``<id> <v1> ... <vd>`` line per row at full round-trip precision.  The
model archive is a single zip whose entries carry a fixed timestamp, so
identical models serialize to identical bytes.
"""

from __future__ import annotations

import zipfile

import numpy as np

from .data import DataError, Dataset
from .model import Hyperparams, Parameters

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
MANIFEST_NAME = "manifest.txt"


def format_embeddings(ids: list[str], table: np.ndarray) -> str:
    if table.ndim != 2 or len(ids) != table.shape[0]:
        raise ValueError("id list and table rows must match")
    lines = [f"{table.shape[0]} {table.shape[1]}"]
    for row_id, row in zip(ids, table):
        lines.append(row_id + " " + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_embeddings(text: str) -> tuple[list[str], np.ndarray]:
    lines = text.splitlines()
    if not lines:
        raise DataError("empty embedding file")
    try:
        count, dim = (int(v) for v in lines[0].split())
    except ValueError:
        raise DataError(f"bad embedding header {lines[0]!r}") from None
    ids: list[str] = []
    table = np.empty((count, dim), dtype=float)
    if len(lines) < count + 1:
        raise DataError("embedding file truncated")
    for i in range(count):
        parts = lines[i + 1].split(" ")
        if len(parts) != dim + 1:
            raise DataError(f"embedding row {i} has {len(parts) - 1} values, expected {dim}")
        ids.append(parts[0])
        table[i] = [float(v) for v in parts[1:]]
    return ids, table


def write_embeddings(path, ids: list[str], table: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_embeddings(ids, table))


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        return parse_embeddings(fh.read())


def write_walks(path, walks: list[list[int]], poi_ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for walk in walks:
            fh.write(" ".join(poi_ids[n] for n in walk) + "\n")


def write_vocab(path, dataset: Dataset, meta_vocab: tuple[list[str], list[str]] | None = None) -> None:
    """Export the original-id to dense-id mapping for reproducibility."""
    with open(path, "w", encoding="utf-8") as fh:
        for uid in dataset.user_ids():
            fh.write(f"user\t{uid}\t{dataset.user_index[uid]}\n")
        for pid in dataset.poi_ids():
            fh.write(f"poi\t{pid}\t{dataset.poi_index[pid]}\n")
        if meta_vocab is not None:
            user_words, poi_words = meta_vocab
            for i, w in enumerate(user_words):
                fh.write(f"user_word\t{w}\t{i}\n")
            for i, w in enumerate(poi_words):
                fh.write(f"poi_word\t{w}\t{i}\n")


def _manifest_text(params: Parameters, hp: Hyperparams) -> str:
    pairs = [
        ("dim", hp.dim),
        ("alpha", repr(hp.alpha)),
        ("beta", repr(hp.beta)),
        ("pi_hours", repr(hp.pi_hours)),
        ("slots", hp.slots),
        ("tz_offset_hours", repr(hp.tz_offset_hours)),
        ("use_meta", str(hp.use_meta).lower()),
        ("use_interval", str(hp.use_interval).lower()),
        ("use_timeslot", str(hp.use_timeslot).lower()),
        ("n_users", len(params.user_ids)),
        ("n_pois", len(params.poi_ids)),
        ("n_user_words", len(params.user_word_ids)),
        ("n_poi_words", len(params.poi_word_ids)),
    ]
    return "".join(f"{k}={v}\n" for k, v in pairs)


def _tensor_ids(name: str, params: Parameters) -> list[str]:
    if name == "U":
        return params.user_ids
    if name == "Q":
        return params.poi_ids
    if name == "M_user":
        return params.user_word_ids
    if name == "M_poi":
        return params.poi_word_ids
    n = params[name].shape[0] if params[name].ndim == 2 else 1
    return [str(i) for i in range(n)]


def save_model(path, params: Parameters, hp: Hyperparams) -> None:
    """Write the model as one zip archive with deterministic bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:

        def add(name: str, text: str) -> None:
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, text)

        add(MANIFEST_NAME, _manifest_text(params, hp))
        for name in sorted(params.tensors):
            tensor = params[name]
            table = tensor.reshape(1, -1) if tensor.ndim == 1 else tensor
            add(f"{name}.txt", format_embeddings(_tensor_ids(name, params), table))


def _parse_manifest(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"bad manifest line {line!r}")
        key, value = line.split("=", 1)
        out[key] = value
    return out


def load_model(path) -> tuple[Parameters, Hyperparams]:
    """Read a model archive; training-only hyperparameters take defaults."""
    with zipfile.ZipFile(path) as zf:
        names = set(zf.namelist())
        if MANIFEST_NAME not in names:
            raise DataError(f"{path}: missing {MANIFEST_NAME}")
        m = _parse_manifest(zf.read(MANIFEST_NAME).decode("utf-8"))
        try:
            hp = Hyperparams(
                dim=int(m["dim"]),
                alpha=float(m["alpha"]),
                beta=float(m["beta"]),
                pi_hours=float(m["pi_hours"]),
                slots=int(m["slots"]),
                tz_offset_hours=float(m["tz_offset_hours"]),
                use_meta=m["use_meta"] == "true",
                use_interval=m["use_interval"] == "true",
                use_timeslot=m["use_timeslot"] == "true",
            )
        except KeyError as exc:
            raise DataError(f"{path}: manifest missing key {exc}") from None

        expected = ["W2", "W3", "b2", "b3", "U", "Q"]
        expected += ["W0", "Wpi"] if hp.use_interval else ["W1"]
        expected += ["B"] if hp.use_timeslot else ["b1"]
        if hp.use_meta:
            expected += ["M_user", "M_poi"]
        tensors: dict[str, np.ndarray] = {}
        id_lists: dict[str, list[str]] = {}
        for name in expected:
            entry = f"{name}.txt"
            if entry not in names:
                raise DataError(f"{path}: missing tensor {entry}")
            ids, table = parse_embeddings(zf.read(entry).decode("utf-8"))
            id_lists[name] = ids
            tensors[name] = table[0] if name in ("b1", "b2", "b3") else table

    for name, size in (
        ("U", int(m["n_users"])),
        ("Q", int(m["n_pois"])),
    ):
        if len(id_lists[name]) != size:
            raise DataError(f"{path}: manifest/{name} row count mismatch")
    params = Parameters(
        tensors,
        user_ids=id_lists["U"],
        poi_ids=id_lists["Q"],
        user_word_ids=id_lists.get("M_user", []),
        poi_word_ids=id_lists.get("M_poi", []),
    )
    return params, hp
