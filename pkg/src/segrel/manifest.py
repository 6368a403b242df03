"""Dataset manifests: the JSON files that wire samples to their assets.

Schema (snake_case, exactly these keys):

    {"entries": [{"sample_id": ..., "image_path": ..., "label_path": ...,
                  "logits_path": ..., "ood_mask_path": ...,
                  "domain_tag": ..., "model_id": ...}],
     "num_classes": N, "ignore_id": I}

Optional paths are null. Relative paths resolve against the manifest's
own directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, FormatError

_ENTRY_KEYS = (
    "sample_id",
    "image_path",
    "label_path",
    "logits_path",
    "ood_mask_path",
    "domain_tag",
    "model_id",
)


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: str | None = None
    label_path: str | None = None
    logits_path: str | None = None
    ood_mask_path: str | None = None
    domain_tag: str = ""
    model_id: str | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _ENTRY_KEYS}


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    num_classes: int
    ignore_id: int = 255
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        seen = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise DataError(f"duplicate sample_id {e.sample_id!r}")
            seen.add(e.sample_id)

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.sample_id: e for e in self.entries}

    def sorted_entries(self) -> list[ManifestEntry]:
        return sorted(self.entries, key=lambda e: e.sample_id)

    def resolve(self, path: str | None) -> Path | None:
        """Resolve an entry path against the manifest directory."""
        if path is None:
            return None
        p = Path(path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "entries" not in doc or "num_classes" not in doc:
        raise FormatError(f"{path}: manifest must carry 'entries' and 'num_classes'")
    entries = []
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict) or "sample_id" not in raw:
            raise FormatError(f"{path}: entry {i} missing sample_id")
        entries.append(
            ManifestEntry(
                sample_id=str(raw["sample_id"]),
                image_path=raw.get("image_path"),
                label_path=raw.get("label_path"),
                logits_path=raw.get("logits_path"),
                ood_mask_path=raw.get("ood_mask_path"),
                domain_tag=str(raw.get("domain_tag", "")),
                model_id=raw.get("model_id"),
            )
        )
    return DatasetManifest(
        entries=tuple(entries),
        num_classes=int(doc["num_classes"]),
        ignore_id=int(doc.get("ignore_id", 255)),
        base_dir=path.parent,
    )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "entries": [e.to_dict() for e in manifest.entries],
        "num_classes": manifest.num_classes,
        "ignore_id": manifest.ignore_id,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
