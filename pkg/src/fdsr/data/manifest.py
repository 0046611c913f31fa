"""Dataset manifests and on-disk layout adapters.

Manifest JSON schema (``schema_version`` 1)::

    {"schema_version": 1, "root": "<dir, relative to the manifest file or absolute>", "scale": 4, "layout": "synthetic",
     "samples": [{"id": "...", "rgb": "rel/path.ppm", "hr_depth": "rel/path.pgm",
                  "lr_depth": "rel/path.pgm" | null, "scene_tag": "synthetic",
                  "split": "train" | "test"}],
     "excluded": [{"id": "...", "missing": ["hr_depth"]}]}

Supported layouts (paths relative to the root):

* ``synthetic`` -- ``<id>/rgb.ppm``, ``<id>/hr_depth.pgm``, optional ``<id>/lr_depth.pgm``
* ``rgbdd`` -- ``<scene_tag>/<id>/`` with the same three files; split lists
  ``train.txt`` / ``test.txt`` (one id per line) when present
* ``nyu_like`` -- ``<split>/<id>_rgb.ppm`` and ``<split>/<id>_depth.pgm`` (HR only)
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Union

from .pnm import read_pgm16, read_ppm
from .synth import SampleTriple

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LAYOUTS = ("synthetic", "rgbdd", "nyu_like")
SPLITS = ("train", "test")
SCENE_TAGS = ("portrait", "model", "plant", "light", "synthetic", "indoor")


@dataclass
class SampleRecord:
    id: str
    rgb: str
    hr_depth: str
    lr_depth: Optional[str]
    scene_tag: str
    split: str


@dataclass
class DatasetManifest:
    root: str
    scale: int
    layout: str
    samples: List[SampleRecord] = field(default_factory=list)
    excluded: List[dict] = field(default_factory=list)

    def split(self, name: str) -> List[SampleRecord]:
        return [s for s in self.samples if s.split == name]

    def to_json(self) -> str:
        d = {
            "schema_version": SCHEMA_VERSION,
            "root": self.root,
            "scale": self.scale,
            "layout": self.layout,
            "samples": [asdict(s) for s in self.samples],
            "excluded": self.excluded,
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json())

    def load_sample(self, rec: SampleRecord) -> SampleTriple:
        root = Path(self.root)
        lr = read_pgm16(root / rec.lr_depth) if rec.lr_depth else None
        return SampleTriple(
            id=rec.id,
            rgb=read_ppm(root / rec.rgb),
            hr_depth=read_pgm16(root / rec.hr_depth),
            lr_depth=lr,
            scene_tag=rec.scene_tag,
        )

    def iter_samples(self, split: Optional[str] = None) -> Iterator[SampleTriple]:
        for rec in self.samples:
            if split is None or rec.split == split:
                yield self.load_sample(rec)


def _validate(m: DatasetManifest) -> None:
    seen = set()
    for s in m.samples:
        if s.id in seen:
            raise ValueError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        if s.split not in SPLITS:
            raise ValueError(f"{s.id}: unknown split {s.split!r}")
        if s.scene_tag not in SCENE_TAGS:
            raise ValueError(f"{s.id}: unknown scene tag {s.scene_tag!r}")


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    d = json.loads(path.read_text())
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema_version {d.get('schema_version')!r}")
    root = Path(d["root"])
    if not root.is_absolute():
        root = path.parent / root
    m = DatasetManifest(
        root=str(root),
        scale=int(d["scale"]),
        layout=d["layout"],
        samples=[SampleRecord(**s) for s in d["samples"]],
        excluded=list(d.get("excluded", [])),
    )
    _validate(m)
    if check_files:
        root = Path(m.root)
        for s in m.samples:
            for p in (s.rgb, s.hr_depth, s.lr_depth):
                if p and not (root / p).is_file():
                    raise FileNotFoundError(f"{s.id}: missing file {root / p}")
    return m


def _assign_splits(ids: List[str], test_ratio: float) -> dict:
    n_test = int(math.ceil(test_ratio * len(ids))) if ids else 0
    n_train = len(ids) - n_test
    return {i: ("train" if k < n_train else "test") for k, i in enumerate(ids)}


def _sample_dir_record(root: Path, d: Path, tag: str) -> tuple[Optional[SampleRecord], List[str]]:
    files = {"rgb": d / "rgb.ppm", "hr_depth": d / "hr_depth.pgm"}
    missing = [k for k, p in files.items() if not p.is_file()]
    if missing:
        return None, missing
    lr = d / "lr_depth.pgm"
    return (
        SampleRecord(
            id=d.name,
            rgb=str(files["rgb"].relative_to(root)),
            hr_depth=str(files["hr_depth"].relative_to(root)),
            lr_depth=str(lr.relative_to(root)) if lr.is_file() else None,
            scene_tag=tag,
            split="train",
        ),
        [],
    )


def _tag_of(dirname: str) -> Optional[str]:
    name = dirname.lower().rstrip("s")
    return name if name in SCENE_TAGS else None


def adapt_external(root: Union[str, Path], layout: str, scale: int = 4, test_ratio: float = 0.2) -> DatasetManifest:
    """Scan ``root`` in the given layout and build a validated manifest."""
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    records: List[SampleRecord] = []
    excluded: List[dict] = []

    def take(rec, missing, sid):
        if rec is None:
            log.warning("sample %s excluded: missing %s", sid, ", ".join(missing))
            excluded.append({"id": sid, "missing": missing})
        else:
            records.append(rec)

    if layout == "synthetic":
        for d in sorted(p for p in root.iterdir() if p.is_dir()):
            take(*_sample_dir_record(root, d, "synthetic"), d.name)
        splits = _assign_splits([r.id for r in records], test_ratio)
        for r in records:
            r.split = splits[r.id]
    elif layout == "rgbdd":
        for tag_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            tag = _tag_of(tag_dir.name)
            if tag is None:
                continue
            for d in sorted(p for p in tag_dir.iterdir() if p.is_dir()):
                take(*_sample_dir_record(root, d, tag), d.name)
        lists = {sp: root / f"{sp}.txt" for sp in SPLITS}
        if all(p.is_file() for p in lists.values()):
            member = {}
            for sp, p in lists.items():
                for line in p.read_text().split():
                    member[line] = sp
            records = [r for r in records if r.id in member]
            for r in records:
                r.split = member[r.id]
        else:
            splits = _assign_splits([r.id for r in records], test_ratio)
            for r in records:
                r.split = splits[r.id]
    else:
        for sp in SPLITS:
            d = root / sp
            if not d.is_dir():
                continue
            for rgb in sorted(d.glob("*_rgb.ppm")):
                sid = rgb.name[: -len("_rgb.ppm")]
                depth = d / f"{sid}_depth.pgm"
                if not depth.is_file():
                    take(None, ["hr_depth"], sid)
                    continue
                records.append(
                    SampleRecord(sid, str(rgb.relative_to(root)), str(depth.relative_to(root)), None, "indoor", sp)
                )
    if not records:
        log.warning("no samples found under %s (layout %s)", root, layout)
    m = DatasetManifest(root=str(root), scale=scale, layout=layout, samples=records, excluded=excluded)
    _validate(m)
    return m
