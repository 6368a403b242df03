"""Planning and orchestration of the two synthetic-data pipelines.

Everything geometric (crops, boxes, compositing, mask back-projection) is
computed locally and deterministically; every neural step goes through the
service protocol in :mod:`segrel.service`.

Covariate-shift plans take a label map, apply a seeded horizontal square
crop, nearest-resize it to the working resolution and attach a templated
prompt "<caption>, in <domain>".

Object-inpainting plans sample a square box whose side is uniform in
[min(w,h)//4, min(w,h)//2], placed anywhere horizontally and with its top
edge at or below h//4 (the box stays in the lower three-quarter band). A
context rectangle 1.5x the box, centred on it and clamped to the image,
is cropped and bilinear-resized to a 512x512 working patch; the service
regenerates only the inner region (guidance 15), the patch is resized and
pasted back, the composite is refined (strength 0.65, guidance 7.5), and
the object mask extracted from the working patch is back-projected through
the inverse crop/resize transform and intersected with the box. Masks
covering less than 1% of the box area reject the sample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import GeometryError, ConsistencyError, RejectionError
from .imaging import (
    image_size_png,
    read_label_png,
    read_image_png,
    resize_bilinear,
    resize_nearest,
    resize_nearest_array,
)
from .manifest import DatasetManifest, ManifestEntry
from .rng import Xoshiro256StarStar, derive_stream
from .types import BinaryMask, CurationRecord, LabelMap

# The 42 objects used for inpainting; none is a Cityscapes class.
OBJECT_VOCABULARY = (
    "arcade machine",
    "armchair",
    "baby",
    "bag",
    "bathtub",
    "bench",
    "billboard",
    "book",
    "bottle",
    "box",
    "chair",
    "cheetah",
    "chimpanzee",
    "clock",
    "computer",
    "desk",
    "dolphin",
    "elephant",
    "flamingo",
    "giraffe",
    "gorilla",
    "graffiti",
    "hippopotamus",
    "kangaroo",
    "koala",
    "lamp",
    "lion",
    "microwave",
    "mirror",
    "panda",
    "penguin",
    "pillow",
    "plate",
    "polar bear",
    "radiator",
    "refrigerator",
    "sofa",
    "table",
    "tiger",
    "toilet",
    "vase",
    "zebra",
)

# 28-entry domain list used for the broad "all-domains" calibration prompts.
ALL_DOMAINS = (
    "Beijing",
    "Cairo",
    "clouds",
    "Dubai",
    "fall",
    "fog",
    "hurricane",
    "India",
    "Istanbul",
    "Johannesburg",
    "lightning",
    "London",
    "Moscow",
    "Mumbai",
    "night",
    "Paris",
    "rain",
    "sandstorm",
    "snow",
    "spring",
    "summer",
    "sun",
    "Sydney",
    "Tokyo",
    "tornado",
    "Toronto",
    "wind",
    "winter",
)

SHIFT_DOMAINS = ("india", "fog", "rain", "snow", "night")

MASK_AREA_REJECT_FRACTION = 0.01
REFINE_MAX_LONG_SIDE = 1024


@dataclass(frozen=True)
class GenerationParams:
    steps: int
    guidance_scale: float
    control_strength: float
    preset: str
    output_size: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance_scale <= 0:
            raise ValueError(f"guidance_scale must be > 0, got {self.guidance_scale}")
        if not 0.0 < self.control_strength <= 1.0:
            raise ValueError(f"control_strength must lie in (0, 1], got {self.control_strength}")
        if self.preset not in ("sd15", "sdxl"):
            raise ValueError(f"preset must be 'sd15' or 'sdxl', got {self.preset!r}")
        if self.output_size not in (512, 1024):
            raise ValueError(f"output_size must be 512 or 1024, got {self.output_size}")

    @classmethod
    def for_preset(cls, preset: str) -> "GenerationParams":
        if preset == "sd15":
            return cls(steps=25, guidance_scale=8.0, control_strength=1.0, preset="sd15", output_size=512)
        if preset == "sdxl":
            return cls(steps=25, guidance_scale=10.0, control_strength=0.65, preset="sdxl", output_size=1024)
        raise ValueError(f"unknown preset {preset!r}")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "guidance_scale": self.guidance_scale,
            "control_strength": self.control_strength,
            "preset": self.preset,
            "output_size": self.output_size,
        }


def shift_prompt(caption: str, domain: str) -> str:
    """Compose the generation prompt "<caption>, in <domain>"."""
    if not caption:
        raise ValueError("caption must be non-empty")
    if not domain:
        raise ValueError("domain must be non-empty")
    return f"{caption}, in {domain}"


@dataclass(frozen=True)
class ShiftGenerationRequest:
    sample_id: str
    label_path: str
    crop_x: int
    crop_y: int
    crop_size: int
    prompt: str
    params: GenerationParams
    control_mask: LabelMap | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "label_path": self.label_path,
            "crop": {"x": self.crop_x, "y": self.crop_y, "size": self.crop_size},
            "prompt": self.prompt,
        }


def plan_shift_generation(
    manifest: DatasetManifest,
    domain: str,
    params: GenerationParams,
    seed: int,
    captions: Mapping[str, str] | None = None,
    client=None,
) -> list[ShiftGenerationRequest]:
    """One request per sample: seeded horizontal square crop of the label
    map, nearest-resized to the working resolution, with a templated prompt.

    Captions come from the ``captions`` mapping when given, otherwise from
    the service /caption endpoint (per image, cached by sample id).
    """
    requests = []
    for entry in manifest.sorted_entries():
        if entry.label_path is None:
            raise ValueError(f"sample {entry.sample_id}: no label_path to condition on")
        label = read_label_png(manifest.resolve(entry.label_path), manifest.ignore_id)
        h, w = label.height, label.width
        if w < h:
            raise GeometryError(
                f"sample {entry.sample_id}: image {w}x{h} has no horizontal square crop"
            )
        stream = derive_stream(seed, "shift-crop", entry.sample_id)
        x = stream.randint(0, w - h)
        crop = LabelMap(label.data[:, x : x + h], label.ignore_id)
        control = resize_nearest(crop, params.output_size, params.output_size)
        if captions is not None and entry.sample_id in captions:
            caption = captions[entry.sample_id]
        elif client is not None and entry.image_path is not None:
            caption = client.caption(read_image_png(manifest.resolve(entry.image_path)))
        else:
            raise ValueError(
                f"sample {entry.sample_id}: no caption available (pass captions= or client=)"
            )
        requests.append(
            ShiftGenerationRequest(
                sample_id=entry.sample_id,
                label_path=str(entry.label_path),
                crop_x=x,
                crop_y=0,
                crop_size=h,
                prompt=shift_prompt(caption, domain),
                params=params,
                control_mask=control,
            )
        )
    return requests


@dataclass(frozen=True)
class InpaintBox:
    """Square region to regenerate: side in [m//4, m//2] for m = min(w, h),
    fully inside the image, top edge at or below h//4."""

    x: int
    y: int
    size: int
    image_w: int
    image_h: int

    def __post_init__(self):
        m = min(self.image_w, self.image_h)
        if not m // 4 <= self.size <= m // 2:
            raise ValueError(f"box size {self.size} outside [{m // 4}, {m // 2}]")
        if self.x < 0 or self.y < 0 or self.x + self.size > self.image_w or self.y + self.size > self.image_h:
            raise ValueError("box must lie fully inside the image")
        if self.y < self.image_h // 4:
            raise ValueError(f"box top {self.y} above the lower three-quarter band")

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "size": self.size,
            "image_w": self.image_w,
            "image_h": self.image_h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InpaintBox":
        return cls(d["x"], d["y"], d["size"], d["image_w"], d["image_h"])


@dataclass(frozen=True)
class ContextBox:
    """Clamped 1.5x context rectangle around an InpaintBox.

    ``pre_*`` record the rectangle before clamping so the crop/resize
    transform can be inverted exactly.
    """

    x: int
    y: int
    w: int
    h: int
    pre_x: int
    pre_y: int
    pre_size: int

    @classmethod
    def around(cls, box: InpaintBox) -> "ContextBox":
        margin = box.size // 4
        pre_x = box.x - margin
        pre_y = box.y - margin
        pre_size = box.size + 2 * margin
        x0 = max(0, pre_x)
        y0 = max(0, pre_y)
        x1 = min(box.image_w, pre_x + pre_size)
        y1 = min(box.image_h, pre_y + pre_size)
        return cls(x0, y0, x1 - x0, y1 - y0, pre_x, pre_y, pre_size)

    def contains(self, box: InpaintBox) -> bool:
        return (
            self.x <= box.x
            and self.y <= box.y
            and box.x + box.size <= self.x + self.w
            and box.y + box.size <= self.y + self.h
        )

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "w": self.w,
            "h": self.h,
            "pre_x": self.pre_x,
            "pre_y": self.pre_y,
            "pre_size": self.pre_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContextBox":
        return cls(d["x"], d["y"], d["w"], d["h"], d["pre_x"], d["pre_y"], d["pre_size"])


@dataclass(frozen=True)
class InpaintParams:
    guidance_scale: float = 15.0
    steps: int = 25
    working_size: int = 512

    def to_dict(self) -> dict:
        return {
            "guidance_scale": self.guidance_scale,
            "steps": self.steps,
            "working_size": self.working_size,
        }


@dataclass(frozen=True)
class RefineParams:
    strength: float = 0.65
    guidance_scale: float = 7.5

    def to_dict(self) -> dict:
        return {"strength": self.strength, "guidance_scale": self.guidance_scale}


@dataclass(frozen=True)
class InpaintPlan:
    sample_id: str
    image_path: str
    object_name: str
    box: InpaintBox
    context: ContextBox
    seed: int
    inpaint_params: InpaintParams = InpaintParams()
    refine_params: RefineParams = RefineParams()

    def __post_init__(self):
        if self.object_name not in OBJECT_VOCABULARY:
            raise ValueError(f"unknown object {self.object_name!r}")
        if not self.context.contains(self.box):
            raise ValueError("context box must contain the inpaint box")

    @property
    def prompt(self) -> str:
        return f"A photo of an {self.object_name}"

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "image_path": self.image_path,
            "object_name": self.object_name,
            "box": self.box.to_dict(),
            "context": self.context.to_dict(),
            "seed": self.seed,
            "inpaint": self.inpaint_params.to_dict(),
            "refine": self.refine_params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InpaintPlan":
        return cls(
            sample_id=str(d["sample_id"]),
            image_path=str(d["image_path"]),
            object_name=str(d["object_name"]),
            box=InpaintBox.from_dict(d["box"]),
            context=ContextBox.from_dict(d["context"]),
            seed=int(d["seed"]),
            inpaint_params=InpaintParams(
                guidance_scale=float(d["inpaint"]["guidance_scale"]),
                steps=int(d["inpaint"]["steps"]),
                working_size=int(d["inpaint"]["working_size"]),
            ),
            refine_params=RefineParams(
                strength=float(d["refine"]["strength"]),
                guidance_scale=float(d["refine"]["guidance_scale"]),
            ),
        )


def sample_inpaint_box(rng: Xoshiro256StarStar, image_w: int, image_h: int) -> InpaintBox:
    """Uniform box size in [m//4, m//2], uniform position keeping the box
    inside the image with its top edge at or below image_h//4."""
    m = min(image_w, image_h)
    if m < 8:
        raise GeometryError(f"image {image_w}x{image_h} too small to place a box")
    size = rng.randint(m // 4, m // 2)
    y = rng.randint(image_h // 4, image_h - size)
    x = rng.randint(0, image_w - size)
    return InpaintBox(x=x, y=y, size=size, image_w=image_w, image_h=image_h)


def plan_inpaint_generation(
    manifest: DatasetManifest, seed: int, inpaint_params: InpaintParams | None = None
) -> list[InpaintPlan]:
    """One plan per sample: seeded object choice, box and context geometry.

    The per-sample stream is keyed by (seed, "inpaint", sample_id), so
    plans are independent of manifest order and of each other.
    """
    inpaint_params = inpaint_params or InpaintParams()
    plans = []
    for entry in manifest.sorted_entries():
        if entry.image_path is None:
            raise ValueError(f"sample {entry.sample_id}: no image_path to inpaint")
        # plans must be executable from any working directory
        image_path = manifest.resolve(entry.image_path).resolve()
        w, h = image_size_png(image_path)
        stream = derive_stream(seed, "inpaint", entry.sample_id)
        object_name = OBJECT_VOCABULARY[stream.randint(0, len(OBJECT_VOCABULARY) - 1)]
        box = sample_inpaint_box(stream, w, h)
        plans.append(
            InpaintPlan(
                sample_id=entry.sample_id,
                image_path=str(image_path),
                object_name=object_name,
                box=box,
                context=ContextBox.around(box),
                seed=stream.next_u64(),
                inpaint_params=inpaint_params,
            )
        )
    return plans


def _inner_mask_in_patch(plan: InpaintPlan, working_size: int) -> np.ndarray:
    ctx = plan.context
    inner = np.zeros((ctx.h, ctx.w), dtype=bool)
    bx = plan.box.x - ctx.x
    by = plan.box.y - ctx.y
    inner[by : by + plan.box.size, bx : bx + plan.box.size] = True
    return resize_nearest_array(inner, working_size, working_size)


def composite_inpaint(plan: InpaintPlan, image: np.ndarray, client) -> tuple[np.ndarray, np.ndarray]:
    """Crop-resize-inpaint-pasteback (no refinement yet).

    Returns (composite image, inpainted 512x512 working patch). Pixels
    outside the context rectangle are bit-identical to the input.
    """
    h, w = image.shape[:2]
    if (w, h) != (plan.box.image_w, plan.box.image_h):
        raise GeometryError(
            f"plan {plan.sample_id} was made for {plan.box.image_w}x{plan.box.image_h}, "
            f"image is {w}x{h}"
        )
    ctx = plan.context
    ws = plan.inpaint_params.working_size
    patch = image[ctx.y : ctx.y + ctx.h, ctx.x : ctx.x + ctx.w]
    patch_ws = resize_bilinear(patch, ws, ws)
    inner_ws = _inner_mask_in_patch(plan, ws)
    painted = client.inpaint(
        patch_ws,
        inner_ws,
        plan.prompt,
        plan.inpaint_params.guidance_scale,
        plan.inpaint_params.steps,
        plan.seed,
    )
    back = resize_bilinear(painted, ctx.w, ctx.h)
    composite = image.copy()
    composite[ctx.y : ctx.y + ctx.h, ctx.x : ctx.x + ctx.w] = back
    return composite, painted


def _refine_full_image(image: np.ndarray, params: RefineParams, client, seed: int) -> np.ndarray:
    """Refine pass; payloads are bounded by downscaling to a long side of
    1024 and adding the upsampled residual back."""
    h, w = image.shape[:2]
    long_side = max(w, h)
    if long_side <= REFINE_MAX_LONG_SIDE:
        return client.refine(image, params.strength, params.guidance_scale, seed)
    scale = REFINE_MAX_LONG_SIDE / long_side
    nw = max(1, round(w * scale))
    nh = max(1, round(h * scale))
    small = resize_bilinear(image, nw, nh)
    refined_small = client.refine(small, params.strength, params.guidance_scale, seed)
    residual = refined_small.astype(np.float32)
    residual -= small
    residual_up = resize_bilinear(residual, w, h)
    out = image.astype(np.float32)
    out += residual_up
    np.rint(out, out=out)
    np.clip(out, 0, 255, out=out)
    return out.astype(np.uint8)


def back_project_mask(plan: InpaintPlan, patch_mask: np.ndarray) -> BinaryMask:
    """Map a working-patch mask back to full resolution through the inverse
    of the crop/resize transform, then intersect with the inpaint box.

    The forward resize is bilinear, so the inverse resamples the binary
    field bilinearly and thresholds at 0.5; axis-aligned rectangles survive
    the round trip exactly.
    """
    ctx = plan.context
    field_ctx = resize_bilinear(patch_mask.astype(np.float32), ctx.w, ctx.h) >= 0.5
    full = np.zeros((plan.box.image_h, plan.box.image_w), dtype=bool)
    full[ctx.y : ctx.y + ctx.h, ctx.x : ctx.x + ctx.w] = field_ctx
    keep = np.zeros_like(full)
    keep[plan.box.y : plan.box.y + plan.box.size, plan.box.x : plan.box.x + plan.box.size] = True
    return BinaryMask(full & keep)


def run_inpaint(plan: InpaintPlan, image: np.ndarray, client) -> tuple[np.ndarray, BinaryMask]:
    """Execute one plan against a service client.

    Returns the refined composite and the full-resolution object mask.
    Raises RejectionError when the extracted mask covers less than 1% of
    the box, and TransportError if the service stays unreachable.
    """
    composite, painted = composite_inpaint(plan, image, client)
    refined = _refine_full_image(composite, plan.refine_params, client, plan.seed)
    patch_mask = client.extract_mask(painted, plan.object_name, plan.seed)
    ood_mask = back_project_mask(plan, patch_mask)
    min_area = MASK_AREA_REJECT_FRACTION * plan.box.size * plan.box.size
    if ood_mask.count() < min_area:
        raise RejectionError(
            f"sample {plan.sample_id}: extracted mask covers {ood_mask.count()} px "
            f"< 1% of the {plan.box.size}x{plan.box.size} box"
        )
    return refined, ood_mask


def build_training_manifest(
    generated: DatasetManifest | Sequence[ManifestEntry],
    curation: Sequence[CurationRecord],
    mode: str,
    *,
    num_classes: int | None = None,
    ignore_id: int = 255,
) -> DatasetManifest:
    """Manifest of inpainted samples for downstream OOD training.

    "curated" keeps only samples whose latest verdict is accepted; "all"
    keeps every generated sample regardless of verdicts.
    """
    if mode not in ("curated", "all"):
        raise ValueError(f"mode must be 'curated' or 'all', got {mode!r}")
    if isinstance(generated, DatasetManifest):
        entries = list(generated.entries)
        num_classes = generated.num_classes if num_classes is None else num_classes
        ignore_id = generated.ignore_id
        base_dir = generated.base_dir
    else:
        entries = list(generated)
        base_dir = None
        if num_classes is None:
            raise ValueError("num_classes required when passing bare entries")
    known = {e.sample_id for e in entries}
    latest: dict[str, CurationRecord] = {}
    for record in curation:
        if record.sample_id not in known:
            raise ConsistencyError(f"curation references unknown sample {record.sample_id!r}")
        latest[record.sample_id] = record
    if mode == "all":
        kept = entries
    else:
        kept = [
            e
            for e in entries
            if e.sample_id in latest and latest[e.sample_id].verdict == "accepted"
        ]
    return DatasetManifest(
        entries=tuple(kept), num_classes=num_classes, ignore_id=ignore_id, base_dir=base_dir
    )


# --- plan files -----------------------------------------------------------------


def save_inpaint_plans(plans: Sequence[InpaintPlan], seed: int, path: str | Path) -> None:
    doc = {"kind": "inpaint_plans", "seed": seed, "plans": [p.to_dict() for p in plans]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_inpaint_plans(path: str | Path) -> tuple[list[InpaintPlan], int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("kind") != "inpaint_plans":
        raise ValueError(f"{path}: not an inpaint plan file")
    return [InpaintPlan.from_dict(d) for d in doc["plans"]], int(doc["seed"])


def save_shift_plans(
    requests: Sequence[ShiftGenerationRequest],
    seed: int,
    domain: str,
    params: GenerationParams,
    path: str | Path,
) -> None:
    doc = {
        "kind": "shift_plans",
        "seed": seed,
        "domain": domain,
        "params": params.to_dict(),
        "plans": [r.to_dict() for r in requests],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
