"""Protection metrics and the lossy-transform robustness harness.

L2 and PSNR compare the swap of the clean source with the swap of the
protected source; ISM is the cosine similarity between the held-out
evaluation encoder's embeddings of the clean source and a swap output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core import ShapeError, dequantize_u8, quantize_u8
from .losses import cosine_distance
from .victims.base import VictimBundle

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
JPEG_QUALITIES = (50, 70, 90)
BIT_DEPTHS = (3, 5, 8)
RESIZE_FACTORS = (0.5, 0.75)
CSV_COLUMNS = ("pair_id", "transform", "l2", "psnr", "ism", "ism_clean", "status", "eval_encoder")


def _data(x):
    return x.data if hasattr(x, "data") and not torch.is_tensor(x) else x


def metric_l2(a, b) -> float:
    """Mean squared difference over all elements."""
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return float(((a.detach().to(torch.float64) - b.detach().to(torch.float64)) ** 2).mean())


def psnr_from_l2(l2: float) -> float:
    if math.isnan(l2):
        return math.nan
    if l2 <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / l2))


def metric_psnr(a, b) -> float:
    return psnr_from_l2(metric_l2(a, b))


def ism_from_embeddings(u: torch.Tensor, v: torch.Tensor) -> float:
    return float(1.0 - cosine_distance(u.detach(), v.detach()))


def metric_ism(src, swapped, bundle: VictimBundle, encoder_id: str | None = None) -> float:
    """Cosine similarity under the held-out evaluation encoder."""
    enc = encoder_id or bundle.eval_encoder
    if enc in bundle.attack_encoders:
        raise ValueError(f"encoder {enc!r} is part of the attack ensemble")
    with torch.no_grad():
        u = bundle.embed(_data(src), enc).data
        v = bundle.embed(_data(swapped), enc).data
    return ism_from_embeddings(u, v)


# ---------------------------------------------------------------- transforms

def jpeg(img: torch.Tensor, quality: int) -> torch.Tensor:
    buf = io.BytesIO()
    # fixed encoder settings so repeated calls give identical bytes
    Image.fromarray(quantize_u8(img), "RGB").save(buf, format="JPEG", quality=int(quality),
                                                  subsampling=0, optimize=False)
    buf.seek(0)
    with Image.open(buf) as im:
        return dequantize_u8(np.asarray(im.convert("RGB")))


def bit_reduce(img: torch.Tensor, bits: int) -> torch.Tensor:
    """``floor(v (2^b - 1)) / (2^b - 1)`` evaluated exactly on the 8-bit values."""
    if not 1 <= bits <= 8:
        raise ValueError("bits must lie in [1, 8]")
    levels = (1 << bits) - 1
    u8 = quantize_u8(img).astype(np.int64)
    q = (u8 * levels) // 255  # floor of (u8/255)*levels without float round-off
    return torch.from_numpy(q / levels).to(img.dtype)


def resize_down_up(img: torch.Tensor, factor: float) -> torch.Tensor:
    if not 0 < factor <= 1:
        raise ValueError("resize factor must lie in (0, 1]")
    h, w, _ = img.shape
    if factor == 1:
        return img.clone()
    x = img.permute(2, 0, 1)[None]
    small = torch.nn.functional.interpolate(
        x, size=(max(1, round(h * factor)), max(1, round(w * factor))),
        mode="bilinear", align_corners=False, antialias=False)
    back = torch.nn.functional.interpolate(small, size=(h, w), mode="bilinear", align_corners=False)
    return back[0].permute(1, 2, 0).clamp(0.0, 1.0)


def transform_specs(jpeg_qualities=JPEG_QUALITIES, bit_depths=BIT_DEPTHS, resize_factors=RESIZE_FACTORS):
    specs = [(f"jpeg_q{q}", jpeg, q) for q in jpeg_qualities]
    specs += [(f"bits_{b}", bit_reduce, b) for b in bit_depths]
    specs += [(f"resize_{r:g}", resize_down_up, r) for r in resize_factors]
    return specs


def transform_suite(img: torch.Tensor, specs=None) -> list:
    """``[(label, image or exception)]``; a failing transform does not stop the rest."""
    out = []
    for label, fn, param in specs or transform_specs():
        try:
            out.append((label, fn(img, param)))
        except Exception as exc:  # noqa: BLE001 - reported as an error row
            log.warning("transform %s failed: %s", label, exc)
            out.append((label, exc))
    return out


# ---------------------------------------------------------------- scoring

@dataclass
class MetricRow:
    pair_id: str
    transform: str
    l2: float
    psnr: float
    ism: float
    ism_clean: float = math.nan
    status: str = "ok"
    eval_encoder: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricRow":
        kw = {}
        for f in fields(cls):
            v = d[f.name]
            kw[f.name] = float(v) if f.type == "float" else str(v)
        return cls(**kw)


def _score(pair_id, label, clean, prot, tgt, src_ref, bundle) -> MetricRow:
    enc = bundle.eval_encoder
    swap_c = bundle.swap(clean, tgt)
    if swap_c is None:
        return MetricRow(pair_id, label, math.nan, math.nan, math.nan, math.nan, "clean_no_face", enc)
    ism_c = metric_ism(src_ref, swap_c, bundle)
    swap_p = bundle.swap(prot, tgt)
    if swap_p is None:
        # the protected face escaped detection: the swap never happens
        return MetricRow(pair_id, label, math.nan, math.nan, math.nan, ism_c, "no_face", enc)
    l2 = metric_l2(swap_c, swap_p)
    return MetricRow(pair_id, label, l2, psnr_from_l2(l2), metric_ism(src_ref, swap_p, bundle),
                     ism_c, "ok", enc)


def swap_and_score(src_protected, src_clean, targets, bundle: VictimBundle, pair_id="0",
                   transforms=True, specs=None) -> list[MetricRow]:
    """Score one source against each target, untransformed and under every transform.

    Transforms are applied to both the clean and the protected source; ISM is
    always taken against the untransformed clean source.
    """
    prot, clean = _data(src_protected), _data(src_clean)
    rows = []
    for k, tgt in enumerate(targets):
        pid = str(pair_id) if len(targets) == 1 else f"{pair_id}:{k}"
        tgt = _data(tgt)
        rows.append(_score(pid, "identity", clean, prot, tgt, clean, bundle))
        if not transforms:
            continue
        tc = transform_suite(clean, specs)
        tp = transform_suite(prot, specs)
        for (label, c), (_, p) in zip(tc, tp):
            if isinstance(c, Exception) or isinstance(p, Exception):
                err = c if isinstance(c, Exception) else p
                rows.append(MetricRow(pid, label, math.nan, math.nan, math.nan, math.nan,
                                      f"error: {err}", bundle.eval_encoder))
                continue
            rows.append(_score(pid, label, c, p, tgt, clean, bundle))
    return rows


def error_row(pair_id, label, message, eval_encoder="") -> MetricRow:
    return MetricRow(str(pair_id), label, math.nan, math.nan, math.nan, math.nan,
                     f"error: {message}", eval_encoder)


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            d = r.to_dict()
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])


def read_csv(path) -> list[MetricRow]:
    with Path(path).open(newline="") as fh:
        return [MetricRow.from_dict(d) for d in csv.DictReader(fh)]


def write_jsonl(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in rows:
            # NaN is not valid JSON; sentinel metrics are written as null
            d = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                 for k, v in r.to_dict().items()}
            fh.write(json.dumps(d, sort_keys=False) + "\n")


def read_jsonl(path) -> list[MetricRow]:
    rows = []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        rows.append(MetricRow.from_dict({k: (math.nan if v is None else v) for k, v in d.items()}))
    return rows


def summarize(rows) -> dict:
    """Mean metrics per transform over rows that produced a protected swap."""
    out = {}
    for label in dict.fromkeys(r.transform for r in rows):
        sel = [r for r in rows if r.transform == label]
        ok = [r for r in sel if r.status == "ok"]
        out[label] = {
            "rows": len(sel),
            "scored": len(ok),
            "no_face": sum(r.status == "no_face" for r in sel),
            "errors": sum(r.status.startswith("error") or r.status == "clean_no_face" for r in sel),
            "mean_l2": float(np.mean([r.l2 for r in ok])) if ok else math.nan,
            "mean_ism": float(np.mean([r.ism for r in ok])) if ok else math.nan,
            "mean_ism_clean": float(np.mean([r.ism_clean for r in sel if not math.isnan(r.ism_clean)]))
            if any(not math.isnan(r.ism_clean) for r in sel) else math.nan,
        }
    return out
