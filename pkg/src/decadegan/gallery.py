"""Static result gallery: one self-contained HTML page, all assets inlined.

One row per input image, one column per decade, metric footer.  Missing
images render as placeholder cells with a warning note; the bundle never
issues a network request.
"""

from __future__ import annotations

import base64
import io
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoints import atomic_write_bytes
from .toydata import from_chw_pm1

_PLACEHOLDER = (
    '<div class="missing" title="missing image">&#9888;</div>'
)

_STYLE = """
body { font-family: sans-serif; background: #14161a; color: #e8e8e8; margin: 2em; }
table.grid { border-collapse: collapse; }
table.grid td, table.grid th { padding: 4px 6px; text-align: center; }
img.cell { image-rendering: pixelated; width: 96px; height: 96px; }
div.missing { width: 96px; height: 96px; background: #3a2d2d; color: #d0a0a0;
  display: flex; align-items: center; justify-content: center; font-size: 2em; }
pre.metrics { background: #1e2126; padding: 1em; overflow-x: auto; }
.warn { color: #e0b050; }
"""


def image_data_uri(img: np.ndarray) -> str:
    """Encode a (3,H,W) [-1,1] float image as an inline PNG data URI."""
    arr = (from_chw_pm1(np.asarray(img)) * 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()


@dataclass
class GalleryRow:
    label: str
    input_image: np.ndarray | None
    transforms: dict[int, np.ndarray | None] = field(default_factory=dict)


def emit_gallery(rows: list[GalleryRow], decades: list[int], out_path: Path,
                 metrics_text: str | None = None, title: str = "decade transforms"
                 ) -> Path:
    """Write the bundle; returns the output path.  Always produces a valid
    page, even for an empty input set."""
    warnings: list[str] = []

    def cell(img) -> str:
        if img is None:
            return _PLACEHOLDER
        return f'<img class="cell" src="{image_data_uri(img)}" alt=""/>'

    head = "".join(f"<th>{d}</th>" for d in decades)
    body_rows = []
    for row in rows:
        cells = [f"<td>{row.label}</td>", f"<td>{cell(row.input_image)}</td>"]
        if row.input_image is None:
            warnings.append(f"missing input image for {row.label}")
        for d in decades:
            img = row.transforms.get(d)
            if img is None:
                warnings.append(f"missing transform {row.label} -> {d}")
            cells.append(f"<td>{cell(img)}</td>")
        body_rows.append("<tr>" + "".join(cells) + "</tr>")

    warn_html = ""
    if warnings:
        items = "".join(f"<li>{w}</li>" for w in warnings)
        warn_html = f'<ul class="warn">{items}</ul>'
    metrics_html = f'<pre class="metrics">{metrics_text}</pre>' if metrics_text else ""

    html = f"""<!DOCTYPE html>
<html><head><meta charset="utf-8"/><title>{title}</title>
<style>{_STYLE}</style></head>
<body>
<h1>{title}</h1>
<table class="grid">
<tr><th>id</th><th>input</th>{head}</tr>
{"".join(body_rows)}
</table>
{warn_html}
{metrics_html}
</body></html>
"""
    out_path = Path(out_path)
    atomic_write_bytes(out_path, html.encode())
    return out_path


_REF_RE = re.compile(r"""(?:src|href)\s*=\s*["']([^"']+)["']""", re.IGNORECASE)


def audit_external_references(html: str) -> list[str]:
    """All src/href targets that would require a network request."""
    out = []
    for ref in _REF_RE.findall(html):
        if not (ref.startswith("data:") or ref.startswith("#")):
            out.append(ref)
    return out
