"""End-to-end orchestration over an artifact workspace.

Each step checks for a completed run record with a matching config digest and
skips the work when one verifies, so every command is resumable.  The layout
under the workspace root::

    data/         per-decade image stacks + manifest.tsv
    backends/     trained embedder / classifier / threshold calibration
    family/       parent and child checkpoints + training logs
    inv/<id>/     per-image inversion artifacts
    offsets/<id>/ per-image weight offsets
    transforms/<id>/  per-decade renders
    report.json   metric report
    gallery.html  static result gallery
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import artifacts as art
from .checkpoints import atomic_write_bytes, atomic_write_json
from .config import ExperimentConfig
from .family import GeneratorFamily, load_family, save_family
from .gallery import GalleryRow, emit_gallery
from .inversion import (
    InversionResult,
    load_inversion,
    project,
    save_inversion,
    transform_across_decades,
    tune_pivotal,
)
from .checkpoints import load_offset, save_offset
from .manifest import DatasetManifest, ManifestRecord, split_dataset
from .metrics import MetricReport, TunedInversion, calibrate_id_threshold, evaluate_suite
from .perception import WeightedMask, content_hash
from .specs import TmtOffset, offset_diff
from .toydata import (
    DecadeDataset,
    jitter_identity,
    make_toy_corpus,
    pooled_dataset,
    render_styled,
    sample_identity,
)
from .toymodels import (
    load_toy_classifier,
    load_toy_embedder,
    save_model,
    train_toy_classifier,
    train_toy_embedder,
)
from .training import train_family, train_generator

log = logging.getLogger(__name__)


# -- data -------------------------------------------------------------------------


def prepare_data(cfg: ExperimentConfig, root: Path) -> Path:
    data_dir = Path(root) / "data"
    digest = art.digest_obj({
        "decades": cfg.decades, "n": cfg.n_per_decade, "res": cfg.resolution,
        "data_seed": cfg.data_seed, "per_decade_test": cfg.per_decade_test,
    })
    if art.is_complete(data_dir, digest):
        log.info("data already prepared; skipping")
        return data_dir
    corpus = make_toy_corpus(cfg.decades, cfg.n_per_decade, cfg.resolution,
                             cfg.data_seed)
    records = []
    data_dir.mkdir(parents=True, exist_ok=True)
    for decade, ds in corpus.items():
        path = data_dir / f"{decade}.npz"
        buf = _npz_bytes(images=ds.images, class_maps=ds.class_maps)
        atomic_write_bytes(path, buf)
        for i in range(len(ds)):
            records.append(ManifestRecord(
                path=f"{decade}.npz#{i}", decade=decade,
                sha256=content_hash(ds.images[i])))
    manifest = split_dataset(DatasetManifest(records), cfg.per_decade_test,
                             cfg.data_seed)
    manifest.save(data_dir / "manifest.tsv")
    record = art.RunArtifact.new(digest)
    record.add_file("manifest", data_dir / "manifest.tsv", data_dir)
    for decade in corpus:
        record.add_file(f"decade_{decade}", data_dir / f"{decade}.npz", data_dir)
    record.save(data_dir)
    return data_dir


def _npz_bytes(**arrays) -> bytes:
    import io

    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def load_corpus(root: Path) -> tuple[dict[int, DecadeDataset], DatasetManifest]:
    data_dir = Path(root) / "data"
    manifest = DatasetManifest.load(data_dir / "manifest.tsv")
    corpus = {}
    for decade in manifest.decades():
        blob = np.load(data_dir / f"{decade}.npz")
        corpus[decade] = DecadeDataset(decade, blob["images"], blob["class_maps"], [])
    return corpus, manifest


def split_corpus(corpus: dict[int, DecadeDataset], manifest: DatasetManifest,
                 split: str) -> dict[int, DecadeDataset]:
    out = {}
    for decade, ds in corpus.items():
        idx = [int(r.path.split("#")[1]) for r in manifest.records
               if r.decade == decade and r.split == split]
        out[decade] = DecadeDataset(decade, ds.images[idx], ds.class_maps[idx], [])
    return out


# -- backends ---------------------------------------------------------------------


def train_backends(cfg: ExperimentConfig, root: Path) -> Path:
    backends_dir = Path(root) / "backends"
    digest = art.digest_obj({
        "embedder_steps": cfg.embedder_steps, "classifier_steps": cfg.classifier_steps,
        "decades": cfg.decades, "res": cfg.resolution, "seed": cfg.seed,
        "id_threshold": cfg.id_threshold,
    })
    if art.is_complete(backends_dir, digest):
        log.info("backends already trained; skipping")
        return backends_dir
    corpus, manifest = load_corpus(root)
    train_split = split_corpus(corpus, manifest, "train")

    log.info("training toy embedder (%d steps)", cfg.embedder_steps)
    embedder = train_toy_embedder(resolution=cfg.resolution, steps=cfg.embedder_steps,
                                  seed=cfg.seed + 11, decades=cfg.decades)
    save_model(embedder, backends_dir / "embedder.pt")

    log.info("training toy decade classifier (%d steps)", cfg.classifier_steps)
    classifier = train_toy_classifier(train_split, steps=cfg.classifier_steps,
                                      seed=cfg.seed + 13)
    save_model(classifier, backends_dir / "classifier.pt",
               meta={"decades": sorted(train_split)})

    threshold = cfg.id_threshold
    if threshold is None:
        threshold = _calibrate_threshold(cfg, embedder)
    atomic_write_json(backends_dir / "calibration.json", {
        "id_threshold": threshold,
        "note": "desk-profile cosine threshold calibrated on the toy corpus; "
                "not comparable to external verifier score scales",
    })
    record = art.RunArtifact.new(digest)
    for name in ("embedder.pt", "classifier.pt", "calibration.json"):
        record.add_file(name, backends_dir / name, backends_dir)
    record.save(backends_dir)
    return backends_dir


def _calibrate_threshold(cfg: ExperimentConfig, embedder) -> float:
    rng = np.random.default_rng(cfg.seed + 17)
    same, cross = [], []
    idents = [sample_identity(rng) for _ in range(32)]
    for i, ident in enumerate(idents):
        d1, d2 = rng.choice(cfg.decades, size=2)
        a, _ = render_styled(jitter_identity(ident, rng), int(d1), cfg.resolution)
        b, _ = render_styled(jitter_identity(ident, rng), int(d2), cfg.resolution)
        same.append((a, b))
        other = idents[(i + 1) % len(idents)]
        c, _ = render_styled(jitter_identity(other, rng), int(d2), cfg.resolution)
        cross.append((a, c))
    return calibrate_id_threshold(embedder, same, cross)


def load_backends(root: Path):
    backends_dir = Path(root) / "backends"
    embedder = load_toy_embedder(backends_dir / "embedder.pt")
    classifier = load_toy_classifier(backends_dir / "classifier.pt")
    calibration = json.loads((backends_dir / "calibration.json").read_text())
    return embedder, classifier, float(calibration["id_threshold"])


# -- family -----------------------------------------------------------------------


def train_family_step(cfg: ExperimentConfig, root: Path) -> Path:
    family_dir = Path(root) / "family"
    digest = art.digest_obj({"cfg": asdict(cfg)})
    if art.is_complete(family_dir, digest):
        log.info("family already trained; skipping")
        return family_dir
    spec = cfg.spec()
    corpus, manifest = load_corpus(root)
    train_split = split_corpus(corpus, manifest, "train")
    embedder, _, _ = load_backends(root)

    log.info("training parent from scratch (%d iterations)", cfg.parent_iterations)
    pooled = pooled_dataset(train_split)
    parent_cfg = cfg.train_config(cfg.parent_iterations)
    parent_res = train_generator(spec, pooled, parent_cfg)
    _write_records(family_dir / "logs" / "parent_log.jsonl", parent_res.records)

    log.info("fine-tuning %d children (%d iterations each)",
             len(train_split), cfg.child_iterations)
    child_cfg = cfg.train_config(cfg.child_iterations, seed_offset=1)
    family = train_family(parent_res.params, train_split, child_cfg, spec,
                          embedder=embedder, d_state=parent_res.d_state,
                          logdir=family_dir / "logs")
    save_family(family_dir, family)
    torch.save(parent_res.d_state, family_dir / "discriminator.pt")

    record = art.RunArtifact.new(digest)
    record.add_tree("family", family_dir, family_dir)
    record.save(family_dir)
    return family_dir


def _write_records(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = "".join(json.dumps(r) + "\n" for r in records)
    atomic_write_bytes(path, lines.encode())


# -- per-image flow -----------------------------------------------------------------


@dataclass
class TestImage:
    image_id: str
    image: np.ndarray
    class_map: np.ndarray
    decade: int


def test_images(root: Path, limit: int | None = None) -> list[TestImage]:
    corpus, manifest = load_corpus(root)
    out = []
    for r in manifest.by_split("test"):
        decade = r.decade
        idx = int(r.path.split("#")[1])
        ds = corpus[decade]
        out.append(TestImage(image_id=f"{decade}_{idx}", image=ds.images[idx],
                             class_map=ds.class_maps[idx], decade=decade))
    out.sort(key=lambda t: t.image_id)
    return out[:limit] if limit else out


def invert_image(cfg: ExperimentConfig, root: Path, item: TestImage,
                 family: GeneratorFamily) -> InversionResult:
    inv_dir = Path(root) / "inv" / item.image_id
    spec = family.spec
    if art.is_complete(inv_dir, _inv_digest(cfg, item)):
        return load_inversion(inv_dir, spec)
    inv = project(item.image, family.child(item.decade), spec, cfg.project_steps,
                  cfg=cfg.project_config())
    inv = InversionResult(code=inv.code, source_decade=item.decade, trace=inv.trace,
                          converged=inv.converged, best_total=inv.best_total,
                          diagnostics=inv.diagnostics)
    _save_inv_record(cfg, root, item, inv, spec)
    return inv


def tune_image(cfg: ExperimentConfig, root: Path, item: TestImage,
               family: GeneratorFamily, inv: InversionResult,
               embedder) -> TmtOffset:
    off_dir = Path(root) / "offsets" / item.image_id
    digest = art.digest_obj({"image": item.image_id, "cfg": asdict(cfg.tmt_config())})
    spec = family.spec
    if art.is_complete(off_dir, digest):
        offset, _ = load_offset(off_dir, expected_spec=spec)
        return offset
    mask = WeightedMask.from_class_map(item.class_map, cfg.mask_weights)
    child = family.child(item.decade)
    result = tune_pivotal(item.image, inv, child, mask, embedder,
                          cfg=cfg.tmt_config(), spec=spec)
    offset = offset_diff(result.params, child, spec, base_decade=item.decade)
    save_offset(off_dir, offset, spec)
    _write_records(off_dir / "tune_trace.jsonl",
                   [{"step": s, "perceptual": p, "pixel": x, "id": i}
                    for s, p, x, i in result.trace])
    record = art.RunArtifact.new(digest)
    record.add_tree("offset", off_dir, off_dir)
    record.save(off_dir)
    return offset


def transform_image(cfg: ExperimentConfig, root: Path, item: TestImage,
                    family: GeneratorFamily, inv: InversionResult,
                    offset: TmtOffset) -> dict[int, np.ndarray]:
    out_dir = Path(root) / "transforms" / item.image_id
    spec = family.spec
    images = transform_across_decades(inv, offset, family, list(family.decades))
    out_dir.mkdir(parents=True, exist_ok=True)
    for d, img in images.items():
        atomic_write_bytes(out_dir / f"{d}.npy", _npy_bytes(img))
    return images


def _npy_bytes(arr: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def invert_many(cfg: ExperimentConfig, root: Path, items: list[TestImage],
                family: GeneratorFamily) -> dict[str, InversionResult]:
    """Resumable bulk inversion: pending images are batch-projected per
    source decade (equivalent to independent runs, far fewer passes)."""
    from .inversion import project_many

    spec = family.spec
    out: dict[str, InversionResult] = {}
    pending: dict[int, list[TestImage]] = {}
    for item in items:
        inv_dir = Path(root) / "inv" / item.image_id
        digest = _inv_digest(cfg, item)
        if art.is_complete(inv_dir, digest):
            out[item.image_id] = load_inversion(inv_dir, spec)
        else:
            pending.setdefault(item.decade, []).append(item)
    for decade, group in sorted(pending.items()):
        log.info("projecting %d images of decade %d", len(group), decade)
        results = project_many([g.image for g in group], family.child(decade),
                               spec, cfg.project_steps, cfg=cfg.project_config())
        for item, inv in zip(group, results):
            inv = InversionResult(code=inv.code, source_decade=decade,
                                  trace=inv.trace, converged=inv.converged,
                                  best_total=inv.best_total,
                                  diagnostics=inv.diagnostics)
            _save_inv_record(cfg, root, item, inv, spec)
            out[item.image_id] = inv
    return out


def _inv_digest(cfg: ExperimentConfig, item: TestImage) -> str:
    return art.digest_obj({"image": item.image_id, "steps": cfg.project_steps,
                           "cfg": asdict(cfg.project_config())})


def _save_inv_record(cfg, root, item, inv, spec) -> None:
    inv_dir = Path(root) / "inv" / item.image_id
    save_inversion(inv_dir, inv, spec)
    record = art.RunArtifact.new(_inv_digest(cfg, item))
    record.add_file("code", inv_dir / "code.bin", inv_dir)
    record.add_file("meta", inv_dir / "inversion.json", inv_dir)
    record.save(inv_dir)


def process_test_images(cfg: ExperimentConfig, root: Path, limit: int | None = None
                        ) -> dict[str, TunedInversion]:
    """Invert + tune every test image (resumable per image)."""
    family = load_family(Path(root) / "family")
    embedder, _, _ = load_backends(root)
    items = test_images(root, limit=limit)
    inversions = invert_many(cfg, root, items, family)
    tuned: dict[str, TunedInversion] = {}
    for item in items:
        inv = inversions[item.image_id]
        offset = tune_image(cfg, root, item, family, inv, embedder)
        tuned[item.image_id] = TunedInversion(inversion=inv, offset=offset,
                                              source_decade=item.decade)
    return tuned


# -- evaluation / gallery / viz ------------------------------------------------------


def evaluate_step(cfg: ExperimentConfig, root: Path, limit: int | None = None
                  ) -> MetricReport:
    family = load_family(Path(root) / "family")
    embedder, classifier, threshold = load_backends(root)
    corpus, manifest = load_corpus(root)
    test_split = split_corpus(corpus, manifest, "test")
    tuned = process_test_images(cfg, root, limit=limit)
    items = {t.image_id: (t.image, t.decade) for t in test_images(root, limit=limit)}
    real_by_decade = {d: ds.images for d, ds in test_split.items()}
    report = evaluate_suite(family, tuned, items, classifier, embedder,
                            real_by_decade, id_threshold=threshold)
    atomic_write_json(Path(root) / "report.json", report.to_dict())
    return report


def gallery_step(cfg: ExperimentConfig, root: Path, limit: int = 12) -> Path:
    root = Path(root)
    family = load_family(root / "family")
    decades = list(family.decades)
    rows = []
    for item in test_images(root, limit=limit):
        t_dir = root / "transforms" / item.image_id
        transforms = {}
        for d in decades:
            p = t_dir / f"{d}.npy"
            transforms[d] = np.load(p) if p.exists() else None
        rows.append(GalleryRow(label=item.image_id, input_image=item.image,
                               transforms=transforms))
    metrics_text = None
    report_path = root / "report.json"
    if report_path.exists():
        blob = json.loads(report_path.read_text())
        metrics_text = json.dumps(blob.get("averages", {}), indent=2)
    return emit_gallery(rows, decades, root / "gallery.html",
                        metrics_text=metrics_text)


def viz_step(cfg: ExperimentConfig, root: Path) -> Path:
    from .weightspace import (
        family_weight_points,
        offset_direction_similarity,
        pca_embed_weights,
    )

    root = Path(root)
    family = load_family(root / "family")
    offsets = {}
    off_root = root / "offsets"
    if off_root.exists():
        for sub in sorted(off_root.iterdir()):
            if (sub / "manifest.json").exists():
                offset, _ = load_offset(sub, expected_spec=family.spec)
                offsets[sub.name] = offset
    points = family_weight_points(family, tuned=offsets)
    coords = pca_embed_weights(points)
    payload = {
        "points": [{"label": p.label, "xy": list(c)}
                   for p, c in zip(points, coords)],
        "offset_similarity": [],
    }
    for name, offset in offsets.items():
        rep = offset_direction_similarity(offset, family)
        payload["offset_similarity"].append({
            "offset": name,
            "delta_vs_decade": {str(k): v for k, v in rep.delta_vs_decade.items()},
            "decade_pairwise": {f"{a}-{b}": v
                                for (a, b), v in rep.decade_pairwise.items()},
            "histogram": rep.histogram(),
        })
    out = root / "weightspace.json"
    atomic_write_json(out, payload)
    return out
