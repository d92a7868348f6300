"""Command-line interface.

Exit codes: 0 on success, 1 on user error (bad arguments, missing inputs,
invalid config), 2 on numeric or internal failure.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .artifacts import artifact_root
from .clustering import FaceNode, cluster_faces
from .config import ExperimentConfig
from .perception import BackendNotConfigured, EmbeddingVector, unit_normalize
from .specs import FrozenBlockViolation, SpecMismatchError, SynthesisNumericError


class UserError(click.ClickException):
    exit_code = 1


def _load_config(config_path: str | None, seed: int | None) -> ExperimentConfig:
    try:
        cfg = (ExperimentConfig.from_file(config_path) if config_path
               else ExperimentConfig())
    except (json.JSONDecodeError, TypeError, ValueError, FileNotFoundError) as exc:
        raise UserError(f"invalid config: {exc}")
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="experiment config (JSON)")(fn)
    fn = click.option("--seed", type=int, default=None, help="override config seed")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None,
                      help="artifact root (default: $DECADEGAN_ARTIFACTS or ./artifacts)")(fn)
    return fn


@click.group()
def cli():
    """Per-decade generator families with transferable weight-offset tuning."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@cli.command("train-family")
@common_options
def cmd_train_family(config_path, seed, out_dir):
    """Prepare toy data, train backends, the parent, and all decade children."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    cfg.to_file(root / "config.json")
    pipeline.prepare_data(cfg, root)
    pipeline.train_backends(cfg, root)
    pipeline.train_family_step(cfg, root)
    click.echo(f"family ready under {root / 'family'}")


@cli.command("invert")
@common_options
@click.option("--image-id", default=None, help="test image id (e.g. 1920_3)")
@click.option("--limit", type=int, default=None, help="invert first N test images")
def cmd_invert(config_path, seed, out_dir, image_id, limit):
    """Project test images into their source-decade generator."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    from .family import load_family

    family = load_family(root / "family")
    items = _select_items(root, image_id, limit)
    for item in items:
        inv = pipeline.invert_image(cfg, root, item, family)
        click.echo(f"{item.image_id}: best total loss {inv.best_total:.5f}")


@cli.command("tune")
@common_options
@click.option("--image-id", default=None)
@click.option("--limit", type=int, default=None)
def cmd_tune(config_path, seed, out_dir, image_id, limit):
    """Run transferable model tuning for inverted images."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    from .family import load_family

    family = load_family(root / "family")
    embedder, _, _ = pipeline.load_backends(root)
    for item in _select_items(root, image_id, limit):
        inv = pipeline.invert_image(cfg, root, item, family)
        pipeline.tune_image(cfg, root, item, family, inv, embedder)
        click.echo(f"{item.image_id}: offset saved")


@cli.command("transform")
@common_options
@click.option("--image-id", default=None)
@click.option("--limit", type=int, default=None)
def cmd_transform(config_path, seed, out_dir, image_id, limit):
    """Re-synthesize tuned identities in every family decade."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    from .family import load_family

    family = load_family(root / "family")
    embedder, _, _ = pipeline.load_backends(root)
    for item in _select_items(root, image_id, limit):
        inv = pipeline.invert_image(cfg, root, item, family)
        offset = pipeline.tune_image(cfg, root, item, family, inv, embedder)
        images = pipeline.transform_image(cfg, root, item, family, inv, offset)
        click.echo(f"{item.image_id}: transforms for decades {sorted(images)}")


@cli.command("evaluate")
@common_options
@click.option("--limit", type=int, default=None, help="evaluate first N test images")
def cmd_evaluate(config_path, seed, out_dir, limit):
    """Compute the full metric suite over the test split."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    report = pipeline.evaluate_step(cfg, root, limit=limit)
    click.echo(report.table())
    click.echo(f"report written to {root / 'report.json'}")


@cli.command("cluster")
@common_options
@click.option("--faces", "faces_path", type=click.Path(exists=True), required=True,
              help="CSV face table: face_id,image_id,e0..eN")
@click.option("--references", "refs_path", type=click.Path(exists=True), default=None,
              help="optional CSV of reference face ids (one per line)")
@click.option("--epsilon", type=float, default=1.0, show_default=True)
@click.option("--alpha", type=float, default=3.0, show_default=True)
def cmd_cluster(config_path, seed, out_dir, faces_path, refs_path, epsilon, alpha):
    """Cluster a face table into identities by maximal cliques."""
    root = artifact_root(out_dir)
    faces = _read_face_table(Path(faces_path))
    references = []
    if refs_path:
        ref_ids = {ln.strip() for ln in Path(refs_path).read_text().splitlines()
                   if ln.strip()}
        references = [f for f in faces if f.face_id in ref_ids]
    result, graph = cluster_faces(faces, epsilon=epsilon, alpha=alpha,
                                  references=references)
    out = root / "clusters.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "clusters": [sorted(c) for c in result.clusters],
        "assigned": sorted(result.assigned) if result.assigned else None,
        "removed_outliers": result.removed_outliers,
    }
    out.write_text(json.dumps(payload, indent=2))
    audit = root / "cluster_audit.jsonl"
    with open(audit, "w") as f:
        for rej in graph.rejected:
            f.write(json.dumps({"event": "edge_rejected", **rej}) + "\n")
        for face in result.removed_outliers:
            f.write(json.dumps({"event": "outlier_removed", "face_id": face}) + "\n")
    click.echo(f"{len(result.clusters)} clusters -> {out}")


@cli.command("viz")
@common_options
def cmd_viz(config_path, seed, out_dir):
    """Emit weight-space PCA coordinates and offset similarity histograms."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    out = pipeline.viz_step(cfg, root)
    click.echo(f"weight-space diagnostics -> {out}")


@cli.command("gallery")
@common_options
@click.option("--limit", type=int, default=12, show_default=True)
def cmd_gallery(config_path, seed, out_dir, limit):
    """Build the static HTML gallery of transforms."""
    cfg = _load_config(config_path, seed)
    root = artifact_root(out_dir)
    out = pipeline.gallery_step(cfg, root, limit=limit)
    click.echo(f"gallery -> {out}")


def _select_items(root: Path, image_id: str | None, limit: int | None):
    items = pipeline.test_images(root, limit=None)
    if image_id is not None:
        matches = [t for t in items if t.image_id == image_id]
        if not matches:
            raise UserError(f"unknown image id {image_id!r}")
        return matches
    return items[:limit] if limit else items


def _read_face_table(path: Path) -> list[FaceNode]:
    faces = []
    lines = path.read_text().splitlines()
    if not lines:
        return faces
    start = 1 if lines[0].lower().startswith("face_id") else 0
    for ln in lines[start:]:
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) < 3:
            raise UserError(f"malformed face table row: {ln!r}")
        vec = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        faces.append(FaceNode(face_id=parts[0], image_id=parts[1],
                              embedding=unit_normalize(vec)))
    return faces


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code if isinstance(exc, UserError) else 1
    except click.Abort:
        return 1
    except (FileNotFoundError, KeyError, SpecMismatchError, ValueError,
            BackendNotConfigured) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SynthesisNumericError, FrozenBlockViolation, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
