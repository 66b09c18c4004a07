"""Command-line interface.

Subcommand groups mirror the toolkit stages: synth, citymodel, georeg,
pose, render, extract, dataset, plus `serve` for the annotation service.
"""

from __future__ import annotations

import json
import math
import sys
from collections import defaultdict
from pathlib import Path

import click
import numpy as np

from . import georeg as georeg_mod
from .dataset import (
    SplitSpec,
    annotation_count_stats,
    build_manifest,
    compute_sil,
    load_quality_list,
    load_records,
    split_random,
    split_spatial,
)
from .extract import (
    SurfaceSegment,
    plane_occurrence,
    polygon_to_segment_array,
    segment_surfaces,
    segments_from_json,
    segments_to_json,
    extract_vps,
    visible_segment_areas,
    vps_to_json,
)
from .geometry import CameraPose, PerspectiveIntrinsics
from .imgio import read_depth_pfm, read_rgb_png, write_rgb_png
from .mesh import DEFAULT_MERGE_DISTANCE, build_adjacency, load_mesh, save_mesh, terrain_elevation_at
from .pose import init_pose, load_correspondences, solve_pose
from .render import RenderConfig, render_cad_view, render_viewpoint_products
from .synth import SceneSpec, generate_city, synth_panorama


def load_pose_file(path) -> CameraPose:
    with open(path, "r", encoding="utf-8") as fh:
        return CameraPose.from_dict(json.load(fh))


def _segments_for(mesh, path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        segs = segments_from_json(fh.read(), mesh)
    return polygon_to_segment_array(segs, mesh.n_polygons)


@click.group()
def main():
    """City CAD / panorama alignment toolkit."""


# --------------------------------------------------------------------------
# synth


@main.group()
def synth():
    """Synthetic test fixtures."""


@synth.command("city")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-buildings", type=int, default=5, show_default=True)
@click.option("--area", type=float, default=10000.0, show_default=True, help="m^2")
@click.option("--height-min", type=float, default=6.0, show_default=True)
@click.option("--height-max", type=float, default=20.0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="output OBJ")
@click.option("--labels-out", type=click.Path(), default=None, help="ground-truth segments JSON")
def synth_city(seed, n_buildings, area, height_min, height_max, out, labels_out):
    spec = SceneSpec(seed=seed, n_buildings=n_buildings, area=area, height_range=(height_min, height_max))
    mesh, labels = generate_city(spec)
    save_mesh(mesh, out)
    click.echo(f"wrote {out}: {mesh.n_polygons} polygons, {len(mesh.vertices)} vertices")
    if labels_out:
        groups = defaultdict(list)
        for pi, lab in enumerate(labels.tolist()):
            groups[lab].append(pi)
        segs = [
            SurfaceSegment(id=k, polygon_ids=np.asarray(v), mean_normal=np.array([0.0, 0.0, 1.0]), area=0.0)
            for k, v in sorted(groups.items())
        ]
        Path(labels_out).write_text(segments_to_json(segs, {"source": "generator ground truth"}))
        click.echo(f"wrote {labels_out}: {len(segs)} segments")


@synth.command("pano")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--segments", "segments_path", type=click.Path(exists=True), required=True)
@click.option("--pose", "pose_path", type=click.Path(exists=True), required=True)
@click.option("--width", type=int, default=1024, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def synth_pano(mesh_path, segments_path, pose_path, width, out):
    mesh = load_mesh(mesh_path)
    seg = _segments_for(mesh, segments_path)
    pano = synth_panorama(mesh, seg, load_pose_file(pose_path), width=width)
    write_rgb_png(out, pano)
    click.echo(f"wrote {out} ({pano.shape[1]}x{pano.shape[0]})")


# --------------------------------------------------------------------------
# citymodel


@main.group()
def citymodel():
    """City mesh queries."""


@citymodel.command("elevation")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--x", type=float, required=True)
@click.option("--y", type=float, required=True)
def citymodel_elevation(mesh_path, x, y):
    z = terrain_elevation_at(load_mesh(mesh_path), x, y)
    click.echo(f"{z:.6f}")


# --------------------------------------------------------------------------
# georeg


@main.group()
def georeg():
    """CAD <-> geodetic deformation field."""


@georeg.command("fit")
@click.option("--pairs", "pairs_path", type=click.Path(exists=True), required=True)
@click.option("--cell", type=float, default=None, help="grid spacing (m); default bbox diag / 32")
@click.option("--lambda-grid", "lambda_grid", default="0.01,0.1,1,10,100", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def georeg_fit(pairs_path, cell, lambda_grid, out):
    """Fit the field; lambda is chosen by leave-one-out cross-validation."""
    pairs, tangent = georeg_mod.load_pairs_csv(pairs_path)
    grid = georeg_mod.GridSpec.from_points(np.stack([p.x_cad for p in pairs]), cell=cell)
    candidates = [float(s) for s in lambda_grid.split(",") if s]
    lam, errors = georeg_mod.select_lambda_cv(pairs, grid, candidates)
    for c, e in zip(candidates, errors):
        click.echo(f"lambda {c:g}: cv error {e:.4f} m")
    field = georeg_mod.fit_field(pairs, grid, lam)
    field.tangent_origin = tangent
    field.save(out)
    click.echo(f"wrote {out} (lambda {lam:g}, grid {grid.nx}x{grid.ny}, cell {grid.cell:.2f} m)")


@georeg.command("warp")
@click.option("--field", "field_path", type=click.Path(exists=True), required=True)
@click.option("--x", type=float, required=True)
@click.option("--y", type=float, required=True)
def georeg_warp(field_path, x, y):
    out = georeg_mod.warp(georeg_mod.DeformationField.load(field_path), np.array([x, y]))
    click.echo(f"{out[0]:.6f} {out[1]:.6f}")


@georeg.command("invert")
@click.option("--field", "field_path", type=click.Path(exists=True), required=True)
@click.option("--x", type=float, required=True)
@click.option("--y", type=float, required=True)
def georeg_invert(field_path, x, y):
    out = georeg_mod.invert_warp(georeg_mod.DeformationField.load(field_path), np.array([x, y]))
    click.echo(f"{out[0]:.6f} {out[1]:.6f}")


# --------------------------------------------------------------------------
# pose


@main.group()
def pose():
    """Per-panorama pose refinement."""


@pose.command("solve")
@click.option("--pano", "pano_id", default=None, help="viewpoint id (defaults to the corr file's)")
@click.option("--corr", "corr_path", type=click.Path(exists=True), required=True)
@click.option("--field", "field_path", type=click.Path(exists=True), default=None)
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), default=None)
@click.option("--init", "init_path", type=click.Path(exists=True), default=None, help="initial pose JSON")
@click.option("--lat", type=float, default=None)
@click.option("--lon", type=float, default=None)
@click.option("--azimuth-deg", type=float, default=None)
@click.option("--out", type=click.Path(), required=True)
def pose_solve(pano_id, corr_path, field_path, mesh_path, init_path, lat, lon, azimuth_deg, out):
    """Refine a pose from annotated correspondences.

    The initial pose comes from --init, or from geotags (--lat/--lon/
    --azimuth-deg or the corr file metadata) inverted through the field and
    the terrain elevation.
    """
    file_id, corr, meta = load_correspondences(corr_path)
    pano_id = pano_id or file_id or "pano"
    if init_path:
        start = load_pose_file(init_path)
    else:
        lat = lat if lat is not None else meta.get("lat")
        lon = lon if lon is not None else meta.get("lon")
        az = azimuth_deg if azimuth_deg is not None else meta.get("azimuth_deg", 0.0)
        if lat is None or lon is None or not field_path or not mesh_path:
            raise click.UsageError(
                "need --init, or --lat/--lon (or corr metadata) with --field and --mesh"
            )
        start = init_pose(
            (float(lat), float(lon)),
            math.radians(float(az)),
            georeg_mod.DeformationField.load(field_path),
            load_mesh(mesh_path),
        )
    solution = solve_pose(start, corr)
    doc = solution.to_dict()
    doc["pano_id"] = pano_id
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    med = float(np.median(solution.residuals_deg))
    click.echo(
        f"wrote {out}: median residual {med:.4f} deg, "
        f"{'converged' if solution.converged else 'NOT converged'} "
        f"in {solution.iterations} iterations"
    )


# --------------------------------------------------------------------------
# render


@main.group()
def render():
    """Per-view product rendering."""


@render.command("viewpoint")
@click.option("--pano", "pano_path", type=click.Path(exists=True), required=True)
@click.option("--pose", "pose_path", type=click.Path(exists=True), required=True)
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--segments", "segments_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pano-id", default=None, help="defaults to the pano file stem")
@click.option("--out-dir", type=click.Path(), required=True)
def render_viewpoint(pano_path, pose_path, mesh_path, segments_path, seed, pano_id, out_dir):
    mesh = load_mesh(mesh_path)
    seg = _segments_for(mesh, segments_path)
    pano = read_rgb_png(pano_path)
    pano_id = pano_id or Path(pano_path).stem
    render_viewpoint_products(
        mesh, seg, pano, load_pose_file(pose_path), seed, pano_id=pano_id, out_dir=out_dir
    )
    click.echo(f"wrote 8 view product sets for {pano_id} under {out_dir}")


# --------------------------------------------------------------------------
# extract


@main.group()
def extract():
    """Holistic ground-truth extraction."""


@extract.command("segments")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--max-dihedral-deg", type=float, default=30.0, show_default=True)
@click.option("--merge-distance", type=float, default=DEFAULT_MERGE_DISTANCE, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def extract_segments(mesh_path, max_dihedral_deg, merge_distance, out):
    mesh = load_mesh(mesh_path)
    adjacency = build_adjacency(mesh, merge_distance)
    segs = segment_surfaces(mesh, adjacency, max_dihedral_deg)
    Path(out).write_text(
        segments_to_json(segs, {"max_dihedral_deg": max_dihedral_deg, "merge_distance": merge_distance})
    )
    click.echo(f"wrote {out}: {len(segs)} segments over {mesh.n_polygons} polygons")


@extract.command("vps")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--segments", "segments_path", type=click.Path(exists=True), required=True)
@click.option("--pose", "pose_path", type=click.Path(exists=True), required=True)
@click.option("--yaw", type=float, default=0.0, show_default=True, help="degrees")
@click.option("--pitch", type=float, default=0.0, show_default=True, help="degrees")
@click.option("--fov", type=float, default=90.0, show_default=True)
@click.option("--size", type=int, default=512, show_default=True)
@click.option("--eps-deg", type=float, default=5.0, show_default=True)
@click.option("--min-pts", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def extract_vps_cmd(mesh_path, segments_path, pose_path, yaw, pitch, fov, size, eps_deg, min_pts, out):
    mesh = load_mesh(mesh_path)
    with open(segments_path, "r", encoding="utf-8") as fh:
        segs = segments_from_json(fh.read(), mesh)
    seg_array = polygon_to_segment_array(segs, mesh.n_polygons)
    cam = load_pose_file(pose_path)
    intr = PerspectiveIntrinsics(
        fov_deg=fov, width=size, height=size, yaw=math.radians(yaw), pitch=math.radians(pitch)
    )
    layer = render_cad_view(mesh, seg_array, RenderConfig(intrinsics=intr, pose=cam)).segment_id
    areas = visible_segment_areas([layer])
    vps = extract_vps(segs, areas, cam, intr, eps_deg=eps_deg, min_pts=min_pts)
    Path(out).write_text(vps_to_json(vps))
    click.echo(f"wrote {out}: {len(vps)} vanishing points")


@extract.command("occurrence")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--segments", "segments_path", type=click.Path(exists=True), required=True)
@click.option("--poses", "poses_path", type=click.Path(exists=True), required=True,
              help="JSON list of poses")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--min-pixels", type=int, default=50, show_default=True)
@click.option("--size", type=int, default=512, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def extract_occurrence(mesh_path, segments_path, poses_path, seed, min_pixels, size, out):
    mesh = load_mesh(mesh_path)
    with open(segments_path, "r", encoding="utf-8") as fh:
        segs = segments_from_json(fh.read(), mesh)
    with open(poses_path, "r", encoding="utf-8") as fh:
        poses = [CameraPose.from_dict(d) for d in json.load(fh)]
    occ = plane_occurrence(segs, mesh, poses, min_pixels=min_pixels, seed=seed, size=size)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(occ, fh, indent=1)
    click.echo(f"wrote {out}: occurrence of {len(occ['counts'])} segments over {len(poses)} panoramas")


# --------------------------------------------------------------------------
# dataset


@main.group()
def dataset():
    """Dataset bookkeeping."""


@dataset.command("split")
@click.option("--records", "records_path", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice(["random", "spatial"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--fractions", default="0.8,0.1,0.1", show_default=True)
@click.option("--spatial-cell", type=float, default=200.0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def dataset_split(records_path, kind, seed, fractions, spatial_cell, out):
    records = load_records(records_path)
    fr = tuple(float(s) for s in fractions.split(","))
    spec = SplitSpec(kind=kind, seed=seed, fractions=fr, spatial_cell=spatial_cell)
    labels = split_random(records, spec) if kind == "random" else split_spatial(records, spec)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(labels, fh, indent=1)
    sizes = {name: sum(1 for v in labels.values() if v == name) for name in ("train", "valid", "test")}
    click.echo(f"wrote {out}: {sizes}")


@dataset.command("manifest")
@click.option("--records", "records_path", type=click.Path(exists=True), required=True)
@click.option("--products-dir", type=click.Path(exists=True), required=True)
@click.option("--splits", "splits_path", type=click.Path(exists=True), default=None)
@click.option("--quality-list", "quality_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
def dataset_manifest(records_path, products_dir, splits_path, quality_path, out):
    records = load_records(records_path)
    labels = None
    if splits_path:
        with open(splits_path, "r", encoding="utf-8") as fh:
            labels = json.load(fh)
    quality = load_quality_list(quality_path) if quality_path else None
    manifest = build_manifest(records, products_dir, labels=labels, quality_ids=quality)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    click.echo(
        f"wrote {out}: {manifest['n_entries']} entries, {len(manifest['missing'])} missing, "
        f"quality pass ratio {manifest['quality_pass_ratio']:.3f}"
    )


@dataset.command("stats")
@click.option("--records", "records_path", type=click.Path(exists=True), required=True)
def dataset_stats(records_path):
    stats = annotation_count_stats(load_records(records_path))
    click.echo(json.dumps(stats, indent=1, sort_keys=True))


@dataset.command("sil")
@click.option("--pred", type=click.Path(exists=True), required=True, help="predicted depth PFM")
@click.option("--gt", type=click.Path(exists=True), required=True, help="ground-truth depth PFM")
def dataset_sil(pred, gt):
    value = compute_sil(read_depth_pfm(pred), read_depth_pfm(gt))
    click.echo(f"{value:.6f}")


# --------------------------------------------------------------------------
# serve


@main.command("serve")
@click.option("--data-dir", type=click.Path(), required=True)
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--field", "field_path", type=click.Path(exists=True), default=None)
@click.option("--panos", "pano_dir", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
def serve(data_dir, mesh_path, field_path, pano_dir, host, port):
    """Run the annotation service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(
        ServiceConfig(data_dir=data_dir, mesh_path=mesh_path, field_path=field_path, pano_dir=pano_dir)
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
