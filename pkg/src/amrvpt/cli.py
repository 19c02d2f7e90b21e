"""Command-line front end: generate, inspect, render, benchmark, serve."""

from __future__ import annotations

import sys

import click

from .bench import grid_sweep, run_matrix, write_image
from .engine import Scene
from .ingest import (SyntheticKind, SyntheticSpec, default_unit_extinction,
                     generate, load_cells, load_config, load_tf, save_cells,
                     save_tf)
from .model import CellSet
from .partitions import TransferFunction
from .transport import RenderConfig, frame_camera, frame_light, render
from .traversal import TraversalMethod

_TRAVERSALS = ["abr", "brick-kd", "brick-bvh", "grid-dda", "grid-bvh"]
_SAMPLERS = ["abr", "abr-direct", "ext-brick"]


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise click.BadParameter(f"{text!r}: expected NxMxK")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise click.BadParameter(f"{text!r}: expected NxMxK of integers")
    if min(dims) < 1:
        raise click.BadParameter(f"{text!r}: dims must be >= 1")
    return dims


def _ramp_tf(cells: CellSet) -> TransferFunction:
    lo, hi = cells.value_range()
    if hi <= lo:
        lo, hi = lo - 0.5, lo + 0.5
    pad = 0.05 * (hi - lo)
    return TransferFunction((lo - pad, hi + pad),
                            [[0.1, 0.2, 0.9, 0.0],
                             [0.9, 0.6, 0.2, 0.35],
                             [1.0, 1.0, 1.0, 0.9]],
                            default_unit_extinction(cells))


def _load_dataset(cells_path, scalars_path, tf_path):
    cells = load_cells(cells_path, scalars_path)
    tf = load_tf(tf_path) if tf_path else _ramp_tf(cells)
    return cells, tf


@click.group()
def main():
    """Volumetric path tracing lab for cell-centric AMR data."""


# ---------------------------------------------------------------------------


@main.command()
@click.argument("kind", type=click.Choice([k.value for k in SyntheticKind]))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--refine-levels", type=int, default=3, show_default=True)
@click.option("--gradient-threshold", type=float, default=0.1,
              show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Basename; writes OUT.cells, OUT.scalars, OUT.tf.yaml.")
def gen(kind, seed, refine_levels, gradient_threshold, out):
    """Generate a synthetic dataset and a starter transfer function."""
    spec = SyntheticSpec(kind=kind, seed=seed, refineLevels=refine_levels,
                         gradientThreshold=gradient_threshold)
    cells = generate(spec)
    save_cells(cells, f"{out}.cells", f"{out}.scalars")
    save_tf(_ramp_tf(cells), f"{out}.tf.yaml")
    lo, hi = cells.value_range()
    click.echo(f"{kind}: {len(cells)} cells, {cells.num_levels} levels, "
               f"bounds {tuple(int(v) for v in cells.world_lo)}.."
               f"{tuple(int(v) for v in cells.world_hi)}, "
               f"values [{lo:.4g}, {hi:.4g}]")
    click.echo(f"wrote {out}.cells, {out}.scalars, {out}.tf.yaml")


@main.command()
@click.argument("cells_path", type=click.Path(exists=True))
@click.argument("scalars_path", type=click.Path(exists=True))
@click.option("--tf", "tf_path", type=click.Path(exists=True))
@click.option("--grid-dims", default="32x32x32", show_default=True)
def build(cells_path, scalars_path, tf_path, grid_dims):
    """Build every structure and print size and memory accounting."""
    cells, tf = _load_dataset(cells_path, scalars_path, tf_path)
    dims = _parse_dims(grid_dims)
    scene = Scene(cells, tf, grid_dims=dims)
    click.echo(f"cells: {len(cells)}  levels: {cells.num_levels}")
    click.echo(f"bricks: {len(scene.bricks)}  "
               f"abrs: {len(scene.abrs.majorants)}  "
               f"grid: {dims[0]}x{dims[1]}x{dims[2]}")
    for method in TraversalMethod:
        from .sampling import SamplerKind
        sampler = (SamplerKind.ABR_DIRECT
                   if method == TraversalMethod.ABR_BVH
                   else SamplerKind.ABR_QUERY)
        nbytes = scene.structure_bytes(method, sampler)
        click.echo(f"  {method.value:10s} + {sampler.value:10s} "
                   f"{nbytes:12,d} bytes")


# shared render/bench options
def _render_options(fn):
    opts = [
        click.option("--traversal", type=click.Choice(_TRAVERSALS),
                     default=None),
        click.option("--sampler", type=click.Choice(_SAMPLERS),
                     default=None),
        click.option("--mode", type=click.Choice(["dl", "ms"]),
                     default=None),
        click.option("--spp", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--width", type=int, default=None),
        click.option("--height", type=int, default=None),
        click.option("--grid-dims", default="32x32x32", show_default=True),
        click.option("--tf", "tf_path", type=click.Path(exists=True)),
        click.option("--config", "config_path", type=click.Path(exists=True)),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _effective_config(cells, config_path, overrides) -> RenderConfig:
    if config_path:
        cfg = load_config(config_path)
    else:
        cfg = RenderConfig(spp=16, camera=frame_camera(cells),
                           light=frame_light(cells))
    fields = {k: v for k, v in overrides.items() if v is not None}
    if fields:
        # overlay raw flag strings, then re-validate the whole document
        doc = cfg.model_dump(by_alias=True)
        doc.update(fields)
        cfg = RenderConfig.model_validate(doc)
    return cfg


@main.command(name="render")
@click.argument("cells_path", type=click.Path(exists=True))
@click.argument("scalars_path", type=click.Path(exists=True))
@_render_options
@click.option("--out", required=True, type=click.Path(),
              help="Output image (.png or .ppm).")
def render_cmd(cells_path, scalars_path, traversal, sampler, mode, spp, seed,
               width, height, grid_dims, tf_path, config_path, out):
    """Render one image."""
    cells, tf = _load_dataset(cells_path, scalars_path, tf_path)
    cfg = _effective_config(cells, config_path, {
        "traversal": traversal, "sampler": sampler, "mode": mode,
        "spp": spp, "seed": seed, "width": width, "height": height})
    scene = Scene(cells, tf, grid_dims=_parse_dims(grid_dims))
    try:
        image, stats, _ = render(scene, cfg)
    except ValueError as err:
        raise click.ClickException(str(err))
    write_image(out, image)
    d = stats.as_dict()
    rays = max(d["rays"], 1)
    click.echo(f"wrote {out} ({cfg.width}x{cfg.height}, {cfg.spp} spp, "
               f"{cfg.traversal.value}/{cfg.sampler.value}/{cfg.mode})")
    click.echo(f"rays: {d['rays']}  partitions/ray: "
               f"{d['partitionsTraversed'] / rays:.2f}  nulls/ray: "
               f"{d['nullCollisions'] / rays:.3f}  samples/ray: "
               f"{d['volumeSamples'] / rays:.2f}")


@main.command()
@click.argument("cells_path", type=click.Path(exists=True))
@click.argument("scalars_path", type=click.Path(exists=True))
@click.option("--tf", "tf_path", type=click.Path(exists=True))
@click.option("--grid-dims", default="32x32x32", show_default=True)
@click.option("--spp", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Benchmark matrix CSV.")
@click.option("--sweep", "sweep_csv", type=click.Path(),
              help="Also run the grid-resolution sweep to this CSV.")
@click.option("--plot", "sweep_plot", type=click.Path(),
              help="Plot of the sweep curve (PNG).")
@click.option("--dims", "dims_text",
              default="1x1x1,8x8x8,16x16x16,32x32x32,64x64x64",
              show_default=True, help="Sweep grid sizes.")
def bench(cells_path, scalars_path, tf_path, grid_dims, spp, seed, width,
          height, out, sweep_csv, sweep_plot, dims_text):
    """Run the traversal x sampler x mode benchmark matrix."""
    cells, tf = _load_dataset(cells_path, scalars_path, tf_path)
    scene = Scene(cells, tf, grid_dims=_parse_dims(grid_dims))
    reports = run_matrix(scene, spp=spp, width=width, height=height,
                         seed=seed, out_csv=out)
    click.echo(f"wrote {out} ({len(reports)} rows)")
    for r in reports:
        status = r.skip_reason or (f"{r.rays_per_second:,.0f} rays/s  "
                                   f"parts/ray {r.mean_partitions_per_ray:.2f}"
                                   f"  nulls/ray {r.mean_null_collisions:.3f}")
        click.echo(f"  {r.method:9s} {r.sampler:10s} {r.mode}  {status}")
    if sweep_csv or sweep_plot:
        dims_list = [_parse_dims(t) for t in dims_text.split(",")]
        points = grid_sweep(scene, dims_list=dims_list, spp=spp,
                            width=width, height=height, seed=seed,
                            out_csv=sweep_csv, out_plot=sweep_plot)
        best = max(points, key=lambda p: p.rays_per_second)
        click.echo(f"sweep optimum: {best.dims} at "
                   f"{best.rays_per_second:,.0f} rays/s"
                   + (f"; wrote {sweep_csv}" if sweep_csv else ""))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--cells", "cells_path", type=click.Path(exists=True),
              help="Serve one dataset from files instead of the built-ins.")
@click.option("--scalars", "scalars_path", type=click.Path(exists=True))
@click.option("--tf", "tf_path", type=click.Path(exists=True))
@click.option("--name", default="dataset", show_default=True)
@click.option("--grid-dims", default="32x32x32", show_default=True)
@click.option("--frame-size", default="128x128", show_default=True,
              help="Streamed frame resolution WxH.")
@click.option("--target-spp", type=int, default=1024, show_default=True)
def serve(host, port, cells_path, scalars_path, tf_path, name, grid_dims,
          frame_size, target_spp):
    """Serve GET /datasets and the /stream websocket."""
    import uvicorn

    from .service import DatasetRegistry, create_app

    registry = None
    if cells_path:
        if not scalars_path:
            raise click.UsageError("--cells requires --scalars")
        cells, tf = _load_dataset(cells_path, scalars_path, tf_path)
        registry = DatasetRegistry()
        registry.register(name, cells, tf, _parse_dims(grid_dims))
    w, h = (int(p) for p in frame_size.lower().split("x"))
    app = create_app(registry=registry,
                     default_config=RenderConfig(width=w, height=h),
                     target_spp=target_spp)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
