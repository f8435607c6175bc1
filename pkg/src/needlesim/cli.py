"""Command-line front end: a thin HTTP client of the service endpoints.

Without --server each command spins the ASGI app in-process, so the full
pipeline works offline while exercising the exact same HTTP surface a
remote deployment exposes. All outputs land on the filesystem and are
reproducible from the flags and seeds alone.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx


def _call(server: str | None, method: str, path: str, payload=None, params=None):
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            r = client.request(method, path, json=payload, params=params)
    else:
        from .service.app import create_app

        async def go():
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport, timeout=None,
                                         base_url="http://needlesim.local") as client:
                return await client.request(method, path, json=payload, params=params)

        r = asyncio.run(go())
    if r.status_code >= 400:
        try:
            err = r.json()
        except ValueError:
            err = {"error": "HTTPError", "message": r.text}
        click.echo(json.dumps(err), err=True)
        sys.exit(1)
    return r.json()


def _emit(obj) -> None:
    click.echo(json.dumps(obj, indent=2))


server_option = click.option("--server", default=None, metavar="URL",
                             help="Remote service URL; default runs in-process.")


@click.group()
def main():
    """Needle-insertion haptic simulator pipeline."""


@main.command()
@server_option
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--name", default="phantom", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--spec", "spec_file", type=click.Path(exists=True), default=None,
              help="Phantom geometry JSON; defaults to the built-in patient.")
@click.option("--slab", default=None,
              help="Layered phantom instead: LABEL:MM,LABEL:MM,...")
def phantom(server, out_dir, name, seed, spec_file, slab):
    """Generate a synthetic patient volume with ground-truth labels."""
    payload = {"out_dir": out_dir, "name": name, "seed": seed}
    if spec_file:
        with open(spec_file) as fh:
            payload["spec"] = json.load(fh)
    if slab:
        layers = []
        for part in slab.split(","):
            label, mm = part.split(":")
            layers.append([label.strip().upper(), float(mm)])
        payload["slab_layers"] = layers
    _emit(_call(server, "POST", "/phantom", payload))


@main.command()
@server_option
@click.option("--volume", required=True, help="Volume header path or id.")
@click.option("--delta-hu", type=float, default=100.0, show_default=True,
              help="Offset from the sensitive to the specific bone threshold.")
@click.option("--out", default=None, type=click.Path())
def fit(server, volume, delta_hu, out):
    """Fit bulk-tissue Gaussians and derive transfer-function thresholds."""
    _emit(_call(server, "POST", "/fit",
                {"volume": volume, "delta_hu": delta_hu, "out": out}))


@main.command()
@server_option
@click.option("--volume", required=True)
@click.option("--out", default=None, type=click.Path(), help="Paths JSONL file.")
@click.option("--max-length", type=float, default=90.0, show_default=True)
@click.option("--d-cap", type=float, default=10.0, show_default=True,
              help="Risk clearance normalization cap [mm].")
@click.option("--n-cap", type=int, default=15, show_default=True,
              help="Duct voxel count normalization cap.")
@click.option("--q-min", type=float, default=0.4, show_default=True)
def plan(server, volume, out, max_length, d_cap, n_cap, q_min):
    """Enumerate and score skin-to-duct trajectories."""
    _emit(_call(server, "POST", "/plan",
                {"volume": volume, "out": out, "max_length_mm": max_length,
                 "risk_clearance_cap_mm": d_cap, "target_hit_cap": n_cap,
                 "min_quality": q_min}))


@main.command()
@server_option
@click.option("--volume", required=True)
@click.option("--paths", "paths_file", required=True, type=click.Path(exists=True))
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--provider", type=click.Choice(["full", "partial"]), default="full",
              show_default=True)
@click.option("--step", type=float, default=0.09, show_default=True)
@click.option("--a1", "design_slope", type=float, default=0.0, show_default=True,
              help="Pre-puncture spring design slope.")
@click.option("--sigma", type=float, default=1.0, show_default=True,
              help="Degradation amplitude for the partial provider [mm].")
@click.option("--degrade-seed", type=int, default=11, show_default=True)
@click.option("--out-prefix", default=None, type=click.Path())
def steer(server, volume, paths_file, index, provider, step, design_slope,
          sigma, degrade_seed, out_prefix):
    """Steer one planned path and record its force trace."""
    _emit(_call(server, "POST", "/steer",
                {"volume": volume, "paths_file": paths_file, "path_index": index,
                 "provider": provider, "step_mm": step,
                 "design_slope": design_slope,
                 "degrade": {"sigma_mm": sigma, "seed": degrade_seed},
                 "out_prefix": out_prefix}))


@main.command()
@server_option
@click.option("--ref", "ref_npz", required=True, type=click.Path(exists=True))
@click.option("--test", "test_npz", required=True, type=click.Path(exists=True))
def compare(server, ref_npz, test_npz):
    """Compare two stored force traces of the same path."""
    _emit(_call(server, "POST", "/compare",
                {"ref_npz": ref_npz, "test_npz": test_npz}))


@main.command()
@server_option
@click.option("--volume", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--paths", "paths_file", default=None, type=click.Path(exists=True),
              help="Planned paths JSONL; planned on the fly when omitted.")
@click.option("--provider", "test_provider",
              type=click.Choice(["partial", "full"]), default="partial",
              show_default=True, help="Test arm; full reproduces the oracle run.")
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--degrade-seed", type=int, default=11, show_default=True)
@click.option("--step", type=float, default=0.09, show_default=True)
@click.option("--max-paths", type=int, default=None)
@click.option("--a1", "design_slope", type=float, default=0.0, show_default=True)
@click.option("--patient", "patient_id", default="phantom", show_default=True)
def study(server, volume, out_dir, paths_file, test_provider, sigma, degrade_seed,
          step, max_paths, design_slope, patient_id):
    """Run the reference-vs-test force error study end to end."""
    _emit(_call(server, "POST", "/study",
                {"volume": volume, "out_dir": out_dir, "paths_file": paths_file,
                 "test_provider": test_provider,
                 "degrade": {"sigma_mm": sigma, "seed": degrade_seed},
                 "step_mm": step, "max_paths": max_paths,
                 "design_slope": design_slope, "patient_id": patient_id}))


@main.command()
@server_option
@click.option("--metrics", "metrics_csv", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def report(server, metrics_csv, out_dir):
    """Emit box-plot quantile CSV and SVG plots from per-path metrics."""
    _emit(_call(server, "POST", "/report",
                {"metrics_csv": metrics_csv, "out_dir": out_dir}))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--volume", "volumes", multiple=True, type=click.Path(exists=True),
              help="Volume header(s) to preload.")
@click.option("--ui-dir", default=None, type=click.Path(),
              help="Built trainer frontend to serve under /ui.")
def serve(host, port, volumes, ui_dir):
    """Run the trainer service."""
    import uvicorn

    from .service.app import create_app
    from .service.registry import VolumeRegistry

    registry = VolumeRegistry()
    for header in volumes:
        entry = registry.load(header)
        click.echo(f"loaded {entry.volume_id}: {header}")
    uvicorn.run(create_app(registry, ui_dir=ui_dir), host=host, port=port)


if __name__ == "__main__":
    main()
