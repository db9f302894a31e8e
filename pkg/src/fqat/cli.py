"""Command line client for the experiment service.

By default commands talk to an in-process service instance, so no server
needs to be running; point --server (or FQAT_SERVER) at a remote instance
to go over the network.  Responses are printed as JSON on stdout; failures
exit nonzero with a single machine-readable JSON error line on stderr.
"""

from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click
import httpx


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    with warnings.catch_warnings():
        # this starlette release nags about httpx2, which is not released yet
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service.app import app
    return TestClient(app)


def _die(err: dict, code: int) -> None:
    print(json.dumps({"error": err}), file=sys.stderr)
    sys.exit(code)


def _call(server: str | None, path: str, payload: dict) -> dict:
    try:
        with _client(server) as client:
            resp = client.post(path, json=payload)
            body = resp.json()
    except httpx.HTTPError as e:
        _die({"type": type(e).__name__, "message": str(e)}, 2)
    if resp.status_code != 200:
        detail = body.get("detail", body)
        if not isinstance(detail, dict) or "type" not in detail:
            detail = {"type": f"HTTP{resp.status_code}", "message": str(detail)}
        _die(detail, 1)
    return body


def _emit(body: dict) -> None:
    click.echo(json.dumps(body, indent=2))


def _read_config(config_path: str | None) -> str:
    return Path(config_path).read_text() if config_path else ""


@click.group()
@click.option("--server", envvar="FQAT_SERVER", default=None, metavar="URL",
              help="Remote service URL; default runs the service in-process.")
@click.pass_context
def main(ctx, server):
    """Desk-scale lab for flatness-oriented quantization-aware training."""
    ctx.obj = server


@main.command("generate-data")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="INI config; its [data] section is used.")
@click.option("--out", default="dataset.txt", show_default=True,
              help="Dataset file to write.")
@click.option("--output-root", default=None,
              help="Base directory for a relative --out path.")
@click.pass_obj
def generate_data(server, config_path, out, output_root):
    """Write the synthetic multi-domain dataset to a text file."""
    _emit(_call(server, "/data/generate",
                {"config": _read_config(config_path), "path": out,
                 "output_root": output_root}))


@main.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True),
              required=True, help="INI experiment config.")
@click.option("--output-root", default=None,
              help="Base directory for a relative run.output.")
@click.pass_obj
def run(server, config_path, output_root):
    """Run the (method x domain x seed) matrix; resumes completed cells."""
    _emit(_call(server, "/experiments/run",
                {"config": _read_config(config_path),
                 "output_root": output_root}))


@main.command("ablate")
@click.option("--config", "config_path", type=click.Path(exists=True),
              required=True, help="INI experiment config (methods must include fqat).")
@click.option("--output-root", default=None)
@click.option("--policies", default=None,
              help="Comma list of freeze policies; default is all five variants.")
@click.pass_obj
def ablate(server, config_path, output_root, policies):
    """Run the freeze-policy ablation matrix for fqat."""
    payload = {"config": _read_config(config_path), "output_root": output_root}
    if policies:
        payload["policies"] = [p.strip() for p in policies.split(",") if p.strip()]
    _emit(_call(server, "/experiments/ablate", payload))


@main.command("summarize")
@click.option("--output", required=True, help="Output root holding cells/.")
@click.pass_obj
def summarize(server, output):
    """Rebuild summary.csv from the persisted run files."""
    _emit(_call(server, "/experiments/summarize", {"output": output}))


@main.command("probe-landscape")
@click.option("--output", required=True, help="Output root holding cells/.")
@click.option("--cell", required=True, help="Cell key to probe.")
@click.option("--dims", default=1, show_default=True, type=click.IntRange(1, 2))
@click.option("--n-points", default=21, show_default=True)
@click.option("--radius", default=0.5, show_default=True)
@click.option("--n-directions", default=8, show_default=True)
@click.option("--rho-probe", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_obj
def probe_landscape(server, output, cell, dims, n_points, radius,
                    n_directions, rho_probe, seed):
    """Loss slice and sharpness proxy for one persisted cell."""
    _emit(_call(server, "/landscape/probe",
                {"output": output, "cell": cell, "dims": dims,
                 "n_points": n_points, "radius": radius,
                 "n_directions": n_directions, "rho_probe": rho_probe,
                 "seed": seed}))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the experiment service over HTTP."""
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
