"""Command-line client for the nmsparse service.

Every subcommand is a thin HTTP client: it builds a request, sends it to the
service (an in-process instance by default, or a remote one via ``--server``),
and prints the JSON response on one line.  Failures print a single-line JSON
error object to stderr and exit nonzero.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx


def _post(server: str | None, path: str, payload: dict) -> dict:
    """POST to the service; in-process unless a server URL is given."""

    async def go() -> httpx.Response:
        if server:
            async with httpx.AsyncClient(base_url=server, timeout=None) as client:
                return await client.post(path, json=payload)
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://nmsparse.local", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    try:
        response = asyncio.run(go())
    except httpx.HTTPError as exc:
        _fail(f"could not reach server: {exc}", "ConnectionError")
    if response.status_code >= 400:
        try:
            body = response.json()
        except ValueError:
            body = {"error": response.text, "kind": f"HTTP{response.status_code}"}
        if "error" not in body:
            # FastAPI validation errors arrive under "detail"
            body = {"error": json.dumps(body.get("detail", body)), "kind": "ValidationError"}
        _fail(body["error"], body.get("kind", f"HTTP{response.status_code}"))
    return response.json()


def _fail(message: str, kind: str) -> None:
    click.echo(json.dumps({"error": message, "kind": kind}), err=True)
    sys.exit(1)


def _emit(result: dict) -> None:
    click.echo(json.dumps(result, sort_keys=True))


_server_option = click.option(
    "--server",
    default=None,
    envvar="NMSPARSE_SERVER",
    help="Base URL of a running service; defaults to an in-process instance.",
)


@click.group()
def main() -> None:
    """n:m structured sparsity toolkit with two-branch spatial re-parameterization."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON config file.")
@_server_option
def train(config_path: str, server: str | None) -> None:
    """Train a model from a JSON config and write checkpoint/metrics."""
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        _fail(f"config file not found: {config_path}", "FileNotFoundError")
    except json.JSONDecodeError as exc:
        _fail(f"config file is not valid JSON: {exc}", "JSONDecodeError")
    _emit(_post(server, "/train", payload))


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="CSV output path.")
@_server_option
def profile(checkpoint: str, out: str, server: str | None) -> None:
    """Write per-offset spatial sparsity of every mask in a checkpoint."""
    _emit(_post(server, "/profile", {"checkpoint": checkpoint, "out": out}))


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.option("--n", required=True, type=int, help="survivors per group")
@click.option("--m", required=True, type=int, help="group size")
@click.option("--out", required=True, type=click.Path(), help="output checkpoint path.")
@_server_option
def project(checkpoint: str, n: int, m: int, out: str, server: str | None) -> None:
    """Attach n:m masks to the eligible conv weights of a checkpoint."""
    _emit(_post(server, "/project", {"checkpoint": checkpoint, "n": n, "m": m, "out": out}))


@main.command("spre-build")
@click.argument("checkpoint", type=click.Path())
@click.option("--n", required=True, type=int, help="survivors per group")
@click.option("--m", required=True, type=int, help="group size")
@click.option(
    "--variant",
    default="spre",
    type=click.Choice(["spre", "same", "inverse"]),
    help="where the extra branch applies",
)
@click.option("--out", required=True, type=click.Path(), help="output checkpoint path.")
@_server_option
def spre_build(checkpoint: str, n: int, m: int, variant: str, out: str, server: str | None) -> None:
    """Wrap a dense model checkpoint into two-branch sparse form."""
    _emit(
        _post(
            server,
            "/spre-build",
            {"checkpoint": checkpoint, "n": n, "m": m, "variant": variant, "out": out},
        )
    )


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="output checkpoint path.")
@_server_option
def reparam(checkpoint: str, out: str, server: str | None) -> None:
    """Merge every two-branch layer of a checkpoint into a single conv."""
    _emit(_post(server, "/reparam", {"checkpoint": checkpoint, "out": out}))


@main.command()
@click.argument("checkpoint_two_branch", type=click.Path())
@click.argument("checkpoint_merged", type=click.Path())
@click.option("--trials", default=100, type=int, show_default=True)
@click.option("--tol", default=1e-10, type=float, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--dtype", default="f64", type=click.Choice(["f32", "f64"]), show_default=True)
@_server_option
def verify(
    checkpoint_two_branch: str,
    checkpoint_merged: str,
    trials: int,
    tol: float,
    seed: int,
    dtype: str,
    server: str | None,
) -> None:
    """Check that merged layers reproduce their two-branch originals.

    Exits 0 when every layer matches within tolerance, 1 otherwise.
    """
    result = _post(
        server,
        "/verify",
        {
            "checkpoint_two_branch": checkpoint_two_branch,
            "checkpoint_merged": checkpoint_merged,
            "trials": trials,
            "tolerance": tol,
            "seed": seed,
            "dtype": dtype,
        },
    )
    _emit(result)
    if not result.get("passed", False):
        sys.exit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, type=int, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
