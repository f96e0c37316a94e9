"""Thin command-line client over the HTTP service.

Every subcommand builds a request, sends it to the service (in-process by
default, remote with ``--server``), and renders the response.  Exit codes:
0 success, 1 failure, 2 when the mosaic store itself is missing.
"""

from __future__ import annotations

import base64
import json
import sys
from pathlib import Path

import click

from .config import load_config
from .verification import SUITE_NAMES


class ServiceClient:
    """POST/GET against the service, in process unless a URL is given."""

    def __init__(self, server=None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict):
        r = self._client.post(path, json=payload)
        return r.status_code, self._body(r)

    def get(self, path: str):
        r = self._client.get(path)
        return r.status_code, self._body(r)

    @staticmethod
    def _body(r) -> dict:
        try:
            return r.json()
        except ValueError:
            return {"detail": {"kind": "invalid", "message": r.text}}


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj.get("server"))


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, sort_keys=True, indent=2))


def _fail(body: dict, default_exit: int = 1) -> None:
    """Print the machine-readable error envelope and exit."""
    detail = body.get("detail", {})
    if not isinstance(detail, dict):
        detail = {"kind": "invalid", "message": str(detail)}
    _echo_json({"error": detail})
    code = 2 if detail.get("kind") == "mosaic-not-found" else default_exit
    sys.exit(code)


def _require(cfg, *names) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise click.UsageError(
            f"missing {', '.join('--' + n.replace('_', '-') for n in missing)} "
            "(flag or config field)")


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Service base URL; omitted runs the service in process.")
@click.pass_context
def main(ctx, server):
    """Satellite-assisted BEV occupancy toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--mosaic", default=None, help="Mosaic directory.")
@click.option("--poses", default=None, help="Pose JSONL file.")
@click.option("--out", default=None, help="Output directory for slices.")
@click.option("--seed", type=int, default=None)
@click.pass_context
def curate(ctx, config_path, mosaic, poses, out, seed):
    """Cut heading-aligned satellite slices around each ego pose."""
    cfg = load_config(config_path, mosaic=mosaic, poses=poses, out=out, seed=seed)
    _require(cfg, "mosaic", "poses", "out")
    status, body = _client(ctx).post("/curate", {
        "mosaic_dir": cfg.mosaic, "poses": cfg.poses, "out_dir": cfg.out})
    if status != 200:
        _fail(body)
    _echo_json(body)
    if body["count_failed"] > 0:
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--occ-dir", default=None, help="Directory of {token}.occ grids.")
@click.option("--out", default=None, help="Output directory for label maps.")
@click.option("--seed", type=int, default=None)
@click.pass_context
def genlabels(ctx, config_path, occ_dir, out, seed):
    """Project occupancy grids to height/semantic/dynamic BEV rasters."""
    cfg = load_config(config_path, occ_dir=occ_dir, out=out, seed=seed)
    _require(cfg, "occ_dir", "out")
    status, body = _client(ctx).post("/genlabels", {
        "occ_dir": cfg.occ_dir, "out_dir": cfg.out})
    if status != 200:
        _fail(body)
    _echo_json(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--pred", default=None, help="Directory of predicted {token}.occ.")
@click.option("--gt", default=None, help="Directory of ground-truth {token}.occ.")
@click.option("--observe-mask", is_flag=True, default=None,
              help="Restrict counts to each gt {token}.observed.occ grid.")
@click.option("--from-per-class", "per_class_path", type=click.Path(), default=None,
              help="Aggregate a JSON list of 17 per-class IoUs instead.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the report JSON here.")
@click.option("--seed", type=int, default=None)
@click.pass_context
def eval(ctx, config_path, pred, gt, observe_mask, per_class_path, out_path, seed):
    """Pooled IoU report over a sample set, or over an explicit per-class row."""
    client = _client(ctx)
    if per_class_path is not None:
        values = json.loads(Path(per_class_path).read_text())
        if isinstance(values, dict):
            values = values.get("per_class")
        status, body = client.post("/eval/per-class", {"per_class": values})
        if status != 200:
            _fail(body)
        report = body["report"]
        click.echo(f"{report['miou']:.2f}/{report['d_miou']:.2f}/{report['s_miou']:.2f}")
        _echo_json(body)
        if out_path:
            Path(out_path).write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
        return
    cfg = load_config(config_path, seed=seed,
                      observe_mask=True if observe_mask else None)
    if pred is None or gt is None:
        raise click.UsageError("--pred and --gt are required (or --from-per-class)")
    status, body = client.post("/eval", {
        "pred_dir": pred, "gt_dir": gt, "observe_mask": cfg.observe_mask})
    if status != 200:
        _fail(body)
    _echo_json(body)
    if out_path:
        Path(out_path).write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--perturb-geometry", is_flag=True, default=False,
              help="Negative control: jitter projections so adjointness fails.")
@click.option("--suite", "suites", multiple=True, type=click.Choice(SUITE_NAMES),
              help="Run a subset of suites (repeatable); default all.")
@click.pass_context
def verify(ctx, config_path, seed, perturb_geometry, suites):
    """Run the verification battery; exit 0 only if every suite passes."""
    cfg = load_config(config_path, seed=seed)
    status, body = _client(ctx).post("/verify", {
        "seed": cfg.seed, "perturb_geometry": perturb_geometry,
        "suites": list(suites) or None})
    if status != 200:
        _fail(body)
    for suite in body["suites"]:
        mark = "pass" if suite["passed"] else "FAIL"
        click.echo(f"[{mark}] {suite['suite']}", err=True)
        for check in suite["checks"]:
            click.echo(f"    {check['name']}: measured {check['measured']:.3e} "
                       f"(want {check['bound']})", err=True)
    _echo_json(body)
    if not body["passed"]:
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.pass_context
def bench(ctx, config_path, seed, repeats):
    """Relative timing of the forward splat vs the backward gather."""
    cfg = load_config(config_path, seed=seed)
    status, body = _client(ctx).post("/bench", {
        "seed": cfg.seed, "repeats": repeats})
    if status != 200:
        _fail(body)
    _echo_json(body)


@main.command("demo-fuse")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default="attention.png",
              show_default=True, help="Where to write the attention-map PNG.")
@click.pass_context
def demo_fuse(ctx, config_path, seed, out_path):
    """Chain the fusion operators on synthetic tensors; save the attention map."""
    cfg = load_config(config_path, seed=seed)
    status, body = _client(ctx).post("/demo-fuse", {"seed": cfg.seed})
    if status != 200:
        _fail(body)
    Path(out_path).write_bytes(base64.b64decode(body["map_png_base64"]))
    _echo_json({"stats": body["stats"], "out": str(out_path)})


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
