"""Command-line interface: a thin client of the HTTP service.

By default each command drives the FastAPI app in-process through an ASGI
transport (no network); pass --server to talk to a running instance instead.
Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

USAGE_EXIT = 2
RUNTIME_EXIT = 1


def _job_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="base RNG seed")
    parser.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default: out)")
    parser.add_argument("--members", type=int, default=None,
                        help="ensemble size override")
    parser.add_argument("--serial", action="store_true", default=None,
                        help="force bitwise-reproducible serial execution")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key")
    parser.add_argument("--server", metavar="URL", default=None,
                        help="send the request to a running service instead "
                             "of executing in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waicflow",
        description="Flow-ensemble WAIC outlier scoring for multispectral spectra")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a tagged dataset")
    _job_flags(p)

    p = sub.add_parser("train", help="train an ensemble on a dataset file")
    p.add_argument("dataset", help="dataset csv produced by simulate")
    _job_flags(p)

    p = sub.add_parser("score", help="score a dataset under a trained ensemble")
    p.add_argument("manifest", help="ensemble manifest file")
    p.add_argument("dataset", help="dataset csv to score")
    _job_flags(p)

    p = sub.add_parser("exp-insilico", help="run the superset validation")
    _job_flags(p)

    p = sub.add_parser("exp-scenechange", help="run the illuminant-switch stream")
    _job_flags(p)

    p = sub.add_parser("exp-sweep", help="run the ensemble-size sweep")
    _job_flags(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _payload(args: argparse.Namespace) -> dict:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            raise SystemExit(USAGE_EXIT)
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    payload = {"out_dir": args.out, "config_path": args.config,
               "seed": args.seed, "members": args.members,
               "serial": args.serial, "overrides": overrides}
    if getattr(args, "dataset", None) is not None:
        payload["dataset_path"] = args.dataset
    if getattr(args, "manifest", None) is not None:
        payload["manifest_path"] = args.manifest
    return payload


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server is not None:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def go():
        from .service.app import app
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://waicflow.internal") as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _print_result(data: dict, indent: str = "") -> None:
    for key, val in data.items():
        if isinstance(val, dict):
            print(f"{indent}{key}:")
            _print_result(val, indent + "  ")
        elif isinstance(val, list) and val and isinstance(val[0], dict):
            print(f"{indent}{key}:")
            for item in val:
                print(indent + "  " + "  ".join(f"{k}={v}" for k, v in item.items()))
        else:
            print(f"{indent}{key}: {_scalar(val)}")


def _scalar(val) -> str:
    if isinstance(val, list):
        return ", ".join(str(v) for v in val)
    return str(val)


_COMMAND_PATHS = {
    "simulate": "/simulate",
    "train": "/train",
    "score": "/score",
    "exp-insilico": "/experiments/insilico",
    "exp-scenechange": "/experiments/scenechange",
    "exp-sweep": "/experiments/sweep",
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import app
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        response = _post(args.server, _COMMAND_PATHS[args.command], _payload(args))
    except httpx.HTTPError as err:
        print(f"error: cannot reach service: {err}", file=sys.stderr)
        return RUNTIME_EXIT
    except Exception as err:  # in-process app escaped the error middleware
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return RUNTIME_EXIT

    try:
        body = response.json()
    except json.JSONDecodeError:
        body = {"detail": response.text}

    if response.status_code == 200:
        _print_result(body)
        return 0
    detail = body.get("detail", response.text)
    print(f"error: {detail}", file=sys.stderr)
    if response.status_code in (400, 422):
        return USAGE_EXIT
    return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
