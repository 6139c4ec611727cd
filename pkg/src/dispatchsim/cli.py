"""Operator-facing command line.

Every command is a thin client of the dispatch service: it marshals local
files into a request, posts it to an in-process app (or a remote one via
--server), and writes the response artifacts under a run directory. Exit
codes: 0 success, 2 usage or input problems, 3 internal failures.
"""
from __future__ import annotations

import datetime as _dt
import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .errors import DispatchError, InputError
from .network import load_od_frequency, load_travel_matrix, synthetic_inputs
from .objectives import BUILTIN_NAMES

EXIT_USAGE = 2
EXIT_INTERNAL = 3


def _fail(message: str, code: int = EXIT_USAGE):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def load_config(path: str | None) -> dict[str, str]:
    """key = value lines; blank lines and #-comments ignored."""
    if not path:
        return {}
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise InputError(f"cannot read config file: {exc}") from exc
    return values


class ServiceHandle:
    """HTTP access to the dispatch service, in-process unless --server given."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                # starlette warns about its httpx-based TestClient; in-process
                # serving is deliberate here, keep the CLI quiet
                warnings.simplefilter("ignore", UserWarning)
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code >= 500:
            _fail(f"service failure on {path}: {resp.text}", EXIT_INTERNAL)
        if resp.status_code >= 400:
            detail = resp.json().get("detail", resp.text) if resp.text else resp.text
            _fail(str(detail), EXIT_USAGE)
        return resp.json()


def _make_run_dir(out: str | None, command: str) -> Path:
    if out:
        run_dir = Path(out)
    else:
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        run_dir = Path("runs") / f"{stamp}-{command}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_manifest(run_dir: Path, command: str, inputs: dict) -> None:
    manifest = {
        "command": command,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "version": __version__,
        "inputs": inputs,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_matrix_rows(ctx_cfg: dict, matrix: str | None):
    matrix = matrix or ctx_cfg.get("matrix")
    if not matrix:
        raise InputError("a travel matrix is required (--matrix or config)")
    return load_travel_matrix(matrix).rows()


def _load_scenario_doc(scenario: str | None, ctx_cfg: dict) -> dict:
    scenario = scenario or ctx_cfg.get("scenario")
    if not scenario:
        raise InputError("a scenario file is required (--scenario or config)")
    try:
        return json.loads(Path(scenario).read_text())
    except OSError as exc:
        raise InputError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"scenario file is not valid JSON: {exc}") from exc


def _objective_selector(objective: str | None) -> dict:
    if not objective or objective in BUILTIN_NAMES:
        return {"builtin": objective or "default_composite"}
    if objective == "evolve":
        raise InputError("objective 'evolve' is the evolve command, not a run objective")
    path = Path(objective)
    if not path.exists():
        raise InputError(
            f"objective {objective!r} is neither a builtin ({', '.join(BUILTIN_NAMES)}) "
            "nor a readable file"
        )
    try:
        return {"document": json.loads(path.read_text())}
    except json.JSONDecodeError as exc:
        raise InputError(f"objective file is not valid JSON: {exc}") from exc


def _metrics_files(run_dir: Path, doc: dict, trace: list[dict] | None) -> None:
    (run_dir / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = ["zone,bin,mean_delay_min,count"]
    for cell in doc["heatmap"]:
        lines.append(
            f"{cell['zone']},{cell['bin']},{cell['mean_delay_min']:.6f},{cell['count']}"
        )
    (run_dir / "heatmap.csv").write_text("\n".join(lines) + "\n")
    if trace is not None:
        event_lines = [
            json.dumps({"t": e["t"], "taxi": e["taxi"], "pass": e["passenger"], "kind": e["kind"]})
            for e in trace
        ]
        (run_dir / "trace.jsonl").write_text("\n".join(event_lines) + ("\n" if event_lines else ""))


@click.group()
@click.option("--server", default=None, help="Remote service URL; in-process when omitted.")
@click.option("--config", "config_path", default=None, help="key = value defaults file.")
@click.version_option(__version__)
@click.pass_context
def main(ctx, server, config_path):
    """Hierarchical taxi dispatch: scenarios, runs, evolution, oracle, reports."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["cfg"] = load_config(config_path)
    except DispatchError as exc:
        _fail(str(exc))
    ctx.obj["server"] = server or ctx.obj["cfg"].get("server")


def _svc(ctx) -> ServiceHandle:
    return ServiceHandle(ctx.obj.get("server"))


@main.command("make-inputs")
@click.option("--zones", default=19, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, help="Output directory.")
def cmd_make_inputs(zones, seed, out):
    """Write a synthetic travel matrix and OD frequency table as CSVs."""
    try:
        matrix, freq = synthetic_inputs(zones, seed)
    except DispatchError as exc:
        _fail(str(exc))
    run_dir = _make_run_dir(out, "make-inputs")
    matrix_csv = "\n".join(",".join(str(v) for v in row) for row in matrix.rows()) + "\n"
    freq_csv = "\n".join(",".join(f"{v:.6f}" for v in row) for row in freq.rows()) + "\n"
    (run_dir / "matrix.csv").write_text(matrix_csv)
    (run_dir / "freq.csv").write_text(freq_csv)
    click.echo(f"wrote {run_dir / 'matrix.csv'} and {run_dir / 'freq.csv'}")


@main.command("generate")
@click.option("--name", default=None, help="Scenario name, e.g. P50_C30_T300.")
@click.option("--matrix", default=None, help="Travel matrix CSV.")
@click.option("--freq", default=None, help="OD frequency CSV.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None)
@click.pass_context
def cmd_generate(ctx, name, matrix, freq, seed, out):
    """Sample a scenario and write it as scenario.json."""
    cfg = ctx.obj["cfg"]
    name = name or cfg.get("name")
    if not name:
        _fail("a scenario name is required (--name or config)")
    try:
        matrix_rows = _load_matrix_rows(cfg, matrix)
        freq_path = freq or cfg.get("freq")
        if not freq_path:
            raise InputError("an OD frequency table is required (--freq or config)")
        freq_rows = load_od_frequency(freq_path).rows()
    except DispatchError as exc:
        _fail(str(exc))
    doc = _svc(ctx).post(
        "/scenario/generate",
        {"name": name, "seed": seed, "matrix": matrix_rows, "freq": freq_rows},
    )
    run_dir = _make_run_dir(out, "generate")
    (run_dir / "scenario.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_manifest(run_dir, "generate", {"name": name, "seed": seed})
    click.echo(f"wrote {run_dir / 'scenario.json'} ({doc['spec']['passengers']} requests)")


@main.command("run")
@click.option("--scenario", default=None, help="Scenario JSON file.")
@click.option("--matrix", default=None, help="Travel matrix CSV.")
@click.option("--objective", default=None, help="Builtin name or objective JSON file.")
@click.option("--dt", default=None, type=int, help="Decision epoch seconds (default 300).")
@click.option("--bins", default=None, type=int, help="Heatmap bin seconds (default 600).")
@click.option("--out", default=None)
@click.pass_context
def cmd_run(ctx, scenario, matrix, objective, dt, bins, out):
    """One dispatch run under a fixed objective; writes metrics, heatmap, trace."""
    cfg = ctx.obj["cfg"]
    try:
        payload = {
            "scenario": _load_scenario_doc(scenario, cfg),
            "matrix": _load_matrix_rows(cfg, matrix),
            "objective": _objective_selector(objective or cfg.get("objective")),
            "dt": dt if dt is not None else int(cfg.get("dt", 300)),
            "bin_seconds": bins if bins is not None else int(cfg.get("bins", 600)),
        }
    except DispatchError as exc:
        _fail(str(exc))
    doc = _svc(ctx).post("/run", payload)
    run_dir = _make_run_dir(out, "run")
    _metrics_files(run_dir, doc["metrics"], doc["trace"])
    _write_manifest(run_dir, "run", {"objective": doc["metrics"]["objective"]})
    click.echo(f"mean wait: {doc['metrics']['mean_wait_min']:.1f} min")
    click.echo(f"artifacts in {run_dir}")


@main.command("evolve")
@click.option("--scenario", default=None)
@click.option("--matrix", default=None)
@click.option("--mock", "mode_mock", is_flag=True, help="Offline seeded mock generator.")
@click.option("--adaptive", "mode_adaptive", is_flag=True, help="Offline demand-adaptive mock.")
@click.option("--endpoint", default=None, help="Remote chat-completions URL.")
@click.option("--model", default=None, help="Remote model name.")
@click.option("--temperature", default=None, type=float)
@click.option("--invalid-rate", default=None, type=float, help="Mock invalid-response rate.")
@click.option("--hmcr", default=None, type=float)
@click.option("--par", default=None, type=float)
@click.option("--iters", default=None, type=int)
@click.option("--pop", default=None, type=int)
@click.option("--dt", default=None, type=int)
@click.option("--bins", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--workers", default=None, type=int)
@click.option("--open-loop", is_flag=True, help="Single query per run instead of per epoch.")
@click.option("--out", default=None)
@click.pass_context
def cmd_evolve(ctx, scenario, matrix, mode_mock, mode_adaptive, endpoint, model, temperature,
               invalid_rate, hmcr, par, iters, pop, dt, bins, seed, workers, open_loop, out):
    """Evolve objective-generating plans; writes the report and best objective."""
    cfg = ctx.obj["cfg"]

    def pick(flag, key, default, cast):
        if flag is not None:
            return flag
        return cast(cfg[key]) if key in cfg else default

    if mode_mock and mode_adaptive:
        _fail("--mock and --adaptive are mutually exclusive")
    mode = "mock" if mode_mock else "adaptive" if mode_adaptive else cfg.get("generator_mode")
    endpoint = endpoint or cfg.get("endpoint")
    if mode is None:
        mode = "remote" if endpoint else "mock"
    try:
        payload = {
            "scenario": _load_scenario_doc(scenario, cfg),
            "matrix": _load_matrix_rows(cfg, matrix),
            "hs": {
                "hmcr": pick(hmcr, "hmcr", 0.9, float),
                "par": pick(par, "par", 0.2, float),
                "pop_size": pick(pop, "pop", 5, int),
                "iterations": pick(iters, "iters", 10, int),
                "rng_seed": pick(seed, "seed", 0, int),
            },
            "generator": {
                "mode": mode,
                "endpoint_url": endpoint or "",
                "model_name": model or cfg.get("model", "default-model"),
                "temperature": pick(temperature, "temperature", 0.9, float),
                "mock_invalid_rate": pick(invalid_rate, "invalid_rate", 0.0, float),
                "mock_seed": pick(seed, "seed", 0, int),
            },
            "mode": "open_loop" if open_loop else "closed_loop",
            "dt": pick(dt, "dt", 300, int),
            "bin_seconds": pick(bins, "bins", 600, int),
            "workers": pick(workers, "workers", 1, int),
        }
    except DispatchError as exc:
        _fail(str(exc))
    doc = _svc(ctx).post("/evolve", payload)
    run_dir = _make_run_dir(out, "evolve")
    (run_dir / "evolution.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if doc["best_objectives"]:
        (run_dir / "best_objective.json").write_text(
            json.dumps(doc["best_objectives"][-1], indent=2, sort_keys=True) + "\n"
        )
    _write_manifest(run_dir, "evolve", {"mode": payload["mode"], "generator": mode})
    best_series = ", ".join(f"{it['best']:.2f}" for it in doc["iterations"])
    click.echo(f"best fitness per iteration (min): {best_series}")
    click.echo(f"error rate: {doc['error_rate']:.3f}; artifacts in {run_dir}")


@main.command("oracle")
@click.option("--scenario", default=None)
@click.option("--matrix", default=None)
@click.option("--objective", default=None)
@click.option("--max-passengers", default=5, show_default=True)
@click.option("--max-taxis", default=3, show_default=True)
@click.pass_context
def cmd_oracle(ctx, scenario, matrix, objective, max_passengers, max_taxis):
    """Joint-optimum wait vs the two-level pipeline on a tiny instance."""
    cfg = ctx.obj["cfg"]
    try:
        payload = {
            "scenario": _load_scenario_doc(scenario, cfg),
            "matrix": _load_matrix_rows(cfg, matrix),
            "objective": _objective_selector(objective or cfg.get("objective")),
            "max_passengers": max_passengers,
            "max_taxis": max_taxis,
        }
    except DispatchError as exc:
        _fail(str(exc))
    doc = _svc(ctx).post("/oracle", payload)
    click.echo(f"joint optimum wait: {doc['oracle_wait_s']} s")
    click.echo(f"two-level wait:     {doc['hierarchical_wait_s']} s")
    click.echo(f"ratio: {doc['ratio']:.4f}  relative gap: {doc['mean_relative_gap']:.4f}")


@main.command("report")
@click.argument("metrics_files", nargs=-1, required=True)
@click.option("--out", default=None)
@click.pass_context
def cmd_report(ctx, metrics_files, out):
    """Aggregate metrics JSONs into a methods-by-scenarios table."""
    entries = []
    for path in metrics_files:
        try:
            doc = json.loads(Path(path).read_text())
            entries.append(
                {
                    "method": doc["objective"],
                    "scenario": doc["scenario"],
                    "mean_wait_min": doc["mean_wait_min"],
                    "bin_seconds": doc["bin_seconds"],
                }
            )
        except OSError as exc:
            _fail(f"cannot read metrics file {path}: {exc}")
        except (KeyError, json.JSONDecodeError) as exc:
            _fail(f"{path} is not a metrics file: {exc}")
    doc = _svc(ctx).post("/report", {"entries": entries})
    run_dir = _make_run_dir(out, "report")
    (run_dir / "report.csv").write_text(doc["csv"])
    click.echo(doc["csv"].rstrip("\n"))
    click.echo(f"wrote {run_dir / 'report.csv'}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def cmd_serve(host, port):
    """Run the dispatch service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
