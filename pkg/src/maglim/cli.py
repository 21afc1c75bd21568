"""Command line: ``maglim <kind> --config PATH [--threads N] [--seed S]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import KINDS, ConfigError, load_config
from .cookbook import TAGS, template
from .experiments import RUNNERS, GeometryError
from .io import write_result_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"maglim: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(kind: str, config_path, threads: int | None = None, seed: int | None = None) -> int:
    try:
        cfg = load_config(config_path)
        if cfg.kind != kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {kind!r}")
        if seed is not None:
            cfg = cfg.replace(seed=seed)
    except ConfigError as e:
        print(f"maglim: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        print(f"maglim: runtime error: output directory {out} is not writable: {e.strerror}", file=sys.stderr)
        return EXIT_RUNTIME
    started = time.time()
    try:
        outcome = RUNNERS[kind](cfg, out, threads)
    except GeometryError as e:
        print(f"maglim: config error: invalid geometry: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"maglim: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    files = []
    (out / "config.ini").write_text(cfg.to_ini())
    (out / "config.json").write_text(cfg.to_json() + "\n")
    for t in outcome.tables:
        write_result_csv(out / t.name, t.columns, t.rows, cfg.hash, cfg.seed)
        files.append(t.name)
    files += outcome.extra_files
    status = EXIT_OK if outcome.passed else EXIT_CHECK
    manifest = {
        "tool": "maglim",
        "version": __version__,
        "kind": kind,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "threads": threads or os.cpu_count(),
        "input": {"path": str(config_path), "sha256": _sha256(Path(config_path))},
        "outputs": {f: _sha256(out / f) for f in ["config.ini", "config.json", *files]},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_clock_s": round(time.time() - started, 3),
        "exit_status": status,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if kind == "oracle-validate":
        for t in outcome.tables:
            for r in t.rows:
                print(f"{r[-1]} {r[0]} {r[1]}x{r[2]} bc={r[3]} h={r[4]:g} tv={r[7]:.4g} p={r[8]:.3g}")
    print(f"maglim: {kind} done, results in {out}")
    return status


def main(argv=None) -> int:
    p = _Parser(prog="maglim", description="Critical Ising magnetization field experiments.")
    p.add_argument("--version", action="version", version=f"maglim {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", required=True, help="experiment config file")
        s.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
    c = sub.add_parser("cookbook", help="print a config template for a check")
    c.add_argument("tag", help=f"one of: {', '.join(TAGS)}")
    c.add_argument("--output", default=None, help="output directory written into the template")
    args = p.parse_args(argv)
    if args.cmd == "cookbook":
        try:
            sys.stdout.write(template(args.tag, args.output))
        except KeyError:
            print(f"maglim: unknown tag {args.tag!r}; valid tags: {', '.join(TAGS)}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("maglim: config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(args.cmd, args.config, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
