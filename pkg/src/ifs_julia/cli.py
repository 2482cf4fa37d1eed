"""Command-line harness: configuration, runs, artifacts and reports.

Exit codes: 0 success, 2 validation failure (bad config, invalid IFS,
failed construction preconditions), 3 acceptance-gate failure or a flagged
regression in ``report``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .ifs_core import (DEFAULT_DELTA, IFSError, attractor_chaos_game, ifs_from_dict,
                       ifs_to_dict, require_valid)
from .quad_glue import GLUE_EPS, GlueError
from .rendering import (GridMask, PixelGrid, hausdorff_pixels, rasterize_points,
                        write_metrics)
from .semigroup import (SEAM_TOL, GeneratorError, build_semigroup, composition_distortion,
                        conformal_distortion, degree_check, generator_distortion,
                        julia_estimate_grid)
from .uqr import UqrError, build_uqr, plan_uqr, verify_uqr

EXIT_OK, EXIT_INVALID, EXIT_GATE = 0, 2, 3
COMMANDS = ("attractor", "semigroup", "uqr", "verify", "report")
JULIA_COMMANDS = ("semigroup", "uqr", "verify")
RES_MIN, RES_MAX = 64, 8192
HAUSDORFF_GATE = 3.0
K_SPREAD_GATE = 0.05
CONFORMAL_MU_GATE = 1e-5

# regression tolerances used by `report`
HAUSDORFF_SLACK_PX = 0.5
K_REL_TOL = 0.05
SEAM_FACTOR = 10.0

_CONFIG_FIELDS = {"command", "ifs", "resolution", "window", "seed", "max_iter", "delta",
                  "eps", "out", "n_points", "baseline"}


class ConfigError(ValueError):
    pass


class ValidationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    ifs: dict
    resolution: int = 512
    center: complex = 0j
    half_width: float = 1.1
    seed: int = 0
    max_iter: int = 60
    delta: float = DEFAULT_DELTA
    eps: float | None = None
    out: str = "out"
    n_points: int = 100_000
    baseline: str | None = None
    ifs_source: str = field(default="", compare=False)

    def grid(self) -> PixelGrid:
        return PixelGrid(self.resolution, self.center, self.half_width)

    def canonical(self) -> dict:
        """Hashable view: everything that affects results, nothing that does not
        (output location, file names)."""
        return {
            "command": self.command,
            "ifs": {"maps": ifs_to_dict(ifs_from_dict(self.ifs))["maps"]},
            "resolution": self.resolution,
            "window": {"center": [self.center.real, self.center.imag],
                       "half_width": self.half_width},
            "seed": self.seed,
            "max_iter": self.max_iter,
            "delta": self.delta,
            "eps": self.eps,
            "n_points": self.n_points,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=True, allow_nan=False)
        return hashlib.sha256(blob.encode("ascii")).hexdigest()


def corpus_names() -> list[str]:
    root = resources.files("ifs_julia") / "corpus"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_corpus(name: str) -> dict:
    path = resources.files("ifs_julia") / "corpus" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"ifs: no bundled system named {name!r} (have {corpus_names()})")
    return json.loads(path.read_text())


def _number(data, key, kind, default):
    v = data.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field {key!r}: expected a number, got {type(v).__name__}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"field {key!r}: expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"field {key!r}: must be finite")
    return float(v)


def _resolve_ifs(spec, base: Path) -> tuple[dict, str]:
    if isinstance(spec, dict):
        return spec, "<inline>"
    if not isinstance(spec, str) or not spec:
        raise ConfigError("field 'ifs': expected a file path, 'corpus:<name>' or an inline object")
    if spec.startswith("corpus:"):
        return load_corpus(spec[len("corpus:"):]), spec
    path = Path(spec)
    if not path.is_absolute():
        path = base / path
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"field 'ifs': cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text), str(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def config_from_dict(data: dict, base: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown field(s): {sorted(unknown)}")
    command = data.get("command", "verify")
    if command not in COMMANDS:
        raise ConfigError(f"field 'command': {command!r} is not one of {list(COMMANDS)}")
    ifs_data, source = _resolve_ifs(data.get("ifs"), base) if command != "report" else ({"maps": []}, "")
    window = data.get("window", {})
    if not isinstance(window, dict) or set(window) - {"center", "half_width"}:
        raise ConfigError("field 'window': expected {\"center\": [re, im], \"half_width\": w}")
    c = window.get("center", [0.0, 0.0])
    if (not isinstance(c, list) or len(c) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in c)):
        raise ConfigError("field 'window.center': expected [re, im]")
    cfg = RunConfig(
        command=command,
        ifs=ifs_data,
        resolution=_number(data, "resolution", int, 512),
        center=complex(c[0], c[1]),
        half_width=_number(window, "half_width", float, 1.1),
        seed=_number(data, "seed", int, 0),
        max_iter=_number(data, "max_iter", int, 60),
        delta=_number(data, "delta", float, DEFAULT_DELTA),
        eps=_number(data, "eps", float, None),
        out=str(data.get("out", "out")),
        n_points=_number(data, "n_points", int, 100_000),
        baseline=data.get("baseline"),
        ifs_source=source,
    )
    return validate_config(cfg)


def validate_config(cfg: RunConfig) -> RunConfig:
    if not RES_MIN <= cfg.resolution <= RES_MAX:
        raise ConfigError(f"field 'resolution': {cfg.resolution} outside [{RES_MIN}, {RES_MAX}]")
    if cfg.half_width <= 0:
        raise ConfigError("field 'window.half_width': must be positive")
    if cfg.command in JULIA_COMMANDS and not cfg.grid().contains_unit_disk():
        raise ConfigError("field 'window': must contain the closed unit disk for "
                          f"'{cfg.command}'")
    if cfg.seed < 0:
        raise ConfigError("field 'seed': must be non-negative")
    if cfg.max_iter < 1:
        raise ConfigError("field 'max_iter': must be >= 1")
    if not 0 < cfg.delta < 0.25:
        raise ConfigError("field 'delta': must lie in (0, 1/4)")
    if cfg.eps is not None and cfg.eps <= 0:
        raise ConfigError("field 'eps': must be positive")
    if cfg.n_points < 1:
        raise ConfigError("field 'n_points': must be >= 1")
    if cfg.command != "report":
        try:
            require_valid(ifs_from_dict(cfg.ifs))
        except IFSError as exc:
            raise ConfigError(f"field 'ifs': {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data, path.parent)


# -- runs -----------------------------------------------------------------------

def _record(cfg: RunConfig, system: str, started: float, **fields) -> dict:
    h = cfg.config_hash()
    rec = {
        "run_id": f"{cfg.command}-{system}-{h[:12]}",
        "config_hash": h,
        "command": cfg.command,
        "system": system,
        "seed": cfg.seed,
        "resolution": cfg.resolution,
        "hausdorff_px": None,
        "K": {},
        "seams": {},
        "seam_max": None,
        "degree": {},
        "gates": {},
        "artifacts": [],
    }
    rec.update(fields)
    rec["passed"] = all(rec["gates"].values())
    rec["wall_time_s"] = time.perf_counter() - started
    return rec


def _write_mask(out: Path, name: str, mask: GridMask, rec: dict) -> None:
    mask.write_pgm(out / name)
    rec["artifacts"].append(name)


def run_attractor(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    ifs = ifs_from_dict(cfg.ifs)
    cloud = attractor_chaos_game(ifs, cfg.n_points, seed=cfg.seed)
    mask = rasterize_points(cfg.grid(), cloud.points)
    rec = _record(cfg, ifs.label, t0, points=len(cloud), mask_pixels=int(mask.mask.sum()))
    _write_mask(out, "attractor.pgm", mask, rec)
    return rec


def run_semigroup(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    ifs = ifs_from_dict(cfg.ifs)
    eps = GLUE_EPS if cfg.eps is None else cfg.eps
    try:
        sg = build_semigroup(ifs, cfg.delta, eps)
    except (GeneratorError, GlueError, IFSError) as exc:
        raise ValidationFailure(f"semigroup construction failed: {exc}") from None
    grid = cfg.grid()
    mask = julia_estimate_grid(sg, grid, max_steps=cfg.max_iter, seed=cfg.seed)
    cloud = attractor_chaos_game(ifs, cfg.n_points, seed=cfg.seed)
    hd = hausdorff_pixels(mask, cloud)
    seams = {f"g{g.j}:{k}": v for g in sg.generators for k, v in g.seams.items()}
    degrees = [degree_check(g) for g in sg.generators]
    k1 = generator_distortion(sg)
    k3 = composition_distortion(sg, steps=3, seed=cfg.seed)
    mu_conf = conformal_distortion(sg, seed=cfg.seed)
    spread = abs(k3.K_estimate / k1.K_estimate - 1)
    seam_max = max(seams.values())
    rec = _record(
        cfg, ifs.label, t0,
        generators=len(sg),
        separation={"N": sg.plan.N, "delta": sg.plan.delta,
                    "min_verified_distance": sg.plan.min_verified_distance},
        hausdorff_px=hd,
        K={"generator": k1.K_estimate, "composition_3": k3.K_estimate, "spread": spread,
           "conformal_sup_mu": mu_conf},
        seams={"max": seam_max, "count": len(seams)},
        seam_max=seam_max,
        degree={"all_two": all(d == 2 for d in degrees), "values": sorted(set(degrees))},
        julia=mask.meta,
        gates={
            "hausdorff_lt_3px": hd < HAUSDORFF_GATE,
            "seams_lt_tol": seam_max < SEAM_TOL,
            "degree_two": all(d == 2 for d in degrees),
            "k_uniform": spread <= K_SPREAD_GATE,
            "conformal_mu": mu_conf < CONFORMAL_MU_GATE,
        },
    )
    _write_mask(out, "semigroup_julia.pgm", mask, rec)
    return rec


def run_uqr(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    ifs = ifs_from_dict(cfg.ifs)
    try:
        f = build_uqr(plan_uqr(ifs, cfg.eps))
    except UqrError as exc:
        raise ValidationFailure(f"uqr construction failed: {exc}") from None
    met = verify_uqr(f, cfg.grid(), max_iter=cfg.max_iter, n_cloud=cfg.n_points, seed=cfg.seed)
    mask, esc = met.pop("_mask"), met.pop("_escape_time")
    rec = _record(
        cfg, ifs.label, t0,
        m=met["m"], eps=met["eps"],
        hausdorff_px=met["hausdorff_px"],
        K={"iterates": met["K"], "spread": met["K_spread"]},
        seams=met["seams"], seam_max=met["seam_max"],
        degree={"exterior": met["degree"], "expected": met["m"]},
        tag_audit=met["tag_audit"],
        non_escaping_pixels=met["non_escaping_pixels"],
        escape_level=met["escape_level"],
        escape_hausdorff_px=met["escape_hausdorff_px"],
        gates={
            "hausdorff_lt_3px": met["hausdorff_px"] < HAUSDORFF_GATE,
            "escape_set_lt_3px": met["escape_hausdorff_px"] < HAUSDORFF_GATE,
            "escape_dichotomy": met["dichotomy_ok"],
            "exterior_power_exact": met["exterior_exact"],
            "degree_m": met["degree"] == met["m"],
            "seams_lt_tol": met["seam_max"] < SEAM_TOL,
            "tag_grammar": met["tag_audit"]["violations"] == 0,
            "k_uniform": met["K_spread"] <= K_SPREAD_GATE,
        },
    )
    _write_mask(out, "uqr_julia.pgm", mask, rec)
    et = np.clip(esc, 0, None)
    scaled = np.where(esc < 0, 255, (et * 254 // max(1, int(et.max())))).astype(np.uint8)
    (out / "uqr_escape.pgm").write_bytes(
        f"P5\n{cfg.resolution} {cfg.resolution}\n255\n".encode("ascii") + scaled.tobytes())
    rec["artifacts"].append("uqr_escape.pgm")
    return rec


def run_verify(cfg: RunConfig, out: Path) -> list[dict]:
    """Semigroup pipeline always; the uqr pipeline when the IFS satisfies the
    strong disk open set condition."""
    from .uqr import check_strong_disk_osc
    recs = [run_semigroup(replace(cfg, command="semigroup"), out)]
    if check_strong_disk_osc(ifs_from_dict(cfg.ifs)).passes:
        recs.append(run_uqr(replace(cfg, command="uqr", eps=None), out))
    return recs


# -- reports -------------------------------------------------------------------

def _key(rec: dict) -> str:
    return f"{rec.get('command')}:{rec.get('system')}"


def _k_value(rec: dict) -> float | None:
    K = rec.get("K") or {}
    if "generator" in K:
        return K["generator"]
    if "iterates" in K:
        return K["iterates"].get("1")
    return None


def compare_to_baseline(rec: dict, base: dict) -> list[str]:
    flags = []
    hd, hb = rec.get("hausdorff_px"), base.get("hausdorff_px")
    if hd is not None and hb is not None and not hd <= hb + HAUSDORFF_SLACK_PX:
        flags.append(f"hausdorff_px {hd:.3f} > baseline {hb:.3f} + {HAUSDORFF_SLACK_PX}")
    k, kb = _k_value(rec), _k_value(base)
    if k is not None and kb is not None and not abs(k / kb - 1) <= K_REL_TOL:
        flags.append(f"K {k:.6g} differs from baseline {kb:.6g} by more than {K_REL_TOL:.0%}")
    s, sb = rec.get("seam_max"), base.get("seam_max")
    if s is not None and sb is not None and not s <= max(SEAM_FACTOR * sb, 1e-12):
        flags.append(f"seam_max {s:.3g} > {SEAM_FACTOR:g} x baseline {sb:.3g}")
    if base.get("passed") and not rec.get("passed"):
        flags.append("gates failed where the baseline passed")
    return flags


def build_report(records: list[dict], baseline: dict | None) -> dict:
    if not records:
        raise ConfigError("report: no metrics records found")
    rows = []
    for rec in sorted(records, key=_key):
        base = None if baseline is None else baseline.get(_key(rec))
        flags = [] if base is None else compare_to_baseline(rec, base)
        rows.append({
            "key": _key(rec),
            "hausdorff_px": rec.get("hausdorff_px"),
            "K": _k_value(rec),
            "seam_max": rec.get("seam_max"),
            "gates_green": bool(rec.get("passed")),
            "baseline": "none" if base is None else "present",
            "regressions": flags,
        })
    return {
        "mode": "bootstrap" if baseline is None else "compare",
        "rows": rows,
        "regressions": sum(len(r["regressions"]) for r in rows),
        "all_green": all(r["gates_green"] for r in rows),
    }


def _fmt(v, spec):
    return "-" if v is None else format(v, spec)


def report_text(rep: dict) -> str:
    lines = [f"mode: {rep['mode']}",
             f"{'run':<32} {'J~S px':>8} {'K':>12} {'seam max':>10} {'gates':>6}  flags"]
    for r in rep["rows"]:
        lines.append(f"{r['key']:<32} {_fmt(r['hausdorff_px'], '8.3f')} {_fmt(r['K'], '12.5g')} "
                     f"{_fmt(r['seam_max'], '10.2e')} {'green' if r['gates_green'] else 'RED':>6}  "
                     + ("; ".join(r["regressions"]) or "-"))
    return "\n".join(lines) + "\n"


def collect_records(out: Path) -> list[dict]:
    recs = []
    for p in sorted(out.glob("metrics*.json")):
        data = json.loads(p.read_text())
        recs.extend(data if isinstance(data, list) else [data])
    return recs


def run_report(out: Path, baseline_path: Path) -> tuple[dict, int]:
    records = collect_records(out)
    baseline = json.loads(baseline_path.read_text()) if baseline_path.is_file() else None
    rep = build_report(records, baseline)
    write_metrics(out / "report.json", rep)
    (out / "report.txt").write_text(report_text(rep))
    if baseline is None:
        write_metrics(baseline_path, {_key(r): r for r in records})
    code = EXIT_GATE if rep["regressions"] or not rep["all_green"] else EXIT_OK
    return rep, code


# -- entry point ------------------------------------------------------------------

def parse_args(argv=None) -> argparse.Namespace:
    p = argparse.ArgumentParser(prog="ifs-julia", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--command", choices=COMMANDS, help="override the configured command")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--res", type=int, help="override the configured resolution")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--ifs", help="IFS file path or corpus:<name> (instead of a config file)")
    p.add_argument("--baseline", type=Path, help="baseline file for `report`")
    return p.parse_args(argv)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.command == "report":
        cfg = RunConfig(command="report", ifs={"maps": []})
    elif args.ifs is not None:
        cfg = config_from_dict({"command": args.command or "verify", "ifs": args.ifs})
    else:
        raise ConfigError("need --config or --ifs")
    over = {}
    if args.command is not None:
        over["command"] = args.command
    if args.seed is not None:
        over["seed"] = args.seed
    if args.res is not None:
        over["resolution"] = args.res
    if args.out is not None:
        over["out"] = str(args.out)
    if args.ifs is not None and args.config is not None:
        data, src = _resolve_ifs(args.ifs, Path("."))
        over.update(ifs=data, ifs_source=src)
    return validate_config(replace(cfg, **over)) if over else cfg


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label) or "ifs"


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, IFSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.command == "report":
        baseline = args.baseline or Path(cfg.baseline or out / "baseline.json")
        try:
            rep, code = run_report(out, baseline)
        except ConfigError as exc:
            print(f"report error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(report_text(rep), end="")
        return code
    runner = {"attractor": run_attractor, "semigroup": run_semigroup, "uqr": run_uqr,
              "verify": run_verify}[cfg.command]
    try:
        result = runner(cfg, out)
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    records = result if isinstance(result, list) else [result]
    stem = f"{cfg.command}_{_slug(ifs_from_dict(cfg.ifs).label)}"
    write_metrics(out / f"metrics_{stem}.json", records)
    (out / f"summary_{stem}.txt").write_text(
        report_text(build_report(records, None)).replace("mode: bootstrap\n", ""))
    for rec in records:
        status = "PASS" if rec["passed"] else "FAIL"
        failed = [k for k, v in rec["gates"].items() if not v]
        print(f"{rec['run_id']}: {status}" + (f" (failed: {', '.join(failed)})" if failed else ""))
    return EXIT_OK if all(r["passed"] for r in records) else EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
