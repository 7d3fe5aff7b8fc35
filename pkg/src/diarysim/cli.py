"""Command-line pipeline: synthesize personas, generate diaries, validate, report.

Every output is deterministic for a given config and seed. Worker count and
output directory are excluded from the config hash so they cannot change any
byte of the results.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classical, llm, personas as persona_mod
from .core import CategorySchema, Diary, Persona, diaries_to_csv, read_diaries_csv
from .ingestion import DataError, filter_hts, load_block_groups, load_hts
from .validation import (
    COMPONENTS,
    DIVERGENCE,
    LEVEL_ORDER,
    CohortIndex,
    aggregate_scores,
    overall_realism,
    welch_t_test,
)

log = logging.getLogger("diarysim")

ENGINES = ("llm", "classical")
SCORE_COLUMNS = ("persona_id", "source", "cohort_level", "cohort_size") + COMPONENTS + ("overall",)
DENSITY_EDGES = tuple(round(i * 0.05, 2) for i in range(21))


class RunError(RuntimeError):
    """A pipeline step cannot proceed (missing inputs, nothing to score...)."""


@dataclass
class RunConfig:
    seed: int
    block_groups: Path
    hts: Path
    output_dir: Path
    persona_count: int = 200
    engine: str = "both"
    generation: llm.GenerationConfig = field(default_factory=llm.GenerationConfig)
    backend: dict = field(default_factory=lambda: {"kind": "http"})
    classical_covariates: tuple[str, ...] = classical.DEFAULT_COVARIATES
    min_cohort_size: int = 10
    score_variant: str = DIVERGENCE
    workers: int = 1
    filter_outliers: bool = True
    schema: CategorySchema = field(default_factory=CategorySchema)
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.persona_count < 1:
            raise ValueError("persona_count must be >= 1")
        if self.engine not in ("llm", "classical", "both"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.score_variant not in ("divergence", "distance"):
            raise ValueError(f"unknown score_variant {self.score_variant!r}")

    @property
    def engines(self) -> tuple[str, ...]:
        return ENGINES if self.engine == "both" else (self.engine,)

    @property
    def config_hash(self) -> str:
        hashed = copy.deepcopy(self.raw)
        hashed.pop("workers", None)
        hashed.get("paths", {}).pop("output_dir", None)
        blob = json.dumps(hashed, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolve(self, value) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=".") -> RunConfig:
        data = copy.deepcopy(dict(data))
        base = Path(base_dir)
        paths = data.get("paths", {})

        def resolve(key, default):
            p = Path(paths.get(key, default))
            return p if p.is_absolute() else base / p

        return cls(
            seed=int(data.get("seed", 0)),
            block_groups=resolve("block_groups", "blockgroups.json"),
            hts=resolve("hts", "hts.jsonl"),
            output_dir=resolve("output_dir", "out"),
            persona_count=int(data.get("persona_count", 200)),
            engine=data.get("engine", "both"),
            generation=llm.GenerationConfig.from_dict(data.get("generation", {})),
            backend=dict(data.get("backend", {"kind": "http"})),
            classical_covariates=tuple(data.get("classical_covariates", classical.DEFAULT_COVARIATES)),
            min_cohort_size=int(data.get("min_cohort_size", 10)),
            score_variant=data.get("score_variant", DIVERGENCE),
            workers=int(data.get("workers", 1)),
            filter_outliers=bool(data.get("filter_outliers", True)),
            schema=CategorySchema.from_dict(data.get("schema", {})),
            raw=data,
            base_dir=base,
        )

    @classmethod
    def load(cls, path, overrides: Mapping | None = None) -> RunConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(path, None, f"cannot read config: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key == "output_dir":
                data.setdefault("paths", {})["output_dir"] = str(Path(value).resolve())
            else:
                data[key] = value
        return cls.from_dict(data, path.parent)


# --- shared helpers ---------------------------------------------------------------

def _meta(cfg: RunConfig, **extra) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.config_hash, **extra}


def _write(path: Path, text: str, meta: dict | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    if meta is not None:
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    return path


def _load_hts(cfg: RunConfig):
    hts = load_hts(cfg.hts)
    removed = 0
    if cfg.filter_outliers:
        hts, result = filter_hts(hts)
        removed = len(result.removed)
    return hts, removed


def personas_path(cfg: RunConfig) -> Path:
    return cfg.output_dir / "personas.jsonl"


def diaries_path(cfg: RunConfig, engine: str) -> Path:
    return cfg.output_dir / f"diaries_{engine}.csv"


def failures_path(cfg: RunConfig, engine: str) -> Path:
    return cfg.output_dir / f"failures_{engine}.json"


def _read_personas(path: Path) -> list[Persona]:
    if not path.exists():
        raise DataError(path, None, "personas file not found (run `synthesize` first)")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Persona.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(path, lineno, f"bad persona record: {exc}") from None
    return out


def _fmt(x: float) -> str:
    return f"{x:.10f}"


# --- commands ---------------------------------------------------------------------

def cmd_synthesize(cfg: RunConfig) -> Path:
    profiles = load_block_groups(cfg.block_groups)
    batch = persona_mod.synthesize_batch(profiles, cfg.persona_count, cfg.seed, cfg.workers)
    text = "".join(json.dumps(p.to_dict(), ensure_ascii=False) + "\n" for p in batch)
    return _write(personas_path(cfg), text, _meta(cfg, count=len(batch)))


def make_backend(cfg: RunConfig):
    kind = cfg.backend.get("kind", "http")
    if kind == "mock":
        return llm.MockBackend.from_file(cfg.resolve(cfg.backend["mock_responses"]))
    if kind == "http":
        return llm.HTTPBackend(cfg.generation.endpoint_url, cfg.generation.request_timeout)
    raise ValueError(f"unknown backend kind {kind!r}")


def _models_for(cfg: RunConfig, profiles, models_path: Path | None):
    if models_path is not None and Path(models_path).exists():
        return classical.ClassicalModels.load(models_path)
    hts, _ = _load_hts(cfg)
    builder = classical.FeatureBuilder(cfg.classical_covariates)
    models = classical.calibrate(hts, profiles, builder, cfg.schema)
    for name, fit in (("trip_count", models.trip_count), ("purpose", models.purpose),
                      ("mode", models.mode)):
        if fit.status != classical.CONVERGED:
            raise RunError(f"classical {name} model calibration ended with status {fit.status!r}")
    return models


def cmd_generate(cfg: RunConfig, personas_file: Path | None = None,
                 models_path: Path | None = None, backend=None) -> dict[str, Path]:
    people = _read_personas(personas_file or personas_path(cfg))
    profiles = load_block_groups(cfg.block_groups)
    written = {}
    for engine in cfg.engines:
        failures = []
        if engine == "llm":
            be = backend or make_backend(cfg)
            land_use = {g: persona_mod.land_use_context(p) for g, p in profiles.items()}
            results = llm.generate_batch(people, land_use, be, cfg.generation, cfg.seed,
                                         workers=max(cfg.workers, 1), schema=cfg.schema)
            diaries = [r for r in results if isinstance(r, Diary)]
            failures = [r for r in results if isinstance(r, llm.GenerationFailure)]
            if not diaries and failures and all(
                    a.kind == "transport" for f in failures for a in f.attempts):
                raise llm.BackendError(f"backend unreachable: {failures[0].attempts[-1].message}")
        else:
            models = _models_for(cfg, profiles, models_path)
            models.save(cfg.output_dir / "classical_models.json")
            diaries = _classical_batch(cfg, people, profiles, models)
        meta = _meta(cfg, engine=engine, personas=len(people), diaries=len(diaries),
                     failures=len(failures))
        written[engine] = _write(diaries_path(cfg, engine), diaries_to_csv(diaries), meta)
        _write(failures_path(cfg, engine), json.dumps(
            [{"persona_id": f.persona_id,
              "attempts": [vars(a) for a in f.attempts]} for f in failures], indent=2) + "\n")
    return written


def _classical_batch(cfg, people, profiles, models):
    from concurrent.futures import ThreadPoolExecutor

    def one(item):
        i, p = item
        x = models.features.vector(p, profiles.get(p.geoid))
        sampler = persona_mod.SeededSampler(cfg.seed, i, persona_mod.STREAM_CLASSICAL)
        return classical.generate_classical_diary(p, x, models, sampler)

    items = list(enumerate(people))
    if cfg.workers <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(one, items))


def load_diaries(cfg: RunConfig, engine: str, path: Path, people: Sequence[Persona]) -> list[Diary]:
    if not path.exists():
        raise DataError(path, None, "diary file not found")
    failed = set()
    fpath = path.with_name(path.name.replace("diaries_", "failures_").replace(".csv", ".json"))
    if fpath.exists() and fpath != path:
        failed = {f["persona_id"] for f in json.loads(fpath.read_text(encoding="utf-8"))}
    ids = [p.persona_id for p in people if p.persona_id not in failed]
    try:
        return read_diaries_csv(path.read_text(encoding="utf-8"), engine, ids)
    except ValueError as exc:
        raise DataError(path, None, str(exc)) from None


def score_rows(diaries: Sequence[Diary], people: Mapping[str, Persona], index: CohortIndex,
               variant: str) -> list[dict]:
    rows = []
    for diary in diaries:
        persona = people.get(diary.persona_id)
        if persona is None:
            raise RunError(f"diary for unknown persona {diary.persona_id!r}")
        s = overall_realism(diary, index.match(persona), index.schema, variant)
        rows.append({
            "persona_id": diary.persona_id,
            "source": diary.source,
            "cohort_level": s.cohort_level.value,
            "cohort_size": s.cohort_size,
            "trip_count_score": s.trip_count_score,
            "purpose_score": s.purpose_score,
            "interval_score": s.interval_score,
            "mode_score": s.mode_score,
            "overall": s.overall,
        })
    return rows


def scores_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    for r in rows:
        writer.writerow([r["persona_id"], r["source"], r["cohort_level"], r["cohort_size"]]
                        + [_fmt(r[c]) for c in COMPONENTS + ("overall",)])
    return buf.getvalue()


def summarize(rows: Sequence[dict]) -> dict:
    by_source: dict[str, list[float]] = {}
    for r in rows:
        by_source.setdefault(r["source"], []).append(r["overall"])
    summary = {}
    for source, vals in by_source.items():
        arr = np.array(vals)
        summary[source] = {
            "n": int(arr.size),
            "mean": float(arr.mean()),
            "median": float(np.median(arr)),
            "sd": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        }
    out = {"engines": summary}
    if len(by_source) == 2:
        (a_name, a), (b_name, b) = sorted(by_source.items())
        try:
            w = welch_t_test(a, b)
            out["welch"] = {"a": a_name, "b": b_name, "t": w.t, "df": w.df, "p_two_sided": w.p_two_sided}
        except ValueError as exc:
            out["welch"] = {"a": a_name, "b": b_name, "error": str(exc)}
    return out


def summary_table(summary: dict) -> str:
    engines = sorted(summary["engines"])
    lines = [f"{'Metric':<20}" + "".join(f"{e:>14}" for e in engines)]
    for label, key in (("Mean Score", "mean"), ("Median Score", "median"),
                       ("Standard Deviation", "sd"), ("Number of Personas", "n")):
        cells = []
        for e in engines:
            v = summary["engines"][e][key]
            cells.append(f"{v:>14d}" if key == "n" else f"{v:>14.3f}")
        lines.append(f"{label:<20}" + "".join(cells))
    if "welch" in summary and "t" in summary["welch"]:
        w = summary["welch"]
        lines.append(f"Welch t = {w['t']:.3f}, df = {w['df']:.1f}, p = {w['p_two_sided']:.3g}")
    return "\n".join(lines) + "\n"


def cmd_validate(cfg: RunConfig, diary_files: Mapping[str, Path] | None = None,
                 personas_file: Path | None = None, out=None) -> dict[str, Path]:
    people_list = _read_personas(personas_file or personas_path(cfg))
    people = {p.persona_id: p for p in people_list}
    files = dict(diary_files) if diary_files else {e: diaries_path(cfg, e) for e in cfg.engines}
    hts, removed = _load_hts(cfg)
    index = CohortIndex(hts, cfg.schema, cfg.min_cohort_size)

    rows, aggregates, counts = [], {}, {}
    for engine, path in files.items():
        diaries = load_diaries(cfg, engine, Path(path), people_list)
        if not diaries:
            raise RunError(f"no diaries to validate for engine {engine!r}")
        rows += score_rows(diaries, people, index, cfg.score_variant)
        aggregates[engine] = aggregate_scores(diaries, hts, cfg.schema, cfg.score_variant).to_dict()
        counts[engine] = len(diaries)

    meta = _meta(cfg, hts_persons=len(hts), hts_trips_removed=removed, diaries=counts,
                 score_variant=cfg.score_variant, min_cohort_size=cfg.min_cohort_size)
    outputs = {
        "scores": _write(cfg.output_dir / "scores.csv", scores_csv(rows), meta),
        "aggregate": _write(cfg.output_dir / "aggregate.json", json.dumps(
            {"metadata": meta, "aggregate": aggregates}, indent=2, sort_keys=True) + "\n"),
    }
    summary = summarize(rows)
    outputs["summary"] = _write(cfg.output_dir / "summary.json",
                                json.dumps({"metadata": meta, **summary}, indent=2, sort_keys=True) + "\n")
    print(summary_table(summary), end="", file=out or sys.stdout)
    return outputs


def read_scores(path: Path) -> list[dict]:
    if not path.exists():
        raise DataError(path, None, "scores file not found")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORE_COLUMNS:
            raise DataError(path, 1, f"unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            r["cohort_size"] = int(r["cohort_size"])
            for c in COMPONENTS + ("overall",):
                r[c] = float(r[c])
            rows.append(r)
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_report(cfg: RunConfig, scores_file: Path | None = None,
               personas_file: Path | None = None) -> dict[str, Path]:
    """Write the data behind score-density, subgroup and per-level plots."""
    rows = read_scores(scores_file or cfg.output_dir / "scores.csv")
    people = {p.persona_id: p for p in _read_personas(personas_file or personas_path(cfg))}
    sources = sorted({r["source"] for r in rows})
    meta = _meta(cfg, sources=sources)

    edges = np.array(DENSITY_EDGES)
    density_rows = []
    hist = {}
    for s in sources:
        vals = np.array([r["overall"] for r in rows if r["source"] == s])
        counts, _ = np.histogram(vals, bins=edges)
        hist[s] = (counts, counts / (counts.sum() * 0.05))
    for i in range(len(edges) - 1):
        line = [f"{edges[i]:.2f}", f"{edges[i + 1]:.2f}"]
        for s in sources:
            line += [int(hist[s][0][i]), _fmt(hist[s][1][i])]
        density_rows.append(line)
    density_header = ["bin_lo", "bin_hi"] + [f"{s}_{k}" for s in sources for k in ("count", "density")]

    groups: dict[tuple, dict[str, list[float]]] = {}
    for r in rows:
        p = people.get(r["persona_id"])
        if p is None:
            raise RunError(f"score for unknown persona {r['persona_id']!r}")
        groups.setdefault((p.employment_status, p.age_bracket), {}).setdefault(r["source"], []).append(r["overall"])
    sub_rows = []
    for key in sorted(groups):
        line = list(key)
        for s in sources:
            vals = groups[key].get(s, [])
            line += [_fmt(float(np.mean(vals))) if vals else "", len(vals)]
        sub_rows.append(line)
    sub_header = ["employment_status", "age_bracket"] + [f"{s}_{k}" for s in sources for k in ("mean_overall", "n")]

    level_rows = []
    for level in LEVEL_ORDER:
        for comp in COMPONENTS + ("overall",):
            line = [level.value, comp]
            for s in sources:
                vals = [r[comp] for r in rows if r["source"] == s and r["cohort_level"] == level.value]
                line += [_fmt(float(np.mean(vals))) if vals else "", len(vals)]
            level_rows.append(line)
    level_header = ["cohort_level", "component"] + [f"{s}_{k}" for s in sources for k in ("mean", "n")]

    out = cfg.output_dir
    return {
        "density": _write(out / "report_density.csv", _csv_text(density_header, density_rows), meta),
        "subgroups": _write(out / "report_subgroups.csv", _csv_text(sub_header, sub_rows), meta),
        "levels": _write(out / "report_levels.csv", _csv_text(level_header, level_rows), meta),
    }


# --- entry point ------------------------------------------------------------------------

def _diary_args(values: Sequence[str] | None) -> dict[str, Path] | None:
    if not values:
        return None
    out = {}
    for item in values:
        engine, sep, path = item.partition("=")
        if not sep or engine not in ("llm", "classical", "hts"):
            raise ValueError(f"--diaries expects ENGINE=PATH, got {item!r}")
        out[engine] = Path(path)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarysim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path, help="run configuration JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        p.add_argument("--workers", type=int)
        return p

    p = common(sub.add_parser("synthesize", help="sample personas from block-group profiles"))
    p.add_argument("--count", type=int, help="number of personas")

    p = common(sub.add_parser("generate", help="generate diaries for the synthesized personas"))
    p.add_argument("--engine", choices=("llm", "classical", "both"))
    p.add_argument("--personas", type=Path)
    p.add_argument("--models", type=Path, help="saved classical models (skips calibration)")

    p = common(sub.add_parser("validate", help="score diaries against the survey"))
    p.add_argument("--engine", choices=("llm", "classical", "both"))
    p.add_argument("--personas", type=Path)
    p.add_argument("--diaries", nargs="+", metavar="ENGINE=PATH")

    p = common(sub.add_parser("report", help="emit plot data from scores.csv"))
    p.add_argument("--scores", type=Path)
    p.add_argument("--personas", type=Path)

    p = common(sub.add_parser("run", help="synthesize, generate, validate and report"))
    p.add_argument("--engine", choices=("llm", "classical", "both"))
    p.add_argument("--count", type=int)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {
            "seed": args.seed,
            "output_dir": args.out,
            "workers": args.workers,
            "engine": getattr(args, "engine", None),
            "persona_count": getattr(args, "count", None),
        }
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "synthesize":
            cmd_synthesize(cfg)
        elif args.command == "generate":
            cmd_generate(cfg, args.personas, args.models)
        elif args.command == "validate":
            cmd_validate(cfg, _diary_args(args.diaries), args.personas)
        elif args.command == "report":
            cmd_report(cfg, args.scores, args.personas)
        elif args.command == "run":
            cmd_synthesize(cfg)
            cmd_generate(cfg)
            cmd_validate(cfg)
            cmd_report(cfg)
    except (DataError, RunError, ValueError, LookupError, OSError, llm.BackendError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, DataError):
            err.update(path=exc.path, line=exc.line)
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
