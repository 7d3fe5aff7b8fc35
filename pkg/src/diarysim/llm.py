"""Prompt construction, inference-server backends and diary-response parsing."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import zlib
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .core import (
    DIARY_CSV_COLUMNS,
    CategorySchema,
    Diary,
    Persona,
    TripRecord,
    validate_diary,
)
from .personas import STREAM_LLM, SeededSampler

log = logging.getLogger(__name__)

CSV_HEADER = ",".join(DIARY_CSV_COLUMNS)


@dataclass(frozen=True)
class DecodingParams:
    temperature: float
    top_p: float

    def __post_init__(self):
        if not 0 < self.temperature <= 2:
            raise ValueError(f"temperature {self.temperature} outside (0, 2]")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")


@dataclass(frozen=True)
class GenerationConfig:
    model_name: str = "llama3"
    endpoint_url: str = "http://localhost:11434/api/generate"
    max_retries: int = 2
    request_timeout: float = 120.0
    employed_params: DecodingParams = DecodingParams(temperature=0.5, top_p=0.9)
    unemployed_params: DecodingParams = DecodingParams(temperature=0.3, top_p=0.8)
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")

    @classmethod
    def from_dict(cls, data: Mapping) -> GenerationConfig:
        data = dict(data)
        for key in ("employed_params", "unemployed_params"):
            if key in data and not isinstance(data[key], DecodingParams):
                data[key] = DecodingParams(**data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "endpoint_url": self.endpoint_url,
            "max_retries": self.max_retries,
            "request_timeout": self.request_timeout,
            "employed_params": vars(self.employed_params).copy(),
            "unemployed_params": vars(self.unemployed_params).copy(),
            "max_in_flight": self.max_in_flight,
        }


def decoding_params(persona: Persona, config: GenerationConfig) -> DecodingParams:
    return config.employed_params if persona.employed else config.unemployed_params


def _vehicles_phrase(n: int) -> str:
    return "no vehicles" if n == 0 else ("1 vehicle" if n == 1 else f"{n} vehicles")


def build_prompt(persona: Persona, land_use_text: str, schema: CategorySchema) -> str:
    people = "person" if persona.household_size == 1 else "people"
    lines = [
        "Act as the person described below and write your own travel diary for a "
        "typical single weekday (Monday to Friday).",
        "",
        "About you:",
        f"- Age bracket: {persona.age_bracket}",
        f"- Employment status: {persona.employment_status}",
        f"- Household vehicles: {_vehicles_phrase(persona.household_vehicles)}",
        f"- Household income: {persona.income_level}",
        f"- Home census block group (GEOID): {persona.geoid}",
        f"- Household size: {persona.household_size} {people}",
        "",
        "Where you live:",
        land_use_text,
        "",
        "Allowed trip purposes (use these labels exactly):",
        *(f"- {p}" for p in schema.purposes),
        "",
        "Allowed travel modes (use these labels exactly):",
        *(f"- {m}" for m in schema.modes),
        "",
        "Output format:",
        "Respond with CSV only, no explanations. The first line must be the header",
        CSV_HEADER,
        "followed by one line per trip in chronological order. Times are 24-hour HH:MM "
        "within the same day, end_time is after start_time, trips do not overlap, "
        "purpose is the purpose of the destination, and distance_miles is a number.",
    ]
    return "\n".join(lines) + "\n"


# --- parsing -----------------------------------------------------------------

@dataclass(frozen=True)
class RowDiagnostic:
    row: int | None  # 1-based data row, None for whole-response problems
    field: str | None
    message: str

    def __str__(self):
        where = f"row {self.row}" if self.row is not None else "response"
        if self.field:
            where += f" field {self.field}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class ParseFailure:
    diagnostics: tuple[RowDiagnostic, ...]

    def __str__(self):
        return "; ".join(str(d) for d in self.diagnostics)


_FENCE = re.compile(r"```[^\n`]*\n(.*?)(?:```|\Z)", re.DOTALL)
_TIME = re.compile(r"^\s*(\d{1,2})(?::(\d{2}))(?::\d{2})?\s*([AaPp]\.?[Mm]\.?)?\s*$")
_ROW_START = re.compile(r"^\s*\"?\d{1,2}:")
_DISTANCE = re.compile(r"^\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+))\s*(?:mi|miles?)?\s*$", re.IGNORECASE)


def _parse_clock(text: str) -> int:
    m = _TIME.match(text)
    if not m:
        raise ValueError(f"malformed time {text.strip()!r}")
    hours, minutes, meridiem = int(m.group(1)), int(m.group(2)), m.group(3)
    if meridiem:
        if not 1 <= hours <= 12:
            raise ValueError(f"malformed time {text.strip()!r}")
        hours = hours % 12 + (12 if meridiem[0] in "pP" else 0)
    if hours > 23 or minutes > 59:
        raise ValueError(f"time out of range {text.strip()!r}")
    return hours * 60 + minutes


def _is_header(cells: Sequence[str]) -> bool:
    norm = [c.strip().strip('"').lower().replace(" ", "_") for c in cells]
    return norm[:5] == list(DIARY_CSV_COLUMNS)


def _candidate_block(text: str) -> str:
    fenced = _FENCE.findall(text)
    if fenced:
        for block in fenced:
            if CSV_HEADER in block.replace(" ", "").lower():
                return block
        return fenced[0]
    return text


def parse_diary_response(text, schema: CategorySchema, persona_id: str = "",
                         source: str = "llm") -> Diary | ParseFailure:
    """Extract a diary from free-form model output.

    Code fences and prose around the CSV are ignored. Labels are matched
    case-insensitively after whitespace trimming. Any bad row, or rows that
    overlap once sorted by start time, make the whole response a failure.
    """
    try:
        return _parse(text, schema, persona_id, source)
    except Exception as exc:  # totality: model output must never crash a batch
        return ParseFailure((RowDiagnostic(None, None, f"unparseable response: {exc}"),))


def _parse(text, schema, persona_id, source):
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    text = str(text).replace("\x00", "")
    block = _candidate_block(text)
    lines = block.splitlines()

    header_at = None
    for i, line in enumerate(lines):
        cells = next(csv.reader([line]), [])
        if len(cells) >= 5 and _is_header(cells):
            header_at = i
            break

    if header_at is None:
        body = [ln for ln in lines if ln.count(",") >= 4]
        if not body:
            return ParseFailure((RowDiagnostic(None, None, "no CSV header or trip rows found"),))
    else:
        body = []
        for ln in lines[header_at + 1:]:
            if not ln.strip():
                if body:
                    break  # blank line ends the table
                continue
            if ln.count(",") < 4 and not _ROW_START.match(ln):
                break  # prose after the table
            body.append(ln)

    diagnostics: list[RowDiagnostic] = []
    trips: list[TripRecord] = []
    for rownum, cells in enumerate(csv.reader(io.StringIO("\n".join(body))), start=1):
        cells = [c.strip() for c in cells]
        if len(cells) != 5:
            diagnostics.append(RowDiagnostic(rownum, None, f"expected 5 fields, got {len(cells)}"))
            continue
        start_s, end_s, purpose_s, mode_s, dist_s = cells
        row_ok = True
        try:
            start = _parse_clock(start_s)
        except ValueError as exc:
            diagnostics.append(RowDiagnostic(rownum, "start_time", str(exc)))
            row_ok = False
        try:
            end = _parse_clock(end_s)
        except ValueError as exc:
            diagnostics.append(RowDiagnostic(rownum, "end_time", str(exc)))
            row_ok = False
        purpose = schema.canonical_purpose(purpose_s)
        if purpose is None:
            diagnostics.append(RowDiagnostic(rownum, "purpose", f"unknown purpose {purpose_s!r}"))
            row_ok = False
        mode = schema.canonical_mode(mode_s)
        if mode is None:
            diagnostics.append(RowDiagnostic(rownum, "mode", f"unknown mode {mode_s!r}"))
            row_ok = False
        m = _DISTANCE.match(dist_s)
        distance = float(m.group(1)) if m else None
        if distance is None:
            diagnostics.append(RowDiagnostic(rownum, "distance_miles", f"malformed distance {dist_s!r}"))
            row_ok = False
        elif distance < 0:
            diagnostics.append(RowDiagnostic(rownum, "distance_miles", f"negative distance {dist_s!r}"))
            row_ok = False
        if row_ok and end <= start:
            diagnostics.append(RowDiagnostic(rownum, "end_time", "end_time is not after start_time"))
            row_ok = False
        if row_ok:
            trips.append(TripRecord(start, end, purpose, mode, distance))

    if diagnostics:
        return ParseFailure(tuple(diagnostics))
    trips.sort(key=lambda t: (t.start_time, t.end_time))
    for i in range(1, len(trips)):
        if trips[i].start_time < trips[i - 1].end_time:
            diagnostics.append(RowDiagnostic(
                None, None,
                f"trips starting {trips[i - 1].start_time} and {trips[i].start_time} overlap"))
    if diagnostics:
        return ParseFailure(tuple(diagnostics))
    diary = Diary(persona_id, tuple(trips), source)
    violations = validate_diary(diary, schema)
    if violations:  # defensive: should be unreachable after the checks above
        return ParseFailure(tuple(RowDiagnostic(v.trip_index, v.kind, v.message) for v in violations))
    return diary


# --- backends --------------------------------------------------------------------

class BackendError(RuntimeError):
    """Transport-level failure (timeout, connection refused, HTTP error)."""


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    prompt: str
    params: DecodingParams
    persona_id: str = ""
    attempt: int = 0

    def payload(self) -> dict:
        """Wire body for a local inference server's generate endpoint."""
        return {
            "model": self.model,
            "prompt": self.prompt,
            "options": {"temperature": self.params.temperature, "top_p": self.params.top_p},
            "stream": False,
        }


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


class HTTPBackend:
    """Client for an Ollama-style ``/api/generate`` endpoint."""

    def __init__(self, endpoint_url: str, timeout: float = 120.0, client=None):
        import httpx

        self.endpoint_url = endpoint_url
        self._httpx = httpx
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, request: CompletionRequest) -> str:
        httpx = self._httpx
        try:
            resp = self._client.post(self.endpoint_url, json=request.payload())
            resp.raise_for_status()
            body = resp.json()
        except httpx.TimeoutException as exc:
            raise BackendError(f"timeout contacting {self.endpoint_url}: {exc}") from exc
        except httpx.HTTPStatusError as exc:
            raise BackendError(f"server error {exc.response.status_code} from {self.endpoint_url}") from exc
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendError(f"request to {self.endpoint_url} failed: {exc}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("response"), str):
            raise BackendError("response JSON has no 'response' text field")
        return body["response"]

    def close(self):
        self._client.close()


class MockBackend:
    """Scripted responses for tests and offline runs.

    ``responses`` maps a persona id to the texts returned on successive
    attempts (the last one repeats). Personas without a script use one of
    the ``default`` scripts, picked by a stable hash of the persona id, so
    results never depend on request order.
    """

    def __init__(self, responses: Mapping[str, Sequence[str]] | None = None,
                 default: Sequence[Sequence[str]] = ()):
        self.responses = {k: list(v) for k, v in (responses or {}).items()}
        self.default = [list(s) for s in default]
        self.requests: list[CompletionRequest] = []

    @classmethod
    def from_file(cls, path) -> MockBackend:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        default = [s if isinstance(s, list) else [s] for s in data.get("default", [])]
        responses = {k: (v if isinstance(v, list) else [v]) for k, v in data.get("responses", {}).items()}
        return cls(responses, default)

    def complete(self, request: CompletionRequest) -> str:
        self.requests.append(request)
        script = self.responses.get(request.persona_id)
        if script is None:
            if not self.default:
                raise BackendError(f"no scripted response for persona {request.persona_id!r}")
            script = self.default[zlib.crc32(request.persona_id.encode()) % len(self.default)]
        entry = script[min(request.attempt, len(script) - 1)]
        if entry is None:
            raise BackendError("scripted transport failure")
        return entry


# --- generation ----------------------------------------------------------------------

@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    kind: str  # "parse" or "transport"
    message: str


@dataclass(frozen=True)
class GenerationFailure:
    persona_id: str
    attempts: tuple[AttemptRecord, ...] = field(default_factory=tuple)

    def __str__(self):
        return f"{self.persona_id}: " + " | ".join(f"#{a.attempt} {a.kind}: {a.message}" for a in self.attempts)


def generate_diary(persona: Persona, land_use_text: str, backend: Backend, config: GenerationConfig,
                   sampler: SeededSampler | None = None,
                   schema: CategorySchema | None = None) -> Diary | GenerationFailure:
    """Prompt the backend, re-sending the same prompt on unusable output.

    ``sampler`` is accepted for interface symmetry with the classical
    generator; the backend's own sampling supplies the randomness.
    """
    schema = schema or CategorySchema()
    prompt = build_prompt(persona, land_use_text, schema)
    params = decoding_params(persona, config)
    attempts = []
    for attempt in range(config.max_retries + 1):
        request = CompletionRequest(config.model_name, prompt, params, persona.persona_id, attempt)
        try:
            text = backend.complete(request)
        except BackendError as exc:
            attempts.append(AttemptRecord(attempt, "transport", str(exc)))
            log.warning("persona %s attempt %d: %s", persona.persona_id, attempt, exc)
            continue
        result = parse_diary_response(text, schema, persona.persona_id)
        if isinstance(result, Diary):
            return result
        attempts.append(AttemptRecord(attempt, "parse", str(result)))
    return GenerationFailure(persona.persona_id, tuple(attempts))


def generate_batch(personas: Sequence[Persona], land_use: Mapping[str, str], backend: Backend,
                   config: GenerationConfig, seed: int = 0, workers: int | None = None,
                   schema: CategorySchema | None = None) -> list[Diary | GenerationFailure]:
    """Results come back in persona order whatever the concurrency."""
    workers = config.max_in_flight if workers is None else workers

    def one(item):
        i, persona = item
        return generate_diary(persona, land_use[persona.geoid], backend, config,
                              SeededSampler(seed, i, STREAM_LLM), schema)

    items = list(enumerate(personas))
    if workers <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))
