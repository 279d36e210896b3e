"""
Record types that travel between the harness, the preference builder and
the CLI, with their JSON / JSON Lines encodings.

Manifests and completion files hold one JSON object per line. Paths inside
a manifest are resolved against the manifest's own directory.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from hashlib import sha256
from typing import Dict, Iterable, List, Optional

from errors import JudgingError
from metrics import MODES, VARIANTS, BreakdownRow, RefusalRates

logger = logging.getLogger(__name__)

CATEGORIES = ("combinational", "sequential", "fsm", "math")


def _resolve(base_dir: str, ref: Optional[str]) -> Optional[str]:
    if not ref or os.path.isabs(ref):
        return ref
    return os.path.normpath(os.path.join(base_dir, ref))


@dataclass(frozen=True)
class BenchmarkSample:
    id: str
    header: str
    testbench_ref: str
    category: str = ""
    body_ref: Optional[str] = None
    diagram_ref: Optional[str] = None
    description: str = ""
    anon_header: Optional[str] = None
    anon_body_ref: Optional[str] = None
    anon_diagram_ref: Optional[str] = None
    anon_testbench_ref: Optional[str] = None
    token_count: Optional[int] = None
    anon_token_count: Optional[int] = None

    _REFS = ("testbench_ref", "body_ref", "diagram_ref", "anon_body_ref",
             "anon_diagram_ref", "anon_testbench_ref")

    @classmethod
    def from_dict(cls, data: Dict, base_dir: str = ".") -> "BenchmarkSample":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in known}
        missing = {"id", "header", "testbench_ref"} - kwargs.keys()
        if missing:
            raise JudgingError(f"manifest entry {data.get('id', '?')} lacks {sorted(missing)}")
        kwargs["id"] = str(kwargs["id"])
        for ref in cls._REFS:
            if ref in kwargs:
                kwargs[ref] = _resolve(base_dir, kwargs[ref])
        return cls(**kwargs)

    def header_for(self, variant: str) -> str:
        if variant == "anony":
            if not self.anon_header:
                raise JudgingError(f"sample {self.id} has no anonymized header")
            return self.anon_header
        return self.header

    def testbench_for(self, variant: str) -> str:
        if variant == "anony":
            if not self.anon_testbench_ref:
                raise JudgingError(f"sample {self.id} has no anonymized testbench")
            return self.anon_testbench_ref
        return self.testbench_ref


@dataclass(frozen=True)
class AlignSample:
    """Source sample for preference pairs: header, reference code, diagram."""
    id: str
    header: str
    code: str
    diagram_ref: str

    @classmethod
    def from_dict(cls, data: Dict, base_dir: str = ".") -> "AlignSample":
        code = data.get("code")
        if code is None and data.get("code_ref"):
            with open(_resolve(base_dir, data["code_ref"]), encoding="utf-8") as fp:
                code = fp.read()
        if code is None or "header" not in data or "id" not in data:
            raise JudgingError(f"alignment entry {data.get('id', '?')} lacks id, header or code")
        return cls(str(data["id"]), data["header"], code, data.get("diagram_ref", ""))


@dataclass(frozen=True)
class CompletionRecord:
    sample_id: str
    variant: str
    mode: str
    completion_index: int
    text: str

    def __post_init__(self):
        if self.variant not in VARIANTS or self.mode not in MODES:
            raise JudgingError(f"bad cell ({self.variant}, {self.mode}) for {self.sample_id}")

    @classmethod
    def from_dict(cls, data: Dict) -> "CompletionRecord":
        try:
            return cls(str(data["sample_id"]), data["variant"], data["mode"],
                       int(data["completion_index"]), data["text"])
        except KeyError as err:
            raise JudgingError(f"completion record lacks {err}") from err

    @property
    def key(self):
        return (self.sample_id, self.variant, self.mode, self.completion_index)


@dataclass(frozen=True)
class JudgedRecord:
    sample_id: str
    variant: str
    mode: str
    completion_index: int
    refused: bool
    syntax_pass: bool
    func_pass: bool
    detail: str = ""

    @property
    def key(self):
        return (self.sample_id, self.variant, self.mode, self.completion_index)

    def get_hash(self) -> str:
        return sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass
class CellResult:
    variant: str
    mode: str
    n: int
    problems: int
    syntax: Dict[str, float] = field(default_factory=dict)      # "pass@k" -> percent
    functional: Dict[str, float] = field(default_factory=dict)


@dataclass
class ComparisonRow:
    label: str
    condition: str
    b: int
    c: int
    variant_used: str
    statistic: float
    p_value: float
    adjusted_p: float
    rejected: bool


@dataclass
class EvalReport:
    model: str
    k_list: List[int]
    outcome_switch: str
    cells: List[CellResult] = field(default_factory=list)
    breakdown: Dict[str, BreakdownRow] = field(default_factory=dict)    # by variant
    refusal: Dict[str, RefusalRates] = field(default_factory=dict)      # by variant
    sample_flags: Dict[str, Dict[str, bool]] = field(default_factory=dict)  # "variant/mode" -> id -> pass
    categories: Dict[str, Dict[str, float]] = field(default_factory=dict)
    comparisons: List[ComparisonRow] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def cell(self, variant: str, mode: str) -> Optional[CellResult]:
        for cell in self.cells:
            if cell.variant == variant and cell.mode == mode:
                return cell
        return None

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=4)

    @classmethod
    def from_dict(cls, data: Dict) -> "EvalReport":
        return cls(
            model=data["model"],
            k_list=list(data["k_list"]),
            outcome_switch=data["outcome_switch"],
            cells=[CellResult(**c) for c in data.get("cells", [])],
            breakdown={k: BreakdownRow(**v) for k, v in data.get("breakdown", {}).items()},
            refusal={k: RefusalRates(**v) for k, v in data.get("refusal", {}).items()},
            sample_flags=data.get("sample_flags", {}),
            categories=data.get("categories", {}),
            comparisons=[ComparisonRow(**c) for c in data.get("comparisons", [])],
            metadata=data.get("metadata", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def flag_key(variant: str, mode: str) -> str:
    return f"{variant}/{mode}"


def read_jsonl(path: str) -> List[Dict]:
    rows = []
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise JudgingError(f"{path}:{lineno}: {err}") from err
    return rows


def write_jsonl(path: str, rows: Iterable) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fp:
        for row in rows:
            if not isinstance(row, dict):
                row = asdict(row)
            fp.write(json.dumps(row) + "\n")
            count += 1
    return count


def load_manifest(path: str) -> List[BenchmarkSample]:
    base_dir = os.path.dirname(os.path.abspath(path))
    samples = [BenchmarkSample.from_dict(row, base_dir) for row in read_jsonl(path)]
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise JudgingError(f"duplicate sample ids in {path}")
    logger.info("loaded %d samples from %s", len(samples), path)
    return samples


def load_align_manifest(path: str) -> List[AlignSample]:
    base_dir = os.path.dirname(os.path.abspath(path))
    return [AlignSample.from_dict(row, base_dir) for row in read_jsonl(path)]


def load_completions(path: str) -> List[CompletionRecord]:
    records = [CompletionRecord.from_dict(row) for row in read_jsonl(path)]
    logger.info("loaded %d completions from %s", len(records), path)
    return records
