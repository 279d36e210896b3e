"""
External tool driver: synthesis check (Yosys), schematic rendering
(netlistsvg), compilation and testbench simulation (Icarus Verilog).

Every tool call goes through a CommandRunner so the whole flow can be
replayed with a ScriptedRunner when no EDA tools are installed.
"""

import logging
import os
import shutil
import subprocess
import tempfile
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import yaml

from errors import CandidateIOError, LexError, ToolchainConfigError, ToolNotFoundError
from verilog_model import TokenKind, code_tokens, lex

logger = logging.getLogger(__name__)

TIMEOUT_SENTINEL = -1
TIMEOUT_ENV = "MIRAGE_TOOL_TIMEOUT"

# each command is a sequence of argv steps run in order
Command = Tuple[Tuple[str, ...], ...]

DEFAULT_SYNTH = [["yosys", "-q", "-p", "read_verilog {in}; synth -auto-top"]]
DEFAULT_RENDER = [
    ["yosys", "-q", "-p", "read_verilog {in}; prep -auto-top; write_json {work}/netlist.json"],
    ["netlistsvg", "{work}/netlist.json", "-o", "{out}"],
]
DEFAULT_COMPILE = [["iverilog", "-o", "{work}/syntax.vvp", "{in}"]]
DEFAULT_SIM = [
    ["iverilog", "-o", "{work}/sim.vvp", "{in}", "{tb}"],
    ["vvp", "-n", "{work}/sim.vvp"],
]

REQUIRED_SLOTS = {
    "synth_cmd": ("{in}",),
    "render_cmd": ("{in}", "{out}"),
    "compile_cmd": ("{in}",),
    "sim_cmd": ("{in}", "{tb}"),
}


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    stdout: str
    stderr: str
    duration_ms: int
    timed_out: bool = False

    @property
    def output(self) -> str:
        return self.stdout + self.stderr


@dataclass(frozen=True)
class SuccessRule:
    require_zero_exit: bool = True
    failure_patterns: Tuple[str, ...] = ("fail", "error", "mismatch")
    success_pattern: Optional[str] = None

    def __post_init__(self):
        if any(not pattern for pattern in self.failure_patterns):
            raise ToolchainConfigError("failure patterns must be non-empty strings")
        if self.success_pattern is not None and not self.success_pattern:
            raise ToolchainConfigError("success pattern must be a non-empty string")

    def passes(self, result: RunResult) -> bool:
        if result.timed_out:
            return False
        if self.require_zero_exit and result.exit_code != 0:
            return False
        output = result.output.lower()
        if any(pattern.lower() in output for pattern in self.failure_patterns):
            return False
        if self.success_pattern is not None and self.success_pattern.lower() not in output:
            return False
        return True

    def describe(self) -> Dict:
        return {
            "require_zero_exit": self.require_zero_exit,
            "failure_patterns": list(self.failure_patterns),
            "success_pattern": self.success_pattern,
        }


def _as_command(value) -> Command:
    if not value:
        raise ToolchainConfigError("empty command template")
    if all(isinstance(part, str) for part in value):
        value = [value]
    return tuple(tuple(str(part) for part in step) for step in value)


@dataclass(frozen=True)
class ToolchainConfig:
    synth_cmd: Command = field(default_factory=lambda: _as_command(DEFAULT_SYNTH))
    render_cmd: Command = field(default_factory=lambda: _as_command(DEFAULT_RENDER))
    compile_cmd: Command = field(default_factory=lambda: _as_command(DEFAULT_COMPILE))
    sim_cmd: Command = field(default_factory=lambda: _as_command(DEFAULT_SIM))
    timeout_s: float = 60.0
    workdir: str = field(default_factory=lambda: os.path.join(tempfile.gettempdir(), "mirage-work"))
    jobs: int = 1
    success_rule: SuccessRule = field(default_factory=SuccessRule)

    def __post_init__(self):
        for name, slots in REQUIRED_SLOTS.items():
            joined = " ".join(" ".join(step) for step in getattr(self, name))
            for slot in slots:
                if slot not in joined:
                    raise ToolchainConfigError(f"{name} is missing the {slot} slot")
        if self.timeout_s <= 0:
            raise ToolchainConfigError("timeout_s must be positive")
        if self.jobs < 1:
            raise ToolchainConfigError("jobs must be at least 1")

    def describe(self) -> Dict:
        return {
            "synth_cmd": [list(step) for step in self.synth_cmd],
            "render_cmd": [list(step) for step in self.render_cmd],
            "compile_cmd": [list(step) for step in self.compile_cmd],
            "sim_cmd": [list(step) for step in self.sim_cmd],
            "timeout_s": self.timeout_s,
        }


def load_toolchain(path: Optional[str] = None, **overrides) -> ToolchainConfig:
    """Read a toolchain file (.toml, .yaml or .yml); MIRAGE_TOOL_TIMEOUT wins over the file."""
    data = {}
    if path is not None:
        try:
            if path.endswith((".yaml", ".yml")):
                with open(path, encoding="utf-8") as fp:
                    data = yaml.safe_load(fp) or {}
            else:
                with open(path, "rb") as fp:
                    data = tomllib.load(fp)
        except (OSError, tomllib.TOMLDecodeError, yaml.YAMLError) as err:
            raise ToolchainConfigError(f"cannot read toolchain file {path}: {err}") from err
    data.update(overrides)

    kwargs = {}
    for name in REQUIRED_SLOTS:
        if name in data:
            kwargs[name] = _as_command(data[name])
    for name, cast in (("timeout_s", float), ("workdir", str), ("jobs", int)):
        if name in data:
            kwargs[name] = cast(data[name])
    if "success_rule" in data:
        rule = dict(data["success_rule"])
        if "failure_patterns" in rule:
            rule["failure_patterns"] = tuple(rule["failure_patterns"])
        kwargs["success_rule"] = SuccessRule(**rule)

    env_timeout = os.environ.get(TIMEOUT_ENV)
    if env_timeout:
        try:
            kwargs["timeout_s"] = float(env_timeout)
        except ValueError as err:
            raise ToolchainConfigError(f"{TIMEOUT_ENV} is not a number: {env_timeout}") from err
    try:
        return ToolchainConfig(**kwargs)
    except TypeError as err:
        raise ToolchainConfigError(str(err)) from err


class CommandRunner(Protocol):
    def run(self, argv: Sequence[str], cwd: str, timeout_s: float) -> RunResult:
        ...


class SubprocessRunner:
    """Runs real tools; argv lists only, never a shell."""

    def run(self, argv: Sequence[str], cwd: str, timeout_s: float) -> RunResult:
        start = time.monotonic()
        try:
            proc = subprocess.run(list(argv), cwd=cwd, capture_output=True, encoding="utf-8",
                                  errors="replace", timeout=timeout_s)
        except (FileNotFoundError, PermissionError) as err:
            raise ToolNotFoundError(argv[0]) from err
        except subprocess.TimeoutExpired as err:
            return RunResult(TIMEOUT_SENTINEL, _text(err.stdout), _text(err.stderr),
                             int((time.monotonic() - start) * 1000), timed_out=True)
        return RunResult(proc.returncode, proc.stdout, proc.stderr,
                         int((time.monotonic() - start) * 1000))


def _text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bytes):
        return value.decode("utf-8", errors="replace")
    return value


@dataclass
class StubResponse:
    exit_code: int = 0
    stdout: str = ""
    stderr: str = ""
    duration_s: float = 0.0
    writes: Dict[str, bytes] = field(default_factory=dict)  # path -> bytes


class ScriptedRunner:
    """
    Replays scripted tool behaviour. The script receives the argv and the
    scratch directory and returns a StubResponse; files named in `writes`
    (paths as they appear in argv) are created with the given bytes. A
    response whose duration exceeds the timeout is reported as timed out
    without actually sleeping.
    """

    def __init__(self, script: Callable[[Sequence[str], str], StubResponse],
                 known_tools: Optional[Sequence[str]] = None):
        self.script = script
        self.known_tools = known_tools
        self.calls: List[Tuple[str, ...]] = []

    def run(self, argv: Sequence[str], cwd: str, timeout_s: float) -> RunResult:
        if self.known_tools is not None and argv[0] not in self.known_tools:
            raise ToolNotFoundError(argv[0])
        self.calls.append(tuple(argv))
        response = self.script(argv, cwd)
        if response.duration_s > timeout_s:
            return RunResult(TIMEOUT_SENTINEL, response.stdout, response.stderr,
                             int(timeout_s * 1000), timed_out=True)
        for path, payload in response.writes.items():
            with open(path, "wb") as fp:
                fp.write(payload)
        return RunResult(response.exit_code, response.stdout, response.stderr,
                         int(response.duration_s * 1000))


def _substitute(step: Sequence[str], slots: Dict[str, str]) -> List[str]:
    argv = []
    for part in step:
        for slot, value in slots.items():
            part = part.replace(slot, value)
        argv.append(part)
    return argv


class Scratch:
    """Private scratch directory under cfg.workdir, removed on exit."""

    def __init__(self, cfg: ToolchainConfig, keep: bool = False):
        self.cfg = cfg
        self.keep = keep
        self.path = None

    def __enter__(self) -> str:
        try:
            os.makedirs(self.cfg.workdir, exist_ok=True)
            self.path = tempfile.mkdtemp(prefix="run-", dir=self.cfg.workdir)
        except OSError as err:
            raise CandidateIOError(f"cannot create scratch dir in {self.cfg.workdir}: {err}") from err
        return self.path

    def __exit__(self, *exc):
        if not self.keep:
            shutil.rmtree(self.path, ignore_errors=True)
        return False


def run_command(command: Command, slots: Dict[str, str], cfg: ToolchainConfig,
                runner: CommandRunner, cwd: str) -> RunResult:
    """Run each step in order; stop at the first failing step."""
    stdout, stderr = [], []
    total_ms = 0
    result = None
    for step in command:
        argv = _substitute(step, slots)
        logger.debug("running %s", " ".join(argv))
        result = runner.run(argv, cwd, cfg.timeout_s)
        stdout.append(result.stdout)
        stderr.append(result.stderr)
        total_ms += result.duration_ms
        if result.timed_out or result.exit_code != 0:
            break
    return RunResult(result.exit_code, "".join(stdout), "".join(stderr), total_ms,
                     result.timed_out)


def check_synthesizable(module_path: str, cfg: ToolchainConfig,
                        runner: CommandRunner) -> Tuple[bool, RunResult]:
    if not os.path.isfile(module_path):
        raise CandidateIOError(f"no such module file: {module_path}")
    with Scratch(cfg) as work:
        result = run_command(cfg.synth_cmd, {"{in}": os.path.abspath(module_path), "{work}": work},
                             cfg, runner, work)
    passed = result.exit_code == 0 and not result.timed_out
    logger.debug("synth %s: %s", module_path, "ok" if passed else "failed")
    return passed, result


@dataclass(frozen=True)
class RenderOutcome:
    path: Optional[str]
    result: RunResult
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.path is not None


def render_diagram(module_path: str, cfg: ToolchainConfig, runner: CommandRunner,
                   out_path: Optional[str] = None) -> RenderOutcome:
    """Render a schematic; a failure means the caller discards the sample."""
    if out_path is None:
        stem = os.path.splitext(os.path.basename(module_path))[0]
        out_path = os.path.join(cfg.workdir, "diagrams", stem + ".svg")
    out_dir = os.path.dirname(os.path.abspath(out_path))
    try:
        os.makedirs(out_dir, exist_ok=True)
        if os.path.exists(out_path):
            os.unlink(out_path)  # a stale artifact must not count as output
    except OSError as err:
        raise CandidateIOError(f"cannot prepare {out_path}: {err}") from err
    with Scratch(cfg) as work:
        result = run_command(cfg.render_cmd, {"{in}": os.path.abspath(module_path),
                                              "{out}": os.path.abspath(out_path),
                                              "{work}": work},
                             cfg, runner, work)
    if result.timed_out:
        return RenderOutcome(None, result, "timeout")
    if result.exit_code != 0:
        return RenderOutcome(None, result, f"tool failure (exit {result.exit_code})")
    if not os.path.isfile(out_path):
        return RenderOutcome(None, result, "missing artifact")
    if os.path.getsize(out_path) == 0:
        return RenderOutcome(None, result, "empty artifact")
    return RenderOutcome(out_path, result)


def _ends_with_endmodule(body: str) -> bool:
    try:
        tokens = code_tokens(lex(body))
    except LexError:
        return body.rstrip().endswith("endmodule")
    return bool(tokens) and tokens[-1].kind is TokenKind.KEYWORD and tokens[-1].text == "endmodule"


def _declares_module(code: str) -> bool:
    try:
        tokens = code_tokens(lex(code))
    except LexError:
        return False
    return any(tok.kind is TokenKind.KEYWORD and tok.text == "module" for tok in tokens)


def assemble_candidate(header: str, body: str) -> str:
    """header + body, closed with exactly one `endmodule`."""
    if _declares_module(body):
        text = body
    else:
        text = header.rstrip() + "\n" + body
    if not _ends_with_endmodule(text):
        text = text.rstrip() + "\nendmodule"
    return text.rstrip() + "\n"


def compile_candidate(header: str, body: str, cfg: ToolchainConfig, runner: CommandRunner,
                      candidate_path: str) -> Tuple[bool, RunResult]:
    """Write the candidate to candidate_path and check that it compiles."""
    try:
        os.makedirs(os.path.dirname(os.path.abspath(candidate_path)), exist_ok=True)
        with open(candidate_path, "w", encoding="utf-8") as fp:
            fp.write(assemble_candidate(header, body))
    except OSError as err:
        raise CandidateIOError(f"cannot write candidate {candidate_path}: {err}") from err
    with Scratch(cfg) as work:
        result = run_command(cfg.compile_cmd, {"{in}": os.path.abspath(candidate_path),
                                               "{work}": work},
                             cfg, runner, work)
    return result.exit_code == 0 and not result.timed_out, result


def simulate_candidate(candidate_path: str, testbench_path: str, rule: SuccessRule,
                       cfg: ToolchainConfig, runner: CommandRunner) -> Tuple[bool, RunResult]:
    if not os.path.isfile(testbench_path):
        raise CandidateIOError(f"no such testbench: {testbench_path}")
    with Scratch(cfg) as work:
        result = run_command(cfg.sim_cmd, {"{in}": os.path.abspath(candidate_path),
                                           "{tb}": os.path.abspath(testbench_path),
                                           "{work}": work},
                             cfg, runner, work)
    return rule.passes(result), result
