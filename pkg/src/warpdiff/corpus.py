"""Manifest loading/writing and compilation of source programs to Wasm.

The manifest format is documented by ``manifest.schema.json`` in this
package; ``docs/example-manifest.json`` shows a full configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import jsonschema

from .errors import CompileFailure, CompilerSpawnFailure, ParseError, ValidationError
from .executor import ExecutionPlan, digest
from .model import ExclusionRecord, RuntimeSpec, TestCase

log = logging.getLogger(__name__)

PLAN_DEFAULT_KEYS = ("repetitions", "timeout_s", "interleaving", "warmup_runs")


@dataclass(frozen=True)
class CompilerConfig:
    command_template: str
    extra_flags: tuple[str, ...] = ()
    opt_level: str = "O2"

    def __post_init__(self):
        object.__setattr__(self, "extra_flags", tuple(self.extra_flags))
        for ph in ("{src}", "{out}"):
            if self.command_template.count(ph) != 1:
                raise ValueError(f"compiler command_template must contain {ph} exactly once")

    def flags(self) -> list[str]:
        opt = [f"-{self.opt_level.lstrip('-')}"] if self.opt_level else []
        return opt + list(self.extra_flags)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command_template": self.command_template,
            "extra_flags": list(self.extra_flags),
            "opt_level": self.opt_level,
        }


@dataclass(frozen=True)
class Manifest:
    runtimes: tuple[RuntimeSpec, ...]
    cases: tuple[TestCase, ...]
    compiler: CompilerConfig | None = None
    defaults: dict[str, Any] = field(default_factory=dict)
    description: str = ""
    build_dir: str | None = None

    def plan(self, **overrides: Any) -> ExecutionPlan:
        """Execution plan from built-in defaults < manifest defaults < ``overrides``.

        ``None``-valued overrides are ignored, so unset CLI flags fall through.
        """
        kwargs = {k: v for k, v in self.defaults.items() if k in PLAN_DEFAULT_KEYS}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return ExecutionPlan(runtimes=self.runtimes, cases=self.cases, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "description": self.description,
            "runtimes": [r.to_dict() for r in self.runtimes],
            "cases": [c.to_dict() for c in self.cases],
            "compiler": self.compiler.to_dict() if self.compiler else None,
            "defaults": dict(self.defaults),
        }
        if self.build_dir is not None:
            d["build_dir"] = self.build_dir
        return d


def _schema() -> dict:
    return json.loads(resources.files("warpdiff").joinpath("manifest.schema.json").read_text())


def _field_path(parts: Iterable[Any]) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None:
        return None
    path = Path(p)
    return str(path if path.is_absolute() else (base / path).resolve())


def manifest_from_dict(raw: dict[str, Any], base_dir: Path) -> Manifest:
    errors = sorted(
        jsonschema.Draft202012Validator(_schema()).iter_errors(raw),
        key=lambda e: list(e.absolute_path),
    )
    if errors:
        raise ValidationError(errors[0].message, _field_path(errors[0].absolute_path))

    runtimes = []
    seen: set[str] = set()
    for i, r in enumerate(raw["runtimes"]):
        if r["id"] in seen:
            raise ValidationError(f"duplicate runtime id {r['id']!r}", f"runtimes[{i}].id")
        seen.add(r["id"])
        try:
            runtimes.append(RuntimeSpec.from_dict(r))
        except ValueError as exc:
            raise ValidationError(str(exc), f"runtimes[{i}].command_template") from exc

    compiler = None
    if raw.get("compiler"):
        try:
            compiler = CompilerConfig(
                command_template=raw["compiler"]["command_template"],
                extra_flags=tuple(raw["compiler"].get("extra_flags", ())),
                opt_level=raw["compiler"].get("opt_level", "O2"),
            )
        except ValueError as exc:
            raise ValidationError(str(exc), "compiler.command_template") from exc

    build_dir = _resolve(base_dir, raw.get("build_dir", "build"))
    cases = []
    seen = set()
    for i, c in enumerate(raw["cases"]):
        where = f"cases[{i}]"
        if c["id"] in seen:
            raise ValidationError(f"duplicate case id {c['id']!r}", f"{where}.id")
        seen.add(c["id"])
        c = dict(c)
        if "stdin_text" in c:
            c["stdin_data"] = None
            stdin = c.pop("stdin_text").encode()
        else:
            stdin = None
        if "expected_stdout_text" in c:
            if c.get("expected_stdout_digest"):
                raise ValidationError("give expected_stdout_text or expected_stdout_digest, not both", where)
            c["expected_stdout_digest"] = digest(c.pop("expected_stdout_text").encode())
        c["wasm_path"] = _resolve(base_dir, c.get("wasm_path"))
        c["source_path"] = _resolve(base_dir, c.get("source_path"))
        case = TestCase.from_dict(c)
        if stdin is not None:
            case = dataclasses.replace(case, stdin_data=stdin)

        have_wasm = case.wasm_path is not None and Path(case.wasm_path).exists()
        have_src = case.source_path is not None and Path(case.source_path).exists()
        if not have_wasm:
            if case.source_path is not None and not have_src:
                raise ValidationError(f"source file {case.source_path} does not exist", f"{where}.source_path")
            if not have_src:
                missing = case.wasm_path or "(none given)"
                raise ValidationError(f"wasm module {missing} does not exist and no source to compile", where)
            if compiler is None:
                raise ValidationError(
                    f"case {case.id!r} needs compiling but the manifest has no compiler", where
                )
        cases.append(case)

    return Manifest(
        runtimes=tuple(runtimes),
        cases=tuple(cases),
        compiler=compiler,
        defaults=dict(raw.get("defaults", {})),
        description=raw.get("description", ""),
        build_dir=build_dir,
    )


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return manifest_from_dict(raw, path.resolve().parent)


def manifest_json(m: Manifest) -> str:
    return json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n"


def write_manifest(m: Manifest, path: str | Path) -> None:
    Path(path).write_text(manifest_json(m))


def manifest_digest(m: Manifest) -> str:
    """Stable hash of the manifest's canonical form."""
    return hashlib.sha256(json.dumps(m.to_dict(), sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def output_path(case: TestCase, build_dir: str | Path | None) -> Path:
    if case.wasm_path:
        return Path(case.wasm_path)
    if build_dir is None:
        raise ValueError(f"case {case.id!r} has no wasm_path and no build directory was given")
    return Path(build_dir) / f"{case.id}.wasm"


def compiler_command(cfg: CompilerConfig, src: str, out: str) -> list[str]:
    argv: list[str] = []
    for token in cfg.command_template.split():
        if token == "{flags}":
            argv.extend(cfg.flags())
        else:
            argv.append(token.replace("{src}", src).replace("{out}", out))
    if "{flags}" not in cfg.command_template.split():
        argv.extend(cfg.flags())
    return argv


def compile_case(
    case: TestCase,
    cfg: CompilerConfig,
    build_dir: str | Path | None = None,
    force: bool = False,
) -> TestCase:
    """Compile ``case.source_path`` and return the case with ``wasm_path`` set.

    Skips the compiler when the output exists and is newer than the source,
    unless ``force``. Raises CompilerSpawnFailure when the compiler cannot be
    started at all and CompileFailure when it rejects this particular case.
    """
    if case.source_path is None:
        raise ValueError(f"case {case.id!r} has no source_path")
    src = Path(case.source_path)
    out = output_path(case, build_dir)
    if (
        not force
        and out.exists()
        and src.exists()
        and out.stat().st_mtime >= src.stat().st_mtime
    ):
        log.debug("%s: %s is up to date", case.id, out)
        return dataclasses.replace(case, wasm_path=str(out))

    out.parent.mkdir(parents=True, exist_ok=True)
    argv = compiler_command(cfg, str(src), str(out))
    try:
        proc = subprocess.run(argv, capture_output=True)
    except OSError as exc:
        raise CompilerSpawnFailure(f"cannot start compiler {argv[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise CompileFailure(case.id, proc.returncode, proc.stderr.decode("utf-8", errors="replace"))
    if not out.exists():
        raise CompileFailure(case.id, 0, f"compiler exited 0 but did not produce {out}")
    return dataclasses.replace(case, wasm_path=str(out))


def compile_cases(
    cases: Iterable[TestCase],
    cfg: CompilerConfig | None,
    build_dir: str | Path | None = None,
    force: bool = False,
) -> tuple[list[TestCase], list[ExclusionRecord]]:
    """Compile every case that has a source; failures become exclusions.

    Cases with only a precompiled module pass through untouched.
    CompilerSpawnFailure is not caught: a missing compiler aborts the phase.
    """
    ready: list[TestCase] = []
    excluded: list[ExclusionRecord] = []
    for case in cases:
        if case.source_path is None:
            ready.append(case)
            continue
        if cfg is None:
            if case.wasm_path and Path(case.wasm_path).exists():
                ready.append(case)
                continue
            raise ValueError(f"case {case.id!r} needs compiling but no compiler is configured")
        try:
            ready.append(compile_case(case, cfg, build_dir, force))
        except CompileFailure as exc:
            stderr = exc.stderr.strip()[-2000:] or "(no stderr)"
            log.warning("excluding %s: %s", case.id, exc)
            excluded.append(ExclusionRecord(case.id, "compile_failure", f"{exc}: {stderr}"))
    return ready, excluded
