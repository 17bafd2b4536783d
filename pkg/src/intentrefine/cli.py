"""Command-line pipeline: extract, refine, convert, translate, verify, run.

Outputs are computed fully in memory and written atomically (temp file plus
rename), so a failing stage never leaves partial rule files behind. Every
error class maps to its own exit code; `--help` lists them.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import hashlib
import json
import logging
import os
import sys
import tempfile

from . import converter, extractor, factbase, refiner, translator, verifier
from . import capability as cap
from . import topology as topo
from . import errors

logger = logging.getLogger("intentrefine")

EXIT_CODES = {
    errors.DocumentSyntaxError: 2,
    errors.ValidationError: 3,
    errors.UnknownEndpoint: 4,
    errors.UnknownTemplate: 5,
    errors.UnknownSlot: 6,
    errors.DuplicateSlot: 7,
    errors.NoDerivableRequirement: 8,
    errors.UnsupportedAction: 9,
    errors.Unenforceable: 10,
    errors.UnknownControl: 11,
    errors.UnsupportedCapability: 12,
    errors.InconsistentNsf: 13,
    errors.NormalizationError: 14,
    errors.NothingToEnforce: 15,
    errors.CorruptKnowledgeBase: 16,
    errors.PersistError: 17,
}
EXIT_CODES_BY_NAME = {cls.__name__: code for cls, code in EXIT_CODES.items()}
EXIT_BYPASS = 18
EXIT_USAGE = 64

MANIFEST_NAME = "manifest.json"


def _exit_code_for(exc: errors.PipelineError) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write_outputs(out_dir: str, outputs: dict[str, str]) -> None:
    """Write every file via temp + atomic rename, only after all are computed."""
    os.makedirs(out_dir, exist_ok=True)
    for name, content in outputs.items():
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(content)
            os.replace(tmp, os.path.join(out_dir, name))
        except OSError as exc:
            with contextlib.suppress(OSError):
                os.unlink(tmp)
            raise errors.PersistError(f"cannot write {name}: {exc}")


def _manifest(outputs: dict[str, str]) -> str:
    digests = {
        name: hashlib.sha256(content.encode()).hexdigest()
        for name, content in outputs.items()
    }
    return json.dumps({"files": digests}, indent=2, sort_keys=True) + "\n"


@contextlib.contextmanager
def _kb_lock(kb_path: str | None):
    """Serialize concurrent invocations touching the same knowledge base."""
    if kb_path is None:
        yield
        return
    lock_path = kb_path + ".lock"
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _load_knowledge(args) -> factbase.Knowledge:
    base = (
        factbase.parse_knowledge(_read(args.knowledge))
        if getattr(args, "knowledge", None)
        else factbase.Knowledge()
    )
    if getattr(args, "cti", None):
        text = _read(args.cti)
        indicators = extractor.extract_indicators(text)
        logger.info("stage=extractor event=indicators count=%d", len(indicators))
        base = extractor.indicators_to_knowledge(indicators, base)
    return base


def _refine(args, knowledge: factbase.Knowledge):
    t = topo.parse_topology(_read(args.topology))
    intents = refiner.parse_hspl(_read(args.hspl))
    catalog = cap.load_catalog(_read(args.catalog))
    translator.check_renderer_totality(catalog)
    logger.info(
        "stage=refiner event=inputs intents=%d nodes=%d", len(intents), len(t.nodes)
    )

    kb_path = args.kb if (args.kb and not args.no_kb) else None
    with _kb_lock(kb_path):
        kb = refiner.load_kb(kb_path) if kb_path else None
        artifacts, paths, report, updated = refiner.refine(
            t, intents, knowledge, catalog, kb=kb
        )
        if kb_path:
            refiner.save_kb(updated, kb_path)
    for hid in report.hits:
        logger.info("stage=refiner event=kb_reuse intent=%s result=hit", hid)
    for hid in report.misses:
        logger.info("stage=refiner event=kb_reuse intent=%s result=miss", hid)
    logger.info(
        "stage=refiner event=inventory reused=%s", str(report.inventory_reused).lower()
    )
    return t, catalog, artifacts, paths


def _render_all(artifacts):
    policies = converter.build_mspl(artifacts)
    outputs: dict[str, str] = {}
    for device in sorted(policies):
        policy = policies[device]
        outputs[f"{device}.mspl.xml"] = converter.serialize_mspl(policy)
        rules = translator.translate_policy(policy)
        outputs[f"{device}.rules"] = translator.rules_file_content(rules)
        logger.info(
            "stage=translator event=rendered device=%s rules=%d", device, len(rules)
        )
    return outputs


# --- subcommands ------------------------------------------------------------

def cmd_extract(args) -> int:
    knowledge = _load_knowledge(args)
    _write_outputs(args.out, {"knowledge.json": factbase.serialize_knowledge(knowledge)})
    return 0


def cmd_refine(args) -> int:
    knowledge = _load_knowledge(args)
    _t, _catalog, artifacts, _paths = _refine(args, knowledge)
    _write_outputs(args.out, {"artifacts.json": refiner.artifacts_to_json(artifacts)})
    return 0


def cmd_convert(args) -> int:
    artifacts_path = args.artifacts or os.path.join(args.out, "artifacts.json")
    artifacts = refiner.artifacts_from_json(_read(artifacts_path))
    policies = converter.build_mspl(artifacts)
    outputs = {
        f"{device}.mspl.xml": converter.serialize_mspl(policies[device])
        for device in sorted(policies)
    }
    _write_outputs(args.out, outputs)
    return 0


def cmd_translate(args) -> int:
    if args.catalog:
        translator.check_renderer_totality(cap.load_catalog(_read(args.catalog)))
    outputs = {}
    for name in sorted(os.listdir(args.out)):
        if not name.endswith(".mspl.xml"):
            continue
        device = name[: -len(".mspl.xml")]
        policy = converter.parse_mspl(_read(os.path.join(args.out, name)))
        rules = translator.translate_policy(policy)
        outputs[f"{device}.rules"] = translator.rules_file_content(rules)
    _write_outputs(args.out, outputs)
    return 0


def cmd_verify(args) -> int:
    t = topo.parse_topology(_read(args.topology))
    artifacts = refiner.artifacts_from_json(_read(args.artifacts))
    catalog = cap.load_catalog(_read(args.catalog))
    flow = verifier.FlowSpec(
        src_ip=args.src_ip, dst_ip=args.dst_ip, l7_host=args.l7_host
    )
    blocked, report = verifier.verify_deployment(
        t, artifacts, catalog, flow, args.subject, args.object
    )
    for line in report:
        print(line)
    return 0 if blocked else EXIT_BYPASS


def cmd_run(args) -> int:
    knowledge = _load_knowledge(args)
    _t, _catalog, artifacts, _paths = _refine(args, knowledge)
    outputs = {
        "knowledge.json": factbase.serialize_knowledge(knowledge),
        "artifacts.json": refiner.artifacts_to_json(artifacts),
    }
    outputs.update(_render_all(artifacts))
    outputs[MANIFEST_NAME] = _manifest(outputs)
    _write_outputs(args.out, outputs)
    logger.info("stage=cli event=done files=%d", len(outputs))
    return 0


# --- argument parsing -------------------------------------------------------

EXIT_CODE_HELP = "exit codes: 0 ok; " + "; ".join(
    f"{code} {cls.__name__}" for cls, code in sorted(EXIT_CODES.items(), key=lambda i: i[1])
) + f"; {EXIT_BYPASS} bypass detected by verify"


def _add_io_flags(p, topology=False, hspl=False, cti=False, knowledge=False,
                  catalog=False, kb=False, out=False, artifacts=False):
    if topology:
        p.add_argument("--topology", required=True, help="topology YAML document")
    if hspl:
        p.add_argument("--hspl", required=True, help="HSPL intent XML document")
    if cti:
        p.add_argument("--cti", help="natural-language CTI report (.txt)")
    if knowledge:
        p.add_argument("--knowledge", help="knowledge envelope JSON (base/input)")
    if catalog:
        p.add_argument("--catalog", required=catalog == "required",
                       help="security-control catalog JSON")
    if kb:
        p.add_argument("--kb", help="knowledge-base file for result reuse")
        p.add_argument("--no-kb", action="store_true",
                       help="disable knowledge-base reuse and updates")
    if out:
        p.add_argument("--out", required=True, help="output directory")
    if artifacts:
        p.add_argument("--artifacts", help="rule artifact JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentrefine",
        description="Refine security intents and CTI indicators into "
                    "deployable filtering rules.",
        epilog=EXIT_CODE_HELP,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="derive indicator knowledge from a CTI report")
    _add_io_flags(p, cti=True, knowledge=True, out=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("refine", help="allocate enforcement and emit rule artifacts")
    _add_io_flags(p, topology=True, hspl=True, cti=True, knowledge=True,
                  catalog="required", kb=True, out=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("convert", help="build per-device MSPL policies from artifacts")
    _add_io_flags(p, out=True, artifacts=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("translate", help="render MSPL policies to native rules")
    _add_io_flags(p, out=True, catalog=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("verify", help="symbolically check a flow against a deployment")
    _add_io_flags(p, topology=True, catalog="required")
    p.add_argument("--artifacts", required=True, help="rule artifact JSON file")
    p.add_argument("--subject", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--src-ip", required=True)
    p.add_argument("--dst-ip", required=True)
    p.add_argument("--l7-host")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="full pipeline: extract, refine, convert, translate")
    _add_io_flags(p, topology=True, hspl=True, cti=True, knowledge=True,
                  catalog="required", kb=True, out=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except errors.Unenforceable as exc:
        print(f"error: Unenforceable: {exc}", file=sys.stderr)
        return EXIT_CODES[errors.Unenforceable]
    except errors.PipelineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
