"""
Identifier anonymization of Verilog modules (the Anony benchmark variant).

The module name becomes `module_name`; parameters, then ports, then every
other identifier in first-occurrence order become `val_0, val_1, ...`.
Only identifier tokens change, so the circuit topology, literals, comments
and whitespace survive byte-for-byte.

For example:

    module sync_fifo #(DEPTH=32, WIDTH=8)
        (clk, rst_n, wr_en, rd_en);

becomes

    module module_name #(val_0=32, val_1=8)
        (val_2, val_3, val_4, val_5);
"""

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Tuple

from errors import AnonymizationError, HeaderParseError, LexError
from verilog_model import (IdentifierIndex, ModuleHeader, Token, TokenKind,
                           lex, _header_from_tokens)

logger = logging.getLogger(__name__)

MODULE_PLACEHOLDER = "module_name"
PLACEHOLDER_PATTERN = re.compile(r"^(?:module_name|val_[0-9]+)$")


@dataclass(frozen=True)
class RenameMap:
    entries: Tuple[Tuple[str, str], ...]
    placeholder_count: int

    def as_dict(self) -> Dict[str, str]:
        return dict(self.entries)

    def to_json(self) -> str:
        payload = self.as_dict()
        payload["placeholder_count"] = self.placeholder_count
        return json.dumps(payload, indent=4)


@dataclass(frozen=True)
class Violation:
    kind: str  # leftover | bad-name | injectivity | consistency
    identifier: str
    span: Tuple[int, int]
    detail: str = ""


def placeholder(index: int) -> str:
    return f"val_{index}"


def _build_map(tokens: List[Token], header: ModuleHeader) -> RenameMap:
    entries = [(header.name, MODULE_PLACEHOLDER)]
    taken = {header.name}
    ordered = header.param_names + header.port_names
    ordered += [tok.name for tok in tokens if tok.is_identifier]
    count = 0
    for name in ordered:
        if name in taken:
            continue
        taken.add(name)
        entries.append((name, placeholder(count)))
        count += 1
    rename = RenameMap(tuple(entries), count)
    replacements = [new for _, new in rename.entries]
    # a pre-existing `val_k` is itself remapped, so it never collides
    if len(set(replacements)) != len(replacements):
        raise AnonymizationError("rename map is not injective")
    return rename


def _rewrite(tokens: List[Token], rename: Dict[str, str], strip_comments: bool) -> str:
    pieces = []
    for tok in tokens:
        if tok.is_identifier:
            pieces.append(rename[tok.name])
        elif strip_comments and tok.kind is TokenKind.COMMENT:
            # a block comment may separate two tokens; keep them apart
            pieces.append("" if tok.text.startswith("//") else " ")
        else:
            pieces.append(tok.text)
    return "".join(pieces)


def anonymize_module(source: str, strip_comments: bool = False) -> Tuple[str, RenameMap]:
    """Rename the module, its params/ports and all internal identifiers."""
    try:
        tokens = lex(source)
        header = _header_from_tokens(tokens, source)
    except (LexError, HeaderParseError) as err:
        raise AnonymizationError(f"cannot anonymize: {err}") from err
    rename = _build_map(tokens, header)
    anon_source = _rewrite(tokens, rename.as_dict(), strip_comments)
    logger.debug("anonymized %s with %d placeholders", header.name, rename.placeholder_count)
    return anon_source, rename


def anonymize_header(header: ModuleHeader) -> Tuple[str, RenameMap]:
    return anonymize_module(header.raw_text)


def verify_anonymized(anon_source: str, original_index: IdentifierIndex) -> List[Violation]:
    """Quality gate: list every way anon_source fails to be anonymous."""
    violations = []
    originals = {occ.name for occ in original_index.occurrences}
    anon_idents = [tok for tok in lex(anon_source) if tok.is_identifier]

    for tok in anon_idents:
        if PLACEHOLDER_PATTERN.match(tok.name):
            continue
        if tok.name in originals:
            violations.append(Violation("leftover", tok.name, tok.span,
                                        "original identifier survived anonymization"))
        else:
            violations.append(Violation("bad-name", tok.name, tok.span,
                                        "identifier is not a placeholder"))

    # with the token structure preserved, the k-th identifier of each stream
    # denote the same occurrence
    if len(anon_idents) == len(original_index.occurrences):
        sources_of = defaultdict(set)
        targets_of = defaultdict(set)
        first_span = {}
        for occ, tok in zip(original_index.occurrences, anon_idents):
            if not PLACEHOLDER_PATTERN.match(tok.name):
                continue  # already reported above
            sources_of[tok.name].add(occ.name)
            targets_of[occ.name].add(tok.name)
            first_span.setdefault(tok.name, tok.span)
            first_span.setdefault(occ.name, occ.span)
        for replacement, names in sources_of.items():
            if len(names) > 1:
                violations.append(Violation(
                    "injectivity", replacement, first_span[replacement],
                    "shared by " + ", ".join(sorted(names))))
        for name, replacements in targets_of.items():
            if len(replacements) > 1:
                violations.append(Violation(
                    "consistency", name, first_span[name],
                    "renamed to " + ", ".join(sorted(replacements))))
    else:
        logger.warning("identifier counts differ (%d original, %d anonymized); "
                       "skipping injectivity check",
                       len(original_index.occurrences), len(anon_idents))
    return violations


def anonymize_file(in_path: str, out_path: str, map_path: str = None,
                   strip_comments: bool = False) -> RenameMap:
    with open(in_path, encoding="utf-8") as fp:
        source = fp.read()
    anon_source, rename = anonymize_module(source, strip_comments=strip_comments)
    with open(out_path, "w", encoding="utf-8") as fp:
        fp.write(anon_source)
    if map_path:
        with open(map_path, "w", encoding="utf-8") as fp:
            fp.write(rename.to_json())
    logger.info("wrote %s (%d placeholders)", out_path, rename.placeholder_count)
    return rename
