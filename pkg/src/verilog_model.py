"""
Verilog lexer and module-header model.

The lexer is lossless: joining the text of every token reproduces the input
exactly, so tools built on it (the anonymizer, the decontamination tokenizer)
can rewrite individual tokens and leave everything else byte-identical.

Coverage is the synthesizable Verilog-2005 subset. SystemVerilog-only words
lex as ordinary identifiers or operators.
"""

import logging
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

from errors import HeaderParseError, LexError

logger = logging.getLogger(__name__)


class TokenKind(Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    ESCAPED_IDENTIFIER = "escaped-identifier"
    NUMBER = "number"
    STRING = "string"
    COMMENT = "comment"
    OPERATOR = "operator"
    WHITESPACE = "whitespace"
    # opaque, never renamed
    DIRECTIVE = "directive"
    SYSTEM = "system"


KEYWORDS = frozenset("""
always and assign automatic begin buf bufif0 bufif1 case casex casez cell cmos
config deassign default defparam design disable edge else end endcase
endconfig endfunction endgenerate endmodule endprimitive endspecify endtable
endtask event for force forever fork function generate genvar highz0 highz1 if
ifnone incdir include initial inout input instance integer join large liblist
library localparam macromodule medium module nand negedge nmos nor
noshowcancelled not notif0 notif1 or output parameter pmos posedge primitive
pull0 pull1 pulldown pullup pulsestyle_ondetect pulsestyle_onevent rcmos real
realtime reg release repeat rnmos rpmos rtran rtranif0 rtranif1 scalared
showcancelled signed small specify specparam strong0 strong1 supply0 supply1
table task time tran tranif0 tranif1 tri tri0 tri1 triand trior trireg unsigned
use uwire vectored wait wand weak0 weak1 while wire wor xnor xor
""".split())

DIRECTIONS = ("input", "output", "inout")

# directives whose argument runs to the end of the line
LINE_DIRECTIVES = frozenset((
    "define", "undef", "ifdef", "ifndef", "elsif", "include", "timescale",
    "default_nettype", "line", "unconnected_drive", "pragma",
))

OPERATORS = sorted((
    "<<<", ">>>", "===", "!==", "<=", ">=", "==", "!=", "&&", "||", "**",
    "<<", ">>", "~&", "~|", "~^", "^~", "->", "+:", "-:",
), key=len, reverse=True)

_WHITESPACE = re.compile(r"\s+")
_LINE_COMMENT = re.compile(r"//[^\n]*")
_STRING = re.compile(r'"(?:[^"\\\n]|\\.)*"')
_DIRECTIVE = re.compile(r"`[A-Za-z_][A-Za-z0-9_$]*")
_ESCAPED = re.compile(r"\\\S+")
_SYSTEM = re.compile(r"\$[A-Za-z0-9_$]+")
_BASED_NUMBER = re.compile(r"(?:\d[\d_]*\s*)?'[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ?_]+")
_DECIMAL_NUMBER = re.compile(r"\d[\d_]*(?:\.\d[\d_]*)?(?:[eE][+-]?\d[\d_]*)?")
_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")
_DIGITS = frozenset(string.digits)
_IDENT_START = frozenset(string.ascii_letters + "_")


class IdentClass(Enum):
    MODULE_NAME = "module-name"
    PARAM = "param"
    PORT = "port"
    OTHER = "other"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    span: Tuple[int, int]  # byte offsets [start, end)

    @property
    def is_identifier(self) -> bool:
        return self.kind in (TokenKind.IDENTIFIER, TokenKind.ESCAPED_IDENTIFIER)

    @property
    def is_trivia(self) -> bool:
        return self.kind in (TokenKind.WHITESPACE, TokenKind.COMMENT)

    @property
    def name(self) -> str:
        """Identifier name; `\\clk` and `clk` name the same identifier."""
        if self.kind is TokenKind.ESCAPED_IDENTIFIER:
            return self.text[1:]
        return self.text


@dataclass(frozen=True)
class Port:
    name: str
    direction: str  # input | output | inout | unspecified
    width: str = ""


@dataclass(frozen=True)
class ModuleHeader:
    name: str
    params: Tuple[Tuple[str, str], ...]
    ports: Tuple[Port, ...]
    raw_text: str
    # character offsets of raw_text inside the parsed source
    start: int = field(default=0, compare=False)
    end: int = field(default=0, compare=False)

    @property
    def param_names(self) -> List[str]:
        return [name for name, _ in self.params]

    @property
    def port_names(self) -> List[str]:
        return [port.name for port in self.ports]


@dataclass(frozen=True)
class Occurrence:
    name: str
    span: Tuple[int, int]
    ident_class: IdentClass
    token_index: int


@dataclass(frozen=True)
class IdentifierIndex:
    occurrences: Tuple[Occurrence, ...]

    def names(self, ident_class: Optional[IdentClass] = None) -> List[str]:
        """Distinct names in first-occurrence order, optionally of one class."""
        seen = []
        for occ in self.occurrences:
            if ident_class is not None and occ.ident_class is not ident_class:
                continue
            if occ.name not in seen:
                seen.append(occ.name)
        return seen


def _decode(source: Union[str, bytes]) -> str:
    if isinstance(source, str):
        return source
    try:
        return source.decode("utf-8")
    except UnicodeDecodeError as err:
        raise LexError("invalid UTF-8", err.start) from err


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _scan_directive(source: str, pos: int) -> int:
    """End position of the directive starting at pos."""
    match = _DIRECTIVE.match(source, pos)
    end = match.end()
    if match.group()[1:] not in LINE_DIRECTIVES:
        return end
    # line directives swallow the rest of the line, honouring `\` continuations
    while True:
        newline = source.find("\n", end)
        if newline == -1:
            return len(source)
        if source[end:newline].rstrip("\r").endswith("\\"):
            end = newline + 1
            continue
        return newline


def lex(source: Union[str, bytes]) -> List[Token]:
    """Split Verilog source into a lossless token stream."""
    text = _decode(source)
    tokens = []
    pos = 0
    byte_pos = 0
    length = len(text)
    while pos < length:
        char = text[pos]
        kind = None
        end = None
        if char.isspace():
            kind, end = TokenKind.WHITESPACE, _WHITESPACE.match(text, pos).end()
        elif text.startswith("//", pos):
            kind, end = TokenKind.COMMENT, _LINE_COMMENT.match(text, pos).end()
        elif text.startswith("/*", pos):
            close = text.find("*/", pos + 2)
            if close == -1:
                raise LexError("unterminated block comment", _byte_offset(text, pos))
            kind, end = TokenKind.COMMENT, close + 2
        elif char == '"':
            match = _STRING.match(text, pos)
            if match is None:
                raise LexError("unterminated string literal", _byte_offset(text, pos))
            kind, end = TokenKind.STRING, match.end()
        elif char == "`" and _DIRECTIVE.match(text, pos):
            kind, end = TokenKind.DIRECTIVE, _scan_directive(text, pos)
        elif char == "\\" and _ESCAPED.match(text, pos):
            kind, end = TokenKind.ESCAPED_IDENTIFIER, _ESCAPED.match(text, pos).end()
        elif char == "$" and _SYSTEM.match(text, pos):
            kind, end = TokenKind.SYSTEM, _SYSTEM.match(text, pos).end()
        elif (char in _DIGITS or char == "'") and _BASED_NUMBER.match(text, pos):
            kind, end = TokenKind.NUMBER, _BASED_NUMBER.match(text, pos).end()
        elif char in _DIGITS:
            kind, end = TokenKind.NUMBER, _DECIMAL_NUMBER.match(text, pos).end()
        elif char in _IDENT_START:
            end = _IDENTIFIER.match(text, pos).end()
            word = text[pos:end]
            kind = TokenKind.KEYWORD if word in KEYWORDS else TokenKind.IDENTIFIER
        else:
            kind = TokenKind.OPERATOR
            end = pos + 1
            for op in OPERATORS:
                if text.startswith(op, pos):
                    end = pos + len(op)
                    break
        piece = text[pos:end]
        size = len(piece.encode("utf-8"))
        tokens.append(Token(kind, piece, (byte_pos, byte_pos + size)))
        pos = end
        byte_pos += size
    return tokens


def code_tokens(tokens: List[Token]) -> List[Token]:
    return [tok for tok in tokens if not tok.is_trivia]


def _split_top_level(tokens: List[Token]) -> List[List[Token]]:
    """Split a token run on commas that are not nested in brackets."""
    groups = [[]]
    depth = 0
    for tok in tokens:
        if tok.kind is TokenKind.OPERATOR and tok.text in "([{":
            depth += 1
        elif tok.kind is TokenKind.OPERATOR and tok.text in ")]}":
            depth -= 1
        if depth == 0 and tok.kind is TokenKind.OPERATOR and tok.text == ",":
            groups.append([])
            continue
        groups[-1].append(tok)
    return [group for group in groups if code_tokens(group)]


def _matching_paren(tokens: List[Token], open_index: int) -> int:
    depth = 0
    for i in range(open_index, len(tokens)):
        tok = tokens[i]
        if tok.kind is not TokenKind.OPERATOR:
            continue
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
            if depth == 0:
                return i
    raise HeaderParseError("unbalanced parentheses in module header")


def _next_code(tokens: List[Token], index: int) -> int:
    while index < len(tokens) and tokens[index].is_trivia:
        index += 1
    return index


def _parse_param(group: List[Token]) -> Tuple[str, str]:
    # `parameter integer [3:0] N = 4` or plain `N=4`: the name is the last
    # identifier before `=`
    name = None
    default = ""
    for i, tok in enumerate(group):
        if tok.kind is TokenKind.OPERATOR and tok.text == "=":
            default = "".join(t.text for t in group[i + 1:]).strip()
            break
        if tok.is_identifier:
            name = tok.name
    if name is None:
        raise HeaderParseError("parameter declaration without a name")
    return name, default


def _parse_port(group: List[Token], previous: Optional[Port]) -> Port:
    direction = None
    width = ""
    name = None
    depth = 0
    range_start = None
    for i, tok in enumerate(group):
        if tok.kind is TokenKind.KEYWORD and tok.text in DIRECTIONS:
            direction = tok.text
        elif tok.kind is TokenKind.OPERATOR and tok.text == "[":
            if depth == 0:
                range_start = i
            depth += 1
        elif tok.kind is TokenKind.OPERATOR and tok.text == "]":
            depth -= 1
            if depth == 0 and name is None and range_start is not None:
                width = "".join(t.text for t in group[range_start:i + 1])
        elif tok.kind is TokenKind.OPERATOR and tok.text == "=" and depth == 0:
            break
        elif tok.is_identifier and depth == 0:
            name = tok.name
    if name is None:
        raise HeaderParseError("port declaration without a name")
    if direction is None:
        if previous is not None and previous.direction != "unspecified" and not width:
            # ANSI `input [7:0] a, b`: b inherits direction and range
            return Port(name, previous.direction, previous.width)
        return Port(name, "unspecified", width)
    return Port(name, direction, width)


def _header_from_tokens(tokens: List[Token], text: str) -> ModuleHeader:
    start = None
    for i, tok in enumerate(tokens):
        if tok.kind is TokenKind.KEYWORD and tok.text in ("module", "macromodule"):
            start = i
            break
    if start is None:
        raise HeaderParseError("no `module` keyword found")

    i = _next_code(tokens, start + 1)
    if i >= len(tokens) or not tokens[i].is_identifier:
        raise HeaderParseError("`module` is not followed by a module name")
    name = tokens[i].name
    i = _next_code(tokens, i + 1)

    params = []
    if i < len(tokens) and tokens[i].text == "#":
        i = _next_code(tokens, i + 1)
        if i >= len(tokens) or tokens[i].text != "(":
            raise HeaderParseError("`#` must open a parameter list")
        close = _matching_paren(tokens, i)
        params = [_parse_param(group) for group in _split_top_level(tokens[i + 1:close])]
        i = _next_code(tokens, close + 1)

    ports = []
    if i < len(tokens) and tokens[i].text == "(":
        close = _matching_paren(tokens, i)
        previous = None
        for group in _split_top_level(tokens[i + 1:close]):
            previous = _parse_port(group, previous)
            ports.append(previous)
        i = _next_code(tokens, close + 1)

    if i >= len(tokens) or tokens[i].text != ";":
        raise HeaderParseError("module header is missing its terminating `;`")

    seen = set()
    for port in ports:
        if port.name in seen:
            raise HeaderParseError(f"duplicate port name `{port.name}`")
        seen.add(port.name)
    seen = set()
    for param_name, _ in params:
        if param_name in seen:
            raise HeaderParseError(f"duplicate parameter name `{param_name}`")
        seen.add(param_name)

    char_start = sum(len(tok.text) for tok in tokens[:start])
    char_end = char_start + sum(len(tok.text) for tok in tokens[start:i + 1])
    return ModuleHeader(
        name=name,
        params=tuple(params),
        ports=tuple(ports),
        raw_text=text[char_start:char_end],
        start=char_start,
        end=char_end,
    )


def parse_header(source: Union[str, bytes]) -> ModuleHeader:
    """Extract name, parameters and ports of the first module header."""
    text = _decode(source)
    header = _header_from_tokens(lex(text), text)
    logger.debug("parsed header of %s: %d params, %d ports",
                 header.name, len(header.params), len(header.ports))
    return header


def classify(name: str, header: ModuleHeader) -> IdentClass:
    if name == header.name:
        return IdentClass.MODULE_NAME
    if name in header.param_names:
        return IdentClass.PARAM
    if name in header.port_names:
        return IdentClass.PORT
    return IdentClass.OTHER


def index_identifiers(source: Union[str, bytes], header: ModuleHeader) -> IdentifierIndex:
    """Classify every identifier token; comments and strings are never indexed."""
    occurrences = []
    for i, tok in enumerate(lex(source)):
        if tok.is_identifier:
            occurrences.append(Occurrence(tok.name, tok.span, classify(tok.name, header), i))
    return IdentifierIndex(tuple(occurrences))
