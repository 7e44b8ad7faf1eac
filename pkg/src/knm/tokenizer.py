"""Code lexer, shared vocabulary, and token classification.

The engine works on whole lexemes, not subwords: a hand-written lexer
splits source text into identifiers, numbers, string/char literals,
operators, and punctuation. Newlines become an explicit end-of-line
marker token; characters that start no known lexeme become the unknown
marker. All components of an experiment share one :class:`Vocabulary`
so that every probability distribution lives over the same support.

Token classification buckets every lexeme into one of five classes
(punctuation, identifier, operator, keyword, literal) for the
evaluation breakdowns. The operator/punctuation split for tokens like
``::`` and ``->`` is a fixed, documented choice here: both are
operators; the punctuation set is exactly ``( ) { } [ ] ; , . :``.
"""

from __future__ import annotations

import json
import re
from enum import Enum
from keyword import kwlist as _python_kwlist
from typing import Iterable, Sequence

from .errors import EmptyCorpus, FormatError

# Reserved marker tokens. They cannot collide with real lexemes: the
# lexer never produces a token containing '<'  followed by letters and '>'.
EOL_TOKEN = "<eol>"
UNK_TOKEN = "<unk>"
EOL_ID = 0
UNK_ID = 1


class TokenClass(Enum):
    """Five-way token taxonomy used for per-class accuracy breakdowns."""

    PUNCTUATION = "punctuation"
    IDENTIFIER = "identifier"
    OPERATOR = "operator"
    KEYWORD = "keyword"
    LITERAL = "literal"


# Max-munch master pattern. Order matters: numbers before punctuation so
# ".5" lexes as one literal, multi-char operators before single-char ones.
_TOKEN_RE = re.compile(
    r"""
      (?P<ws>[ \t\r\f\v]+)
    | (?P<nl>\n)
    | (?P<num>
          0[xX][0-9a-fA-F]+[lL]?
        | \d+\.\d+(?:[eE][+-]?\d+)?[fFdD]?
        | \.\d+(?:[eE][+-]?\d+)?[fFdD]?
        | \d+(?:[eE][+-]?\d+)?[fFdDlL]?
      )
    | (?P<str>
          "(?:\\.|[^"\\\n])*"?
        | '(?:\\.|[^'\\\n])*'?
      )
    | (?P<id>[A-Za-z_$][A-Za-z0-9_$]*)
    | (?P<op>
          >>>= | >>> | <<= | >>= | \*\*= | //=
        | == | != | <= | >= | && | \|\| | \+\+ | -- | \+= | -= | \*= | /= | %=
        | &= | \|= | \^= | << | >> | -> | :: | \*\* | //
        | [+\-*/%=<>!&|^~?@]
      )
    | (?P<punct>[()\[\]{};,.:])
    | (?P<unk>.)
    """,
    re.VERBOSE,
)

_PUNCTUATION = frozenset("()[]{};,.:")

_OPERATORS = frozenset(
    [
        ">>>=", ">>>", "<<=", ">>=", "**=", "//=",
        "==", "!=", "<=", ">=", "&&", "||", "++", "--",
        "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
        "<<", ">>", "->", "::", "**", "//",
        "+", "-", "*", "/", "%", "=", "<", ">", "!", "&", "|", "^", "~", "?", "@",
    ]
)

# Classic reserved words only. true/false/null are literals in the Java
# grammar and are classified as such, not as keywords.
_JAVA_KEYWORDS = frozenset(
    """
    abstract assert boolean break byte case catch char class const continue
    default do double else enum extends final finally float for goto if
    implements import instanceof int interface long native new package
    private protected public return short static strictfp super switch
    synchronized this throw throws transient try void volatile while
    """.split()
)

# Python's own keyword list, minus the value-like names that the grammar
# treats as literals.
_PYTHON_KEYWORDS = frozenset(_python_kwlist) - {"True", "False", "None"}

_KEYWORDS = {"java": _JAVA_KEYWORDS, "python": _PYTHON_KEYWORDS}

_WORD_LITERALS = {
    "java": frozenset({"true", "false", "null"}),
    "python": frozenset({"True", "False", "None"}),
}

_NUMBER_RE = re.compile(
    r"""
      0[xX][0-9a-fA-F]+[lL]?
    | \d+\.\d+(?:[eE][+-]?\d+)?[fFdD]?
    | \.\d+(?:[eE][+-]?\d+)?[fFdD]?
    | \d+(?:[eE][+-]?\d+)?[fFdDlL]?
    """,
    re.VERBOSE,
)


def lex(text: str) -> list[str]:
    """Split source text into lexeme strings.

    Deterministic and total: whitespace (other than newline) separates
    tokens and is dropped, ``\\n`` becomes :data:`EOL_TOKEN`, and any
    character that starts no recognized lexeme becomes one
    :data:`UNK_TOKEN`.
    """
    tokens: list[str] = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "nl":
            tokens.append(EOL_TOKEN)
        elif kind == "unk":
            tokens.append(UNK_TOKEN)
        else:
            tokens.append(m.group())
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    """Inverse of :func:`lex` up to whitespace normalization.

    Tokens are joined with single spaces; the end-of-line marker becomes
    a newline with no surrounding spaces.
    """
    out: list[str] = []
    at_line_start = True
    for tok in tokens:
        if tok == EOL_TOKEN:
            out.append("\n")
            at_line_start = True
            continue
        if not at_line_start:
            out.append(" ")
        out.append(tok)
        at_line_start = False
    return "".join(out)


def classify(token: str, language: str = "java") -> TokenClass:
    """Bucket a lexeme into exactly one of the five token classes.

    The sets are disjoint by construction, so the order of checks does
    not matter semantically. The end-of-line marker counts as
    punctuation (it plays the same structural role as ``;``); the
    unknown marker falls through to identifier.
    """
    if not token:
        raise ValueError("cannot classify an empty token")
    if language not in _KEYWORDS:
        raise ValueError(f"unsupported language: {language!r}")
    if token == EOL_TOKEN:
        return TokenClass.PUNCTUATION
    if token in _PUNCTUATION:
        return TokenClass.PUNCTUATION
    if token in _OPERATORS:
        return TokenClass.OPERATOR
    if token in _KEYWORDS[language]:
        return TokenClass.KEYWORD
    if token in _WORD_LITERALS[language]:
        return TokenClass.LITERAL
    if token[0] in "\"'":
        return TokenClass.LITERAL
    if _NUMBER_RE.fullmatch(token):
        return TokenClass.LITERAL
    return TokenClass.IDENTIFIER


class Vocabulary:
    """Bijective token-string <-> integer-id mapping.

    Ids 0 and 1 are reserved for the end-of-line and unknown markers;
    the rest follow in first-occurrence order over the corpus the
    vocabulary was built from.
    """

    def __init__(self, tokens: Sequence[str]):
        if tokens[0] != EOL_TOKEN or tokens[1] != UNK_TOKEN:
            raise ValueError("vocabulary must start with the reserved markers")
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Map lexemes to ids; unseen lexemes map to the unknown id."""
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        id_to_token = self.id_to_token
        return [id_to_token[i] for i in ids]

    @classmethod
    def from_token_lists(cls, token_lists: Iterable[Sequence[str]]) -> "Vocabulary":
        """Build a vocabulary from already-lexed token sequences.

        Raises :class:`EmptyCorpus` when no tokens are found at all.
        """
        seen = dict.fromkeys([EOL_TOKEN, UNK_TOKEN])
        found = False
        for tokens in token_lists:
            for tok in tokens:
                found = True
                if tok not in seen:
                    seen[tok] = None
        if not found:
            raise EmptyCorpus("no tokens found in corpus")
        return cls(list(seen))

    @classmethod
    def from_sources(cls, sources: Iterable[str]) -> "Vocabulary":
        """Build a vocabulary from raw source texts."""
        return cls.from_token_lists(lex(text) for text in sources)

    def save(self, path: str) -> None:
        """Write one token per line; the line number is the id."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = fh.read().split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def build_vocabulary(sources: Iterable[str]) -> Vocabulary:
    """Alias for :meth:`Vocabulary.from_sources`."""
    return Vocabulary.from_sources(sources)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lex ``text`` and encode it with ``vocab``."""
    return vocab.encode(lex(text))


def read_corpus(path: str) -> list[tuple[str, str]]:
    """Read a line-delimited corpus of ``{"path": ..., "text": ...}`` records."""
    records: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append((rec["path"], rec["text"]))
            except (json.JSONDecodeError, TypeError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: bad corpus record: {e}") from e
    return records


def write_corpus(path: str, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec_path, text in records:
            fh.write(json.dumps({"path": rec_path, "text": text}) + "\n")
