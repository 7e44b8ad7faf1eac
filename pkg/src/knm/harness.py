"""Experiment orchestration: configs, evaluation runs, reports, sweeps.

A run builds everything from two corpora — the vocabulary and both
datastores come from the database corpus, the reference LM trains on a
separate corpus when one is configured — then scores every requested
mode on the test corpus, token by token and line by line. Reports come
in two shapes: an aligned human table, and line-delimited JSON records
(one per mode/metric cell) that are byte-stable across runs with the
same config and seed. Wall-clock throughput appears only in the human
table, never in the machine records.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import random
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .combiner import CombinerConfig, Mode, ReplayCache, complete_line, complete_token
from .datastore import Datastore, build_decoupled, build_full, save, serialize
from .errors import ConfigError, EmptyCorpus, KnmError
from .lm import (
    LanguageModel,
    NGramLm,
    RemoteLm,
    save_reference_lm,
    train_reference_lm,
)
from .metrics import (
    edit_similarity,
    exact_match,
    per_class_accuracy,
    render_tokens,
)
from .retrieval import RetrievalIndex
from .tokenizer import EOL_ID, TokenClass, Vocabulary, lex, read_corpus

LAMBDA_BINS = 20
#: Default slowdown guard: retrieval-augmented modes may be at most this
#: many times slower than the plain LM.
THROUGHPUT_FLOOR = 5.0

_ALL_MODES = tuple(Mode)


@dataclass(frozen=True)
class LmSpec:
    kind: str  # "ref" | "remote"
    order: int = 2
    smoothing_k: float = 1.0
    url: str = ""


def parse_lm_spec(spec: str) -> LmSpec:
    """Parse an LM spec string.

    ``ref:order=2,k=1.0`` configures the in-repo n-gram model (both
    settings optional); ``remote:http://host:port`` points at an HTTP
    backend.
    """
    if spec == "ref":
        return LmSpec("ref")
    if spec.startswith("remote:"):
        url = spec[len("remote:") :]
        if not url:
            raise ConfigError("remote LM spec needs a URL, e.g. remote:http://host:8080")
        return LmSpec("remote", url=url)
    if spec.startswith("ref:"):
        order = 2
        smoothing_k = 1.0
        for part in spec[len("ref:") :].split(","):
            part = part.strip()
            if not part:
                continue
            key, sep, value = part.partition("=")
            if not sep:
                raise ConfigError(f"bad reference LM option {part!r}")
            try:
                if key == "order":
                    order = int(value)
                elif key == "k":
                    smoothing_k = float(value)
                else:
                    raise ConfigError(f"unknown reference LM option {key!r}")
            except ValueError as e:
                raise ConfigError(f"bad reference LM option {part!r}: {e}") from e
        return LmSpec("ref", order=order, smoothing_k=smoothing_k)
    raise ConfigError(f"LM spec must start with 'ref' or 'remote:', got {spec!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; the seed pins all randomized pieces."""

    db_corpus: str
    test_corpus: str
    lm: str = "ref:order=2,k=1.0"
    # Optional separate training corpus for the reference LM. The
    # vocabulary still comes from db_corpus, which is what makes
    # domain-shift setups (LM trained elsewhere) expressible.
    lm_corpus: str | None = None
    dim: int = 64
    k: int = 8
    window_size: int = 8
    fixed_lambda: float = 0.1
    seed: int = 0
    language: str = "java"
    max_line_tokens: int = 32
    modes: tuple[Mode, ...] = _ALL_MODES

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"d must be >= 1, got {self.dim}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.window_size < 1:
            raise ConfigError(f"N must be >= 1, got {self.window_size}")
        if not 0.0 <= self.fixed_lambda <= 1.0:
            raise ConfigError(f"fixed_lambda must be in [0, 1], got {self.fixed_lambda}")
        if self.max_line_tokens < 1:
            raise ConfigError(f"max_line_tokens must be >= 1, got {self.max_line_tokens}")
        if not self.modes:
            raise ConfigError("at least one mode is required")


_CONFIG_KEYS = {
    "db_corpus": str,
    "test_corpus": str,
    "lm": str,
    "lm_corpus": str,
    "d": int,
    "k": int,
    "N": int,
    "fixed_lambda": float,
    "seed": int,
    "language": str,
    "max_line_tokens": int,
    "modes": str,
}

_KEY_TO_FIELD = {"d": "dim", "N": "window_size"}


def parse_config(path: str) -> ExperimentConfig:
    """Read a flat ``key = value`` config file (# starts a comment)."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            caster = _CONFIG_KEYS[key]
            try:
                cast = caster(value)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
            values[_KEY_TO_FIELD.get(key, key)] = cast
    if "db_corpus" not in values or "test_corpus" not in values:
        raise ConfigError(f"{path}: db_corpus and test_corpus are required")
    if "modes" in values:
        values["modes"] = _parse_modes(str(values["modes"]))
    try:
        return ExperimentConfig(**values)  # type: ignore[arg-type]
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_modes(text: str) -> tuple[Mode, ...]:
    modes = []
    for name in text.split(","):
        name = name.strip()
        if not name:
            continue
        try:
            modes.append(Mode(name))
        except ValueError as e:
            known = ", ".join(m.value for m in Mode)
            raise ConfigError(f"unknown mode {name!r} (known: {known})") from e
    if not modes:
        raise ConfigError("modes list is empty")
    return tuple(modes)


@dataclass
class ModeResult:
    mode: str
    token_accuracy: float
    per_class: dict[TokenClass, tuple[int, int]]
    line_exact_match: float
    line_edit_similarity: float
    db_bytes: int
    tokens_per_second: float
    lambda_histogram: list[int] = field(default_factory=lambda: [0] * LAMBDA_BINS)


@dataclass
class EvalReport:
    config: ExperimentConfig
    results: list[ModeResult]
    total_tokens: int
    total_lines: int

    def result(self, mode: Mode | str) -> ModeResult:
        wanted = mode.value if isinstance(mode, Mode) else mode
        for r in self.results:
            if r.mode == wanted:
                return r
        raise KeyError(f"mode {wanted!r} not in report")


@contextmanager
def _stage(name: str):
    """Prefix escaping errors with the pipeline stage that failed."""
    try:
        yield
    except (KnmError, OSError) as e:
        e.args = (f"[{name}] {e}",)
        raise


def _make_lm(
    config: ExperimentConfig, vocab: Vocabulary, db_token_lists: list[list[str]]
) -> LanguageModel:
    spec = parse_lm_spec(config.lm)
    if spec.kind == "remote":
        return RemoteLm(spec.url, vocab.size, dim=config.dim)
    if config.lm_corpus is not None:
        train_lists = [lex(text) for _, text in read_corpus(config.lm_corpus)]
    else:
        train_lists = db_token_lists
    sequences = [vocab.encode(tokens) for tokens in train_lists]
    return train_reference_lm(
        sequences,
        spec.order,
        spec.smoothing_k,
        vocab_size=vocab.size,
        dim=config.dim,
        seed=config.seed,
    )


def _line_spans(seq: list[int]) -> list[tuple[int, int]]:
    """(start, eol_position) for every newline-terminated line."""
    spans = []
    start = 0
    for t, tok in enumerate(seq):
        if tok == EOL_ID:
            spans.append((start, t))
            start = t + 1
    return spans


def _evaluate_mode(
    mode: Mode,
    test_seqs: list[list[int]],
    decoded_lists: list[list[str]],
    vocab: Vocabulary,
    lm: LanguageModel,
    stores: dict[str, Datastore],
    indexes: dict[str, RetrievalIndex],
    config: ExperimentConfig,
) -> ModeResult:
    which = "full" if mode is Mode.KNN_LM_BASELINE else "decoupled"
    store = stores[which]
    index = indexes[which]
    ccfg = CombinerConfig(
        mode=mode,
        k=config.k,
        window_size=config.window_size,
        fixed_lambda=config.fixed_lambda,
    )
    cut_rng = random.Random(config.seed * 100003 + 7)

    hits: list[bool] = []
    actual_tokens: list[str] = []
    histogram = [0] * LAMBDA_BINS
    em_sum = 0
    es_sum = 0.0
    n_lines = 0
    token_time = 0.0

    for seq, token_strings in zip(test_seqs, decoded_lists):
        cache = ReplayCache()
        t0 = time.perf_counter()
        for t in range(len(seq)):
            completion = complete_token(seq[:t], lm, index, store, ccfg, cache)
            hits.append(completion.token == seq[t])
            histogram[min(LAMBDA_BINS - 1, int(completion.weight * LAMBDA_BINS))] += 1
        token_time += time.perf_counter() - t0
        actual_tokens.extend(token_strings)

        for start, eol in _line_spans(seq):
            body_len = eol - start
            if body_len < 2:
                continue
            cut = start + cut_rng.randint(1, body_len - 1)
            generated = complete_line(
                seq[:cut], lm, index, store, ccfg, config.max_line_tokens, cache
            )
            ref_text = render_tokens(token_strings[cut : eol + 1])
            gen_text = render_tokens(vocab.decode(generated))
            em_sum += exact_match(gen_text, ref_text)
            es_sum += edit_similarity(gen_text, ref_text)
            n_lines += 1

    total = len(hits)
    accuracy = 100.0 * sum(hits) / total if total else 0.0
    return ModeResult(
        mode=mode.value,
        token_accuracy=accuracy,
        per_class=per_class_accuracy(hits, actual_tokens, config.language),
        line_exact_match=100.0 * em_sum / n_lines if n_lines else 0.0,
        line_edit_similarity=es_sum / n_lines if n_lines else 0.0,
        db_bytes=0 if mode is Mode.LM_ONLY else len(serialize(store)),
        tokens_per_second=total / token_time if token_time > 0 else 0.0,
        lambda_histogram=histogram,
    )


def run_experiment(config: ExperimentConfig, out_dir: str | None = None) -> EvalReport:
    """Build every artifact, evaluate every configured mode.

    With ``out_dir`` set, also writes the datastores, vocabulary,
    reference LM (when applicable), and both report renderings there.
    Deterministic given the config and seed.
    """
    with _stage("load-corpora"):
        db_records = read_corpus(config.db_corpus)
        test_records = read_corpus(config.test_corpus)
        db_token_lists = [lex(text) for _, text in db_records]
        test_token_lists = [lex(text) for _, text in test_records]
        if not any(db_token_lists):
            raise EmptyCorpus(f"{config.db_corpus}: no tokens")
        if not any(test_token_lists):
            raise EmptyCorpus(f"{config.test_corpus}: no tokens")

    with _stage("build-vocabulary"):
        vocab = Vocabulary.from_token_lists(db_token_lists)

    with _stage("train-lm"):
        lm = _make_lm(config, vocab, db_token_lists)

    with _stage("build-datastores"):
        db_seqs = [vocab.encode(tokens) for tokens in db_token_lists]
        stores = {
            "decoupled": build_decoupled(db_seqs, lm, config.dim),
            "full": build_full(db_seqs, lm, config.dim),
        }
        indexes = {name: RetrievalIndex(s) for name, s in stores.items()}

    with _stage("evaluate"):
        test_seqs = [vocab.encode(tokens) for tokens in test_token_lists]
        # Decoded strings, so unknown tokens bucket as the unknown marker.
        decoded_lists = [vocab.decode(seq) for seq in test_seqs]
        results = [
            _evaluate_mode(
                mode, test_seqs, decoded_lists, vocab, lm, stores, indexes, config
            )
            for mode in config.modes
        ]
        total_tokens = sum(len(s) for s in test_seqs)
        total_lines = sum(
            1
            for seq in test_seqs
            for start, eol in _line_spans(seq)
            if eol - start >= 2
        )

    report = EvalReport(config, results, total_tokens, total_lines)
    if out_dir is not None:
        with _stage("write-outputs"):
            _write_outputs(report, stores, vocab, lm, out_dir)
    return report


def _write_outputs(
    report: EvalReport,
    stores: dict[str, Datastore],
    vocab: Vocabulary,
    lm: LanguageModel,
    out_dir: str,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save(stores["decoupled"], os.path.join(out_dir, "db_decoupled.knmds"))
    save(stores["full"], os.path.join(out_dir, "db_full.knmds"))
    vocab.save(os.path.join(out_dir, "vocab.txt"))
    if isinstance(lm, NGramLm):
        save_reference_lm(lm, os.path.join(out_dir, "reference.lm"))
    with open(os.path.join(out_dir, "report.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(report_jsonl(report))
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(human_table(report))


def machine_records(report: EvalReport) -> list[dict]:
    """One record per (mode, metric) cell, sorted, JSON-ready.

    Timing cells are deliberately absent: everything here is a pure
    function of config and seed, so two identical runs serialize to
    identical bytes.
    """
    records: list[dict] = [
        {"mode": "*", "metric": "total_tokens", "value": report.total_tokens},
        {"mode": "*", "metric": "total_lines", "value": report.total_lines},
        {"mode": "*", "metric": "seed", "value": report.config.seed},
    ]
    for r in report.results:
        records.append({"mode": r.mode, "metric": "token_accuracy", "value": r.token_accuracy})
        records.append({"mode": r.mode, "metric": "line_exact_match", "value": r.line_exact_match})
        records.append(
            {"mode": r.mode, "metric": "line_edit_similarity", "value": r.line_edit_similarity}
        )
        records.append({"mode": r.mode, "metric": "db_bytes", "value": r.db_bytes})
        records.append(
            {"mode": r.mode, "metric": "lambda_histogram", "value": list(r.lambda_histogram)}
        )
        for cls, (correct, cls_total) in r.per_class.items():
            name = cls.value
            pct = 100.0 * correct / cls_total if cls_total else None
            records.append({"mode": r.mode, "metric": f"class_accuracy.{name}", "value": pct})
            records.append({"mode": r.mode, "metric": f"class_correct.{name}", "value": correct})
            records.append({"mode": r.mode, "metric": f"class_total.{name}", "value": cls_total})
    records.sort(key=lambda rec: (rec["mode"], rec["metric"]))
    return records


def report_jsonl(report: EvalReport) -> str:
    return "".join(
        json.dumps(rec, sort_keys=True) + "\n" for rec in machine_records(report)
    )


def human_table(report: EvalReport) -> str:
    """Aligned text table, one row per mode."""
    short = {
        TokenClass.PUNCTUATION: "punct",
        TokenClass.IDENTIFIER: "ident",
        TokenClass.OPERATOR: "op",
        TokenClass.KEYWORD: "kw",
        TokenClass.LITERAL: "lit",
    }
    headers = ["mode", "acc%", "EM%", "ES%", "tok/s", "DB bytes"]
    headers += [f"{short[cls]}%" for cls in TokenClass]
    rows = []
    for r in report.results:
        row = [
            r.mode,
            f"{r.token_accuracy:.2f}",
            f"{r.line_exact_match:.2f}",
            f"{r.line_edit_similarity:.2f}",
            f"{r.tokens_per_second:.0f}",
            str(r.db_bytes),
        ]
        for cls in TokenClass:
            correct, cls_total = r.per_class[cls]
            row.append(f"{100.0 * correct / cls_total:.2f}" if cls_total else "-")
        rows.append(row)
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    lines.append(
        f"({report.total_tokens} test tokens, {report.total_lines} test lines)"
    )
    return "\n".join(lines) + "\n"


def throughput_violations(report: EvalReport, floor: float = THROUGHPUT_FLOOR) -> list[str]:
    """Modes whose throughput breaks the slowdown guard vs the plain LM.

    Retrieval-augmented modes must be slower than lm_only (they do
    strictly more work) but no more than ``floor`` times slower.
    Returns human-readable violation strings; empty means all good.
    """
    try:
        base = report.result(Mode.LM_ONLY).tokens_per_second
    except KeyError:
        return []
    problems = []
    for r in report.results:
        if r.mode == Mode.LM_ONLY.value or r.tokens_per_second <= 0:
            continue
        if r.tokens_per_second >= base:
            problems.append(
                f"{r.mode}: {r.tokens_per_second:.0f} tok/s not below lm_only {base:.0f}"
            )
        elif r.tokens_per_second < base / floor:
            problems.append(
                f"{r.mode}: {r.tokens_per_second:.0f} tok/s is more than {floor:.1f}x "
                f"slower than lm_only {base:.0f}"
            )
    return problems


_SWEEP_FIELDS = {"k": "k", "N": "window_size", "lambda": "fixed_lambda", "fixed_lambda": "fixed_lambda"}


def sweep(
    config: ExperimentConfig,
    axis: str,
    values: list,
    csv_path: str | None = None,
) -> list[EvalReport]:
    """Re-run the experiment once per value of one hyper-parameter."""
    if axis not in _SWEEP_FIELDS:
        raise ConfigError(f"sweep axis must be one of k, N, lambda; got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    fld = _SWEEP_FIELDS[axis]
    caster = float if fld == "fixed_lambda" else int
    reports = []
    for value in values:
        try:
            cast = caster(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad sweep value {value!r} for axis {axis}: {e}") from e
        reports.append(run_experiment(dataclasses.replace(config, **{fld: cast})))
    if csv_path is not None:
        _write_sweep_csv(axis, values, reports, csv_path)
    return reports


def _write_sweep_csv(axis: str, values: list, reports: list[EvalReport], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["axis", "value", "mode", "token_accuracy", "line_exact_match",
             "line_edit_similarity", "db_bytes"]
        )
        for value, report in zip(values, reports):
            for r in report.results:
                writer.writerow(
                    [axis, value, r.mode, f"{r.token_accuracy:.6f}",
                     f"{r.line_exact_match:.6f}", f"{r.line_edit_similarity:.6f}",
                     r.db_bytes]
                )
