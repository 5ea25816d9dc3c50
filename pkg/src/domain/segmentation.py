"""Structure-aware segmentation of page-structured documents

Stage 1 of the pipeline: locate the table of contents, resolve its entries
to page spans, and cut the document into one segment per entry with cleaned
text and merged tables.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .exceptions import TocNotFoundError, TocUnparseableError
from .models import DocumentBundle, Page, RawTable, Segment, TocEntry

logger = logging.getLogger(__name__)

PAGE_BREAK = "\f"

DEFAULT_TOC_HEADINGS: Tuple[str, ...] = ("table of contents", "contents")

# "<number> <title> <leader> <page>"; the leader is dots, an ellipsis, or a whitespace gap
_TOC_LINE_RE = re.compile(
    r"^\s*(?P<number>\d+(?:\.\d+)*\.?)?\s*(?P<title>[^\s].*?)\s*"
    r"(?P<leader>\.{2,}|…+|\t+|\s{2,}|\s)\s*(?P<page>\d{1,4})\s*$"
)
_DOTTED_RE = re.compile(r"(\.{2,}|…+)\s*\d{1,4}\s*$")
_PAGE_NUMBER_LINE_RE = re.compile(r"^\s*(?:page\s+)?[-–—]?\s*\d{1,4}\s*[-–—]?\s*$", re.IGNORECASE)
_HORIZONTAL_WS_RE = re.compile(r"[ \t ]+")
_DIGITS_RE = re.compile(r"\d+")

# Longer lines are body text, never boilerplate
MAX_BOILERPLATE_LINE = 120


@dataclass(frozen=True)
class SegmentationThresholds:
    """Heuristic constants; exposed through the pipeline config"""
    toc_min_lines: int = 3
    header_repeat_ratio: float = 0.6
    toc_headings: Tuple[str, ...] = DEFAULT_TOC_HEADINGS


@dataclass
class SegmentationResult:
    """Segments plus document-level metadata"""
    doc_id: str
    title: str
    toc_page: int
    entries: List[TocEntry]
    segments: List[Segment]
    warnings: List[str] = field(default_factory=list)


def _has_letters(text: str) -> bool:
    return any(ch.isalpha() for ch in text)


def _toc_line_match(line: str) -> Optional[re.Match]:
    match = _TOC_LINE_RE.match(line)
    if not match or not _has_letters(match.group("title")):
        return None
    # a one-space gap before the page only counts on numbered lines ("SASB Standard | page 2" is a footer)
    gap = line[match.end("title"):match.start("page")]
    if len(gap) == 1 and gap.isspace() and not match.group("number"):
        return None
    return match


def extract_title(bundle: DocumentBundle) -> str:
    """Bundle title, else the first non-blank line of page 1"""
    if bundle.title.strip():
        return bundle.title.strip()
    first = bundle.page(1)
    if first:
        for line in first.text.splitlines():
            if line.strip():
                return _HORIZONTAL_WS_RE.sub(" ", line.strip())
    return bundle.doc_id


def _is_toc_heading(line: str, headings: Sequence[str]) -> bool:
    return line.strip().lower().rstrip(":") in headings


def find_toc_page(bundle: DocumentBundle, thresholds: SegmentationThresholds = SegmentationThresholds()) -> int:
    """
    First page that looks like a table of contents.

    A page qualifies when it has a contents heading and at least
    `toc_min_lines` page-number-terminated lines, or, without a heading,
    at least `toc_min_lines` dotted-leader lines.
    """
    for page in bundle.pages:
        lines = page.text.splitlines()
        has_heading = any(_is_toc_heading(line, thresholds.toc_headings) for line in lines)
        numbered = sum(1 for line in lines if _toc_line_match(line))
        dotted = sum(1 for line in lines if _toc_line_match(line) and _DOTTED_RE.search(line))
        if has_heading and numbered >= thresholds.toc_min_lines:
            return page.number
        if dotted >= thresholds.toc_min_lines:
            return page.number
    raise TocNotFoundError(f"No table of contents found in {bundle.doc_id} ({len(bundle.pages)} pages)")


def parse_toc(
    bundle: DocumentBundle,
    toc_page: int,
    boilerplate: Optional[FrozenSet[str]] = None,
) -> List[TocEntry]:
    """
    Parse TOC lines into entries with resolved page spans.

    Lines in `boilerplate` (running headers and footers) are skipped, as are
    entries pointing at or before the TOC page itself.

    Each entry ends the page before the next one starts; the last ends on
    the last page of the bundle. An entry that shares its start page with a
    later entry is truncated to nothing and dropped.
    """
    page = bundle.page(toc_page)
    if page is None:
        raise TocUnparseableError(f"TOC page {toc_page} is outside the bundle")

    raw: List[Tuple[str, str, int]] = []
    for line in page.text.splitlines():
        if boilerplate and _boilerplate_key(line) in boilerplate:
            continue
        match = _toc_line_match(line)
        if not match:
            continue
        if int(match.group("page")) <= toc_page:
            logger.warning(f"TOC line {line.strip()!r} points at page {match.group('page')}, not after the TOC; skipped")
            continue
        number = (match.group("number") or "").rstrip(".")
        title = _HORIZONTAL_WS_RE.sub(" ", match.group("title")).strip(" .")
        raw.append((number, title, int(match.group("page"))))

    if len(raw) < 2:
        raise TocUnparseableError(f"Only {len(raw)} TOC entries recovered from page {toc_page}")

    # stable: equal start pages keep document order
    ordered = sorted(raw, key=lambda item: item[2])

    entries: List[TocEntry] = []
    last_page = bundle.last_page
    for i, (number, title, start) in enumerate(ordered):
        if i + 1 < len(ordered):
            end = ordered[i + 1][2] - 1
        else:
            end = max(last_page, start)
        if end < start:
            logger.warning(f"TOC entry {title!r} shares start page {start} with a later entry; dropped")
            continue
        entries.append(TocEntry(number=number, title=title, start_page=start, end_page=end))
    return entries


def merge_multipage_tables(tables: Sequence[RawTable]) -> List[RawTable]:
    """
    Concatenate tables split across consecutive pages.

    A table continues the previous one when it sits on the next page, has the
    same arity, and either repeats the header or carries a continuation hint.
    """
    merged: List[RawTable] = []
    last_page = 0
    for table in tables:
        if merged:
            current = merged[-1]
            continues = (
                table.page == last_page + 1
                and table.arity == current.arity
                and (table.header == current.header or table.continuation_hint)
            )
            if continues:
                rows = list(current.rows)
                if table.header and table.header != current.header:
                    # a continuation's first row was detected as a header
                    rows.append(list(table.header))
                rows.extend(list(r) for r in table.rows)
                merged[-1] = RawTable(
                    page=current.page,
                    header=list(current.header),
                    rows=rows,
                    continuation_hint=current.continuation_hint,
                )
                last_page = table.page
                continue
        merged.append(table.model_copy(deep=True))
        last_page = table.page
    return merged


def _boilerplate_key(line: str) -> str:
    return _DIGITS_RE.sub("#", _HORIZONTAL_WS_RE.sub(" ", line.strip()).lower())


def detect_boilerplate(page_texts: Iterable[str], repeat_ratio: float = 0.6) -> FrozenSet[str]:
    """Normalized lines present on at least `repeat_ratio` of the pages"""
    texts = list(page_texts)
    if len(texts) < 2:
        return frozenset()
    counts: Counter = Counter()
    for text in texts:
        keys = {
            _boilerplate_key(line)
            for line in text.splitlines()
            if line.strip() and len(line.strip()) <= MAX_BOILERPLATE_LINE
        }
        counts.update(keys)
    threshold = repeat_ratio * len(texts)
    return frozenset(key for key, n in counts.items() if n >= threshold)


def clean_text(
    raw: str,
    repeat_ratio: float = 0.6,
    boilerplate: Optional[FrozenSet[str]] = None,
) -> str:
    """
    Remove layout noise from page text.

    Pages are separated by form feeds. Lines repeated on `repeat_ratio` of
    the pages (running headers and footers, digits ignored), isolated page
    numbers and redundant whitespace are removed. Idempotent.
    """
    pages = raw.split(PAGE_BREAK)
    repeated = set(detect_boilerplate(pages, repeat_ratio))
    if boilerplate:
        repeated |= boilerplate

    kept: List[str] = []
    for page_text in pages:
        for line in page_text.splitlines():
            line = _HORIZONTAL_WS_RE.sub(" ", line).strip()
            if not line:
                if kept and kept[-1] != "":
                    kept.append("")
                continue
            if _PAGE_NUMBER_LINE_RE.match(line):
                continue
            if len(line) <= MAX_BOILERPLATE_LINE and _boilerplate_key(line) in repeated:
                continue
            kept.append(line)
        if kept and kept[-1] != "":
            kept.append("")
    while kept and kept[-1] == "":
        kept.pop()
    while kept and kept[0] == "":
        kept.pop(0)
    return "\n".join(kept)


def generate_segment_id(number: str, ordinal: int, taken: set) -> str:
    """seg_<section number>, or seg_<ordinal> for unnumbered sections"""
    base = "seg_" + (number.replace(".", "_") if number else str(ordinal))
    candidate, suffix = base, ord("b")
    while candidate in taken:
        candidate = f"{base}_{chr(suffix)}"
        suffix += 1
    taken.add(candidate)
    return candidate


def _pages_in_range(bundle: DocumentBundle, start: int, end: int) -> List[Page]:
    return [p for p in bundle.pages if start <= p.number <= end]


def segment_document(
    bundle: DocumentBundle,
    thresholds: SegmentationThresholds = SegmentationThresholds(),
) -> SegmentationResult:
    """One segment per TOC entry, ordered by start page"""
    title = extract_title(bundle)
    toc_page = find_toc_page(bundle, thresholds)
    boilerplate = detect_boilerplate((p.text for p in bundle.pages), thresholds.header_repeat_ratio)
    entries = parse_toc(bundle, toc_page, boilerplate)

    segments: List[Segment] = []
    warnings: List[str] = []
    taken: set = set()
    for ordinal, entry in enumerate(entries, start=1):
        seg_id = generate_segment_id(entry.number, ordinal, taken)
        pages = _pages_in_range(bundle, entry.start_page, entry.end_page)
        seg_warnings: List[str] = []
        if not pages:
            message = (
                f"Section {entry.title!r} lists pages {entry.start_page}-{entry.end_page} "
                f"but the bundle ends at page {bundle.last_page}"
            )
            logger.warning(message)
            seg_warnings.append(message)
            warnings.append(message)

        content = clean_text(
            PAGE_BREAK.join(p.text for p in pages),
            thresholds.header_repeat_ratio,
            boilerplate,
        )
        tables = sorted((t for p in pages for t in p.tables), key=lambda t: t.page)
        segments.append(Segment(
            id=seg_id,
            doc_id=bundle.doc_id,
            title=entry.title,
            section_number=entry.number,
            page_range=(entry.start_page, entry.end_page),
            content=content,
            tables=merge_multipage_tables(tables),
            warnings=seg_warnings,
        ))

    logger.info(f"Segmented {bundle.doc_id}: {len(segments)} segments from TOC on page {toc_page}")
    return SegmentationResult(
        doc_id=bundle.doc_id,
        title=title,
        toc_page=toc_page,
        entries=entries,
        segments=segments,
        warnings=warnings,
    )
