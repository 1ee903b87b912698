import logging
import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

from app.core.errors import InputError
from app.models.main_schema import Family, MatroidKind
from app.utils.submodular.matroid import GraphicMatroid, Matroid, PartitionMatroid, UniformMatroid
from app.utils.submodular.setfn import Dataset, GroundSet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_COVERAGE_LINE = re.compile(r"^v(\d+)\s*:(.*)$")
_KTOPIC_LINE = re.compile(r"^v(\d+)\s+t(\d+)\s*:(.*)$")


class _Lines:
    """Non-blank, non-comment lines of a text file, keeping their 1-based line numbers."""

    def __init__(self, path: PathLike, text: Optional[str] = None):
        self.path = Path(path)
        if text is None:
            try:
                text = self.path.read_text(encoding="utf-8")
            except FileNotFoundError:
                raise InputError(f"{self.path}: file not found.", "FILE_NOT_FOUND") from None
            except OSError as exc:
                raise InputError(f"{self.path}: cannot read file ({exc}).", "FILE_NOT_FOUND") from None
        raw = text.splitlines()
        self.items: List[Tuple[int, str]] = []
        for number, line in enumerate(raw, start=1):
            text = line.split("#", 1)[0].strip()
            if text:
                self.items.append((number, text))
        if not self.items:
            raise InputError(f"{self.path}: file is empty.", "PARSE_ERROR")

    def error(self, number: int, message: str) -> InputError:
        return InputError(f"{self.path}:{number}: {message}", "PARSE_ERROR")

    @property
    def header(self) -> Tuple[int, List[str]]:
        number, text = self.items[0]
        return number, text.split()

    @property
    def body(self) -> List[Tuple[int, str]]:
        return self.items[1:]


def _ints(lines: _Lines, number: int, tokens: List[str], count: int) -> List[int]:
    if len(tokens) != count:
        raise lines.error(number, f"expected {count} integer(s) after '{lines.header[1][0]}', got {len(tokens)}")
    try:
        values = [int(t) for t in tokens]
    except ValueError:
        raise lines.error(number, f"non-integer header value in {tokens}") from None
    if any(v < 0 for v in values):
        raise lines.error(number, "header values must be nonnegative")
    return values


def _floats(lines: _Lines, number: int, text: str, width: int) -> Tuple[float, ...]:
    try:
        row = tuple(float(t) for t in text.split())
    except ValueError:
        raise lines.error(number, "row contains a non-numeric value") from None
    if len(row) != width:
        raise lines.error(number, f"row has {len(row)} values, expected {width}")
    return row


def _left_vertices(lines: _Lines, number: int, text: str, universe: set) -> frozenset:
    members = text.split()
    unknown = [u for u in members if u not in universe]
    if unknown:
        raise lines.error(number, f"unknown element(s) {unknown}")
    return frozenset(members)


def _vertex_slot(lines: _Lines, number: int, raw_id: str, n_right: int) -> int:
    slot = int(raw_id) - 1
    if not 0 <= slot < n_right:
        raise lines.error(number, f"vertex v{raw_id} outside v1..v{n_right}")
    return slot


# --- Instance parsers ---

def _parse_coverage(lines: _Lines) -> Dataset:
    number, tokens = lines.header
    n_left, n_right = _ints(lines, number, tokens[1:], 2)
    universe = tuple(f"u{i + 1}" for i in range(n_left))
    known = set(universe)
    records: List[Optional[frozenset]] = [None] * n_right
    for number, text in lines.body:
        match = _COVERAGE_LINE.match(text)
        if not match:
            raise lines.error(number, "expected 'v<id>: u<id> ...'")
        slot = _vertex_slot(lines, number, match.group(1), n_right)
        if records[slot] is not None:
            raise lines.error(number, f"vertex v{slot + 1} listed twice")
        records[slot] = _left_vertices(lines, number, match.group(2), known)
    return Dataset(
        records=tuple(r if r is not None else frozenset() for r in records),
        schema_tag=Family.COVERAGE,
        universe=universe,
    )


def _parse_rows(lines: _Lines, family: Family, prefix: str) -> Dataset:
    number, tokens = lines.header
    n_rows, width = _ints(lines, number, tokens[1:], 2)
    rows = tuple(_floats(lines, number, text, width) for number, text in lines.body)
    if len(rows) != n_rows:
        raise lines.error(lines.items[-1][0], f"found {len(rows)} rows, header declares {n_rows}")
    return Dataset(records=rows, schema_tag=family, universe=tuple(f"{prefix}{i + 1}" for i in range(width)))


def _parse_facility(lines: _Lines) -> Dataset:
    return _parse_rows(lines, Family.FACILITY, "s")


def _parse_average(lines: _Lines) -> Dataset:
    return _parse_rows(lines, Family.AVERAGE, "e")


def _parse_ktopics(lines: _Lines) -> Dataset:
    number, tokens = lines.header
    k, n_left, n_right = _ints(lines, number, tokens[1:], 3)
    if k < 1:
        raise lines.error(number, "topic count k must be >= 1")
    universe = tuple(f"u{i + 1}" for i in range(n_left))
    known = set(universe)
    table: List[List[Optional[frozenset]]] = [[None] * k for _ in range(n_right)]
    for number, text in lines.body:
        match = _KTOPIC_LINE.match(text)
        if not match:
            raise lines.error(number, "expected 'v<id> t<i>: u<id> ...'")
        slot = _vertex_slot(lines, number, match.group(1), n_right)
        topic = int(match.group(2))
        if not 1 <= topic <= k:
            raise lines.error(number, f"topic t{topic} outside t1..t{k}")
        if table[slot][topic - 1] is not None:
            raise lines.error(number, f"v{slot + 1} t{topic} listed twice")
        table[slot][topic - 1] = _left_vertices(lines, number, match.group(3), known)
    records = tuple(tuple(s if s is not None else frozenset() for s in row) for row in table)
    return Dataset(records=records, schema_tag=Family.KTOPICS, universe=universe, k=k)


def _parse_kfacility(lines: _Lines) -> Dataset:
    number, tokens = lines.header
    k, n_clients, n_sites = _ints(lines, number, tokens[1:], 3)
    if k < 1:
        raise lines.error(number, "topic count k must be >= 1")
    rows = [_floats(lines, number, text, n_sites) for number, text in lines.body]
    if len(rows) != k * n_clients:
        raise lines.error(lines.items[-1][0], f"found {len(rows)} rows, expected k * n_clients = {k * n_clients}")
    records = tuple(tuple(rows[c * k:(c + 1) * k]) for c in range(n_clients))
    return Dataset(
        records=records, schema_tag=Family.KFACILITY, universe=tuple(f"s{i + 1}" for i in range(n_sites)), k=k
    )


def _parse_support(lines: _Lines) -> Dataset:
    number, tokens = lines.header
    k, n = _ints(lines, number, tokens[1:], 2)
    if k < 1:
        raise lines.error(number, "topic count k must be >= 1")
    if lines.body:
        raise lines.error(lines.body[0][0], "support-size instances take no body lines")
    return Dataset(records=(), schema_tag=Family.SUPPORT, universe=tuple(f"e{i + 1}" for i in range(n)), k=k)


INSTANCE_PARSERS: Dict[str, Tuple[Family, Callable[[_Lines], Dataset]]] = {
    "coverage": (Family.COVERAGE, _parse_coverage),
    "facility": (Family.FACILITY, _parse_facility),
    "average": (Family.AVERAGE, _parse_average),
    "ktopics": (Family.KTOPICS, _parse_ktopics),
    "kfacility": (Family.KFACILITY, _parse_kfacility),
    "support": (Family.SUPPORT, _parse_support),
}


def load_instance(path: PathLike, text: Optional[str] = None) -> Dataset:
    """Parse an instance file, or `text` labelled with `path` in error messages."""
    lines = _Lines(path, text)
    number, tokens = lines.header
    entry = INSTANCE_PARSERS.get(tokens[0].lower())
    if entry is None:
        raise lines.error(number, f"unknown instance type '{tokens[0]}' (expected one of {sorted(INSTANCE_PARSERS)})")
    family, parser = entry
    dataset = parser(lines)
    logger.info("[Instance] %s: %s, %d elements, %d records", lines.path, family.value, len(dataset.universe), len(dataset))
    return dataset


# --- Matroid parsers ---

def _parse_uniform(lines: _Lines, ground: GroundSet) -> Matroid:
    number, tokens = lines.header
    (capacity,) = _ints(lines, number, tokens[1:], 1)
    if lines.body:
        raise lines.error(lines.body[0][0], "uniform matroids take no body lines")
    return UniformMatroid(ground, capacity)


def _parse_partition(lines: _Lines, ground: GroundSet) -> Matroid:
    number, tokens = lines.header
    specs = tokens[1:] + [t for _, text in lines.body for t in text.split()]
    if not specs:
        raise lines.error(number, "partition matroid needs at least one 'a,b,...:cap' block")
    blocks = []
    for spec in specs:
        members, sep, cap = spec.rpartition(":")
        if not sep or not members:
            raise lines.error(number, f"block '{spec}' is not of the form 'a,b,...:cap'")
        try:
            capacity = int(cap)
        except ValueError:
            raise lines.error(number, f"block '{spec}' has a non-integer capacity") from None
        elements = members.split(",")
        unknown = [e for e in elements if e not in ground]
        if unknown:
            raise lines.error(number, f"unknown element(s) {unknown} in block '{spec}'")
        blocks.append((elements, capacity))
    return PartitionMatroid(ground, blocks)


def _parse_graphic(lines: _Lines, ground: Optional[GroundSet]) -> Matroid:
    number, tokens = lines.header
    (n_vertices,) = _ints(lines, number, tokens[1:], 1)
    edges = []
    for number, text in lines.body:
        parts = text.split()
        if len(parts) != 4 or parts[0] != "edge":
            raise lines.error(number, "expected 'edge <element_id> <u> <v>'")
        edges.append((parts[1], parts[2], parts[3]))
    matroid = GraphicMatroid(n_vertices, edges)
    if ground is not None and matroid.ground != ground:
        raise lines.error(
            lines.header[0], "graphic edges must list exactly the instance's elements, in instance order"
        )
    return matroid


def load_matroid(path: PathLike, ground: Optional[GroundSet] = None, text: Optional[str] = None) -> Matroid:
    """Parse a matroid file. Uniform and partition matroids take their ground set from the instance."""
    lines = _Lines(path, text)
    number, tokens = lines.header
    try:
        kind = MatroidKind(tokens[0].lower())
    except ValueError:
        raise lines.error(number, f"unknown matroid type '{tokens[0]}'") from None
    if kind == MatroidKind.GRAPHIC:
        matroid = _parse_graphic(lines, ground)
    else:
        if ground is None:
            raise InputError(f"{lines.path}: {kind.value} matroids need the instance's ground set.", "GROUND_MISMATCH")
        matroid = _parse_uniform(lines, ground) if kind == MatroidKind.UNIFORM else _parse_partition(lines, ground)
    logger.info("[Matroid] %s: %s, rank %d", lines.path, kind.value, matroid.rank)
    return matroid


# --- Writers ---

def format_instance(dataset: Dataset) -> str:
    family = dataset.schema_tag
    if family == Family.COVERAGE:
        lines = [f"coverage {len(dataset.universe)} {len(dataset)}"]
        for j, record in enumerate(dataset.records):
            ordered = sorted(record, key=dataset.universe.index)
            lines.append(f"v{j + 1}: " + " ".join(ordered))
    elif family in (Family.FACILITY, Family.AVERAGE):
        tag = "facility" if family == Family.FACILITY else "average"
        lines = [f"{tag} {len(dataset)} {len(dataset.universe)}"]
        lines += [" ".join(repr(float(v)) for v in row) for row in dataset.records]
    elif family == Family.KTOPICS:
        lines = [f"ktopics {dataset.k} {len(dataset.universe)} {len(dataset)}"]
        for j, record in enumerate(dataset.records):
            for i, members in enumerate(record):
                lines.append(f"v{j + 1} t{i + 1}: " + " ".join(sorted(members, key=dataset.universe.index)))
    elif family == Family.KFACILITY:
        lines = [f"kfacility {dataset.k} {len(dataset)} {len(dataset.universe)}"]
        lines += [" ".join(repr(float(v)) for v in row) for record in dataset.records for row in record]
    else:
        lines = [f"support {dataset.k} {len(dataset.universe)}"]
    return "\n".join(lines) + "\n"


def format_matroid(matroid: Matroid) -> str:
    description = matroid.describe()
    if matroid.kind != MatroidKind.GRAPHIC:
        return description + "\n"
    lines = [f"graphic {matroid.n_vertices}"]
    lines += [f"edge {eid} {u} {v}" for eid, u, v in matroid.edges]
    return "\n".join(lines) + "\n"
