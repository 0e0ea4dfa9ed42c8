import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.errors import SchemaError, TableError
from utils.log import get_logger
from utils.rng import derive_field_seed, make_rng

logger = get_logger(__name__)


class FieldKind(str, Enum):
    """The three generation strategies a field can be routed to"""

    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"
    FREE_TEXT = "free_text"


KIND_TOKENS = tuple(kind.value for kind in FieldKind)


class FieldMeta(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    description: str = ""
    declared_kind: Optional[FieldKind] = None
    samples: Tuple[str, ...] = ()
    original_description: Optional[str] = None


class DatasetSchema(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = ""
    fields: Tuple[FieldMeta, ...] = Field(min_length=1)

    @property
    def field_names(self) -> List[str]:
        return [f.name for f in self.fields]

    def field(self, name: str) -> FieldMeta:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def replace_fields(self, fields: Sequence[FieldMeta]) -> "DatasetSchema":
        return self.model_copy(update={"fields": tuple(fields)})


def _duplicate_names(names: Sequence[str]) -> List[str]:
    seen, dupes = set(), []
    for name in names:
        if name in seen and name not in dupes:
            dupes.append(name)
        seen.add(name)
    return dupes


def _describe_location(loc: Tuple, raw_fields: list) -> str:
    if len(loc) >= 2 and loc[0] == "fields" and isinstance(loc[1], int):
        index = loc[1]
        name = None
        if index < len(raw_fields) and isinstance(raw_fields[index], dict):
            name = raw_fields[index].get("name")
        where = f"field #{index}" + (f" ({name!r})" if name else "")
        rest = ".".join(str(p) for p in loc[2:])
        return f"{where}.{rest}" if rest else where
    return ".".join(str(p) for p in loc) or "document"


def parse_schema(raw: str, max_samples: Optional[int] = None) -> DatasetSchema:
    """Parse the JSON schema document; field order is preserved"""
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise SchemaError(f"schema is not valid JSON: line {e.lineno} column {e.colno}: {e.msg}")

    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a JSON object")
    raw_fields = doc.get("fields")
    if not isinstance(raw_fields, list):
        raise SchemaError("schema document needs a 'fields' list")
    if not raw_fields:
        raise SchemaError("schema has an empty field list")

    fields = []
    for index, entry in enumerate(raw_fields):
        if not isinstance(entry, dict):
            raise SchemaError(f"field #{index}: expected an object")
        entry = dict(entry)
        samples = entry.get("samples")
        if max_samples is not None and isinstance(samples, list) and len(samples) > max_samples:
            logger.info("samples_truncated", field=entry.get("name"), kept=max_samples, given=len(samples))
            entry["samples"] = samples[:max_samples]
        try:
            fields.append(FieldMeta.model_validate(entry))
        except ValidationError as e:
            err = e.errors()[0]
            where = _describe_location(("fields", index) + tuple(err["loc"]), raw_fields)
            raise SchemaError(f"{where}: {err['msg']}")

    dupes = _duplicate_names([f.name for f in fields])
    if dupes:
        raise SchemaError(f"duplicate field name {dupes[0]!r}")

    name = doc.get("dataset_name", "")
    if not isinstance(name, str):
        raise SchemaError("dataset_name must be a string")
    return DatasetSchema(name=name, fields=tuple(fields))


def schema_to_document(schema: DatasetSchema) -> str:
    fields = []
    for f in schema.fields:
        entry = {"name": f.name, "description": f.description}
        if f.declared_kind is not None:
            entry["declared_kind"] = f.declared_kind.value
        if f.samples:
            entry["samples"] = list(f.samples)
        if f.original_description is not None:
            entry["original_description"] = f.original_description
        fields.append(entry)
    return json.dumps({"dataset_name": schema.name, "fields": fields}, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class Table:
    """Ordered named string columns of equal length"""

    columns: Tuple[Tuple[str, Tuple[str, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        dupes = _duplicate_names(names)
        if dupes:
            raise TableError(f"duplicate column name {dupes[0]!r}")
        lengths = {len(values) for _, values in self.columns}
        if len(lengths) > 1:
            raise TableError(f"columns have differing lengths {sorted(lengths)}")

    @classmethod
    def from_columns(cls, columns: Sequence[Tuple[str, Sequence[str]]]) -> "Table":
        return cls(tuple((name, tuple(values)) for name, values in columns))

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "Table":
        return cls.from_columns([(str(col), [str(v) for v in df[col].tolist()]) for col in df.columns])

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.columns]

    @property
    def row_count(self) -> int:
        return len(self.columns[0][1]) if self.columns else 0

    def column(self, name: str) -> Tuple[str, ...]:
        for col_name, values in self.columns:
            if col_name == name:
                return values
        raise KeyError(name)

    def rows(self) -> Iterator[Dict[str, str]]:
        names = self.names
        for i in range(self.row_count):
            yield {name: values[i] for name, (_, values) in zip(names, self.columns)}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: list(values) for name, values in self.columns}, columns=self.names, dtype=str)


def parse_table(raw: str) -> Table:
    """Parse RFC-4180 CSV with a header row; every cell stays a string"""
    if raw.startswith("\ufeff"):
        raw = raw[1:]
    if not raw.strip():
        raise TableError("table is empty")

    try:
        records = list(csv.reader(io.StringIO(raw, newline=""), strict=True))
    except csv.Error as e:
        raise TableError(f"malformed CSV: {e}")
    while records and not records[-1]:
        records.pop()
    header = records[0]
    width = len(header)

    rows = []
    for row_number, record in enumerate(records[1:], start=2):
        if not record and width == 1:
            record = [""]
        if len(record) != width:
            raise TableError(f"row {row_number} has {len(record)} cells, expected {width}", row=row_number)
        rows.append(record)

    columns = [(name, [row[i] for row in rows]) for i, name in enumerate(header)]
    return Table.from_columns(columns)


def serialize_table(table: Table) -> str:
    """CSV with LF line endings and minimal quoting"""
    df = table.to_frame()
    has_cr = any("\r" in cell for _, values in table.columns for cell in values)
    quoting = csv.QUOTE_ALL if has_cr else csv.QUOTE_MINIMAL
    return df.to_csv(index=False, lineterminator="\n", quoting=quoting)


def serialize_table_jsonl(table: Table) -> str:
    return "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in table.rows())


def attach_samples(schema: DatasetSchema, table: Table, s: int, seed: int) -> DatasetSchema:
    """Give every field min(s, rows) ground-truth values drawn without replacement"""
    if s < 1:
        raise SchemaError("sample count s must be at least 1")
    missing = [name for name in schema.field_names if name not in table.names]
    if missing:
        raise SchemaError(f"table has no column for field {missing[0]!r}")

    fields = []
    for f in schema.fields:
        values = table.column(f.name)
        take = min(s, len(values))
        rng = make_rng(derive_field_seed(seed, f.name))
        picks = rng.choice(len(values), size=take, replace=False) if take else []
        fields.append(f.model_copy(update={"samples": tuple(values[int(i)] for i in picks)}))
    return schema.replace_fields(fields)
