"""
Result Tables

Transfer success rates as CSV + JSON, the per-(source, attack) summary
with the black-box average and the with/without-SVD improvement, and CKA
report CSVs.
"""

import csv
import io
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from ..core.container import atomic_write_bytes
from ..core.models import RESULT_COLUMNS, CKAReport, CKARow, ImageRecord, ResultRow

logger = logging.getLogger(__name__)

CKA_COLUMNS = ["layer", "variant", "cka", "source_model", "target_model"]


def success_rate(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of images whose prediction differs from the true label"""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return int((predictions != labels).sum()) / len(labels)


def success_from_records(records: Iterable[ImageRecord]) -> float:
    records = list(records)
    if not records:
        return 0.0
    return sum(r.source_pred_after != r.label for r in records) / len(records)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ResultsTable:
    """Ordered rows of the source × target × attack matrix"""

    def __init__(self, rows: Optional[Iterable[ResultRow]] = None):
        self.rows: List[ResultRow] = list(rows or [])

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other) -> bool:
        return isinstance(other, ResultsTable) and self.rows == other.rows

    def filter(self, **criteria) -> List[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in criteria.items())]

    # -------------------------------------------------------------------------
    # CSV / JSON
    # -------------------------------------------------------------------------
    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in self.rows:
            writer.writerow([_cell(getattr(row, col)) for col in RESULT_COLUMNS])
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != RESULT_COLUMNS:
            raise ValueError(f"unexpected results header {reader.fieldnames}")
        rows = []
        for raw in reader:
            rows.append(ResultRow(
                source=raw["source"],
                target=raw["target"],
                attack=raw["attack"],
                svd=raw["svd"] == "True",
                k=int(raw["k"]) if raw["k"] else None,
                beta=float(raw["beta"]) if raw["beta"] else None,
                layer=raw["layer"] or None,
                success_rate=float(raw["success_rate"]),
                n=int(raw["n"]),
                seed=int(raw["seed"]),
            ))
        return cls(rows)

    def to_json(self) -> str:
        return json.dumps([row.model_dump(mode="json") for row in self.rows], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ResultsTable":
        return cls(ResultRow.model_validate(item) for item in json.loads(text))

    def write(self, directory: Union[str, Path], stem: str = "results") -> Dict[str, Path]:
        directory = Path(directory)
        paths = {
            "csv": atomic_write_bytes(directory / f"{stem}.csv", self.to_csv().encode("utf-8")),
            "json": atomic_write_bytes(directory / f"{stem}.json", self.to_json().encode("utf-8")),
            "summary": atomic_write_bytes(
                directory / "summary.json" if stem == "results" else directory / f"{stem}_summary.json",
                json.dumps(self.summary(), indent=2).encode("utf-8"),
            ),
        }
        logger.info(f"Wrote {len(self)} result rows to {paths['csv']}")
        return paths

    @classmethod
    def read(cls, path: Union[str, Path]) -> "ResultsTable":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        return cls.from_json(text) if path.suffix == ".json" else cls.from_csv(text)

    # -------------------------------------------------------------------------
    # Aggregates
    # -------------------------------------------------------------------------
    def mean_success(self, white_box: bool, **criteria) -> Optional[float]:
        rates = [r.success_rate for r in self.filter(**criteria) if r.white_box == white_box]
        return float(np.mean(rates)) if rates else None

    def summary(self) -> List[dict]:
        """Per (source, attack): black-box average with and without SVD, and the gain"""
        grouped: Dict[tuple, Dict[bool, List[float]]] = defaultdict(lambda: {True: [], False: []})
        for row in self.rows:
            if not row.white_box:
                grouped[(row.source, row.attack)][row.svd].append(row.success_rate)

        out = []
        for (source, attack), by_svd in grouped.items():
            without = float(np.mean(by_svd[False])) if by_svd[False] else None
            with_svd = float(np.mean(by_svd[True])) if by_svd[True] else None
            out.append({
                "source": source,
                "attack": attack,
                "avg_black_box_without_svd": without,
                "avg_black_box_with_svd": with_svd,
                "improvement": with_svd - without if with_svd is not None and without is not None else None,
            })
        return out


# =============================================================================
# CKA reports
# =============================================================================

def cka_report_to_csv(report: CKAReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CKA_COLUMNS)
    for row in report.rows:
        writer.writerow([row.layer, row.variant.value, repr(row.cka), row.source_model, row.target_model or ""])
    return buffer.getvalue()


def cka_report_from_csv(text: str) -> CKAReport:
    rows = [
        CKARow(
            layer=raw["layer"],
            variant=raw["variant"],
            cka=float(raw["cka"]),
            source_model=raw["source_model"],
            target_model=raw["target_model"] or None,
        )
        for raw in csv.DictReader(io.StringIO(text))
    ]
    return CKAReport(rows=rows)


def write_image_records(records: Iterable[ImageRecord], path: Union[str, Path]) -> Path:
    """JSON Lines, one record per image"""
    payload = "".join(record.model_dump_json() + "\n" for record in records)
    return atomic_write_bytes(path, payload.encode("utf-8"))


def read_image_records(path: Union[str, Path]) -> List[ImageRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ImageRecord.model_validate_json(line) for line in lines if line.strip()]
