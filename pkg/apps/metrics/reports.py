"""
Evaluation report output: JSON Lines records, a plain-text summary table and
an optional spreadsheet export.
"""

import datetime
import logging
from io import BytesIO
from zipfile import ZIP_DEFLATED, ZipFile, ZipInfo

from openpyxl import Workbook
from openpyxl.writer.excel import ExcelWriter

from apps.core.records import write_records
from apps.core.storage import write_atomic
from apps.metrics.services import AGGREGATION, METRIC_KEYS, PUBLISHED_REFERENCE, EvaluationReport

logger = logging.getLogger(__name__)

IMAGE_HEADERS = ["id", "protocol", "dice", "precision", "recall", "tp", "fp", "fn", "tn"]

# Pinned so the same report always exports to the same bytes.
EXPORT_TIMESTAMP = datetime.datetime(2000, 1, 1)


class _PinnedZipFile(ZipFile):
    def writestr(self, zinfo_or_arcname, data, compress_type=None, compresslevel=None):
        if not isinstance(zinfo_or_arcname, ZipInfo):
            zinfo_or_arcname = ZipInfo(zinfo_or_arcname, date_time=EXPORT_TIMESTAMP.timetuple()[:6])
            zinfo_or_arcname.compress_type = ZIP_DEFLATED
            zinfo_or_arcname.external_attr = 0o600 << 16
        super().writestr(zinfo_or_arcname, data, compress_type=compress_type, compresslevel=compresslevel)

    def write(self, filename, arcname=None, compress_type=None, compresslevel=None):
        with open(filename, "rb") as handle:
            self.writestr(arcname or str(filename), handle.read(), compress_type, compresslevel)


def write_report(report: EvaluationReport, path):
    write_records(path, report.records())
    logger.info("wrote evaluation report to %s", path)


def format_table(report: EvaluationReport) -> str:
    """Summary in the layout of the published comparison table."""
    lines = [
        f"# aggregation: {AGGREGATION}",
        f"# images: {len(report.rows)}  skipped (no ground truth): {len(report.skipped)}",
        "",
        f"{'model':<24}{'dice':>8}{'precision':>11}{'recall':>9}{'parameters':>13}",
    ]
    measured = report.means
    lines.append(
        f"{report.variant + ' (measured)':<24}"
        f"{measured['dice']:>8.3f}{measured['precision']:>11.3f}{measured['recall']:>9.3f}{'':>13}"
    )
    for variant, reference in PUBLISHED_REFERENCE.items():
        lines.append(
            f"{variant + ' (published)':<24}"
            f"{reference['dice']:>8.3f}{reference['precision']:>11.3f}{reference['recall']:>9.3f}"
            f"{reference['parameters']:>13,}"
        )
    if report.per_protocol:
        lines += ["", f"{'protocol':<32}{'dice':>8}{'precision':>11}{'recall':>9}"]
        for protocol, means in sorted(report.per_protocol.items()):
            lines.append(f"{protocol:<32}" + "".join(f"{means[key]:>{w}.3f}" for key, w in zip(METRIC_KEYS, (8, 11, 9))))
    return "\n".join(lines)


def export_xlsx(report: EvaluationReport, path):
    workbook = Workbook()
    sheet = workbook.active
    sheet.title = "Images"
    sheet.append(IMAGE_HEADERS)
    for row in report.rows:
        sheet.append([row[key] for key in IMAGE_HEADERS])

    protocols = workbook.create_sheet("Protocols")
    protocols.append(["protocol", *METRIC_KEYS])
    for protocol, means in sorted(report.per_protocol.items()):
        protocols.append([protocol, *(means[key] for key in METRIC_KEYS)])

    summary = workbook.create_sheet("Summary")
    summary.append(["model", *METRIC_KEYS, "parameters"])
    summary.append([f"{report.variant} (measured)", *(report.means[key] for key in METRIC_KEYS), None])
    for variant, reference in PUBLISHED_REFERENCE.items():
        summary.append([f"{variant} (published)", *(reference[key] for key in METRIC_KEYS), reference["parameters"]])
    summary.append(["aggregation", AGGREGATION])

    workbook.properties.created = EXPORT_TIMESTAMP
    workbook.properties.modified = EXPORT_TIMESTAMP
    buffer = BytesIO()
    with _PinnedZipFile(buffer, "w", ZIP_DEFLATED, allowZip64=True) as archive:
        ExcelWriter(workbook, archive).write_data()
    write_atomic(path, buffer.getvalue())
    logger.info("exported evaluation workbook to %s", path)
