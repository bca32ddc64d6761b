import json

from apps.nifti.services import inspect_header
from apps.pipeline.cli import ToolkitCommand


class Command(ToolkitCommand):
    help = "Print the parsed header of a NIfTI-1 file."

    def add_arguments(self, parser):
        parser.add_argument("--in", dest="input", required=True)
        parser.add_argument("--json", action="store_true", help="Emit one JSON object instead of key: value lines")

    def run(self, **options):
        record = inspect_header(options["input"]).to_record()
        if options["json"]:
            self.stdout.write(json.dumps(record, sort_keys=True))
            return
        for key, value in record.items():
            self.stdout.write(f"{key}: {value}")
