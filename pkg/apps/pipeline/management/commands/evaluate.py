from apps.core.exceptions import EmptyInputError
from apps.core.records import write_records
from apps.metrics import reports
from apps.metrics.services import binarize_baseline_output, evaluate
from apps.nifti.services import read_mask, read_nifti
from apps.phantoms.manifest_service import read_manifest
from apps.pipeline.cli import ToolkitCommand
from apps.pipeline.services import deface_volume, keep_probabilities, load_model
from apps.volumes.services import threshold_search


class Command(ToolkitCommand):
    help = "Score a model's masks against the ground truth of one manifest split."

    option_casts = {
        "data": ("DATA_DIR", str),
        "shrink": ("SHRINK", float),
        "floor": ("GRID_FLOOR", int),
        "threshold": ("THRESHOLD", float),
        "threads": ("THREADS", int),
    }

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True)
        parser.add_argument("--data", default=None, help="Corpus directory (defaults to DEFACE_DATA_DIR)")
        parser.add_argument("--split", default="test", choices=["train", "val", "test"])
        parser.add_argument("--report", required=True, help="Report file (JSON Lines)")
        parser.add_argument("--xlsx", default=None, help="Also export the report as a workbook")
        parser.add_argument("--threshold", type=float, default=None)
        parser.add_argument(
            "--threshold-search",
            action="store_true",
            help="Pick the threshold with the best mean Dice on the val split first",
        )
        parser.add_argument("--shrink", type=float, default=None)
        parser.add_argument("--floor", type=int, default=None)
        parser.add_argument("--threads", type=int, default=None)

    def run(self, **options):
        model = load_model(options["model"])
        manifest = read_manifest(options["data"])
        grid = {"shrink": options["shrink"], "floor": options["floor"]}
        tau = options["threshold"]

        if options["threshold_search"] and model.config.output_channels == 1:
            samples = [(read_nifti(row.image), read_mask(row.mask)) for row in manifest.split("val")]
            if not samples:
                raise EmptyInputError("Threshold search needs a non-empty val split", field="split")
            search = threshold_search(
                lambda image: keep_probabilities(model, image, **grid), samples, threads=options["threads"]
            )
            write_records(f"{options['report']}.thresholds.jsonl", search.to_records())
            tau = search.best_tau
            self.stdout.write(f"threshold search: best tau {tau:g} (val dice {search.best_dice:.4f})")

        def predicted_mask(row):
            image = read_nifti(row.image)
            # Parallelism is across images here, so each pipeline runs single-threaded.
            result = deface_volume(model, image, tau=tau, threads=1, **grid)
            if model.config.output_channels == 2:
                return binarize_baseline_output(image, result.image)
            return result.mask

        report = evaluate(
            predicted_mask, manifest.split(options["split"]), variant=model.variant, threads=options["threads"]
        )
        reports.write_report(report, options["report"])
        if options["xlsx"]:
            reports.export_xlsx(report, options["xlsx"])
        self.stdout.write(reports.format_table(report))
