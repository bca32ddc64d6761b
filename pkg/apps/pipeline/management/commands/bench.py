from apps.core.exceptions import EmptyInputError
from apps.core.records import write_records
from apps.phantoms.manifest_service import read_manifest
from apps.pipeline.bench_service import run_bench
from apps.pipeline.cli import ToolkitCommand
from apps.pipeline.services import load_model


def _thread_counts(text):
    return tuple(int(part) for part in str(text).split(","))


class Command(ToolkitCommand):
    help = "Time the end-to-end defacing pipeline for two models (and optionally an external tool)."

    option_casts = {
        "shrink": ("SHRINK", float),
        "warmup": ("BENCH_WARMUP", int),
    }

    def add_arguments(self, parser):
        parser.add_argument("--model-a", required=True)
        parser.add_argument("--model-b", default=None)
        parser.add_argument("--dims", default="128x128x128", help="Synthetic input size DxHxW")
        parser.add_argument("--data", default=None, help="Time every image of a corpus split instead")
        parser.add_argument("--split", default="test", choices=["train", "val", "test"])
        parser.add_argument("--reps", type=int, default=5)
        parser.add_argument("--threads", default="1", help="Comma-separated thread counts, e.g. 1,4")
        parser.add_argument("--warmup", type=int, default=None)
        parser.add_argument("--shrink", type=float, default=None)
        parser.add_argument("--external", default=None, help="Command with {input} and {output} placeholders")
        parser.add_argument("--out", default=None, help="Write bench rows as JSON Lines")

    def run(self, **options):
        model_a = load_model(options["model_a"])
        models = {"a:" + model_a.variant: model_a}
        if options["model_b"]:
            model_b = load_model(options["model_b"])
            models["b:" + model_b.variant] = model_b
        rows = None
        if options["data"]:
            rows = read_manifest(options["data"]).split(options["split"])
            if not rows:
                raise EmptyInputError(f"Split {options['split']!r} has no images to time", field="split")
        threads = _thread_counts(options["threads"])
        result = run_bench(
            models,
            dims=options["dims"],
            rows=rows,
            reps=options["reps"],
            threads=threads,
            warmup=options["warmup"],
            external=options["external"],
            shrink=options["shrink"],
        )
        self.stdout.write(result.format_table())
        labels = list(models)
        if len(labels) == 2:
            for count in threads:
                ratio = result.speedup(labels[0], labels[1], threads=count)
                self.stdout.write(f"speedup {labels[0]} vs {labels[1]} at {count} thread(s): {ratio:.2f}x")
        if options["out"]:
            write_records(options["out"], result.records())
