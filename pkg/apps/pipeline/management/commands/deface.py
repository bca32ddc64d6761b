from apps.pipeline.cli import ToolkitCommand
from apps.pipeline.services import deface_file, load_model


class Command(ToolkitCommand):
    help = "Deface one NIfTI-1 scan with a trained model."

    option_casts = {
        "shrink": ("SHRINK", float),
        "floor": ("GRID_FLOOR", int),
        "threshold": ("THRESHOLD", float),
        "threads": ("THREADS", int),
    }

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Weights file (.vdfw)")
        parser.add_argument("--in", dest="input", required=True)
        parser.add_argument("--out", required=True)
        parser.add_argument("--mask-out", default=None)
        parser.add_argument("--shrink", type=float, default=None)
        parser.add_argument("--floor", type=int, default=None)
        parser.add_argument("--threshold", type=float, default=None)
        parser.add_argument("--threads", type=int, default=None)

    def run(self, **options):
        model = load_model(options["model"])
        result = deface_file(
            model,
            options["input"],
            options["out"],
            mask_out=options["mask_out"],
            shrink=options["shrink"],
            floor=options["floor"],
            tau=options["threshold"],
            threads=options["threads"],
        )
        if result.fell_back:
            self.stderr.write("warning: shrunk grid too small, defaced without shrinking")
        self.stdout.write(f"grid {'x'.join(str(d) for d in result.grid_dims)}  removed {result.mask.defaced_fraction():.2%}")
        for line in result.timing_lines():
            self.stdout.write(line)
