from apps.phantoms.manifest_service import make_corpus
from apps.pipeline.cli import ToolkitCommand


def _split_counts(text):
    if not text:
        return None
    return tuple(int(part) for part in text.split(","))


class Command(ToolkitCommand):
    help = "Generate a synthetic phantom corpus with oracle masks and a protocol-disjoint manifest."

    option_casts = {
        "seed": ("SEED", int),
        "threads": ("THREADS", int),
    }

    def add_arguments(self, parser):
        parser.add_argument("--out", required=True, help="Corpus directory to create")
        parser.add_argument("--count", type=int, default=60)
        parser.add_argument("--protocols", type=int, default=10)
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--threads", type=int, default=None)
        parser.add_argument(
            "--split-counts",
            default=None,
            help="Explicit train,val,test protocol counts overriding the 80/10/10 fractions",
        )

    def run(self, **options):
        manifest = make_corpus(
            options["out"],
            count=options["count"],
            protocols=options["protocols"],
            seed=options["seed"],
            threads=options["threads"],
            counts=_split_counts(options["split_counts"]),
        )
        counts = manifest.protocol_counts
        self.stdout.write(
            f"{len(manifest.rows)} phantoms, {len(manifest.protocols())} protocols "
            f"(train {counts['train']} / val {counts['val']} / test {counts['test']}) in {options['out']}"
        )
