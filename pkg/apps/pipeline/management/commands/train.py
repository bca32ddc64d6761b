from pathlib import Path

from apps.core.exceptions import EmptyInputError
from apps.nifti.weights_format import save_weights
from apps.phantoms.manifest_service import read_manifest
from apps.pipeline.cli import ToolkitCommand
from apps.training.data import AugmentationConfig, load_samples
from apps.training.optim import AdamConfig
from apps.training.services import TrainingOptions, train_loop
from apps.unet.config import ModelConfig
from apps.unet.services import build_model, model_summary


class Command(ToolkitCommand):
    help = "Train a U-Net variant on the train split of a corpus (batch size 1, Adam)."

    option_casts = {
        "data": ("DATA_DIR", str),
        "seed": ("SEED", int),
        "lr": ("LEARNING_RATE", float),
        "threads": ("THREADS", int),
        "shrink": ("SHRINK", float),
        "floor": ("GRID_FLOOR", int),
    }

    def add_arguments(self, parser):
        parser.add_argument("--data", default=None, help="Corpus directory (defaults to DEFACE_DATA_DIR)")
        parser.add_argument("--variant", default="deepdefacer", choices=["deepdefacer", "baseline", "tiny"])
        parser.add_argument("--iters", type=int, default=200)
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--out", required=True, help="Final weights file (.vdfw)")
        parser.add_argument("--lr", type=float, default=None)
        parser.add_argument("--threads", type=int, default=None)
        parser.add_argument("--shrink", type=float, default=None)
        parser.add_argument("--floor", type=int, default=None)
        parser.add_argument("--no-augment", action="store_true")
        parser.add_argument("--metrics", default=None, help="Metrics JSONL (defaults next to --out)")

    def run(self, **options):
        out = Path(options["out"])
        config = ModelConfig.preset(options["variant"])
        store = build_model(config, seed=options["seed"])
        self.stdout.write(model_summary(store, config))

        if options["iters"] > 0:
            manifest = read_manifest(options["data"])
            prepare = {"shrink": options["shrink"], "floor": options["floor"], "threads": options["threads"]}
            train_rows = manifest.split("train")
            if not train_rows:
                raise EmptyInputError("The manifest has no training rows", field="split")
            samples = load_samples(train_rows, **prepare)
            validation = load_samples(manifest.split("val"), **prepare)
            training = TrainingOptions.from_settings(
                iterations=options["iters"],
                seed=options["seed"],
                augmentation=AugmentationConfig.from_settings(enabled=not options["no_augment"]),
                workers=options["threads"],
            )
            report = train_loop(
                store,
                config,
                samples,
                training,
                adam=AdamConfig.from_settings(learning_rate=options["lr"]),
                validation=validation,
                checkpoint_dir=out.with_suffix(".ckpt"),
                metrics_path=options["metrics"] or out.with_suffix(".metrics.jsonl"),
            )
            self.stdout.write(
                f"trained {report.iterations} iterations: final loss {report.final_loss:.5f}, "
                f"best checkpoint {report.best_checkpoint or '-'} (iteration {report.best_iteration or '-'})"
            )
        save_weights(store, out)
        self.stdout.write(f"weights written to {out}")
