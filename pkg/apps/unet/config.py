"""
Declarative U-Net architecture descriptions.
"""

import json
from dataclasses import asdict, dataclass

from django.core.exceptions import ValidationError

VARIANTS = ("deepdefacer", "baseline")
HEADS = {"sigmoid_1ch": 1, "softmax_2ch": 2}


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    encoder_filters: tuple
    bottleneck_filters: int
    bottleneck_convs: int
    use_batchnorm: bool
    head: str
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "encoder_filters", tuple(int(f) for f in self.encoder_filters))

    @classmethod
    def deepdefacer(cls):
        return cls(
            variant="deepdefacer",
            encoder_filters=(8, 16, 32, 64),
            bottleneck_filters=128,
            bottleneck_convs=2,
            use_batchnorm=False,
            head="sigmoid_1ch",
        )

    @classmethod
    def baseline(cls):
        return cls(
            variant="baseline",
            encoder_filters=(32, 64, 128, 256),
            bottleneck_filters=1024,
            bottleneck_convs=1,
            use_batchnorm=True,
            head="softmax_2ch",
        )

    @classmethod
    def tiny(cls):
        """Quarter-width deepdefacer for quick desk-scale runs."""
        return cls(
            variant="deepdefacer",
            encoder_filters=(4, 8, 16, 32),
            bottleneck_filters=64,
            bottleneck_convs=2,
            use_batchnorm=False,
            head="sigmoid_1ch",
        )

    @classmethod
    def preset(cls, name):
        presets = {"deepdefacer": cls.deepdefacer, "baseline": cls.baseline, "tiny": cls.tiny}
        try:
            return presets[name]()
        except KeyError:
            raise ValidationError({"variant": f"Unknown model preset {name!r}; choose one of {sorted(presets)}"}) from None

    @property
    def levels(self):
        return len(self.encoder_filters)

    @property
    def grid_multiple(self):
        return 2 ** self.levels

    @property
    def output_channels(self):
        return HEADS[self.head]

    def validate(self):
        errors = {}
        if self.variant not in VARIANTS:
            errors["variant"] = f"Unknown variant {self.variant!r}"
        if self.head not in HEADS:
            errors["head"] = f"Unknown head {self.head!r}"
        filters = self.encoder_filters
        if not filters or any(f < 1 for f in filters):
            errors["encoder_filters"] = "Encoder filters must be a non-empty list of positive counts"
        elif any(b != 2 * a for a, b in zip(filters, filters[1:])):
            errors["encoder_filters"] = f"Encoder filters must double at every level, got {list(filters)}"
        elif self.bottleneck_filters < 2 * filters[-1]:
            errors["bottleneck_filters"] = (
                f"Bottleneck needs at least {2 * filters[-1]} filters, got {self.bottleneck_filters}"
            )
        if self.bottleneck_convs not in (1, 2):
            errors["bottleneck_convs"] = "The bottleneck has one or two convolutions"
        if self.input_channels < 1:
            errors["input_channels"] = "At least one input channel is required"
        if errors:
            raise ValidationError(errors)
        return self

    def to_tag(self) -> str:
        payload = asdict(self)
        payload["encoder_filters"] = list(self.encoder_filters)
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_tag(cls, tag: str) -> "ModelConfig":
        try:
            payload = json.loads(tag)
            config = cls(**payload)
        except (TypeError, ValueError) as exc:
            raise ValidationError({"variant": f"Weight file carries an unreadable model tag: {exc}"}) from exc
        return config.validate()
