"""
eCDT run parameters.

Defaults come from ``settings.ECDT_DEFAULTS``; command flags override them.
"""
from dataclasses import asdict, dataclass, fields, replace

from django.conf import settings

from .exceptions import InvalidParams


@dataclass(frozen=True)
class EcdtParams:
    k: int = 30
    r: float = 10.0
    phi_min: float = 0.90
    time_scale: float = 5000.0
    min_feature_age: float = 0.01
    t_w: float = 0.01
    search_time: float = 0.2
    iou_threshold: float = 0.7
    delta_t: float = 0.01
    proximity_radius: float = 10.0

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 1:
            raise InvalidParams(f'k must be a positive integer, got {self.k!r}')
        for name in ('r', 'time_scale', 'min_feature_age', 't_w', 'search_time', 'delta_t', 'proximity_radius'):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParams(f'{name} must be positive, got {value!r}')
        for name in ('phi_min', 'iou_threshold'):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise InvalidParams(f'{name} must lie in (0, 1], got {value!r}')

    @classmethod
    def from_settings(cls, **overrides):
        """Settings defaults, with any non-None override applied on top."""
        values = dict(getattr(settings, 'ECDT_DEFAULTS', {}))
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})

    def with_overrides(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def as_dict(self):
        return asdict(self)

    def as_header(self, extra=None):
        """Effective configuration as ``# key=value`` lines."""
        items = list(self.as_dict().items()) + list((extra or {}).items())
        return ''.join(f'# {key}={value}\n' for key, value in items)
