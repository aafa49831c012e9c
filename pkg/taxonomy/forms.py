from dataclasses import dataclass
from pathlib import Path

from django import forms
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .conf import pipeline_defaults


class PathListField(forms.Field):
    """A list of filesystem paths; ``kind`` is 'file', 'dir' or None (either)."""

    def __init__(self, *, kind=None, **kwargs):
        self.kind = kind
        super().__init__(**kwargs)

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if isinstance(value, (str, Path)):
            value = [value]
        return [Path(item) for item in value]

    def validate(self, value):
        super().validate(value)
        for path in value:
            check_path(path, self.kind)


def check_path(path, kind=None):
    if not path.exists():
        raise ValidationError(_("%(path)s does not exist."), code='missing', params={'path': str(path)})
    if kind == 'file' and not path.is_file():
        raise ValidationError(_("%(path)s is not a file."), code='not_a_file', params={'path': str(path)})
    if kind == 'dir' and not path.is_dir():
        raise ValidationError(_("%(path)s is not a directory."), code='not_a_directory',
                              params={'path': str(path)})


@dataclass(frozen=True)
class PipelineConfig:
    taxonomies: tuple
    inputs: tuple
    max_images: int
    min_support: float
    top_k: int
    seed: int
    workers: int
    schedule: Path
    out: Path


class PipelineConfigForm(forms.Form):
    """
    Options shared by the management commands. Missing numeric options fall
    back to ``settings.UNITAX``.
    """
    taxonomies = PathListField(kind='file', required=False)
    inputs = PathListField(required=False)
    max_images = forms.IntegerField(required=False)
    min_support = forms.FloatField(required=False)
    top_k = forms.IntegerField(required=False)
    seed = forms.IntegerField(required=False)
    workers = forms.IntegerField(required=False)
    schedule = forms.CharField(required=False)
    out = forms.CharField(required=False)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.defaults = pipeline_defaults()

    def clean_max_images(self):
        value = self.cleaned_data.get('max_images')
        if value is None:
            value = self.defaults['MAX_IMAGES']
        if value is not None and int(value) < 1:
            raise ValidationError(_("The image cap must be at least 1."), code='min_value')
        return None if value is None else int(value)

    def clean_min_support(self):
        value = self.cleaned_data.get('min_support')
        if value is None:
            value = self.defaults['MIN_SUPPORT']
        if not 0.0 <= float(value) <= 1.0:
            raise ValidationError(_("Minimum support must lie in [0, 1]."), code='out_of_range')
        return float(value)

    def clean_top_k(self):
        value = self.cleaned_data.get('top_k')
        if value is None:
            value = self.defaults['TOP_K']
        if int(value) < 1:
            raise ValidationError(_("Top-K must be at least 1."), code='min_value')
        return int(value)

    def clean_seed(self):
        value = self.cleaned_data.get('seed')
        if value is None:
            value = self.defaults['SEED']
        if not 0 <= int(value) < 2 ** 64:
            raise ValidationError(_("The seed must be an unsigned 64-bit integer."), code='out_of_range')
        return int(value)

    def clean_workers(self):
        value = self.cleaned_data.get('workers')
        if value is None:
            value = self.defaults['WORKERS']
        if int(value) < 1:
            raise ValidationError(_("At least one worker is required."), code='min_value')
        return int(value)

    def clean_schedule(self):
        value = self.cleaned_data.get('schedule')
        if not value:
            return None
        path = Path(value)
        check_path(path, 'file')
        return path

    def clean_out(self):
        value = self.cleaned_data.get('out')
        return Path(value) if value else None

    def config(self):
        data = self.cleaned_data
        return PipelineConfig(
            taxonomies=tuple(data['taxonomies']),
            inputs=tuple(data['inputs']),
            max_images=data['max_images'],
            min_support=data['min_support'],
            top_k=data['top_k'],
            seed=data['seed'],
            workers=data['workers'],
            schedule=data['schedule'],
            out=data['out'],
        )
