"""
Pipeline defaults from ``settings.UNITAX``.
"""
import logging

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

DEFAULTS = {
    'TOP_K': 8,
    'MAX_IMAGES': None,
    'MIN_SUPPORT': 0.0,
    'WORKERS': 1,
    'SEED': 0,
    'CHUNK_PIXELS': 65536,
}


def pipeline_defaults():
    """
    Merges ``settings.UNITAX`` over the built-in defaults and checks the result.
    Raises ImproperlyConfigured if a value is out of range.
    """
    values = dict(DEFAULTS)
    values.update(getattr(settings, 'UNITAX', {}) or {})
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ImproperlyConfigured(f"Unknown UNITAX settings: {', '.join(unknown)}")
    try:
        if int(values['TOP_K']) < 1:
            raise ValueError("TOP_K must be at least 1")
        if values['MAX_IMAGES'] is not None and int(values['MAX_IMAGES']) < 1:
            raise ValueError("MAX_IMAGES must be at least 1 when set")
        if not 0.0 <= float(values['MIN_SUPPORT']) <= 1.0:
            raise ValueError("MIN_SUPPORT must lie in [0, 1]")
        if int(values['WORKERS']) < 1:
            raise ValueError("WORKERS must be at least 1")
        if int(values['CHUNK_PIXELS']) < 1:
            raise ValueError("CHUNK_PIXELS must be at least 1")
        int(values['SEED'])
    except (TypeError, ValueError) as e:
        logger.error(f"Invalid UNITAX settings: {e}")
        raise ImproperlyConfigured(f"Invalid UNITAX settings: {e}")
    return values


def chunk_pixels():
    return int(pipeline_defaults()['CHUNK_PIXELS'])
